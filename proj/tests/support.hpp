#pragma once

// Helpers shared by the unit and acceptance tests: random tensors, a central
// finite-difference gradient oracle, and a naive convolution.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "airode/ctensor.hpp"

namespace testutil {

using airode::ComplexTensor;
using airode::cplx;
using airode::Shape;
using airode::Variable;

inline ComplexTensor random_tensor(const Shape& shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  ComplexTensor t(shape);
  for (auto& z : t.data()) {
    const double re = d(rng);
    const double im = d(rng);
    z = {re, im};
  }
  return t;
}

struct GradReport {
  double worst_rel = 0.0;  // largest |a - n| / max(|a|, |n|) among entries above the absolute floor
  std::size_t checked = 0;
  std::size_t failures = 0;
  std::string first_failure;
  bool ok() const { return failures == 0; }
};

using Composite = std::function<Variable(const std::vector<Variable>&)>;

// Checks d/d(re, im) of Re(sum(c * f(inputs))) for a fixed random c against
// central differences with step h.
inline GradReport check_gradients(const Composite& f, const std::vector<ComplexTensor>& inputs, std::uint64_t seed,
                                  double h = 1e-5, double rel_tol = 1e-4, double abs_floor = 1e-7) {
  std::mt19937_64 rng(seed);
  std::vector<Variable> leaves;
  for (const auto& t : inputs) leaves.emplace_back(t, true);
  Variable out = f(leaves);
  const ComplexTensor weights = random_tensor(out.shape(), rng);
  const Variable c(weights);
  auto objective = [&](const std::vector<Variable>& in) {
    return airode::real_part(airode::sum(airode::mul(f(in), c)));
  };
  airode::backward(objective(leaves));

  auto value_at = [&](const std::vector<ComplexTensor>& vals) {
    airode::NoGradGuard guard;
    std::vector<Variable> in;
    for (const auto& v : vals) in.emplace_back(v);
    return objective(in).value()[0].real();
  };

  GradReport rep;
  std::vector<ComplexTensor> probe = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const ComplexTensor analytic = leaves[i].has_grad() ? leaves[i].grad() : ComplexTensor(inputs[i].shape());
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      for (int part = 0; part < 2; ++part) {
        const cplx base = inputs[i][j];
        const cplx delta = part == 0 ? cplx(h, 0.0) : cplx(0.0, h);
        probe[i][j] = base + delta;
        const double up = value_at(probe);
        probe[i][j] = base - delta;
        const double down = value_at(probe);
        probe[i][j] = base;
        const double numeric = (up - down) / (2.0 * h);
        const double a = part == 0 ? analytic[j].real() : analytic[j].imag();
        const double err = std::abs(a - numeric);
        ++rep.checked;
        if (err <= abs_floor) continue;
        const double rel = err / std::max(std::abs(a), std::abs(numeric));
        rep.worst_rel = std::max(rep.worst_rel, rel);
        if (rel >= rel_tol) {
          if (rep.failures++ == 0)
            rep.first_failure = "input " + std::to_string(i) + " entry " + std::to_string(j) + (part ? " im" : " re") +
                                ": analytic " + std::to_string(a) + " numeric " + std::to_string(numeric);
        }
      }
    }
  }
  return rep;
}

// Cross-correlation written from scratch with real arithmetic only:
// out[n][o][y][x] = sum_{c,i,j} w[o][c][i][j] * xpad[n][c][y*s+i][x*s+j] + b[o].
inline ComplexTensor naive_conv(const ComplexTensor& x, const ComplexTensor& w, const ComplexTensor* b,
                                std::size_t stride, std::size_t ph, std::size_t pw) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  const std::size_t OH = (H + 2 * ph - KH) / stride + 1, OW = (W + 2 * pw - KW) / stride + 1;
  ComplexTensor out({N, O, OH, OW});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t y = 0; y < OH; ++y)
        for (std::size_t xx = 0; xx < OW; ++xx) {
          double re = b ? (*b)[o].real() : 0.0, im = b ? (*b)[o].imag() : 0.0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < KH; ++i)
              for (std::size_t j = 0; j < KW; ++j) {
                const long r = static_cast<long>(y * stride + i) - static_cast<long>(ph);
                const long q = static_cast<long>(xx * stride + j) - static_cast<long>(pw);
                if (r < 0 || q < 0 || r >= static_cast<long>(H) || q >= static_cast<long>(W)) continue;
                const cplx u = x[((n * C + c) * H + r) * W + q];
                const cplx k = w[((o * C + c) * KH + i) * KW + j];
                re += k.real() * u.real() - k.imag() * u.imag();
                im += k.imag() * u.real() + k.real() * u.imag();
              }
          out[((n * O + o) * OH + y) * OW + xx] = {re, im};
        }
  return out;
}

inline double max_rel_error(const ComplexTensor& a, const ComplexTensor& b) {
  double scale = 0.0, err = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    scale = std::max(scale, std::abs(b[i]));
    err = std::max(err, std::abs(a[i] - b[i]));
  }
  return scale == 0.0 ? err : err / scale;
}

}  // namespace testutil
