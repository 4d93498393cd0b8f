#include "airode/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace airode::metrics {

double complex_mse(std::span<const cplx> y, std::span<const cplx> s) {
  if (y.size() != s.size()) throw ShapeError("mse: size mismatch");
  if (y.empty()) throw ShapeError("mse: empty input");
  double re = 0.0, im = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const cplx d = y[i] - s[i];
    re += d.real() * d.real();
    im += d.imag() * d.imag();
  }
  return (re + im) / (2.0 * static_cast<double>(y.size()));
}

double psnr(const ComplexTensor& y, const ComplexTensor& s, double max_i) {
  if (y.shape() != s.shape()) throw ShapeError("psnr: shape mismatch " + to_string(y.shape()) + " vs " + to_string(s.shape()));
  if (!(max_i > 0.0)) throw std::invalid_argument("psnr: max intensity must be positive");
  const double mse = complex_mse(y.data(), s.data());
  if (mse == 0.0) return kPsnrIdentical;
  return 10.0 * std::log10(max_i * max_i / mse);
}

double ssim(const ComplexTensor& y, const ComplexTensor& s, double k1, double k2, double max_i) {
  if (y.shape() != s.shape()) throw ShapeError("ssim: shape mismatch " + to_string(y.shape()) + " vs " + to_string(s.shape()));
  const std::size_t n = y.size();
  if (n == 0) throw ShapeError("ssim: empty input");
  std::vector<double> a(n), b(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = std::abs(y[i]);
    b[i] = std::abs(s[i]);
  }
  const double inv = 1.0 / static_cast<double>(n);
  const double mu_a = std::accumulate(a.begin(), a.end(), 0.0) * inv;
  const double mu_b = std::accumulate(b.begin(), b.end(), 0.0) * inv;
  double va = 0.0, vb = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    va += (a[i] - mu_a) * (a[i] - mu_a);
    vb += (b[i] - mu_b) * (b[i] - mu_b);
    cov += (a[i] - mu_a) * (b[i] - mu_b);
  }
  va *= inv;
  vb *= inv;
  cov *= inv;
  const double c1 = (k1 * max_i) * (k1 * max_i), c2 = (k2 * max_i) * (k2 * max_i);
  return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2));
}

std::size_t argmax(std::span<const double> scores) {
  if (scores.empty()) throw std::invalid_argument("argmax of empty scores");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted) {
  if (truth >= classes_ || predicted >= classes_) throw std::out_of_range("confusion: class index out of range");
  ++counts_[truth * classes_ + predicted];
}

std::uint64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0}); }

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t t = 0;
  for (std::size_t q = 0; q < classes_; ++q) t += at(q, q);
  return t;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::uint64_t t = 0;
  for (std::size_t q = 0; q < classes_; ++q) t += at(truth, q);
  return t;
}

std::string ConfusionMatrix::to_csv() const {
  std::ostringstream os;
  os << "true";
  for (std::size_t q = 0; q < classes_; ++q) os << ",pred" << q;
  os << '\n' << std::fixed << std::setprecision(2);
  for (std::size_t t = 0; t < classes_; ++t) {
    const std::uint64_t row = row_sum(t);
    os << t;
    for (std::size_t q = 0; q < classes_; ++q)
      os << ',' << (row == 0 ? 0.0 : 100.0 * static_cast<double>(at(t, q)) / static_cast<double>(row));
    os << '\n';
  }
  return os.str();
}

MetricsRecord accuracy_and_confusion(const std::vector<std::vector<double>>& scores,
                                     const std::vector<std::size_t>& labels, std::size_t classes) {
  if (scores.empty()) throw std::invalid_argument("accuracy: empty batch");
  if (scores.size() != labels.size()) throw std::invalid_argument("accuracy: predictions and labels differ in length");
  MetricsRecord r;
  r.confusion = ConfusionMatrix(classes);
  for (std::size_t n = 0; n < scores.size(); ++n) {
    if (scores[n].size() != classes) throw std::invalid_argument("accuracy: score row has wrong class count");
    r.confusion.add(labels[n], argmax(scores[n]));
  }
  r.samples = scores.size();
  r.accuracy = static_cast<double>(r.confusion.trace()) / static_cast<double>(r.confusion.total());
  return r;
}

MetricsRecord evaluate_batch(const ComplexTensor& reconstructions, const ComplexTensor& targets,
                             const ComplexTensor& tags, const std::vector<std::size_t>& labels, std::size_t classes) {
  if (reconstructions.shape() != targets.shape() || reconstructions.rank() != 3)
    throw ShapeError("evaluate: reconstructions and targets must both be N x A x A");
  const std::size_t N = targets.dim(0), A = targets.dim(1), px = A * targets.dim(2);
  std::vector<std::vector<double>> scores(N, std::vector<double>(classes));
  if (tags.rank() != 2 || tags.dim(0) != N || tags.dim(1) != classes) throw ShapeError("evaluate: tags must be N x Q");
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t q = 0; q < classes; ++q) scores[n][q] = std::abs(tags[n * classes + q]);
  MetricsRecord r = accuracy_and_confusion(scores, labels, classes);
  double p = 0.0, s = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    const ComplexTensor y({targets.dim(1), targets.dim(2)},
                          {reconstructions.data().begin() + n * px, reconstructions.data().begin() + (n + 1) * px});
    const ComplexTensor t({targets.dim(1), targets.dim(2)},
                          {targets.data().begin() + n * px, targets.data().begin() + (n + 1) * px});
    p += psnr(y, t);
    s += ssim(y, t);
  }
  r.psnr_db = p / static_cast<double>(N);
  r.ssim = s / static_cast<double>(N);
  return r;
}

}  // namespace airode::metrics
