#include <numeric>

#include "airode/cnn.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace airode;
using testutil::random_tensor;

namespace {

ris::CodebookGrid channel_grid(std::size_t K, std::uint64_t seed) {
  auto geom = ris::SystemGeometry::make_default(K, 3, 3, seed);
  return ris::build_codebooks(ris::sample_channel(geom, {}, seed));
}

ris::FeasibleWeightSet set_of(std::vector<cplx> entries) { return {std::move(entries), {1, 0}, 0}; }

// Independent nearest-entry search using explicit hypot distances.
std::size_t brute_force_nearest(const std::vector<cplx>& book, cplx w) {
  std::size_t best = 0;
  double best_d = std::hypot(book[0].real() - w.real(), book[0].imag() - w.imag());
  for (std::size_t i = 1; i < book.size(); ++i) {
    const double d = std::hypot(book[i].real() - w.real(), book[i].imag() - w.imag());
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

cplx relu_c(cplx z) { return {z.real() > 0 ? z.real() : 0.0, z.imag() > 0 ? z.imag() : 0.0}; }

// Straight-line ODE block on one feature row.
std::vector<cplx> ode_oracle(const std::array<std::vector<cplx>, 3>& w, const std::vector<cplx>& s) {
  const std::size_t C = s.size(), K = w[0].size();
  const long h = static_cast<long>(K / 2);
  auto psi = [&](std::size_t p, const std::vector<cplx>& x) {
    std::vector<cplx> y(C);
    for (long t = 0; t < static_cast<long>(C); ++t)
      for (long k = 0; k < static_cast<long>(K); ++k) {
        const long src = t + k - h;
        if (src >= 0 && src < static_cast<long>(C)) y[t] += w[p][k] * relu_c(x[src]);
      }
    return y;
  };
  const auto a = psi(0, s);
  std::vector<cplx> inner(C);
  for (std::size_t t = 0; t < C; ++t) inner[t] = a[t] + s[t];
  const auto b = psi(1, inner), c = psi(2, s);
  std::vector<cplx> out(C);
  for (std::size_t t = 0; t < C; ++t) out[t] = 0.5 * b[t] + 0.5 * c[t] + s[t];
  return out;
}

}  // namespace

TEST_CASE("complex convolution examples") {
  std::mt19937_64 rng(1);
  nn::CConv2d layer(1, 1, 1, 3, false, rng);
  layer.pad_h = 0;
  layer.pad_w = 0;
  SUBCASE("real kernel and input give the real convolution") {
    layer.kernel.mutable_value() = ComplexTensor({1, 1, 1, 3}, {{1, 0}, {2, 0}, {-1, 0}});
    const ComplexTensor x({1, 1, 1, 5}, {{1, 0}, {2, 0}, {3, 0}, {4, 0}, {5, 0}});
    const auto y = nn::cconv_forward(layer, Variable(x)).value();
    CHECK(y == ComplexTensor({1, 1, 1, 3}, {{2, 0}, {4, 0}, {6, 0}}));
  }
  SUBCASE("imaginary kernel rotates the real result") {
    const ComplexTensor w0 = random_tensor({1, 1, 1, 3}, rng);
    ComplexTensor real_w = w0, imag_w = w0;
    for (std::size_t i = 0; i < 3; ++i) {
      real_w[i] = {w0[i].real(), 0.0};
      imag_w[i] = {0.0, w0[i].real()};
    }
    ComplexTensor x = random_tensor({1, 1, 1, 5}, rng);
    for (auto& z : x.data()) z = {z.real(), 0.0};
    layer.kernel.mutable_value() = real_w;
    const auto base = nn::cconv_forward(layer, Variable(x)).value();
    layer.kernel.mutable_value() = imag_w;
    const auto rotated = nn::cconv_forward(layer, Variable(x)).value();
    for (std::size_t i = 0; i < base.size(); ++i) CHECK(std::abs(rotated[i] - cplx(0, 1) * base[i]) < 1e-15);
  }
  SUBCASE("random 1x5 input against the naive oracle") {
    layer.kernel.mutable_value() = random_tensor({1, 1, 1, 3}, rng);
    const ComplexTensor x = random_tensor({1, 1, 1, 5}, rng);
    const auto y = nn::cconv_forward(layer, Variable(x)).value();
    CHECK(testutil::max_rel_error(y, testutil::naive_conv(x, layer.kernel.value(), nullptr, 1, 0, 0)) < 1e-12);
  }
}

TEST_CASE("batch norm gradients match finite differences in both modes") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed);
    nn::CBatchNorm bn(2);
    bn.running_mean = random_tensor({2}, rng, 0.3);
    bn.running_var = ComplexTensor({2}, {{1.3, 0.7}, {0.5, 2.0}});
    const ComplexTensor x = random_tensor({3, 2, 2, 2}, rng), g = random_tensor({2}, rng), b = random_tensor({2}, rng);
    for (bool training : {true, false}) {
      auto f = [&](const std::vector<Variable>& v) {
        bn.gamma = v[1];
        bn.beta = v[2];
        return bn.forward(v[0], training);
      };
      const auto rep = testutil::check_gradients(f, {x, g, b}, seed);
      INFO("seed " << seed << (training ? " training " : " eval ") << rep.first_failure);
      CHECK(rep.ok());
    }
  }
}

TEST_CASE("batch norm normalizes re and im per channel") {
  std::mt19937_64 rng(3);
  nn::CBatchNorm bn(2);
  const ComplexTensor x = random_tensor({4, 2, 3, 3}, rng, 5.0);
  const auto y = bn.forward(Variable(x), true).value();
  for (std::size_t c = 0; c < 2; ++c) {
    double mr = 0, mi = 0, vr = 0, vi = 0;
    std::size_t n = 0;
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t i = 0; i < 9; ++i) {
        const cplx z = y[(b * 2 + c) * 9 + i];
        mr += z.real();
        mi += z.imag();
        vr += z.real() * z.real();
        vi += z.imag() * z.imag();
        ++n;
      }
    CHECK(mr / n == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(mi / n == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(vr / n == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(vi / n == doctest::Approx(1.0).epsilon(1e-4));
  }
  CHECK(bn.running_mean.all_finite());
}

TEST_CASE("quantizer examples") {
  const std::vector<ris::FeasibleWeightSet> books{set_of({{1, 0}, {0, 1}})};
  SUBCASE("hand example") {
    auto q = nn::ste_quantize(Variable(ComplexTensor({1}, {{0.9, 0.2}})), books);
    CHECK(q.indices[0] == 0);
    CHECK(q.weights.value()[0] == cplx(1, 0));
  }
  SUBCASE("exact member is a fixed point") {
    auto q = nn::ste_quantize(Variable(ComplexTensor({1}, {{0, 1}})), books);
    CHECK(q.indices[0] == 1);
    CHECK(q.weights.value()[0] == cplx(0, 1));
  }
  SUBCASE("ties go to the lower index") {
    auto q = nn::ste_quantize(Variable(ComplexTensor({1}, {{0.5, 0.5}})), books);
    CHECK(q.indices[0] == 0);
  }
}

TEST_CASE("quantizer agrees with exhaustive search and is idempotent") {
  const auto grid = channel_grid(3, 5);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> d(0.0, 1.5);
  for (int i = 0; i < 300; ++i) {
    const auto& book = grid[i % 3][(i / 3) % 3];
    const cplx w(d(rng), d(rng));
    const std::vector<ris::FeasibleWeightSet> one{book};
    auto q = nn::ste_quantize(Variable(ComplexTensor({1}, {w})), one);
    CHECK(q.indices[0] == brute_force_nearest(book.entries, w));
    CHECK(q.weights.value()[0] == book.entries[q.indices[0]]);
    auto again = nn::ste_quantize(q.weights, one);
    CHECK(again.indices[0] == q.indices[0]);
  }
}

TEST_CASE("straight-through gradient equals the gradient at the quantized weights") {
  const auto grid = channel_grid(3, 8);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed);
    nn::QCConv layer(grid[0], rng);
    layer.latent.mutable_value() = random_tensor({1, 1, 1, 3}, rng);
    const ComplexTensor x = random_tensor({2, 1, 1, 6}, rng), c = random_tensor({2, 1, 1, 6}, rng);

    const auto out = layer.forward(Variable(x));
    backward(real_part(sum(mul(out, Variable(c)))));
    const ComplexTensor ste_grad = layer.latent.grad();

    ComplexTensor wq({1, 1, 1, 3});
    for (std::size_t k = 0; k < 3; ++k) wq[k] = layer.codebooks[k].entries[layer.chosen[k]];
    Variable plain(wq, true);
    backward(real_part(sum(mul(conv2d(Variable(x), plain, nullptr, 1, 0, 1), Variable(c)))));
    CHECK(plain.grad() == ste_grad);
  }
}

TEST_CASE("ODE block examples") {
  std::mt19937_64 rng(9);
  SUBCASE("zero weights give the identity") {
    const std::vector<ris::FeasibleWeightSet> zero(3, set_of({{0, 0}}));
    nn::OdeBlock ode(ris::CodebookGrid{zero, zero, zero}, rng);
    for (int trial = 0; trial < 5; ++trial) {
      const ComplexTensor s = random_tensor({2, 7}, rng);
      CHECK(nn::ode_forward(ode, Variable(s)).value() == s);
    }
  }
  SUBCASE("centre-tap identity on nonnegative input gives 2.5 s") {
    const std::vector<ris::FeasibleWeightSet> centre{set_of({{0, 0}}), set_of({{1, 0}}), set_of({{0, 0}})};
    nn::OdeBlock ode(ris::CodebookGrid{centre, centre, centre}, rng);
    ComplexTensor s({1, 4}, {{1, 2}, {0.5, 0}, {3, 1}, {0, 0.25}});
    const auto y = nn::ode_forward(ode, Variable(s)).value();
    for (std::size_t t = 0; t < 4; ++t) CHECK(y[t] == 2.5 * s[t]);
  }
  SUBCASE("random configurations match the straight-line oracle") {
    for (std::size_t K : {3u, 5u, 7u}) {
      const auto grid = channel_grid(K, 10 + K);
      nn::OdeBlock ode(grid, rng);
      for (auto& psi : ode.psi) psi.latent.mutable_value() = random_tensor({1, 1, 1, K}, rng);
      const ComplexTensor s = random_tensor({1, 12}, rng);
      const auto got = nn::ode_forward(ode, Variable(s)).value();
      std::array<std::vector<cplx>, 3> w;
      for (std::size_t p = 0; p < 3; ++p)
        for (auto v : ode.psi[p].effective_weights()) w[p].push_back(v);
      const auto want = ode_oracle(w, {s.data().begin(), s.data().end()});
      for (std::size_t t = 0; t < 12; ++t) CHECK(std::abs(got[t] - want[t]) <= 1e-12 * std::max(1.0, std::abs(want[t])));
    }
  }
  SUBCASE("length mismatch is rejected") {
    const auto grid = channel_grid(3, 1);
    nn::OdeBlock ode(grid, rng);
    CHECK_THROWS(ode.forward(Variable(ComplexTensor({2, 3, 4}))));
  }
}

TEST_CASE("ODE block input gradients match finite differences") {
  const auto grid = channel_grid(3, 4);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed);
    nn::OdeBlock ode(grid, rng);
    const auto rep = testutil::check_gradients([&](const auto& v) { return ode.forward(v[0]); },
                                               {random_tensor({2, 8}, rng)}, seed);
    INFO(rep.first_failure);
    CHECK(rep.ok());
  }
}

TEST_CASE("network shapes and batch independence") {
  SUBCASE("full-size image") {
    nn::NetworkConfig cfg;
    cfg.image_size = 28;
    const auto grid = channel_grid(3, 2);
    nn::AirOdeNetwork net(cfg, grid, 3);
    std::mt19937_64 rng(4);
    NoGradGuard g;
    auto r = nn::network_forward(net, Variable(random_tensor({2, 28, 28}, rng)), {});
    CHECK(r.reconstruction.shape() == Shape{2, 28, 28});
    CHECK(r.tags.shape() == Shape{2, 10});
    CHECK(r.features.shape() == Shape{2, cfg.feature_length()});
  }
  SUBCASE("permuting the batch permutes the outputs") {
    nn::NetworkConfig cfg;
    const auto grid = channel_grid(3, 2);
    nn::AirOdeNetwork net(cfg, grid, 5);
    std::mt19937_64 rng(6);
    const ComplexTensor x = random_tensor({4, 14, 14}, rng);
    const std::vector<std::size_t> perm{2, 0, 3, 1};
    ComplexTensor xp(x.shape());
    for (std::size_t n = 0; n < 4; ++n)
      std::copy_n(x.data().begin() + perm[n] * 196, 196, xp.data().begin() + n * 196);
    NoGradGuard g;
    const auto a = nn::network_forward(net, Variable(x), {}), b = nn::network_forward(net, Variable(xp), {});
    for (std::size_t n = 0; n < 4; ++n) {
      for (std::size_t i = 0; i < 196; ++i)
        CHECK(b.reconstruction.value()[n * 196 + i] == a.reconstruction.value()[perm[n] * 196 + i]);
      for (std::size_t q = 0; q < 10; ++q) CHECK(b.tags.value()[n * 10 + q] == a.tags.value()[perm[n] * 10 + q]);
    }
  }
  SUBCASE("zero image with zero biases yields the bias-only response") {
    nn::NetworkConfig cfg;
    const auto grid = channel_grid(3, 2);
    nn::AirOdeNetwork net(cfg, grid, 7);
    for (auto& p : net.parameters())
      if (p.name.find("bias") != std::string::npos) p.var.mutable_value() = ComplexTensor::zeros_like(p.var.value());
    NoGradGuard g;
    auto r = nn::network_forward(net, Variable(ComplexTensor({1, 14, 14})), {});
    for (cplx z : r.features.value().data()) CHECK(z == cplx(0, 0));
    for (cplx z : r.ode_output.value().data()) CHECK(z == cplx(0, 0));
    for (cplx z : r.reconstruction.value().data()) CHECK(z == cplx(0, 0));
  }
  SUBCASE("analog mode without a channel context is an error") {
    nn::NetworkConfig cfg;
    nn::AirOdeNetwork net(cfg, channel_grid(3, 2), 7);
    nn::ForwardOptions o;
    o.mode = nn::Mode::Analog;
    CHECK_THROWS(nn::network_forward(net, Variable(ComplexTensor({1, 14, 14})), o));
  }
}

TEST_CASE("whole-network parameter gradients match finite differences") {
  nn::NetworkConfig cfg;
  cfg.image_size = 4;
  cfg.hidden_channels = 2;
  cfg.st_channels = 2;
  cfg.classes = 3;
  const auto grid = channel_grid(3, 3);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    nn::AirOdeNetwork net(cfg, grid, seed);
    std::mt19937_64 rng(seed + 100);
    const ComplexTensor img = random_tensor({3, 4, 4}, rng);
    for (const char* name : {"encoder.conv1.kernel", "encoder.bn.gamma", "decoder_ri.conv1.kernel", "decoder_st.conv.kernel", "decoder_st.linear.weight"}) {
      Variable target;
      for (auto& p : net.parameters())
        if (p.name == name) target = p.var;
      REQUIRE(target.defined());
      // Fixed linear functional of both outputs, differentiated numerically.
      auto loss_of = [&](const ComplexTensor& w) {
        NoGradGuard g;
        const ComplexTensor saved = target.value();
        target.mutable_value() = w;
        nn::ForwardOptions o;
        o.training = true;
        auto r = nn::network_forward(net, Variable(img), o);
        target.mutable_value() = saved;
        double acc = 0;
        for (cplx z : r.reconstruction.value().data()) acc += z.real() - 0.5 * z.imag();
        for (cplx z : r.tags.value().data()) acc += 0.25 * z.real() + z.imag();
        return acc;
      };
      for (auto& p : net.parameters()) p.var.zero_grad();
      nn::ForwardOptions o;
      o.training = true;
      auto r = nn::network_forward(net, Variable(img), o);
      ComplexTensor cr(r.reconstruction.shape()), ct(r.tags.shape());
      for (auto& z : cr.data()) z = {1.0, 0.5};
      for (auto& z : ct.data()) z = {0.25, -1.0};
      backward(add(real_part(sum(mul(r.reconstruction, Variable(cr)))), real_part(sum(mul(r.tags, Variable(ct))))));
      const ComplexTensor analytic = target.grad();
      const double h = 1e-5;
      ComplexTensor w = target.value();
      for (std::size_t j = 0; j < w.size(); ++j)
        for (int part = 0; part < 2; ++part) {
          const cplx base = w[j], delta = part ? cplx(0, h) : cplx(h, 0);
          w[j] = base + delta;
          const double up = loss_of(w);
          w[j] = base - delta;
          const double down = loss_of(w);
          w[j] = base;
          const double num = (up - down) / (2 * h);
          const double a = part ? analytic[j].imag() : analytic[j].real();
          const double err = std::abs(a - num);
          INFO(name << " entry " << j << " part " << part << " analytic " << a << " numeric " << num);
          CHECK((err <= 1e-7 || err / std::max(std::abs(a), std::abs(num)) < 1e-4));
        }
    }
  }
}

TEST_CASE("freeze masks") {
  CHECK(nn::FreezeMask::stage1().frozen(nn::Block::DecoderST));
  CHECK_FALSE(nn::FreezeMask::stage1().frozen(nn::Block::Encoder));
  CHECK(nn::FreezeMask::stage2().frozen(nn::Block::Encoder));
  CHECK(nn::FreezeMask::stage2().frozen(nn::Block::Ode));
  CHECK_FALSE(nn::FreezeMask::stage2().frozen(nn::Block::DecoderRI));
  CHECK_FALSE(nn::FreezeMask::stage2().frozen(nn::Block::DecoderST));
}

TEST_CASE("checkpoint round trip and codebook check") {
  nn::NetworkConfig cfg;
  const auto grid = channel_grid(3, 2);
  nn::AirOdeNetwork a(cfg, grid, 1), b(cfg, grid, 2);
  const auto j = nn::save_checkpoint(a);
  nn::load_checkpoint(b, nlohmann::json::parse(j.dump()));
  const auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].var.value() == pb[i].var.value());
  CHECK(a.enc_bn.running_var == b.enc_bn.running_var);
  CHECK(a.ode.chosen_indices() == b.ode.chosen_indices());

  nn::AirOdeNetwork other(cfg, channel_grid(3, 99), 1);
  CHECK_THROWS_AS(nn::load_checkpoint(other, j), nn::CheckpointError);
}
