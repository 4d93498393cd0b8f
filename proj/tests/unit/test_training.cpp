#include <cmath>
#include <random>

#include "airode/dataset.hpp"
#include "airode/training.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace airode;
using namespace airode::train;

namespace {

ris::CodebookGrid grid_for(std::uint64_t seed) {
  return ris::build_codebooks(ris::sample_channel(ris::SystemGeometry::make_default(3, 3, 3, seed), {}, seed));
}

data::Dataset small_data(std::size_t train, std::uint64_t seed = 1) {
  data::SyntheticParams p;
  p.train = train;
  p.validation = 40;
  p.test = 40;
  p.seed = seed;
  return data::synthesize(p);
}

std::vector<std::vector<double>> one_hot(const std::vector<std::size_t>& labels, std::size_t Q) {
  std::vector<std::vector<double>> t(labels.size(), std::vector<double>(Q, 0.0));
  for (std::size_t n = 0; n < labels.size(); ++n) t[n][labels[n]] = 1.0;
  return t;
}

double scalar(const Variable& v) { return v.value()[0].real(); }

double lse_oracle(const std::vector<double>& r, std::size_t label) {
  double top = r[0];
  for (double x : r) top = std::max(top, x);
  double z = 0;
  for (double x : r) z += std::exp(x - top);
  return top + std::log(z) - r[label];
}

}  // namespace

TEST_CASE("reconstruction loss") {
  NoGradGuard g;
  const Variable one(ComplexTensor({1, 1}, {cplx(1, 1)})), zero(ComplexTensor({1, 1}));
  CHECK(scalar(mse_loss(one, zero)) == 1.0);
  CHECK(scalar(mse_loss(one, one)) == 0.0);
  CHECK_THROWS_AS(mse_loss(one, Variable(ComplexTensor({2, 2}))), ShapeError);

  std::mt19937_64 rng(1);
  for (int rep = 0; rep < 5; ++rep) {
    const auto y = testutil::random_tensor({3, 7, 7}, rng), s = testutil::random_tensor({3, 7, 7}, rng);
    double per_image = 0;
    for (std::size_t n = 0; n < 3; ++n) {
      double re = 0, im = 0;
      for (std::size_t i = 0; i < 49; ++i) {
        const cplx d = y[n * 49 + i] - s[n * 49 + i];
        re += d.real() * d.real();
        im += d.imag() * d.imag();
      }
      per_image += (re + im) / (2.0 * 49);
    }
    const double got = scalar(mse_loss(Variable(y), Variable(s)));
    CHECK(std::abs(got - per_image / 3) <= 1e-12 * per_image);
    CHECK(got >= 0);
  }
}

TEST_CASE("tagging loss") {
  NoGradGuard g;
  SUBCASE("uniform moduli") {
    ComplexTensor y({10});
    for (std::size_t q = 0; q < 10; ++q) y[q] = std::polar(0.7, 0.3 * q);
    CHECK(scalar(ce_loss(Variable(y), {3}, 10)) == doctest::Approx(std::log(10.0)).epsilon(1e-12));
  }
  SUBCASE("saturated softmax") {
    ComplexTensor y({10});
    y[4] = 800.0;
    const double l = scalar(ce_loss(Variable(y), {4}, 10));
    CHECK(l >= 0);
    CHECK(l < 1e-300);
  }
  SUBCASE("log-sum-exp oracle") {
    std::mt19937_64 rng(2);
    for (int rep = 0; rep < 20; ++rep) {
      const auto y = testutil::random_tensor({4, 10}, rng, 3.0);
      const std::vector<std::size_t> labels{1, 0, 9, 5};
      double want = 0;
      for (std::size_t n = 0; n < 4; ++n) {
        std::vector<double> r;
        for (std::size_t q = 0; q < 10; ++q) r.push_back(std::abs(y[n * 10 + q]));
        want += lse_oracle(r, labels[n]);
      }
      const double got = scalar(ce_loss(Variable(y), labels, 10));
      CHECK(std::abs(got - want / 4) <= 1e-10);
      CHECK(got > 0);
    }
  }
  SUBCASE("label errors") {
    const Variable y(ComplexTensor({1, 3}));
    CHECK_THROWS(ce_loss(y, std::vector<std::vector<double>>{{0, 0, 0}}));
    CHECK_THROWS(ce_loss(y, std::vector<std::vector<double>>{{1, 0}}));
  }
}

TEST_CASE("tagging loss gradient") {
  const auto labels = std::vector<std::size_t>{2, 0, 4};
  std::mt19937_64 rng(3);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto y = testutil::random_tensor({3, 5}, rng);
    const auto rep = testutil::check_gradients(
        [&](const std::vector<Variable>& in) { return ce_loss(in[0], labels, 5); }, {y}, seed);
    CHECK_MESSAGE(rep.ok(), rep.first_failure);
  }
}

TEST_CASE("joint loss") {
  NoGradGuard g;
  std::mt19937_64 rng(4);
  const Variable y(testutil::random_tensor({2, 5, 5}, rng)), s(testutil::random_tensor({2, 5, 5}, rng));
  const Variable tags(testutil::random_tensor({2, 4}, rng));
  const auto t = one_hot({1, 3}, 4);
  const double mse = scalar(mse_loss(y, s)), ce = scalar(ce_loss(tags, t));
  CHECK(scalar(joint_loss(y, s, tags, t, {0.7, 0.0})) == 0.7 * mse);
  CHECK(scalar(joint_loss(y, s, tags, t, {0.0, 1.3})) == 1.3 * ce);
  CHECK(scalar(joint_loss(y, s, tags, t, {1.0, 1.0})) == doctest::Approx(mse + ce).epsilon(1e-14));
  for (auto [a, b] : {std::pair{1.0, 1.0}, std::pair{0.3, 2.0}, std::pair{5.0, 0.1}}) {
    const double base = scalar(joint_loss(y, s, tags, t, {a, b}));
    CHECK(scalar(joint_loss(y, s, tags, t, {2 * a, 2 * b})) == doctest::Approx(2 * base).epsilon(1e-14));
  }
  CHECK_THROWS(joint_loss(y, s, tags, t, {0.0, 0.0}));
  CHECK_THROWS(joint_loss(y, s, tags, t, {-1.0, 1.0}));
}

TEST_CASE("Adam") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    std::mt19937_64 rng(5);
    Variable w(testutil::random_tensor({4}, rng), true);
    const ComplexTensor before = w.value();
    Adam opt({w}, {});
    for (int i = 0; i < 3; ++i) {
      backward(real_part(sum(scale(w, 0.0))));
      REQUIRE(w.has_grad());
      opt.step();
      opt.zero_grad();
    }
    CHECK(w.value() == before);
  }
  SUBCASE("first step moves each real component by the learning rate") {
    Variable w(ComplexTensor({2}, {cplx(1, -1), cplx(0.5, 2)}), true);
    Adam opt({w}, {0.01, 0.9, 0.999, 1e-12});
    backward(real_part(sum(mul(w, Variable(ComplexTensor({2}, {cplx(3, 0), cplx(-2, 0)}))))));
    opt.step();
    // d/dre = (3, -2), d/dim = (0, 0)
    CHECK(w.value()[0].real() == doctest::Approx(0.99));
    CHECK(w.value()[1].real() == doctest::Approx(0.51));
    CHECK(w.value()[0].imag() == -1.0);
    CHECK(w.value()[1].imag() == 2.0);
  }
  SUBCASE("state round trip") {
    Variable a(ComplexTensor({3}, {cplx(1, 0), cplx(2, 0), cplx(3, 0)}), true);
    Variable b(a.value(), true);
    Adam oa({a}, {}), ob({b}, {});
    auto step = [](Variable& v, Adam& o) {
      backward(real_part(sum(mul(v, v))));
      o.step();
      o.zero_grad();
    };
    step(a, oa);
    step(b, ob);
    Adam restored({b}, {});
    restored.load_state(nlohmann::json::parse(ob.state().dump()));
    CHECK(restored.steps() == 1);
    step(a, oa);
    step(b, restored);
    CHECK(a.value() == b.value());
  }
}

TEST_CASE("freeze contract") {
  const auto grid = grid_for(6);
  const auto data = small_data(64, 6);
  nn::AirOdeNetwork net({}, grid, 6);

  SUBCASE("stage-2 masks stop gradients into encoder and ODE block") {
    net.apply_freeze(nn::FreezeMask::stage2());
    nn::ForwardOptions fo;
    fo.training = true;
    const auto batch = data.train.subset({0, 1, 2, 3, 4, 5, 6, 7});
    auto r = nn::network_forward(net, Variable(batch.images), fo);
    backward(joint_loss(r.reconstruction, Variable(batch.images), r.tags, one_hot(batch.labels, 10), {}));
    for (auto b : {nn::Block::Encoder, nn::Block::Ode})
      for (const auto& p : net.parameters(b)) {
        CHECK_FALSE(p.var.requires_grad());
        CHECK_FALSE(p.var.has_grad());
      }
    for (const auto& p : net.parameters(nn::Block::DecoderST)) CHECK(p.var.has_grad());
  }

  SUBCASE("frozen blocks are bit-identical across stage 2") {
    TrainSchedule sched;
    sched.stage1_epochs = 1;
    sched.stage2_epochs = 2;
    sched.batch_size = 16;
    sched.stop_after = 1;
    const auto mid = train_two_stage(net, data.train, data.validation, sched, {});
    std::vector<ComplexTensor> frozen;
    for (auto b : {nn::Block::Encoder, nn::Block::Ode})
      for (const auto& p : net.parameters(b)) frozen.push_back(p.var.value());
    const ComplexTensor running_mean = net.enc_bn.running_mean, running_var = net.enc_bn.running_var;
    sched.stop_after = 0;
    train_two_stage(net, data.train, data.validation, sched, {}, &mid.checkpoint);
    std::size_t i = 0;
    for (auto b : {nn::Block::Encoder, nn::Block::Ode})
      for (const auto& p : net.parameters(b)) CHECK(p.var.value() == frozen[i++]);
    CHECK(net.enc_bn.running_mean == running_mean);
    CHECK(net.enc_bn.running_var == running_var);
  }

  SUBCASE("stage 1 leaves the tagging decoder alone") {
    std::vector<ComplexTensor> before;
    for (const auto& p : net.parameters(nn::Block::DecoderST)) before.push_back(p.var.value());
    TrainSchedule sched;
    sched.stage1_epochs = 2;
    sched.stage2_epochs = 1;
    sched.batch_size = 16;
    sched.stop_after = 2;
    train_two_stage(net, data.train, data.validation, sched, {});
    std::size_t i = 0;
    for (const auto& p : net.parameters(nn::Block::DecoderST)) CHECK(p.var.value() == before[i++]);
  }
}

TEST_CASE("resuming reproduces an uninterrupted run") {
  const auto grid = grid_for(7);
  const auto data = small_data(96, 7);
  TrainSchedule sched;
  sched.stage1_epochs = 2;
  sched.stage2_epochs = 2;
  sched.batch_size = 16;
  sched.validate_every = 1;

  nn::AirOdeNetwork whole({}, grid, 7);
  const auto full = train_two_stage(whole, data.train, data.validation, sched, {});
  CHECK(full.completed_epochs == 4);
  REQUIRE(full.after_stage1.has_value());

  for (std::size_t cut : {1u, 2u, 3u}) {
    nn::AirOdeNetwork first({}, grid, 7);
    auto stopped = sched;
    stopped.stop_after = cut;
    const auto part = train_two_stage(first, data.train, data.validation, stopped, {});
    CHECK(part.completed_epochs == cut);

    nn::AirOdeNetwork second({}, grid, 99);  // weights come from the checkpoint
    const auto rest = train_two_stage(second, data.train, data.validation, sched, {},
                                      &part.checkpoint);
    CHECK(rest.checkpoint == full.checkpoint);
    REQUIRE(rest.log.size() == 4 - cut);
    for (std::size_t i = 0; i < rest.log.size(); ++i)
      CHECK(rest.log[i].train_loss == full.log[cut + i].train_loss);
  }
}

TEST_CASE("training log") {
  const auto grid = grid_for(8);
  const auto data = small_data(48, 8);
  nn::AirOdeNetwork net({}, grid, 8);
  TrainSchedule sched;
  sched.stage1_epochs = 3;
  sched.stage2_epochs = 2;
  sched.batch_size = 16;
  sched.validate_every = 2;
  std::size_t calls = 0;
  const auto r = train_two_stage(net, data.train, data.validation, sched, {}, nullptr,
                                 [&](const EpochLog&) { ++calls; });
  CHECK(calls == 5);
  REQUIRE(r.log.size() == 5);
  const std::vector<bool> validated{false, true, true, true, true};  // every 2, end of stage 1, last
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(r.log[i].epoch == i + 1);
    CHECK(r.log[i].stage == (i < 3 ? 1 : 2));
    CHECK(r.log[i].validation.has_value() == validated[i]);
  }
  const auto csv = log_csv(r.log);
  CHECK(csv.rfind("epoch,stage,trainLoss,valPSNR,valSSIM,valAccuracy\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);
}

TEST_CASE("chosen indices are stable under re-quantization") {
  const auto grid = grid_for(9);
  const auto data = small_data(64, 9);
  nn::AirOdeNetwork net({}, grid, 9);
  TrainSchedule sched;
  sched.stage1_epochs = 3;
  sched.stage2_epochs = 1;
  sched.batch_size = 16;
  sched.stop_after = 3;
  const auto r = train_two_stage(net, data.train, data.validation, sched, {});
  CHECK(r.chosen == net.ode.chosen_indices());
  CHECK(net.ode.chosen_indices() == net.ode.chosen_indices());
  for (std::size_t p = 0; p < 3; ++p) {
    const auto w = net.ode.psi[p].effective_weights();
    for (std::size_t k = 0; k < w.size(); ++k) CHECK(grid[p][k].nearest(w[k]) == r.chosen[p][k]);
  }
  nn::AirOdeNetwork reloaded({}, grid, 123);
  nn::load_checkpoint(reloaded, r.checkpoint);
  CHECK(reloaded.ode.chosen_indices() == r.chosen);
}

TEST_CASE("stage-1 loss falls on the desk-scale set") {
  const auto data = data::synthesize({});
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto grid = grid_for(seed);
    nn::AirOdeNetwork net({}, grid, seed);
    TrainSchedule sched;
    sched.seed = seed;
    sched.stop_after = 20;
    const auto r = train_two_stage(net, data.train, data.validation, sched, {});
    REQUIRE(r.log.size() == 20);
    CHECK(r.log[19].train_loss < r.log[0].train_loss);
  }
}

TEST_CASE("invalid inputs") {
  const auto grid = grid_for(10);
  nn::AirOdeNetwork net({}, grid, 10);
  const auto data = small_data(16, 10);
  LabeledImages empty;
  empty.images = ComplexTensor({0, 14, 14});
  TrainSchedule sched;
  CHECK_THROWS_AS(train_two_stage(net, empty, data.validation, sched, {}), TrainingError);
  CHECK_THROWS_AS(train_two_stage(net, data.train, empty, sched, {}), TrainingError);
  CHECK_THROWS_AS(evaluate(net, empty), TrainingError);
  sched.stage1_epochs = 0;
  CHECK_THROWS(train_two_stage(net, data.train, data.validation, sched, {}));
  sched = {};
  sched.adam.learning_rate = 0;
  CHECK_THROWS(train_two_stage(net, data.train, data.validation, sched, {}));
}
