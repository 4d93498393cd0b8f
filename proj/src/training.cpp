#include "airode/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "airode/ris.hpp"

namespace airode::train {

using nlohmann::json;

void LossConfig::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0)) throw std::invalid_argument("loss weights must be nonnegative");
  if (!(alpha + beta > 0.0)) throw std::invalid_argument("loss weights must not both be zero");
}

Variable mse_loss(const Variable& y, const Variable& s) {
  if (y.value().shape() != s.value().shape())
    throw ShapeError("mse_loss: shape mismatch " + to_string(y.value().shape()) + " vs " + to_string(s.value().shape()));
  const std::size_t n = y.value().size();
  if (n == 0) throw ShapeError("mse_loss: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const cplx d = y.value()[i] - s.value()[i];
    acc += d.real() * d.real() + d.imag() * d.imag();
  }
  const double denom = 2.0 * static_cast<double>(n);
  return record_op(ComplexTensor::scalar(acc / denom), {y, s},
                   [y, s, denom](const ComplexTensor& g, std::vector<ComplexTensor*>& gi) {
                     const double k = 2.0 * g[0].real() / denom;
                     for (std::size_t i = 0; i < y.value().size(); ++i) {
                       const cplx d = k * (y.value()[i] - s.value()[i]);
                       if (gi[0]) (*gi[0])[i] += d;
                       if (gi[1]) (*gi[1])[i] -= d;
                     }
                   });
}

Variable ce_loss(const Variable& y, const std::vector<std::vector<double>>& targets) {
  const ComplexTensor& v = y.value();
  const std::size_t Q = v.shape().back();
  const std::size_t N = v.rank() == 1 ? 1 : v.dim(0);
  if (v.rank() > 2 || targets.size() != N) throw ShapeError("ce_loss: expected one target row per sample");
  std::vector<double> soft(N * Q), tsum(N);
  double total = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    const auto& l = targets[n];
    if (l.size() != Q) throw ShapeError("ce_loss: target length differs from the class count");
    tsum[n] = std::accumulate(l.begin(), l.end(), 0.0);
    if (!(tsum[n] > 0.0)) throw std::invalid_argument("ce_loss: all-zero label");
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t q = 0; q < Q; ++q) top = std::max(top, std::abs(v[n * Q + q]));
    double z = 0.0;
    for (std::size_t q = 0; q < Q; ++q) z += std::exp(std::abs(v[n * Q + q]) - top);
    const double lse = top + std::log(z);
    for (std::size_t q = 0; q < Q; ++q) {
      const double r = std::abs(v[n * Q + q]);
      soft[n * Q + q] = std::exp(r - lse);
      total -= l[q] * (r - lse);
    }
  }
  const double inv_n = 1.0 / static_cast<double>(N);
  return record_op(ComplexTensor::scalar(total * inv_n), {y},
                   [y, targets, soft = std::move(soft), tsum = std::move(tsum), N, Q, inv_n](
                       const ComplexTensor& g, std::vector<ComplexTensor*>& gi) {
                     if (!gi[0]) return;
                     for (std::size_t n = 0; n < N; ++n)
                       for (std::size_t q = 0; q < Q; ++q) {
                         const cplx z = y.value()[n * Q + q];
                         const double r = std::abs(z);
                         if (r == 0.0) continue;
                         const double dr = (tsum[n] * soft[n * Q + q] - targets[n][q]) * inv_n * g[0].real();
                         (*gi[0])[n * Q + q] += dr * z / r;
                       }
                   });
}

Variable ce_loss(const Variable& y, const std::vector<std::size_t>& labels, std::size_t classes) {
  std::vector<std::vector<double>> t(labels.size(), std::vector<double>(classes, 0.0));
  for (std::size_t n = 0; n < labels.size(); ++n) t[n].at(labels[n]) = 1.0;
  return ce_loss(y, t);
}

Variable joint_loss(const Variable& y_img, const Variable& s_img, const Variable& y_tag,
                    const std::vector<std::vector<double>>& targets, const LossConfig& cfg) {
  cfg.validate();
  return add(scale(mse_loss(y_img, s_img), cfg.alpha), scale(ce_loss(y_tag, targets), cfg.beta));
}

// ---- Adam ---------------------------------------------------------------------------

Adam::Adam(std::vector<Variable> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  if (!(cfg_.learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  for (const auto& p : params_) {
    m_.emplace_back(2 * p.value().size(), 0.0);
    v_.emplace_back(2 * p.value().size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Variable& p = params_[i];
    if (!p.requires_grad() || !p.has_grad()) continue;
    const ComplexTensor& g = p.grad();
    ComplexTensor& w = p.mutable_value();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      double part[2] = {w[j].real(), w[j].imag()};
      const double grad[2] = {g[j].real(), g[j].imag()};
      for (int c = 0; c < 2; ++c) {
        double& mj = m[2 * j + c];
        double& vj = v[2 * j + c];
        mj = cfg_.beta1 * mj + (1.0 - cfg_.beta1) * grad[c];
        vj = cfg_.beta2 * vj + (1.0 - cfg_.beta2) * grad[c] * grad[c];
        part[c] -= cfg_.learning_rate * (mj / c1) / (std::sqrt(vj / c2) + cfg_.eps);
      }
      w[j] = {part[0], part[1]};
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

json Adam::state() const { return {{"step", t_}, {"m", m_}, {"v", v_}}; }

void Adam::load_state(const json& j) {
  auto m = j.at("m").get<std::vector<std::vector<double>>>();
  auto v = j.at("v").get<std::vector<std::vector<double>>>();
  if (m.size() != m_.size() || v.size() != v_.size()) throw TrainingError("optimizer state does not match parameters");
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i].size() != m_[i].size() || v[i].size() != v_[i].size())
      throw TrainingError("optimizer state does not match parameters");
  m_ = std::move(m);
  v_ = std::move(v);
  t_ = j.at("step").get<std::uint64_t>();
}

// ---- data -----------------------------------------------------------------------------

LabeledImages LabeledImages::subset(const std::vector<std::size_t>& idx) const {
  const std::size_t A = images.dim(1), B = images.dim(2), px = A * B;
  LabeledImages out;
  out.images = ComplexTensor({idx.size(), A, B});
  out.labels.reserve(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto src = images.data().subspan(idx[i] * px, px);
    std::copy(src.begin(), src.end(), out.images.data().begin() + i * px);
    out.labels.push_back(labels.at(idx[i]));
  }
  return out;
}

void TrainSchedule::validate() const {
  if (stage1_epochs == 0 || stage2_epochs == 0) throw std::invalid_argument("epoch counts must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (!(adam.learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (validate_every == 0) throw std::invalid_argument("validation cadence must be positive");
}

std::string log_csv(const std::vector<EpochLog>& log) {
  std::ostringstream os;
  os.precision(10);
  os << "epoch,stage,trainLoss,valPSNR,valSSIM,valAccuracy\n";
  for (const auto& e : log) {
    os << e.epoch << ',' << e.stage << ',' << e.train_loss;
    if (e.validation)
      os << ',' << e.validation->psnr_db << ',' << e.validation->ssim << ',' << e.validation->accuracy;
    else
      os << ",,,";
    os << '\n';
  }
  return os.str();
}

metrics::MetricsRecord evaluate(nn::AirOdeNetwork& net, const LabeledImages& data, std::size_t batch) {
  if (data.size() == 0) throw TrainingError("cannot evaluate an empty data set");
  NoGradGuard guard;
  const std::size_t N = data.size(), A = data.images.dim(1), px = A * data.images.dim(2);
  const std::size_t Q = net.config().classes;
  ComplexTensor recon(data.images.shape()), tags({N, Q});
  for (std::size_t start = 0; start < N; start += batch) {
    std::vector<std::size_t> idx(std::min(batch, N - start));
    std::iota(idx.begin(), idx.end(), start);
    auto part = data.subset(idx);
    auto r = nn::network_forward(net, Variable(part.images), {});
    std::copy(r.reconstruction.value().data().begin(), r.reconstruction.value().data().end(),
              recon.data().begin() + start * px);
    std::copy(r.tags.value().data().begin(), r.tags.value().data().end(), tags.data().begin() + start * Q);
  }
  return metrics::evaluate_batch(recon, data.images, tags, data.labels, Q);
}

namespace {

std::vector<Variable> trainable(const nn::AirOdeNetwork& net) {
  std::vector<Variable> out;
  for (auto& p : net.parameters())
    if (p.var.requires_grad()) out.push_back(p.var);
  return out;
}

}  // namespace

TrainResult train_two_stage(nn::AirOdeNetwork& net, const LabeledImages& train_set, const LabeledImages& val_set,
                            const TrainSchedule& schedule, const LossConfig& loss, const json* resume,
                            const std::function<void(const EpochLog&)>& on_epoch) {
  schedule.validate();
  loss.validate();
  if (train_set.size() == 0) throw TrainingError("empty training set");
  if (val_set.size() == 0) throw TrainingError("empty validation set");
  const std::size_t Q = net.config().classes;

  TrainResult result;
  std::size_t start = 0;
  const json* resume_adam = nullptr;
  int resume_stage = 0;
  if (resume) {
    nn::load_checkpoint(net, *resume);
    const json& tr = resume->at("training");
    start = tr.at("completed_epochs").get<std::size_t>();
    resume_stage = tr.at("stage").get<int>();
    resume_adam = &tr.at("adam");
  }

  const std::size_t last = schedule.stop_after ? std::min(schedule.stop_after, schedule.total_epochs())
                                               : schedule.total_epochs();
  std::optional<Adam> opt;
  int current_stage = 0;
  std::vector<std::size_t> order(train_set.size());

  for (std::size_t epoch = start + 1; epoch <= last; ++epoch) {
    const int stage = epoch <= schedule.stage1_epochs ? 1 : 2;
    if (stage != current_stage) {
      net.apply_freeze(stage == 1 ? nn::FreezeMask::stage1() : nn::FreezeMask::stage2());
      opt.emplace(trainable(net), schedule.adam);
      if (resume_adam && resume_stage == stage) opt->load_state(*resume_adam);
      current_stage = stage;
    }

    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(ris::split_seed(schedule.seed, epoch));
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += schedule.batch_size) {
      std::vector<std::size_t> idx(order.begin() + b, order.begin() + std::min(order.size(), b + schedule.batch_size));
      const LabeledImages batch = train_set.subset(idx);
      const Variable images(batch.images);
      nn::ForwardOptions fo;
      fo.training = true;
      fo.tags = stage == 2;
      auto r = nn::network_forward(net, images, fo);
      const Variable target(batch.images);
      Variable l;
      if (stage == 1) {
        l = mse_loss(r.reconstruction, target);
      } else {
        std::vector<std::vector<double>> onehot(idx.size(), std::vector<double>(Q, 0.0));
        for (std::size_t n = 0; n < idx.size(); ++n) onehot[n][batch.labels[n]] = 1.0;
        l = joint_loss(r.reconstruction, target, r.tags, onehot, loss);
      }
      backward(l);
      opt->step();
      opt->zero_grad();
      loss_sum += l.value()[0].real();
      ++batches;
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.stage = stage;
    entry.train_loss = loss_sum / static_cast<double>(batches);
    if (epoch % schedule.validate_every == 0 || epoch == schedule.stage1_epochs || epoch == last)
      entry.validation = evaluate(net, val_set);
    if (epoch == schedule.stage1_epochs) result.after_stage1 = entry.validation;
    if (on_epoch) on_epoch(entry);
    result.log.push_back(std::move(entry));
    result.completed_epochs = epoch;
  }
  if (result.completed_epochs == 0) result.completed_epochs = start;

  result.chosen = net.ode.chosen_indices();
  result.checkpoint = nn::save_checkpoint(net);
  result.checkpoint["training"] = {{"completed_epochs", result.completed_epochs},
                                   {"stage", opt ? current_stage : resume_stage},
                                   {"adam", opt ? opt->state() : resume_adam ? *resume_adam : json::object()}};
  return result;
}

}  // namespace airode::train
