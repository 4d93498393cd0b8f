#pragma once

// Losses, Adam, and the two-stage training schedule.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "airode/cnn.hpp"
#include "airode/metrics.hpp"
#include "json.hpp"

namespace airode::train {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LossConfig {
  double alpha = 1.0;  // reconstruction weight
  double beta = 1.0;   // tagging weight
  void validate() const;
};

// ((sum dRe^2) + (sum dIm^2)) / (2 A^2), averaged over the batch when the
// inputs carry a leading batch axis (any shape; the last two axes are the image).
Variable mse_loss(const Variable& y, const Variable& s);

// Cross-entropy of softmax over the tag moduli. y: Q or N x Q; targets: one
// row of Q weights per sample (one-hot). Averaged over the batch.
Variable ce_loss(const Variable& y, const std::vector<std::vector<double>>& targets);
Variable ce_loss(const Variable& y, const std::vector<std::size_t>& labels, std::size_t classes);

Variable joint_loss(const Variable& y_img, const Variable& s_img, const Variable& y_tag,
                    const std::vector<std::vector<double>>& targets, const LossConfig& cfg);

struct AdamConfig {
  double learning_rate = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Each complex entry is optimized as two independent real parameters.
class Adam {
 public:
  Adam(std::vector<Variable> params, AdamConfig cfg);

  // Updates every parameter that requires a gradient and has one.
  void step();
  void zero_grad();
  std::uint64_t steps() const { return t_; }

  nlohmann::json state() const;
  void load_state(const nlohmann::json& j);

 private:
  std::vector<Variable> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

struct LabeledImages {
  ComplexTensor images;  // N x A x A
  std::vector<std::size_t> labels;
  std::size_t size() const { return labels.size(); }
  LabeledImages subset(const std::vector<std::size_t>& idx) const;
};

struct TrainSchedule {
  std::size_t stage1_epochs = 40;
  std::size_t stage2_epochs = 20;
  std::size_t batch_size = 32;
  AdamConfig adam;
  std::uint64_t seed = 1;
  std::size_t validate_every = 5;
  // Stop after this many total epochs (0 = run both stages).
  std::size_t stop_after = 0;
  void validate() const;
  std::size_t total_epochs() const { return stage1_epochs + stage2_epochs; }
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based over both stages
  int stage = 1;
  double train_loss = 0.0;
  std::optional<metrics::MetricsRecord> validation;
};

std::string log_csv(const std::vector<EpochLog>& log);

struct TrainResult {
  nlohmann::json checkpoint;  // includes the optimizer state for resuming
  std::vector<EpochLog> log;
  std::array<std::vector<std::size_t>, 3> chosen;
  std::optional<metrics::MetricsRecord> after_stage1;  // validation metrics at the end of stage 1
  std::size_t completed_epochs = 0;
};

// Digital-path metrics on a data set, evaluated in batches without recording.
metrics::MetricsRecord evaluate(nn::AirOdeNetwork& net, const LabeledImages& data, std::size_t batch = 100);

// Stage 1: reconstruction only, tagging decoder frozen. Stage 2: joint loss,
// encoder and ODE block frozen. `resume` is a checkpoint produced by an
// earlier (stopped) call with the same schedule.
TrainResult train_two_stage(nn::AirOdeNetwork& net, const LabeledImages& train_set, const LabeledImages& val_set,
                            const TrainSchedule& schedule, const LossConfig& loss,
                            const nlohmann::json* resume = nullptr,
                            const std::function<void(const EpochLog&)>& on_epoch = {});

}  // namespace airode::train
