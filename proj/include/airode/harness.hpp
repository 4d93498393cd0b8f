#pragma once

// Experiment configuration, sweep driver, and output writers.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "airode/airode.hpp"
#include "airode/dataset.hpp"
#include "airode/training.hpp"
#include "json.hpp"

namespace airode::harness {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class SweepAxis { SnrDb, CompressionRatio, KernelSize, CodebookSize };
enum class Baseline { AirOde, RandomPhase, NoOde, Digital };

std::string to_string(SweepAxis a);
std::string to_string(Baseline b);
SweepAxis parse_axis(const std::string& s);
Baseline parse_baseline(const std::string& s);

struct ExperimentConfig {
  static constexpr int kSchemaVersion = 1;

  // data
  std::string dataset = "synthetic";  // or "idx"
  std::string idx_train_images, idx_train_labels, idx_test_images, idx_test_labels;
  bool desk_scale = true;
  std::size_t train_count = 2000, validation_count = 200, test_count = 500;
  std::string encoding = "amplitude_phase";
  std::uint64_t data_seed = 1;

  // network
  nn::NetworkConfig network;
  // RIS panels
  std::size_t elements_x = 3, elements_y = 3;
  ris::ChannelModelParams channel;
  std::uint64_t channel_seed = 7;
  std::string channel_file;  // optional channel JSON; overrides channel_seed
  std::uint64_t network_seed = 11;

  // training
  train::TrainSchedule schedule;
  train::LossConfig loss;

  // sweep
  SweepAxis axis = SweepAxis::SnrDb;
  std::vector<double> sweep_values{0, 5, 10, 15, 20, 25, 30};
  std::vector<Baseline> baselines{Baseline::AirOde, Baseline::RandomPhase, Baseline::NoOde, Baseline::Digital};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  double snr_db = 30.0;  // operating point when the sweep axis is not SNR

  std::string out_dir = "out";
  std::string checkpoint;  // optional: reuse a trained network (SNR sweeps only)

  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
  // FNV-1a of the canonical JSON.
  std::uint64_t hash() const;
};

// Encoder pooling / channel count whose A^2 / C is closest to `ratio`
// (feature side at least 2; fewer channels on ties).
struct CompressionPreset {
  std::size_t pool = 1;
  std::size_t channels = 1;
  std::size_t feature_length = 0;
  double ratio = 0.0;
};
CompressionPreset compression_preset(std::size_t image_size, double ratio, std::size_t max_channels = 16);

data::Dataset load_or_synthesize_dataset(const ExperimentConfig& cfg);

ris::ChannelRealization make_channel(const ExperimentConfig& cfg, std::size_t kernel_size);

struct ResultRow {
  Baseline baseline;
  double sweep_value;
  std::uint64_t seed;
  metrics::MetricsRecord metrics;
};

struct TrainedModel {
  ris::ChannelRealization channel;
  ris::CodebookGrid codebooks;
  std::unique_ptr<nn::AirOdeNetwork> net;
  train::TrainResult training;
};

// Builds the channel and codebooks for `cfg` (optionally restricted to the
// first `codebook_size` entries) and trains a network on them.
TrainedModel train_model(const ExperimentConfig& cfg, const data::Dataset& data, std::size_t codebook_size = 0);

// Evaluates one baseline at one SNR with one noise seed on the test split.
metrics::MetricsRecord evaluate_baseline(const TrainedModel& model, const data::Dataset& data, Baseline baseline,
                                         double snr_db, std::uint64_t seed);

struct ExperimentResult {
  std::vector<ResultRow> rows;
  std::string csv;
  nlohmann::json manifest;
};

std::string results_csv(const std::vector<ResultRow>& rows);

// Runs the sweep. With `write_outputs`, writes results.csv, manifest.json,
// training logs, and checkpoints into cfg.out_dir.
ExperimentResult run_experiment(const ExperimentConfig& cfg, bool write_outputs = true);

}  // namespace airode::harness
