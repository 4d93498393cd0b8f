#pragma once

// Complex image datasets: IDX ingestion and a synthetic blob generator.

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "airode/training.hpp"

namespace airode::data {

class IdxError : public std::runtime_error {
 public:
  IdxError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

struct IdxImages {
  std::size_t count = 0, rows = 0, cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols, row-major
};

IdxImages parse_idx_images(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes);
IdxImages read_idx_images(const std::filesystem::path& path);
std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path);

enum class Encoding { AmplitudePhase, Real };
Encoding parse_encoding(const std::string& name);

// p -> p * exp(i pi p), or p + 0i.
cplx encode_pixel(double p, Encoding enc);

// Picks `count` indices so every class gets count/Q or count/Q + 1 samples.
// Indices come from `pool` (in pool order after a seeded shuffle).
std::vector<std::size_t> stratified_pick(const std::vector<std::size_t>& labels, std::span<const std::size_t> pool,
                                         std::size_t count, std::size_t classes, std::uint64_t seed);

struct Dataset {
  train::LabeledImages train, validation, test;
  std::size_t classes = 10;
  std::size_t image_size = 14;
  std::string source;
  std::uint64_t seed = 0;
};

struct SyntheticParams {
  std::size_t image_size = 14;
  std::size_t classes = 10;
  std::size_t train = 2000, validation = 200, test = 500;
  std::size_t shared_blobs = 2;     // common to every class
  std::size_t blobs_per_class = 1;  // class-specific
  double jitter = 2.0;              // max template shift in pixels
  double amplitude = 0.3;           // relative brightness variation
  double pixel_noise = 0.1;
  Encoding encoding = Encoding::AmplitudePhase;
  std::uint64_t seed = 1;
};

Dataset synthesize(const SyntheticParams& p);

struct IdxSource {
  std::filesystem::path train_images, train_labels;
  std::filesystem::path test_images, test_labels;  // optional
  bool desk_scale = true;  // 2x2 mean pooling and stratified subsampling
  std::size_t train = 2000, validation = 200, test = 500;
  std::size_t classes = 10;
  Encoding encoding = Encoding::AmplitudePhase;
  std::uint64_t seed = 1;
};

// Full scale: 54,000 / 6,000 train / validation split of the training file,
// test file as is. Desk scale: stratified subsets of the configured sizes.
Dataset load_idx(const IdxSource& src);

}  // namespace airode::data
