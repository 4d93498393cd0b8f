#pragma once

// Image-quality and tagging metrics.

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "airode/ctensor.hpp"

namespace airode::metrics {

inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

// ((sum dRe^2) + (sum dIm^2)) / (2 n) over n pixels.
double complex_mse(std::span<const cplx> y, std::span<const cplx> s);

// +inf when the images are identical.
double psnr(const ComplexTensor& y, const ComplexTensor& s, double max_i = 1.0);

// Single-window SSIM over pixel moduli.
double ssim(const ComplexTensor& y, const ComplexTensor& s, double k1 = 0.01, double k2 = 0.03, double max_i = 1.0);

// Lowest index wins ties.
std::size_t argmax(std::span<const double> scores);

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes = 0) : classes_(classes), counts_(classes * classes, 0) {}

  void add(std::size_t truth, std::size_t predicted);
  std::size_t classes() const { return classes_; }
  std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts_.at(truth * classes_ + predicted); }
  std::uint64_t total() const;
  std::uint64_t trace() const;
  std::uint64_t row_sum(std::size_t truth) const;
  // Row = true class, columns = percentage of that class predicted as each class.
  std::string to_csv() const;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

struct MetricsRecord {
  double psnr_db = 0.0;
  double ssim = 0.0;
  double accuracy = 0.0;
  ConfusionMatrix confusion;
  std::size_t samples = 0;
};

// scores: one row of Q moduli per sample.
MetricsRecord accuracy_and_confusion(const std::vector<std::vector<double>>& scores,
                                     const std::vector<std::size_t>& labels, std::size_t classes);

// Batch evaluation: reconstructions/targets N x A x A, tags N x Q complex.
// PSNR and SSIM are averaged over the per-image values.
MetricsRecord evaluate_batch(const ComplexTensor& reconstructions, const ComplexTensor& targets,
                             const ComplexTensor& tags, const std::vector<std::size_t>& labels, std::size_t classes);

}  // namespace airode::metrics
