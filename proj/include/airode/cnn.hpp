#pragma once

// Complex-valued layers and the encoder / ODE block / dual-decoder network.

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "airode/ctensor.hpp"
#include "airode/ris.hpp"
#include "json.hpp"

namespace airode::nn {

struct NamedParameter {
  std::string name;
  Variable var;
};

// Complex Gaussian init with E|w|^2 = 2 / fan_in.
Variable init_weight(Shape shape, std::size_t fan_in, std::mt19937_64& rng);

class CConv2d {
 public:
  CConv2d() = default;
  CConv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kh, std::size_t kw, bool with_bias,
          std::mt19937_64& rng);

  Variable forward(const Variable& x) const;

  Variable kernel;  // out x in x kh x kw
  Variable bias;    // out, undefined when disabled
  std::size_t stride = 1;
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;
};

// Re/im real-convolution cross terms: conv(Re w, Re u) - conv(Im w, Im u) and
// conv(Im w, Re u) + conv(Re w, Im u).
inline Variable cconv_forward(const CConv2d& layer, const Variable& x) { return layer.forward(x); }

class CLinear {
 public:
  CLinear() = default;
  CLinear(std::size_t in, std::size_t out, std::mt19937_64& rng);
  Variable forward(const Variable& x) const;

  Variable weight;  // out x in
  Variable bias;    // out
};

// Per-channel batch norm applied to re and im independently, followed by a
// complex affine map gamma * xhat + beta.
class CBatchNorm {
 public:
  CBatchNorm() = default;
  explicit CBatchNorm(std::size_t channels);

  // x: N x C x H x W. Training mode uses batch statistics and updates the
  // running estimates.
  Variable forward(const Variable& x, bool training);

  Variable gamma;
  Variable beta;
  // re part holds the statistic of Re(x), im part that of Im(x).
  ComplexTensor running_mean;
  ComplexTensor running_var;
  double eps = 1e-5;
  double momentum = 0.1;
};

struct QuantizedWeights {
  Variable weights;
  std::vector<std::size_t> indices;
};

// Nearest-codebook rounding of each latent tap. Forward uses the codebook
// member; backward passes the gradient to the latent unchanged.
QuantizedWeights ste_quantize(const Variable& latent, std::span<const ris::FeasibleWeightSet> codebooks);

// 1 x K convolution over a 1 x C feature row whose taps are constrained to
// per-tap codebooks. Zero padding of K/2 on each side keeps the length.
class QCConv {
 public:
  QCConv() = default;
  QCConv(std::vector<ris::FeasibleWeightSet> codebooks, std::mt19937_64& rng);

  std::size_t taps() const { return codebooks.size(); }
  // x: N x 1 x 1 x C. Records the chosen indices of this call.
  Variable forward(const Variable& x);
  // Effective weights for the current latent, without recording.
  std::vector<cplx> effective_weights() const;
  std::vector<std::size_t> current_indices() const;

  Variable latent;  // 1 x 1 x 1 x K
  std::vector<ris::FeasibleWeightSet> codebooks;
  std::vector<std::size_t> chosen;
};

// i = 1/2 Psi2(Psi1(s) + s) + 1/2 Psi3(s) + s with Psi_p = QCConv_p o CReLU.
class OdeBlock {
 public:
  OdeBlock() = default;
  OdeBlock(const ris::CodebookGrid& grid, std::mt19937_64& rng);

  // s: N x C (or 1 x C). Returns the same shape.
  Variable forward(const Variable& s);
  std::size_t kernel_size() const { return psi[0].taps(); }
  std::array<std::vector<std::size_t>, 3> chosen_indices() const;

  std::array<QCConv, 3> psi;
};

inline Variable ode_forward(OdeBlock& ode, const Variable& s) { return ode.forward(s); }

struct NetworkConfig {
  std::size_t image_size = 14;
  std::size_t classes = 10;
  std::size_t kernel_size = 3;       // ODE taps = RISs per group
  std::size_t pool = 2;              // encoder avg-pool window = decoder upsample factor
  std::size_t encoder_channels = 1;  // feature length C = encoder_channels * (image_size/pool)^2
  std::size_t hidden_channels = 16;
  std::size_t st_channels = 4;
  std::size_t st_pool = 0;  // 0 = largest divisor of the feature side not exceeding 4

  std::size_t feature_side() const { return image_size / pool; }
  std::size_t feature_length() const { return encoder_channels * feature_side() * feature_side(); }
  std::size_t st_pool_window() const;
  double compression_ratio() const {
    return static_cast<double>(image_size * image_size) / static_cast<double>(feature_length());
  }
  void validate() const;

  nlohmann::json to_json() const;
  static NetworkConfig from_json(const nlohmann::json& j);
};

enum class Block { Encoder, Ode, DecoderRI, DecoderST };

struct FreezeMask {
  bool encoder = false;
  bool ode = false;
  bool decoder_ri = false;
  bool decoder_st = false;

  bool frozen(Block b) const;
  static FreezeMask stage1() { return {false, false, false, true}; }
  static FreezeMask stage2() { return {true, true, false, false}; }
};

class AirOdeNetwork {
 public:
  AirOdeNetwork(NetworkConfig cfg, const ris::CodebookGrid& codebooks, std::uint64_t seed);

  const NetworkConfig& config() const { return cfg_; }

  // images: N x A x A -> features N x C
  Variable encode(const Variable& images, bool training);
  // features N x C -> N x A x A
  Variable decode_ri(const Variable& features) const;
  // features N x C -> N x Q complex tag outputs
  Variable decode_st(const Variable& features) const;

  std::vector<NamedParameter> parameters(Block block) const;
  std::vector<NamedParameter> parameters() const;
  void apply_freeze(const FreezeMask& mask);
  const FreezeMask& freeze_mask() const { return mask_; }

  const ris::CodebookGrid& codebooks() const { return codebooks_; }

  CConv2d enc_conv1, enc_conv2;
  CBatchNorm enc_bn;
  OdeBlock ode;
  CConv2d ri_conv1, ri_conv2;
  CConv2d st_conv;
  CLinear st_linear;

 private:
  NetworkConfig cfg_;
  ris::CodebookGrid codebooks_;
  FreezeMask mask_;
};

// Maps a batch of encoder features (N x C) to ODE-block outputs (N x C).
using OdeExecutor = std::function<ComplexTensor(const ComplexTensor& features)>;

enum class Mode { Digital, Analog };

struct ForwardOptions {
  Mode mode = Mode::Digital;
  const OdeExecutor* analog = nullptr;  // required for Mode::Analog
  bool training = false;
  bool reconstruction = true;
  bool tags = true;
};

struct ForwardResult {
  Variable reconstruction;  // N x A x A
  Variable tags;            // N x Q complex; scores are the moduli
  Variable features;        // encoder output N x C
  Variable ode_output;      // N x C
};

ForwardResult network_forward(AirOdeNetwork& net, const Variable& images, const ForwardOptions& opts);

// Moduli of the tag outputs, N x Q.
std::vector<std::vector<double>> tag_scores(const ComplexTensor& tags);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// JSON checkpoint: network config, every parameter and buffer as
// {name, shape, re[], im[]}, the chosen codebook indices of each QCConv, and
// caller-supplied metadata (hashes).
nlohmann::json save_checkpoint(const AirOdeNetwork& net, const nlohmann::json& meta = nlohmann::json::object());
// Restores parameters into `net`, whose config must match. Throws
// CheckpointError if the codebooks differ from the ones in the checkpoint.
void load_checkpoint(AirOdeNetwork& net, const nlohmann::json& j);

}  // namespace airode::nn
