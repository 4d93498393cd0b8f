#pragma once

// Analog execution of the ODE block: three RIS groups, a relay, and two
// direct links compute the block while the features are transmitted.
//
// Slot protocol for kernel width K (h = K/2):
//   transmitter antennas 0..K-1   -> group-1 RISs, operand CReLU(s)
//   transmitter antennas K..2K-1  -> group-3 RISs, operand CReLU(s), amplitude 1/2
//   transmitter antenna 2K        -> relay over d1, residual s
//   transmitter antenna 2K+1      -> receiver over d2, residual s
//   relay antennas 0..K-1         -> group-2 RISs, operand CReLU(y1), amplitude 1/2
// Every RIS-bound stream is the zero-padded operand (length C + 2h) times the
// precoder of its RIS; antenna k is staggered so slot t carries padded[t + k].

#include <array>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "airode/cnn.hpp"
#include "airode/ris.hpp"

namespace airode::analog {

class DeploymentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using IndexGrid = std::array<std::vector<std::size_t>, 3>;

struct AnalogContext {
  ris::ChannelRealization channel;
  ris::CodebookGrid codebooks;
  IndexGrid chosen;
  double snr_db = std::numeric_limits<double>::infinity();
  std::uint64_t seed = 0;
  // false: only the direct links carry signal (no RIS branches).
  bool route_ris = true;

  // Cascaded channel g^T Phi h of the configured RIS, before precoding.
  std::array<std::vector<cplx>, 3> air_weights;

  std::size_t kernel_size() const { return channel.geometry.ris_per_group; }
  cplx effective_weight(std::size_t group, std::size_t ris) const {
    return codebooks.at(group).at(ris).entries.at(chosen.at(group).at(ris));
  }

  static AnalogContext build(ris::ChannelRealization channel, ris::CodebookGrid codebooks, IndexGrid chosen,
                             double snr_db, std::uint64_t seed);
};

struct SymbolStats {
  cplx mean;
  double scale = 1.0;
  bool clamped = false;  // zero-variance input; scale forced to 1
};

struct NormalizedSymbols {
  std::vector<cplx> symbols;
  SymbolStats stats;
};

// Zero mean, unit mean-squared modulus.
NormalizedSymbols normalize_symbols(std::span<const cplx> s);
std::vector<cplx> denormalize_symbols(std::span<const cplx> s, const SymbolStats& stats);

struct SymbolFrame {
  std::size_t slots = 0;
  std::size_t half_width = 0;
  std::vector<std::vector<cplx>> streams;  // 2K + 2 padded, precoded streams
  SymbolStats stats;

  std::size_t antennas() const { return streams.size(); }
  // Symbol radiated by `antenna` in `slot`, after the per-antenna delay.
  cplx symbol(std::size_t antenna, std::size_t slot) const;
};

SymbolFrame build_frame(const NormalizedSymbols& s, const AnalogContext& ctx);

struct SlotTraceRow {
  std::size_t slot;
  std::string branch;
  cplx value;
};
using SlotTrace = std::vector<SlotTraceRow>;
std::string trace_csv(const SlotTrace& trace);

struct NoisePower {
  double relay = 0.0;
  double receiver = 0.0;
};

// Noise variance per hop: 10^(-snr/10) times the mean noiseless receive power.
NoisePower calibrate_noise(const SymbolFrame& frame, const AnalogContext& ctx);

// Propagates the frame with explicit noise samples n1 (relay) and n2
// (receiver), each C long. Returns the received vector in the normalized
// domain (not denormalized).
std::vector<cplx> propagate(const SymbolFrame& frame, const AnalogContext& ctx, std::span<const cplx> n1,
                            std::span<const cplx> n2, SlotTrace* trace = nullptr);

// Full transmission: calibrated CN(0, delta^2) noise drawn from
// (ctx.seed, noise_key), then denormalized with the frame statistics.
std::vector<cplx> transmit(const SymbolFrame& frame, const AnalogContext& ctx, std::uint64_t noise_key = 0,
                           SlotTrace* trace = nullptr);

// Per-sample analog ODE over a batch of features; sample n uses noise key
// keys[n] (or n when keys is empty).
nn::OdeExecutor make_executor(const AnalogContext& ctx, std::vector<std::uint64_t> keys = {});

struct DeployResult {
  ComplexTensor reconstructions;  // N x A x A
  ComplexTensor tags;             // N x Q
};

// Encoder at the transmitter, ODE block over the air, decoders at the
// receiver. Throws DeploymentError if the network was trained on different
// codebooks.
DeployResult deploy_pipeline(nn::AirOdeNetwork& net, const ComplexTensor& images, const AnalogContext& ctx,
                             std::span<const std::uint64_t> sample_keys = {});

}  // namespace airode::analog
