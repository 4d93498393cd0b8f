#pragma once

// RIS channel model: link sampling, phase-configuration codebooks, and the
// precoding rotation that turns raw cascaded channels into feasible weights.

#include <array>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "airode/ctensor.hpp"
#include "json.hpp"

namespace airode::ris {

class ChannelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ChannelModelParams {
  double rician_factor = 10.0;
  double pathloss_a_db = 35.6;
  double pathloss_b = 2.2;
  double noise_variance = 1.0;
  double tx_power_cap = 1.0;
  // Two-level per-element phase set.
  std::array<double, 2> phase_levels{0.0, std::numbers::pi / 4.0};

  void validate() const;
};

// Distances (m) and angles (rad) for one RIS: h is the incoming hop, g the
// outgoing hop.
struct PanelLinks {
  double distance_h = 10.0;
  double distance_g = 10.0;
  double angle_h = 0.0;
  double angle_g = 0.0;
};

struct SystemGeometry {
  std::size_t groups = 3;
  std::size_t ris_per_group = 3;
  std::size_t elements_x = 3;
  std::size_t elements_y = 3;
  std::vector<PanelLinks> links;  // groups * ris_per_group, row-major by group
  double direct_distance_1 = 15.0;  // transmitter -> relay
  double direct_distance_2 = 40.0;  // transmitter -> receiver

  std::size_t elements() const { return elements_x * elements_y; }
  std::size_t tx_antennas() const { return 2 * ris_per_group + 2; }
  std::size_t relay_tx_antennas() const { return ris_per_group; }
  const PanelLinks& link(std::size_t group, std::size_t ris) const { return links.at(group * ris_per_group + ris); }

  void validate() const;

  // Transmitter at the origin, relay at (15,-5), receiver at (40,0); RIS
  // groups at x = 10, 20, 30 m with 2 m lateral spacing. Angles are uniform in
  // [-pi/3, pi/3], drawn from `seed`.
  static SystemGeometry make_default(std::size_t ris_per_group, std::size_t elements_x, std::size_t elements_y,
                                     std::uint64_t seed);
};

struct RisPanel {
  std::vector<cplx> g;  // RIS -> next hop
  std::vector<cplx> h;  // previous hop -> RIS
  std::array<double, 2> phase_levels{0.0, std::numbers::pi / 4.0};
  std::size_t group = 0;
  std::size_t index = 0;
};

struct ChannelRealization {
  SystemGeometry geometry;
  ChannelModelParams params;
  std::uint64_t seed = 0;
  std::vector<RisPanel> panels;  // groups * ris_per_group
  cplx d1;
  cplx d2;

  const RisPanel& panel(std::size_t group, std::size_t ris) const {
    return panels.at(group * geometry.ris_per_group + ris);
  }
};

struct FeasibleWeightSet {
  std::vector<cplx> entries;
  cplx precoder{1.0, 0.0};
  std::size_t baseline_index = 0;

  std::size_t size() const { return entries.size(); }
  // Index of the entry closest to w in the complex plane; ties -> lower index.
  std::size_t nearest(cplx w) const;
  // First n entries. The baseline entry (index 0) is always retained.
  FeasibleWeightSet prefix(std::size_t n) const;
};

// Codebooks for every (group, ris), row-major by group.
using CodebookGrid = std::vector<std::vector<FeasibleWeightSet>>;

// 64-bit mixing used to derive independent RNG streams from one seed.
std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream);

double path_loss_db(double distance_m, const ChannelModelParams& params);
// Half-wavelength ULA: entry m = exp(j*pi*m*sin(angle)).
std::vector<cplx> steering_vector(std::size_t elements, double angle);

ChannelRealization sample_channel(const SystemGeometry& geometry, const ChannelModelParams& params, std::uint64_t seed);

// Diagonal of the phase configuration with binary index n (bit m selects the
// phase of element m).
std::vector<cplx> phase_configuration(std::size_t elements, std::size_t n, const std::array<double, 2>& levels);

// Raw cascaded weights g^T Phi_n h for all 2^M configurations, in binary order.
std::vector<cplx> enumerate_codebook(const RisPanel& panel);

// Precoder v = 1/raw[0]; entries[n] = v * raw[n] with entries[0] == 1 exactly.
FeasibleWeightSet track_and_rotate(std::span<const cplx> raw);

CodebookGrid build_codebooks(const ChannelRealization& channel);
CodebookGrid restrict_codebooks(const CodebookGrid& grid, std::size_t size);

// Instantaneous SNR |sum_k w_k x_k + d x_d|^2 / noise_variance. Zero noise
// variance gives +infinity.
double snr_linear(std::span<const cplx> weights, std::span<const cplx> symbols, cplx direct, cplx direct_symbol,
                  double noise_variance);

// Channel file. With `materialize`, panels and direct links are written as
// [re, im] pairs; on import they take precedence over regeneration.
nlohmann::json channel_to_json(const ChannelRealization& channel, bool materialize = true);
ChannelRealization channel_from_json(const nlohmann::json& j);
std::uint64_t channel_hash(const ChannelRealization& channel);
std::uint64_t codebook_hash(const CodebookGrid& grid);

// FNV-1a over raw bytes.
std::uint64_t fnv1a(std::span<const unsigned char> bytes, std::uint64_t h = 14695981039346656037ull);

}  // namespace airode::ris
