#include "airode/ris.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <string>

namespace airode::ris {

using nlohmann::json;

void ChannelModelParams::validate() const {
  if (!(rician_factor >= 0.0)) throw ChannelError("rician factor must be >= 0");
  if (!(noise_variance >= 0.0)) throw ChannelError("noise variance must be >= 0");
  if (!(tx_power_cap > 0.0)) throw ChannelError("transmit power cap must be > 0");
}

void SystemGeometry::validate() const {
  if (groups != 3) throw ChannelError("geometry needs exactly 3 RIS groups, got " + std::to_string(groups));
  if (ris_per_group == 0) throw ChannelError("geometry needs at least one RIS per group");
  if (elements() == 0) throw ChannelError("RIS needs at least one element");
  if (links.size() != groups * ris_per_group) {
    throw ChannelError("geometry has " + std::to_string(links.size()) + " links, expected " +
                       std::to_string(groups * ris_per_group));
  }
  for (const auto& l : links) {
    if (!(l.distance_h > 0.0) || !(l.distance_g > 0.0)) throw ChannelError("link distance must be > 0");
  }
  if (!(direct_distance_1 > 0.0) || !(direct_distance_2 > 0.0)) throw ChannelError("direct link distance must be > 0");
}

std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 applied to a stream-offset counter
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

SystemGeometry SystemGeometry::make_default(std::size_t ris_per_group, std::size_t elements_x, std::size_t elements_y,
                                            std::uint64_t seed) {
  SystemGeometry g;
  g.ris_per_group = ris_per_group;
  g.elements_x = elements_x;
  g.elements_y = elements_y;
  const double tx[2] = {0.0, 0.0}, relay[2] = {15.0, -5.0}, rx[2] = {40.0, 0.0};
  auto dist = [](const double* a, double bx, double by) { return std::hypot(bx - a[0], by - a[1]); };
  std::mt19937_64 rng(split_seed(seed, 0x6e6f6567ull));
  std::uniform_real_distribution<double> angle(-std::numbers::pi / 3.0, std::numbers::pi / 3.0);
  for (std::size_t p = 0; p < g.groups; ++p) {
    for (std::size_t k = 0; k < ris_per_group; ++k) {
      const double x = 10.0 * static_cast<double>(p + 1);
      const double y = 5.0 + 2.0 * (static_cast<double>(k) - 0.5 * static_cast<double>(ris_per_group - 1));
      const double* from = p == 1 ? relay : tx;
      const double* to = p == 0 ? relay : rx;
      PanelLinks l;
      l.distance_h = dist(from, x, y);
      l.distance_g = dist(to, x, y);
      l.angle_h = angle(rng);
      l.angle_g = angle(rng);
      g.links.push_back(l);
    }
  }
  g.direct_distance_1 = dist(tx, relay[0], relay[1]);
  g.direct_distance_2 = dist(tx, rx[0], rx[1]);
  return g;
}

double path_loss_db(double distance_m, const ChannelModelParams& params) {
  if (!(distance_m > 0.0)) throw ChannelError("path loss needs distance > 0, got " + std::to_string(distance_m));
  return params.pathloss_a_db + 10.0 * params.pathloss_b * std::log10(distance_m);
}

std::vector<cplx> steering_vector(std::size_t elements, double angle) {
  std::vector<cplx> a(elements);
  const double s = std::sin(angle);
  for (std::size_t m = 0; m < elements; ++m) a[m] = std::polar(1.0, std::numbers::pi * static_cast<double>(m) * s);
  return a;
}

namespace {

cplx complex_normal(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, std::sqrt(0.5));
  const double re = n(rng);
  const double im = n(rng);
  return {re, im};
}

std::vector<cplx> rician_link(std::size_t elements, double distance, double angle, const ChannelModelParams& params,
                              std::mt19937_64& rng) {
  const double loss = std::pow(10.0, -path_loss_db(distance, params) / 10.0);
  const double los = std::sqrt(params.rician_factor / (1.0 + params.rician_factor));
  const double nlos = std::sqrt(1.0 / (1.0 + params.rician_factor));
  auto a = steering_vector(elements, angle);
  std::vector<cplx> v(elements);
  for (std::size_t m = 0; m < elements; ++m) v[m] = std::sqrt(loss) * (los * a[m] + nlos * complex_normal(rng));
  return v;
}

}  // namespace

ChannelRealization sample_channel(const SystemGeometry& geometry, const ChannelModelParams& params, std::uint64_t seed) {
  geometry.validate();
  params.validate();
  ChannelRealization ch;
  ch.geometry = geometry;
  ch.params = params;
  ch.seed = seed;
  const std::size_t M = geometry.elements();
  for (std::size_t p = 0; p < geometry.groups; ++p) {
    for (std::size_t k = 0; k < geometry.ris_per_group; ++k) {
      std::mt19937_64 rng(split_seed(seed, 1 + p * geometry.ris_per_group + k));
      const PanelLinks& l = geometry.link(p, k);
      RisPanel panel;
      panel.group = p;
      panel.index = k;
      panel.phase_levels = params.phase_levels;
      panel.g = rician_link(M, l.distance_g, l.angle_g, params, rng);
      panel.h = rician_link(M, l.distance_h, l.angle_h, params, rng);
      ch.panels.push_back(std::move(panel));
    }
  }
  std::mt19937_64 rng(split_seed(seed, 0));
  ch.d1 = std::sqrt(std::pow(10.0, -path_loss_db(geometry.direct_distance_1, params) / 10.0)) * complex_normal(rng);
  ch.d2 = std::sqrt(std::pow(10.0, -path_loss_db(geometry.direct_distance_2, params) / 10.0)) * complex_normal(rng);
  return ch;
}

std::vector<cplx> phase_configuration(std::size_t elements, std::size_t n, const std::array<double, 2>& levels) {
  std::vector<cplx> diag(elements);
  for (std::size_t m = 0; m < elements; ++m) diag[m] = std::polar(1.0, levels[(n >> m) & 1u]);
  return diag;
}

std::vector<cplx> enumerate_codebook(const RisPanel& panel) {
  const std::size_t M = panel.g.size();
  if (panel.h.size() != M) throw ChannelError("panel g and h lengths differ");
  if (M > 16) {
    throw ChannelError("codebook enumeration supports at most 16 elements (got " + std::to_string(M) +
                       "); larger panels need a sampled codebook");
  }
  const std::size_t count = std::size_t{1} << M;
  std::vector<cplx> gh(M);
  for (std::size_t m = 0; m < M; ++m) gh[m] = panel.g[m] * panel.h[m];
  const cplx phase[2] = {std::polar(1.0, panel.phase_levels[0]), std::polar(1.0, panel.phase_levels[1])};
  std::vector<cplx> raw(count);
  for (std::size_t n = 0; n < count; ++n) {
    cplx acc = 0.0;
    for (std::size_t m = 0; m < M; ++m) acc += gh[m] * phase[(n >> m) & 1u];
    raw[n] = acc;
  }
  return raw;
}

FeasibleWeightSet track_and_rotate(std::span<const cplx> raw) {
  if (raw.empty()) throw ChannelError("empty codebook");
  if (raw[0] == cplx(0.0)) throw ChannelError("degenerate channel: baseline cascaded weight is zero");
  FeasibleWeightSet set;
  set.precoder = 1.0 / raw[0];
  set.baseline_index = 0;
  set.entries.resize(raw.size());
  set.entries[0] = cplx(1.0, 0.0);
  for (std::size_t n = 1; n < raw.size(); ++n) set.entries[n] = set.precoder * raw[n];
  return set;
}

std::size_t FeasibleWeightSet::nearest(cplx w) const {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t n = 0; n < entries.size(); ++n) {
    const double d = std::norm(w - entries[n]);
    if (d < best_d) {
      best_d = d;
      best = n;
    }
  }
  return best;
}

FeasibleWeightSet FeasibleWeightSet::prefix(std::size_t n) const {
  if (n == 0 || n > entries.size()) {
    throw ChannelError("cannot restrict a " + std::to_string(entries.size()) + "-entry set to " + std::to_string(n));
  }
  FeasibleWeightSet out = *this;
  out.entries.resize(n);
  return out;
}

CodebookGrid build_codebooks(const ChannelRealization& channel) {
  CodebookGrid grid(channel.geometry.groups);
  for (std::size_t p = 0; p < channel.geometry.groups; ++p)
    for (std::size_t k = 0; k < channel.geometry.ris_per_group; ++k)
      grid[p].push_back(track_and_rotate(enumerate_codebook(channel.panel(p, k))));
  return grid;
}

CodebookGrid restrict_codebooks(const CodebookGrid& grid, std::size_t size) {
  CodebookGrid out = grid;
  for (auto& row : out)
    for (auto& set : row) set = set.prefix(size);
  return out;
}

double snr_linear(std::span<const cplx> weights, std::span<const cplx> symbols, cplx direct, cplx direct_symbol,
                  double noise_variance) {
  if (weights.size() != symbols.size()) throw ChannelError("snr: weight and symbol counts differ");
  cplx acc = direct * direct_symbol;
  for (std::size_t k = 0; k < weights.size(); ++k) acc += weights[k] * symbols[k];
  if (noise_variance == 0.0) return std::numeric_limits<double>::infinity();
  return std::norm(acc) / noise_variance;
}

// ---- JSON ------------------------------------------------------------------------

namespace {

json pair_of(cplx z) { return json::array({z.real(), z.imag()}); }
cplx from_pair(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

json vec_json(const std::vector<cplx>& v) {
  json a = json::array();
  for (cplx z : v) a.push_back(pair_of(z));
  return a;
}

std::vector<cplx> vec_from(const json& a) {
  std::vector<cplx> v;
  for (const auto& e : a) v.push_back(from_pair(e));
  return v;
}

}  // namespace

json channel_to_json(const ChannelRealization& ch, bool materialize) {
  const auto& g = ch.geometry;
  json links = json::array();
  for (const auto& l : g.links) {
    links.push_back({{"distance_h", l.distance_h}, {"distance_g", l.distance_g}, {"angle_h", l.angle_h}, {"angle_g", l.angle_g}});
  }
  json j;
  j["schema"] = "airode-channel";
  j["version"] = 1;
  j["geometry"] = {{"groups", g.groups},
                   {"ris_per_group", g.ris_per_group},
                   {"elements_x", g.elements_x},
                   {"elements_y", g.elements_y},
                   {"direct_distance_1", g.direct_distance_1},
                   {"direct_distance_2", g.direct_distance_2},
                   {"links", links}};
  j["params"] = {{"rician_factor", ch.params.rician_factor},
                 {"pathloss_a_db", ch.params.pathloss_a_db},
                 {"pathloss_b", ch.params.pathloss_b},
                 {"noise_variance", ch.params.noise_variance},
                 {"tx_power_cap", ch.params.tx_power_cap},
                 {"phase_levels", {ch.params.phase_levels[0], ch.params.phase_levels[1]}}};
  j["seed"] = ch.seed;
  if (materialize) {
    json panels = json::array();
    for (const auto& p : ch.panels) {
      panels.push_back({{"group", p.group}, {"ris", p.index}, {"g", vec_json(p.g)}, {"h", vec_json(p.h)}});
    }
    j["panels"] = panels;
    j["d1"] = pair_of(ch.d1);
    j["d2"] = pair_of(ch.d2);
  }
  return j;
}

ChannelRealization channel_from_json(const json& j) {
  try {
    if (j.value("schema", std::string()) != "airode-channel") throw ChannelError("not a channel file");
    if (j.at("version").get<int>() != 1) throw ChannelError("unsupported channel file version");
    const json& jg = j.at("geometry");
    SystemGeometry g;
    g.groups = jg.at("groups").get<std::size_t>();
    g.ris_per_group = jg.at("ris_per_group").get<std::size_t>();
    g.elements_x = jg.at("elements_x").get<std::size_t>();
    g.elements_y = jg.at("elements_y").get<std::size_t>();
    g.direct_distance_1 = jg.at("direct_distance_1").get<double>();
    g.direct_distance_2 = jg.at("direct_distance_2").get<double>();
    for (const auto& l : jg.at("links")) {
      g.links.push_back({l.at("distance_h").get<double>(), l.at("distance_g").get<double>(), l.at("angle_h").get<double>(),
                         l.at("angle_g").get<double>()});
    }
    const json& jp = j.at("params");
    ChannelModelParams p;
    p.rician_factor = jp.at("rician_factor").get<double>();
    p.pathloss_a_db = jp.at("pathloss_a_db").get<double>();
    p.pathloss_b = jp.at("pathloss_b").get<double>();
    p.noise_variance = jp.at("noise_variance").get<double>();
    p.tx_power_cap = jp.at("tx_power_cap").get<double>();
    p.phase_levels = {jp.at("phase_levels").at(0).get<double>(), jp.at("phase_levels").at(1).get<double>()};
    const auto seed = j.at("seed").get<std::uint64_t>();

    ChannelRealization ch = sample_channel(g, p, seed);
    if (j.contains("panels")) {
      const json& panels = j.at("panels");
      if (panels.size() != ch.panels.size()) throw ChannelError("channel file panel count does not match geometry");
      for (std::size_t i = 0; i < panels.size(); ++i) {
        auto& panel = ch.panels[i];
        panel.g = vec_from(panels[i].at("g"));
        panel.h = vec_from(panels[i].at("h"));
        if (panel.g.size() != g.elements() || panel.h.size() != g.elements()) {
          throw ChannelError("channel file panel " + std::to_string(i) + " has wrong element count");
        }
      }
      ch.d1 = from_pair(j.at("d1"));
      ch.d2 = from_pair(j.at("d2"));
    }
    return ch;
  } catch (const json::exception& e) {
    throw ChannelError(std::string("malformed channel file: ") + e.what());
  }
}

std::uint64_t fnv1a(std::span<const unsigned char> bytes, std::uint64_t h) {
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t channel_hash(const ChannelRealization& channel) {
  const std::string s = channel_to_json(channel, true).dump();
  return fnv1a({reinterpret_cast<const unsigned char*>(s.data()), s.size()});
}

std::uint64_t codebook_hash(const CodebookGrid& grid) {
  std::uint64_t h = 14695981039346656037ull;
  for (const auto& row : grid)
    for (const auto& set : row) {
      const auto* p = reinterpret_cast<const unsigned char*>(set.entries.data());
      h = fnv1a({p, set.entries.size() * sizeof(cplx)}, h);
    }
  return h;
}

}  // namespace airode::ris
