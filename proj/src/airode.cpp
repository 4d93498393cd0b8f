#include "airode/airode.hpp"

#include <cmath>
#include <random>
#include <sstream>

namespace airode::analog {

namespace {

cplx crelu1(cplx z) { return {std::max(z.real(), 0.0), std::max(z.imag(), 0.0)}; }

cplx cascaded(const ris::RisPanel& panel, std::size_t config) {
  auto diag = ris::phase_configuration(panel.g.size(), config, panel.phase_levels);
  cplx acc = 0.0;
  for (std::size_t m = 0; m < panel.g.size(); ++m) acc += panel.g[m] * diag[m] * panel.h[m];
  return acc;
}

// Offset that maps normalized symbols back into the frame where the ReLU
// stages must act: s / scale = s_norm + mean / scale.
cplx relu_offset(const SymbolStats& st) { return st.mean / st.scale; }

}  // namespace

AnalogContext AnalogContext::build(ris::ChannelRealization channel, ris::CodebookGrid codebooks, IndexGrid chosen,
                                   double snr_db, std::uint64_t seed) {
  AnalogContext ctx;
  const std::size_t K = channel.geometry.ris_per_group;
  if (codebooks.size() != 3) throw DeploymentError("context needs three codebook groups");
  for (std::size_t p = 0; p < 3; ++p) {
    if (codebooks[p].size() != K || chosen[p].size() != K) {
      throw DeploymentError("context group " + std::to_string(p + 1) + " does not have " + std::to_string(K) + " RISs");
    }
    for (std::size_t k = 0; k < K; ++k) {
      if (chosen[p][k] >= codebooks[p][k].size()) {
        throw DeploymentError("configuration index " + std::to_string(chosen[p][k]) + " outside feasible set of size " +
                              std::to_string(codebooks[p][k].size()));
      }
      ctx.air_weights[p].push_back(cascaded(channel.panel(p, k), chosen[p][k]));
    }
  }
  if (channel.d1 == cplx(0.0) || channel.d2 == cplx(0.0)) throw DeploymentError("degenerate direct link");
  ctx.channel = std::move(channel);
  ctx.codebooks = std::move(codebooks);
  ctx.chosen = std::move(chosen);
  ctx.snr_db = snr_db;
  ctx.seed = seed;
  return ctx;
}

NormalizedSymbols normalize_symbols(std::span<const cplx> s) {
  if (s.size() < 2) throw std::invalid_argument("normalize_symbols needs at least two symbols");
  NormalizedSymbols out;
  cplx mean = 0.0;
  for (cplx z : s) mean += z;
  mean /= static_cast<double>(s.size());
  double var = 0.0;
  for (cplx z : s) var += std::norm(z - mean);
  var /= static_cast<double>(s.size());
  out.stats.mean = mean;
  out.stats.scale = std::sqrt(var);
  if (!(out.stats.scale > 0.0)) {
    out.stats.scale = 1.0;
    out.stats.clamped = true;
  }
  out.symbols.resize(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out.symbols[i] = (s[i] - mean) / out.stats.scale;
  return out;
}

std::vector<cplx> denormalize_symbols(std::span<const cplx> s, const SymbolStats& stats) {
  std::vector<cplx> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = s[i] * stats.scale + stats.mean;
  return out;
}

cplx SymbolFrame::symbol(std::size_t antenna, std::size_t slot) const {
  const std::size_t K = (antennas() - 2) / 2;
  const std::size_t delay = antenna < 2 * K ? antenna % K : half_width;
  return streams.at(antenna).at(slot + delay);
}

SymbolFrame build_frame(const NormalizedSymbols& s, const AnalogContext& ctx) {
  const std::size_t K = ctx.kernel_size();
  if (K % 2 == 0) throw DeploymentError("kernel width must be odd, got " + std::to_string(K));
  const std::size_t C = s.symbols.size(), h = K / 2, L = C + 2 * h;
  SymbolFrame f;
  f.slots = C;
  f.half_width = h;
  f.stats = s.stats;

  const cplx off = relu_offset(s.stats);
  std::vector<cplx> operand(L), residual(L);
  for (std::size_t t = 0; t < C; ++t) {
    operand[t + h] = crelu1(s.symbols[t] + off);
    residual[t + h] = s.symbols[t];
  }
  auto scaled = [&](const std::vector<cplx>& v, cplx a) {
    std::vector<cplx> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = a * v[i];
    return out;
  };
  f.streams.reserve(2 * K + 2);
  for (std::size_t k = 0; k < K; ++k) f.streams.push_back(scaled(operand, ctx.codebooks[0][k].precoder));
  for (std::size_t k = 0; k < K; ++k) f.streams.push_back(scaled(operand, 0.5 * ctx.codebooks[2][k].precoder));
  f.streams.push_back(scaled(residual, 1.0 / ctx.channel.d1));
  f.streams.push_back(scaled(residual, 1.0 / ctx.channel.d2));
  return f;
}

std::string trace_csv(const SlotTrace& trace) {
  std::ostringstream os;
  os.precision(17);
  os << "slot,branch,re,im\n";
  for (const auto& r : trace) os << r.slot << ',' << r.branch << ',' << r.value.real() << ',' << r.value.imag() << '\n';
  return os.str();
}

std::vector<cplx> propagate(const SymbolFrame& frame, const AnalogContext& ctx, std::span<const cplx> n1,
                            std::span<const cplx> n2, SlotTrace* trace) {
  const std::size_t K = ctx.kernel_size(), C = frame.slots, h = frame.half_width;
  if (frame.antennas() != 2 * K + 2) throw DeploymentError("frame antenna count does not match the context");
  if (n1.size() != C || n2.size() != C) throw DeploymentError("noise vectors must have one sample per slot");
  const auto& aw = ctx.air_weights;
  const cplx d1 = ctx.channel.d1, d2 = ctx.channel.d2;
  auto log = [&](std::size_t t, std::string branch, cplx v) {
    if (trace) trace->push_back({t, std::move(branch), v});
  };

  // Hop 1: group-1 RISs plus direct link d1 into the relay.
  std::vector<cplx> relay_rx(C);
  for (std::size_t t = 0; t < C; ++t) {
    cplx y = d1 * frame.symbol(2 * K, t);
    if (ctx.route_ris) {
      for (std::size_t k = 0; k < K; ++k) y += aw[0][k] * frame.symbol(k, t);
    }
    y += n1[t];
    relay_rx[t] = y;
    log(t, "relay_rx", y);
  }

  // Relay: activation, zero padding, precoding for group 2.
  const cplx off = relu_offset(frame.stats);
  std::vector<cplx> relay_operand(C + 2 * h);
  for (std::size_t t = 0; t < C; ++t) relay_operand[t + h] = crelu1(relay_rx[t] + off);

  // Hop 2: group-2 (from relay), group-3 (from transmitter), direct link d2.
  std::vector<cplx> rx(C);
  for (std::size_t t = 0; t < C; ++t) {
    cplx y = d2 * frame.symbol(2 * K + 1, t);
    log(t, "direct2", y);
    if (ctx.route_ris) {
      cplx g2 = 0.0, g3 = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        const cplx x2 = 0.5 * ctx.codebooks[1][k].precoder * relay_operand[t + k];
        g2 += aw[1][k] * x2;
        g3 += aw[2][k] * frame.symbol(K + k, t);
      }
      log(t, "group2", g2);
      log(t, "group3", g3);
      y += g2 + g3;
    }
    y += n2[t];
    rx[t] = y;
    log(t, "receiver", y);
  }
  return rx;
}

NoisePower calibrate_noise(const SymbolFrame& frame, const AnalogContext& ctx) {
  NoisePower np;
  if (std::isinf(ctx.snr_db) && ctx.snr_db > 0) return np;
  const std::size_t C = frame.slots;
  std::vector<cplx> zero(C);
  SlotTrace dry;
  propagate(frame, ctx, zero, zero, &dry);
  double relay = 0.0, receiver = 0.0;
  for (const auto& r : dry) {
    if (r.branch == "relay_rx") relay += std::norm(r.value);
    if (r.branch == "receiver") receiver += std::norm(r.value);
  }
  const double factor = std::pow(10.0, -ctx.snr_db / 10.0);
  np.relay = factor * relay / static_cast<double>(C);
  np.receiver = factor * receiver / static_cast<double>(C);
  return np;
}

std::vector<cplx> transmit(const SymbolFrame& frame, const AnalogContext& ctx, std::uint64_t noise_key,
                           SlotTrace* trace) {
  const std::size_t C = frame.slots;
  const NoisePower np = calibrate_noise(frame, ctx);
  std::vector<cplx> n1(C), n2(C);
  if (np.relay > 0.0 || np.receiver > 0.0) {
    std::mt19937_64 rng(ris::split_seed(ctx.seed, noise_key));
    std::normal_distribution<double> unit(0.0, std::sqrt(0.5));
    const double s1 = std::sqrt(np.relay), s2 = std::sqrt(np.receiver);
    for (std::size_t t = 0; t < C; ++t) {
      const double a = unit(rng);
      const double b = unit(rng);
      n1[t] = s1 * cplx(a, b);
    }
    for (std::size_t t = 0; t < C; ++t) {
      const double a = unit(rng);
      const double b = unit(rng);
      n2[t] = s2 * cplx(a, b);
    }
  }
  auto rx = propagate(frame, ctx, n1, n2, trace);
  return denormalize_symbols(rx, frame.stats);
}

nn::OdeExecutor make_executor(const AnalogContext& ctx, std::vector<std::uint64_t> keys) {
  return [&ctx, keys = std::move(keys)](const ComplexTensor& features) {
    if (features.rank() != 2) throw DeploymentError("analog executor expects N x C features");
    const std::size_t N = features.dim(0), C = features.dim(1);
    if (!keys.empty() && keys.size() != N) throw DeploymentError("one noise key per sample required");
    ComplexTensor out({N, C});
    for (std::size_t n = 0; n < N; ++n) {
      std::span<const cplx> row(features.data().data() + n * C, C);
      const SymbolFrame frame = build_frame(normalize_symbols(row), ctx);
      const auto y = transmit(frame, ctx, keys.empty() ? n : keys[n]);
      std::copy(y.begin(), y.end(), out.data().begin() + n * C);
    }
    return out;
  };
}

DeployResult deploy_pipeline(nn::AirOdeNetwork& net, const ComplexTensor& images, const AnalogContext& ctx,
                             std::span<const std::uint64_t> sample_keys) {
  if (ris::codebook_hash(net.codebooks()) != ris::codebook_hash(ctx.codebooks)) {
    throw DeploymentError("codebook mismatch between trained network and deployment context");
  }
  if (net.config().kernel_size != ctx.kernel_size()) throw DeploymentError("kernel size mismatch");
  NoGradGuard no_grad;
  const nn::OdeExecutor exec = make_executor(ctx, {sample_keys.begin(), sample_keys.end()});
  nn::ForwardOptions opts;
  opts.mode = nn::Mode::Analog;
  opts.analog = &exec;
  auto r = nn::network_forward(net, Variable(images), opts);
  return {r.reconstruction.value(), r.tags.value()};
}

}  // namespace airode::analog
