#include "airode/cnn.hpp"

#include <cmath>
#include <map>
#include <sstream>

namespace airode::nn {

using nlohmann::json;

Variable init_weight(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
  ComplexTensor t(std::move(shape));
  for (auto& z : t.data()) {
    const double re = n(rng);
    const double im = n(rng);
    z = {re, im};
  }
  return Variable(std::move(t), true);
}

// ---- CConv2d / CLinear ------------------------------------------------------------

CConv2d::CConv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kh, std::size_t kw, bool with_bias,
                 std::mt19937_64& rng)
    : kernel(init_weight({out_channels, in_channels, kh, kw}, in_channels * kh * kw, rng)),
      pad_h(kh / 2),
      pad_w(kw / 2) {
  if (with_bias) bias = Variable(ComplexTensor({out_channels}), true);
}

Variable CConv2d::forward(const Variable& x) const {
  return conv2d(x, kernel, bias.defined() ? &bias : nullptr, stride, pad_h, pad_w);
}

CLinear::CLinear(std::size_t in, std::size_t out, std::mt19937_64& rng)
    : weight(init_weight({out, in}, in, rng)), bias(Variable(ComplexTensor({out}), true)) {}

Variable CLinear::forward(const Variable& x) const { return linear(x, weight, bias.defined() ? &bias : nullptr); }

// ---- CBatchNorm -------------------------------------------------------------------

CBatchNorm::CBatchNorm(std::size_t channels)
    : gamma(Variable(ComplexTensor({channels}, std::vector<cplx>(channels, cplx(1.0, 0.0))), true)),
      beta(Variable(ComplexTensor({channels}), true)),
      running_mean({channels}),
      running_var({channels}, std::vector<cplx>(channels, cplx(1.0, 1.0))) {}

Variable CBatchNorm::forward(const Variable& x, bool training) {
  if (x.shape().size() != 4 || x.shape()[1] != gamma.size()) {
    throw ShapeError("batchnorm: input " + to_string(x.shape()) + " does not have " + std::to_string(gamma.size()) +
                     " channels");
  }
  const std::size_t N = x.shape()[0], C = x.shape()[1], HW = x.shape()[2] * x.shape()[3];
  const std::size_t m = N * HW;
  if (training && m < 2) throw ShapeError("batchnorm: training needs more than one value per channel");

  // Per channel: mean and inverse std for re (real part) and im (imag part).
  std::vector<double> mean_re(C), mean_im(C), inv_re(C), inv_im(C);
  const ComplexTensor& xv = x.value();
  for (std::size_t c = 0; c < C; ++c) {
    if (training) {
      double sr = 0.0, si = 0.0;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t p = 0; p < HW; ++p) {
          const cplx z = xv[(n * C + c) * HW + p];
          sr += z.real();
          si += z.imag();
        }
      const double mr = sr / static_cast<double>(m), mi = si / static_cast<double>(m);
      double vr = 0.0, vi = 0.0;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t p = 0; p < HW; ++p) {
          const cplx z = xv[(n * C + c) * HW + p];
          vr += (z.real() - mr) * (z.real() - mr);
          vi += (z.imag() - mi) * (z.imag() - mi);
        }
      vr /= static_cast<double>(m);
      vi /= static_cast<double>(m);
      mean_re[c] = mr;
      mean_im[c] = mi;
      inv_re[c] = 1.0 / std::sqrt(vr + eps);
      inv_im[c] = 1.0 / std::sqrt(vi + eps);
      const double unbias = static_cast<double>(m) / static_cast<double>(m - 1);
      running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * cplx(mr, mi);
      running_var[c] = (1.0 - momentum) * running_var[c] + momentum * unbias * cplx(vr, vi);
    } else {
      mean_re[c] = running_mean[c].real();
      mean_im[c] = running_mean[c].imag();
      inv_re[c] = 1.0 / std::sqrt(running_var[c].real() + eps);
      inv_im[c] = 1.0 / std::sqrt(running_var[c].imag() + eps);
    }
  }

  ComplexTensor xhat(x.shape());
  ComplexTensor out(x.shape());
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < HW; ++p) {
        const std::size_t i = (n * C + c) * HW + p;
        xhat[i] = {(xv[i].real() - mean_re[c]) * inv_re[c], (xv[i].imag() - mean_im[c]) * inv_im[c]};
        out[i] = gamma.value()[c] * xhat[i] + beta.value()[c];
      }

  Variable g = gamma;
  return record_op(
      std::move(out), {x, gamma, beta},
      [g, xhat = std::move(xhat), inv_re, inv_im, N, C, HW, m, training](const ComplexTensor& go,
                                                                           std::vector<ComplexTensor*>& gi) {
        if (gi[1] || gi[2]) {
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t p = 0; p < HW; ++p) {
                const std::size_t i = (n * C + c) * HW + p;
                if (gi[1]) (*gi[1])[c] += go[i] * std::conj(xhat[i]);
                if (gi[2]) (*gi[2])[c] += go[i];
              }
        }
        if (!gi[0]) return;
        for (std::size_t c = 0; c < C; ++c) {
          const cplx gc = std::conj(g.value()[c]);
          double sum_r = 0.0, sum_i = 0.0, dot_r = 0.0, dot_i = 0.0;
          if (training) {
            for (std::size_t n = 0; n < N; ++n)
              for (std::size_t p = 0; p < HW; ++p) {
                const std::size_t i = (n * C + c) * HW + p;
                const cplx gh = go[i] * gc;
                sum_r += gh.real();
                sum_i += gh.imag();
                dot_r += gh.real() * xhat[i].real();
                dot_i += gh.imag() * xhat[i].imag();
              }
          }
          const double md = static_cast<double>(m);
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t p = 0; p < HW; ++p) {
              const std::size_t i = (n * C + c) * HW + p;
              const cplx gh = go[i] * gc;
              if (training) {
                const double dr = inv_re[c] / md * (md * gh.real() - sum_r - xhat[i].real() * dot_r);
                const double di = inv_im[c] / md * (md * gh.imag() - sum_i - xhat[i].imag() * dot_i);
                (*gi[0])[i] += cplx(dr, di);
              } else {
                (*gi[0])[i] += cplx(gh.real() * inv_re[c], gh.imag() * inv_im[c]);
              }
            }
        }
      });
}

// ---- quantized convolution --------------------------------------------------------

QuantizedWeights ste_quantize(const Variable& latent, std::span<const ris::FeasibleWeightSet> codebooks) {
  if (latent.size() != codebooks.size()) {
    throw ShapeError("ste_quantize: " + std::to_string(latent.size()) + " latent taps for " +
                     std::to_string(codebooks.size()) + " codebooks");
  }
  QuantizedWeights q;
  ComplexTensor w(latent.shape());
  q.indices.resize(codebooks.size());
  for (std::size_t k = 0; k < codebooks.size(); ++k) {
    if (codebooks[k].entries.empty()) throw std::invalid_argument("ste_quantize: empty codebook");
    q.indices[k] = codebooks[k].nearest(latent.value()[k]);
    w[k] = codebooks[k].entries[q.indices[k]];
  }
  q.weights = record_op(std::move(w), {latent}, [](const ComplexTensor& g, std::vector<ComplexTensor*>& gi) {
    if (!gi[0]) return;
    for (std::size_t k = 0; k < g.size(); ++k) (*gi[0])[k] += g[k];
  });
  return q;
}

QCConv::QCConv(std::vector<ris::FeasibleWeightSet> books, std::mt19937_64& rng) : codebooks(std::move(books)) {
  const std::size_t K = codebooks.size();
  if (K == 0 || K % 2 == 0) throw std::invalid_argument("QCConv needs an odd, positive number of taps");
  ComplexTensor init({1, 1, 1, K});
  for (std::size_t k = 0; k < K; ++k) {
    std::uniform_int_distribution<std::size_t> pick(0, codebooks[k].size() - 1);
    init[k] = codebooks[k].entries[pick(rng)];
  }
  latent = Variable(std::move(init), true);
  chosen = current_indices();
}

Variable QCConv::forward(const Variable& x) {
  auto q = ste_quantize(latent, codebooks);
  chosen = q.indices;
  return conv2d(x, q.weights, nullptr, 1, 0, taps() / 2);
}

std::vector<cplx> QCConv::effective_weights() const {
  std::vector<cplx> w(taps());
  for (std::size_t k = 0; k < taps(); ++k) w[k] = codebooks[k].entries[codebooks[k].nearest(latent.value()[k])];
  return w;
}

std::vector<std::size_t> QCConv::current_indices() const {
  std::vector<std::size_t> idx(taps());
  for (std::size_t k = 0; k < taps(); ++k) idx[k] = codebooks[k].nearest(latent.value()[k]);
  return idx;
}

OdeBlock::OdeBlock(const ris::CodebookGrid& grid, std::mt19937_64& rng) {
  if (grid.size() != 3) throw std::invalid_argument("ODE block needs three codebook groups");
  for (std::size_t p = 0; p < 3; ++p) psi[p] = QCConv(grid[p], rng);
  for (std::size_t p = 1; p < 3; ++p) {
    if (psi[p].taps() != psi[0].taps()) throw std::invalid_argument("ODE block groups differ in kernel width");
  }
}

Variable OdeBlock::forward(const Variable& s) {
  if (s.shape().size() != 2) throw ShapeError("ode_forward expects N x C features, got " + to_string(s.shape()));
  const std::size_t N = s.shape()[0], C = s.shape()[1];
  const Variable x = reshape(s, {N, 1, 1, C});
  const Variable y1 = psi[0].forward(crelu(x));
  const Variable y3 = psi[2].forward(crelu(x));
  const Variable y2 = psi[1].forward(crelu(add(y1, x)));
  const Variable out = add(add(scale(y2, 0.5), scale(y3, 0.5)), x);
  return reshape(out, {N, C});
}

std::array<std::vector<std::size_t>, 3> OdeBlock::chosen_indices() const {
  return {psi[0].current_indices(), psi[1].current_indices(), psi[2].current_indices()};
}

// ---- network ----------------------------------------------------------------------

std::size_t NetworkConfig::st_pool_window() const {
  if (st_pool != 0) return st_pool;
  const std::size_t side = feature_side();
  for (std::size_t w = 4; w > 1; --w)
    if (side % w == 0) return w;
  return 1;
}

void NetworkConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("network config: " + m); };
  if (image_size == 0 || classes == 0 || hidden_channels == 0 || st_channels == 0 || encoder_channels == 0) {
    fail("sizes must be positive");
  }
  if (kernel_size == 0 || kernel_size % 2 == 0) fail("ODE kernel size must be odd");
  if (pool == 0 || image_size % pool != 0) fail("pool " + std::to_string(pool) + " does not divide image size");
  if (feature_side() % st_pool_window() != 0) {
    fail("tagging pool " + std::to_string(st_pool_window()) + " does not divide feature side " +
         std::to_string(feature_side()));
  }
}

json NetworkConfig::to_json() const {
  return {{"image_size", image_size},           {"classes", classes},   {"kernel_size", kernel_size},
          {"pool", pool},                       {"encoder_channels", encoder_channels},
          {"hidden_channels", hidden_channels}, {"st_channels", st_channels}, {"st_pool", st_pool}};
}

NetworkConfig NetworkConfig::from_json(const json& j) {
  NetworkConfig c;
  c.image_size = j.at("image_size").get<std::size_t>();
  c.classes = j.at("classes").get<std::size_t>();
  c.kernel_size = j.at("kernel_size").get<std::size_t>();
  c.pool = j.at("pool").get<std::size_t>();
  c.encoder_channels = j.at("encoder_channels").get<std::size_t>();
  c.hidden_channels = j.at("hidden_channels").get<std::size_t>();
  c.st_channels = j.at("st_channels").get<std::size_t>();
  c.st_pool = j.at("st_pool").get<std::size_t>();
  return c;
}

bool FreezeMask::frozen(Block b) const {
  switch (b) {
    case Block::Encoder: return encoder;
    case Block::Ode: return ode;
    case Block::DecoderRI: return decoder_ri;
    case Block::DecoderST: return decoder_st;
  }
  return false;
}

AirOdeNetwork::AirOdeNetwork(NetworkConfig cfg, const ris::CodebookGrid& codebooks, std::uint64_t seed)
    : cfg_(cfg), codebooks_(codebooks) {
  cfg_.validate();
  if (codebooks.size() != 3) throw std::invalid_argument("network needs a 3-group codebook grid");
  for (const auto& row : codebooks) {
    if (row.size() != cfg_.kernel_size) {
      throw std::invalid_argument("codebook grid has " + std::to_string(row.size()) + " RISs per group, kernel size is " +
                                  std::to_string(cfg_.kernel_size));
    }
  }
  std::mt19937_64 rng(ris::split_seed(seed, 0x6e6574ull));
  const std::size_t h = cfg_.hidden_channels, e = cfg_.encoder_channels;
  enc_conv1 = CConv2d(1, h, 3, 3, true, rng);
  enc_conv2 = CConv2d(h, e, 3, 3, true, rng);
  enc_bn = CBatchNorm(e);
  ode = OdeBlock(codebooks, rng);
  ri_conv1 = CConv2d(e, h, 3, 3, true, rng);
  ri_conv2 = CConv2d(h, 1, 3, 3, true, rng);
  st_conv = CConv2d(e, cfg_.st_channels, 3, 3, true, rng);
  const std::size_t pooled = cfg_.feature_side() / cfg_.st_pool_window();
  st_linear = CLinear(cfg_.st_channels * pooled * pooled, cfg_.classes, rng);
}

Variable AirOdeNetwork::encode(const Variable& images, bool training) {
  const std::size_t A = cfg_.image_size;
  if (images.shape().size() != 3 || images.shape()[1] != A || images.shape()[2] != A) {
    throw ShapeError("encoder expects N x " + std::to_string(A) + " x " + std::to_string(A) + " images, got " +
                     to_string(images.shape()));
  }
  const std::size_t N = images.shape()[0];
  Variable x = reshape(images, {N, 1, A, A});
  x = crelu(enc_conv1.forward(x));
  x = crelu(enc_conv2.forward(x));
  x = crelu(avgpool2d(x, cfg_.pool));
  x = enc_bn.forward(x, training);
  return reshape(x, {N, cfg_.feature_length()});
}

Variable AirOdeNetwork::decode_ri(const Variable& features) const {
  const std::size_t N = features.shape()[0], B = cfg_.feature_side(), A = cfg_.image_size;
  Variable x = reshape(features, {N, cfg_.encoder_channels, B, B});
  x = upsample2d(x, cfg_.pool);
  x = crelu(ri_conv1.forward(x));
  x = ri_conv2.forward(x);
  return reshape(x, {N, A, A});
}

Variable AirOdeNetwork::decode_st(const Variable& features) const {
  const std::size_t N = features.shape()[0], B = cfg_.feature_side();
  Variable x = reshape(features, {N, cfg_.encoder_channels, B, B});
  x = maxpool2d(st_conv.forward(x), cfg_.st_pool_window());
  x = reshape(x, {N, x.size() / N});
  return st_linear.forward(x);
}

namespace {

void add_conv(std::vector<NamedParameter>& out, const std::string& name, const CConv2d& c) {
  out.push_back({name + ".kernel", c.kernel});
  if (c.bias.defined()) out.push_back({name + ".bias", c.bias});
}

}  // namespace

std::vector<NamedParameter> AirOdeNetwork::parameters(Block block) const {
  std::vector<NamedParameter> out;
  switch (block) {
    case Block::Encoder:
      add_conv(out, "encoder.conv1", enc_conv1);
      add_conv(out, "encoder.conv2", enc_conv2);
      out.push_back({"encoder.bn.gamma", enc_bn.gamma});
      out.push_back({"encoder.bn.beta", enc_bn.beta});
      break;
    case Block::Ode:
      for (std::size_t p = 0; p < 3; ++p) out.push_back({"ode.psi" + std::to_string(p + 1) + ".latent", ode.psi[p].latent});
      break;
    case Block::DecoderRI:
      add_conv(out, "decoder_ri.conv1", ri_conv1);
      add_conv(out, "decoder_ri.conv2", ri_conv2);
      break;
    case Block::DecoderST:
      add_conv(out, "decoder_st.conv", st_conv);
      out.push_back({"decoder_st.linear.weight", st_linear.weight});
      out.push_back({"decoder_st.linear.bias", st_linear.bias});
      break;
  }
  return out;
}

std::vector<NamedParameter> AirOdeNetwork::parameters() const {
  std::vector<NamedParameter> all;
  for (Block b : {Block::Encoder, Block::Ode, Block::DecoderRI, Block::DecoderST}) {
    auto part = parameters(b);
    all.insert(all.end(), part.begin(), part.end());
  }
  return all;
}

void AirOdeNetwork::apply_freeze(const FreezeMask& mask) {
  mask_ = mask;
  for (Block b : {Block::Encoder, Block::Ode, Block::DecoderRI, Block::DecoderST}) {
    for (auto& p : parameters(b)) {
      p.var.set_requires_grad(!mask.frozen(b));
      p.var.zero_grad();
    }
  }
}

ForwardResult network_forward(AirOdeNetwork& net, const Variable& images, const ForwardOptions& opts) {
  ForwardResult r;
  // Frozen encoders run on their running statistics.
  const bool enc_training = opts.training && !net.freeze_mask().encoder;
  r.features = net.encode(images, enc_training);
  if (opts.mode == Mode::Analog) {
    if (!opts.analog || !*opts.analog) throw std::invalid_argument("analog mode requires a channel context");
    r.ode_output = Variable((*opts.analog)(r.features.value()));
  } else {
    r.ode_output = net.ode.forward(r.features);
  }
  if (opts.reconstruction) r.reconstruction = net.decode_ri(r.ode_output);
  if (opts.tags) r.tags = net.decode_st(r.ode_output);
  return r;
}

std::vector<std::vector<double>> tag_scores(const ComplexTensor& tags) {
  if (tags.rank() != 2) throw ShapeError("tag_scores expects N x Q, got " + to_string(tags.shape()));
  const std::size_t N = tags.dim(0), Q = tags.dim(1);
  std::vector<std::vector<double>> s(N, std::vector<double>(Q));
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t q = 0; q < Q; ++q) s[n][q] = std::abs(tags[n * Q + q]);
  return s;
}

// ---- checkpoint -------------------------------------------------------------------

namespace {

json tensor_json(const std::string& name, const ComplexTensor& t) {
  std::vector<double> re(t.size()), im(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    re[i] = t[i].real();
    im[i] = t[i].imag();
  }
  return {{"name", name}, {"shape", t.shape()}, {"re", re}, {"im", im}};
}

ComplexTensor tensor_from(const json& j) {
  Shape shape = j.at("shape").get<Shape>();
  auto re = j.at("re").get<std::vector<double>>();
  auto im = j.at("im").get<std::vector<double>>();
  if (re.size() != im.size()) throw CheckpointError("checkpoint tensor " + j.at("name").get<std::string>() + " re/im length differ");
  std::vector<cplx> data(re.size());
  for (std::size_t i = 0; i < re.size(); ++i) data[i] = {re[i], im[i]};
  return ComplexTensor(std::move(shape), std::move(data));
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

}  // namespace

json save_checkpoint(const AirOdeNetwork& net, const json& meta) {
  json layers = json::array();
  for (const auto& p : net.parameters()) layers.push_back(tensor_json(p.name, p.var.value()));
  layers.push_back(tensor_json("encoder.bn.running_mean", net.enc_bn.running_mean));
  layers.push_back(tensor_json("encoder.bn.running_var", net.enc_bn.running_var));
  json quantized = json::array();
  auto idx = net.ode.chosen_indices();
  for (std::size_t p = 0; p < 3; ++p) quantized.push_back({{"name", "ode.psi" + std::to_string(p + 1)}, {"indices", idx[p]}});
  json j;
  j["format"] = "airode-checkpoint";
  j["version"] = 1;
  j["network"] = net.config().to_json();
  j["codebook_hash"] = hex64(ris::codebook_hash(net.codebooks()));
  j["layers"] = layers;
  j["quantized"] = quantized;
  j["meta"] = meta;
  return j;
}

void load_checkpoint(AirOdeNetwork& net, const json& j) {
  try {
    if (j.value("format", std::string()) != "airode-checkpoint") throw CheckpointError("not a checkpoint file");
    if (NetworkConfig::from_json(j.at("network")).to_json() != net.config().to_json()) {
      throw CheckpointError("checkpoint network config does not match");
    }
    if (j.at("codebook_hash").get<std::string>() != hex64(ris::codebook_hash(net.codebooks()))) {
      throw CheckpointError("codebook mismatch between checkpoint and channel");
    }
    std::map<std::string, ComplexTensor> stored;
    for (const auto& l : j.at("layers")) stored.emplace(l.at("name").get<std::string>(), tensor_from(l));
    auto take = [&](const std::string& name, const Shape& shape) {
      auto it = stored.find(name);
      if (it == stored.end()) throw CheckpointError("checkpoint is missing " + name);
      if (it->second.shape() != shape) throw CheckpointError("checkpoint tensor " + name + " has wrong shape");
      return it->second;
    };
    for (auto& p : net.parameters()) p.var.mutable_value() = take(p.name, p.var.shape());
    net.enc_bn.running_mean = take("encoder.bn.running_mean", net.enc_bn.running_mean.shape());
    net.enc_bn.running_var = take("encoder.bn.running_var", net.enc_bn.running_var.shape());
    const auto& q = j.at("quantized");
    for (std::size_t p = 0; p < 3; ++p) {
      auto stored_idx = q.at(p).at("indices").get<std::vector<std::size_t>>();
      net.ode.psi[p].chosen = net.ode.psi[p].current_indices();
      if (stored_idx != net.ode.psi[p].chosen) throw CheckpointError("codebook mismatch: quantized indices differ");
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint: ") + e.what());
  }
}

}  // namespace airode::nn
