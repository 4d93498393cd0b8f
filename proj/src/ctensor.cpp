#include "airode/ctensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace airode {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

ComplexTensor::ComplexTensor(Shape shape) : shape_(std::move(shape)), data_(numel(shape_)) {}

ComplexTensor::ComplexTensor(Shape shape, std::vector<cplx> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (numel(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + to_string(shape_) + " does not match " +
                     std::to_string(data_.size()) + " elements");
  }
}

ComplexTensor ComplexTensor::reshaped(Shape shape) const {
  if (numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  return ComplexTensor(std::move(shape), data_);
}

bool ComplexTensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](cplx z) { return std::isfinite(z.real()) && std::isfinite(z.imag()); });
}

// ---- graph ---------------------------------------------------------------------

namespace detail {

struct Node {
  ComplexTensor value;
  ComplexTensor grad;
  bool requires_grad = false;
  bool leaf = true;
  std::uint64_t order = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardRule rule;
};

namespace {
std::atomic<std::uint64_t> g_order{0};
thread_local bool g_grad_enabled = true;
}  // namespace

}  // namespace detail

bool GradMode::enabled() { return detail::g_grad_enabled; }
void GradMode::set_enabled(bool on) { detail::g_grad_enabled = on; }

Variable::Variable(ComplexTensor value, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
  node_->order = detail::g_order.fetch_add(1, std::memory_order_relaxed);
}

const ComplexTensor& Variable::value() const {
  if (!node_) throw std::logic_error("undefined variable");
  return node_->value;
}

ComplexTensor& Variable::mutable_value() {
  if (!node_) throw std::logic_error("undefined variable");
  return node_->value;
}

bool Variable::requires_grad() const { return node_ && node_->requires_grad; }

void Variable::set_requires_grad(bool on) {
  if (!is_leaf()) throw std::logic_error("requires_grad can only be changed on leaves");
  node_->requires_grad = on;
}

bool Variable::is_leaf() const { return node_ && node_->leaf; }

bool Variable::has_grad() const { return node_ && !node_->grad.empty(); }

const ComplexTensor& Variable::grad() const {
  static const ComplexTensor kEmpty;
  return node_ ? node_->grad : kEmpty;
}

void Variable::zero_grad() {
  if (node_) node_->grad = ComplexTensor();
}

Variable record_op(ComplexTensor value, std::vector<Variable> inputs, BackwardRule rule) {
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(value);
  node->order = detail::g_order.fetch_add(1, std::memory_order_relaxed);
  node->leaf = false;
  bool needs = GradMode::enabled() &&
               std::any_of(inputs.begin(), inputs.end(), [](const Variable& v) { return v.requires_grad(); });
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node());
    node->rule = std::move(rule);
  }
  return Variable(std::move(node));
}

Tape Tape::record(const Variable& root) {
  Tape tape;
  if (!root.requires_grad()) return tape;
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> stack{root.node().get()};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    detail::Node* n = stack.back();
    stack.pop_back();
    tape.nodes_.push_back(n);
    for (auto& in : n->inputs) {
      if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
    }
  }
  std::sort(tape.nodes_.begin(), tape.nodes_.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->order < b->order; });
  tape.keep_alive_.push_back(root.node());
  return tape;
}

void backward(const Variable& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ShapeError("backward needs a scalar loss, got " +
                     (loss.defined() ? to_string(loss.shape()) : std::string("undefined")));
  }
  if (loss.value()[0].imag() != 0.0) throw std::domain_error("backward needs a real loss (im != 0)");
  Tape tape = Tape::record(loss);
  if (tape.size() == 0) return;

  for (detail::Node* n : tape.nodes()) {
    if (!n->leaf) n->grad = ComplexTensor();
  }
  detail::Node* root = loss.node().get();
  if (root->grad.empty()) root->grad = ComplexTensor(root->value.shape());
  root->grad[0] += 1.0;

  std::vector<ComplexTensor*> grad_in;
  const auto& nodes = tape.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    detail::Node* n = *it;
    if (n->leaf || n->grad.empty()) continue;
    grad_in.assign(n->inputs.size(), nullptr);
    for (std::size_t i = 0; i < n->inputs.size(); ++i) {
      detail::Node* in = n->inputs[i].get();
      if (!in->requires_grad) continue;
      if (in->grad.empty()) in->grad = ComplexTensor(in->value.shape());
      grad_in[i] = &in->grad;
    }
    n->rule(n->grad, grad_in);
    if (n != root) n->grad = ComplexTensor();
  }
}

// ---- elementwise -----------------------------------------------------------------

namespace {

void require_same_shape(const char* op, const Variable& a, const Variable& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

void require_rank(const char* op, const Variable& a, std::size_t rank) {
  if (a.shape().size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + to_string(a.shape()));
  }
}

template <class F>
ComplexTensor map(const ComplexTensor& a, F f) {
  ComplexTensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

}  // namespace

Variable add(const Variable& a, const Variable& b) {
  require_same_shape("add", a, b);
  ComplexTensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return record_op(std::move(out), {a, b}, [](const ComplexTensor& g, std::vector<ComplexTensor*>& gi) {
    for (auto* acc : gi) {
      if (!acc) continue;
      for (std::size_t i = 0; i < g.size(); ++i) (*acc)[i] += g[i];
    }
  });
}

Variable sub(const Variable& a, const Variable& b) {
  require_same_shape("sub", a, b);
  ComplexTensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return record_op(std::move(out), {a, b}, [](const ComplexTensor& g, std::vector<ComplexTensor*>& gi) {
    if (gi[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
    if (gi[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] -= g[i];
  });
}

Variable mul(const Variable& a, const Variable& b) {
  require_same_shape("mul", a, b);
  ComplexTensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return record_op(std::move(out), {a, b}, [a, b](const ComplexTensor& g, std::vector<ComplexTensor*>& gi) {
    if (gi[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * std::conj(b.value()[i]);
    if (gi[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] += g[i] * std::conj(a.value()[i]);
  });
}

Variable scale(const Variable& a, cplx s) {
  ComplexTensor out = map(a.value(), [s](cplx z) { return s * z; });
  return record_op(std::move(out), {a}, [s](const ComplexTensor& g, std::vector<ComplexTensor*>& gi) {
    if (!gi[0]) return;
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * std::conj(s);
  });
}

Variable conj(const Variable& a) {
  ComplexTensor out = map(a.value(), [](cplx z) { return std::conj(z); });
  return record_op(std::move(out), {a}, [](const ComplexTensor& g, std::vector<ComplexTensor*>& gi) {
    if (!gi[0]) return;
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += std::conj(g[i]);
  });
}

Variable abs(const Variable& a) {
  ComplexTensor out = map(a.value(), [](cplx z) { return cplx(std::abs(z), 0.0); });
  return record_op(std::move(out), {a}, [a](const ComplexTensor& g, std::vector<ComplexTensor*>& gi) {
    if (!gi[0]) return;
    for (std::size_t i = 0; i < g.size(); ++i) {
      cplx z = a.value()[i];
      double r = std::abs(z);
      if (r > 0.0) (*gi[0])[i] += g[i].real() * z / r;
    }
  });
}

Variable real_part(const Variable& a) {
  ComplexTensor out = map(a.value(), [](cplx z) { return cplx(z.real(), 0.0); });
  return record_op(std::move(out), {a}, [](const ComplexTensor& g, std::vector<ComplexTensor*>& gi) {
    if (!gi[0]) return;
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += cplx(g[i].real(), 0.0);
  });
}

Variable crelu(const Variable& a) {
  ComplexTensor out = map(a.value(), [](cplx z) { return cplx(std::max(z.real(), 0.0), std::max(z.imag(), 0.0)); });
  return record_op(std::move(out), {a}, [a](const ComplexTensor& g, std::vector<ComplexTensor*>& gi) {
    if (!gi[0]) return;
    for (std::size_t i = 0; i < g.size(); ++i) {
      cplx z = a.value()[i];
      (*gi[0])[i] += cplx(z.real() > 0.0 ? g[i].real() : 0.0, z.imag() > 0.0 ? g[i].imag() : 0.0);
    }
  });
}

Variable sum(const Variable& a) {
  cplx s = 0.0;
  for (cplx z : a.value().data()) s += z;
  return record_op(ComplexTensor::scalar(s), {a}, [](const ComplexTensor& g, std::vector<ComplexTensor*>& gi) {
    if (!gi[0]) return;
    for (auto& z : gi[0]->data()) z += g[0];
  });
}

Variable mean(const Variable& a) {
  if (a.size() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

// ---- shape -----------------------------------------------------------------------

Variable reshape(const Variable& a, Shape shape) {
  ComplexTensor out = a.value().reshaped(std::move(shape));
  return record_op(std::move(out), {a}, [](const ComplexTensor& g, std::vector<ComplexTensor*>& gi) {
    if (!gi[0]) return;
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
  });
}

Variable transpose(const Variable& a) {
  const Shape& s = a.shape();
  if (s.size() < 2) throw ShapeError("transpose needs rank >= 2, got " + to_string(s));
  std::size_t rows = s[s.size() - 2], cols = s[s.size() - 1];
  std::size_t batch = a.size() / (rows * cols);
  Shape os = s;
  std::swap(os[os.size() - 2], os[os.size() - 1]);
  ComplexTensor out(os);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out[b * rows * cols + c * rows + r] = a.value()[b * rows * cols + r * cols + c];
  return record_op(std::move(out), {a}, [batch, rows, cols](const ComplexTensor& g, std::vector<ComplexTensor*>& gi) {
    if (!gi[0]) return;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) (*gi[0])[b * rows * cols + r * cols + c] += g[b * rows * cols + c * rows + r];
  });
}

Variable concat(const std::vector<Variable>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw ShapeError("concat axis " + std::to_string(axis) + " out of range for " + to_string(s0));
  Shape os = s0;
  os[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == s0[d];
    if (!ok) throw ShapeError("concat: incompatible shapes " + to_string(s0) + " and " + to_string(s));
    os[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s0[d];
  for (std::size_t d = axis + 1; d < s0.size(); ++d) inner *= s0[d];

  ComplexTensor out(os);
  std::vector<std::size_t> chunk(parts.size()), offset(parts.size());
  std::size_t row = os[axis] * inner, off = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    chunk[p] = parts[p].shape()[axis] * inner;
    offset[p] = off;
    off += chunk[p];
  }
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t p = 0; p < parts.size(); ++p)
      std::copy_n(parts[p].value().data().begin() + o * chunk[p], chunk[p], out.data().begin() + o * row + offset[p]);

  return record_op(std::move(out), parts, [outer, row, chunk, offset](const ComplexTensor& g, std::vector<ComplexTensor*>& gi) {
    for (std::size_t p = 0; p < gi.size(); ++p) {
      if (!gi[p]) continue;
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < chunk[p]; ++i) (*gi[p])[o * chunk[p] + i] += g[o * row + offset[p] + i];
    }
  });
}

namespace {

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t d = s.size(); d-- > 1;) st[d - 1] = st[d] * s[d];
  return st;
}

// For every element of `inner` (shape), the flat index into `outer` when placed at `offset`.
std::vector<std::size_t> embed_indices(const Shape& inner, const Shape& outer, const std::vector<std::size_t>& offset) {
  std::vector<std::size_t> idx(numel(inner));
  auto ost = strides_of(outer);
  std::vector<std::size_t> pos(inner.size(), 0);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::size_t flat = 0;
    for (std::size_t d = 0; d < inner.size(); ++d) flat += (pos[d] + offset[d]) * ost[d];
    idx[i] = flat;
    for (std::size_t d = inner.size(); d-- > 0;) {
      if (++pos[d] < inner[d]) break;
      pos[d] = 0;
    }
  }
  return idx;
}

}  // namespace

Variable pad(const Variable& a, const std::vector<std::pair<std::size_t, std::size_t>>& widths) {
  const Shape& s = a.shape();
  if (widths.size() != s.size()) {
    throw ShapeError("pad: " + std::to_string(widths.size()) + " widths for tensor " + to_string(s));
  }
  Shape os = s;
  std::vector<std::size_t> offset(s.size());
  for (std::size_t d = 0; d < s.size(); ++d) {
    os[d] += widths[d].first + widths[d].second;
    offset[d] = widths[d].first;
  }
  auto idx = embed_indices(s, os, offset);
  ComplexTensor out(os);
  for (std::size_t i = 0; i < idx.size(); ++i) out[idx[i]] = a.value()[i];
  return record_op(std::move(out), {a}, [idx](const ComplexTensor& g, std::vector<ComplexTensor*>& gi) {
    if (!gi[0]) return;
    for (std::size_t i = 0; i < idx.size(); ++i) (*gi[0])[i] += g[idx[i]];
  });
}

Variable crop(const Variable& a, const std::vector<std::size_t>& offset, Shape shape) {
  const Shape& s = a.shape();
  if (offset.size() != s.size() || shape.size() != s.size()) {
    throw ShapeError("crop: rank mismatch for tensor " + to_string(s));
  }
  for (std::size_t d = 0; d < s.size(); ++d) {
    if (offset[d] + shape[d] > s[d]) {
      throw ShapeError("crop: block " + to_string(shape) + " at offset exceeds " + to_string(s));
    }
  }
  auto idx = embed_indices(shape, s, offset);
  ComplexTensor out(shape);
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = a.value()[idx[i]];
  return record_op(std::move(out), {a}, [idx](const ComplexTensor& g, std::vector<ComplexTensor*>& gi) {
    if (!gi[0]) return;
    for (std::size_t i = 0; i < idx.size(); ++i) (*gi[0])[idx[i]] += g[i];
  });
}

// ---- layers ----------------------------------------------------------------------

Variable conv2d(const Variable& x, const Variable& w, const Variable* bias, std::size_t stride, std::size_t pad_h,
                std::size_t pad_w) {
  require_rank("conv2d input", x, 4);
  require_rank("conv2d kernel", w, 4);
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  const std::size_t N = xs[0], Cin = xs[1], H = xs[2], W = xs[3];
  const std::size_t Cout = ws[0], kH = ws[2], kW = ws[3];
  if (ws[1] != Cin) {
    throw ShapeError("conv2d: kernel " + to_string(ws) + " expects " + std::to_string(ws[1]) +
                     " input channels, input is " + to_string(xs));
  }
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (H + 2 * pad_h < kH || W + 2 * pad_w < kW) {
    throw ShapeError("conv2d: kernel " + to_string(ws) + " larger than padded input " + to_string(xs));
  }
  if (bias && bias->shape() != Shape{Cout}) {
    throw ShapeError("conv2d: bias " + to_string(bias->shape()) + " does not match " + std::to_string(Cout) + " outputs");
  }
  const std::size_t OH = (H + 2 * pad_h - kH) / stride + 1;
  const std::size_t OW = (W + 2 * pad_w - kW) / stride + 1;

  // Visits every (output, input, kernel) triple that lands inside the input.
  auto for_each_tap = [=](auto&& f) {
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t co = 0; co < Cout; ++co)
        for (std::size_t ci = 0; ci < Cin; ++ci)
          for (std::size_t kh = 0; kh < kH; ++kh)
            for (std::size_t kw = 0; kw < kW; ++kw) {
              const std::size_t wi = ((co * Cin + ci) * kH + kh) * kW + kw;
              for (std::size_t oh = 0; oh < OH; ++oh) {
                const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + kh) - static_cast<std::ptrdiff_t>(pad_h);
                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                const std::size_t xrow = ((n * Cin + ci) * H + static_cast<std::size_t>(ih)) * W;
                const std::size_t orow = ((n * Cout + co) * OH + oh) * OW;
                for (std::size_t ow = 0; ow < OW; ++ow) {
                  const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride + kw) - static_cast<std::ptrdiff_t>(pad_w);
                  if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                  f(orow + ow, xrow + static_cast<std::size_t>(iw), wi);
                }
              }
            }
  };

  ComplexTensor out({N, Cout, OH, OW});
  {
    const cplx* xv = x.value().data().data();
    const cplx* wv = w.value().data().data();
    cplx* ov = out.data().data();
    for_each_tap([&](std::size_t o, std::size_t i, std::size_t k) { ov[o] += wv[k] * xv[i]; });
    if (bias) {
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t co = 0; co < Cout; ++co) {
          cplx b = bias->value()[co];
          for (std::size_t p = 0; p < OH * OW; ++p) ov[(n * Cout + co) * OH * OW + p] += b;
        }
    }
  }

  std::vector<Variable> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  return record_op(std::move(out), inputs,
                   [x, w, for_each_tap, N, Cout, OH, OW](const ComplexTensor& g, std::vector<ComplexTensor*>& gi) {
                     const cplx* gv = g.data().data();
                     if (gi[0]) {
                       const cplx* wv = w.value().data().data();
                       cplx* gx = gi[0]->data().data();
                       for_each_tap([&](std::size_t o, std::size_t i, std::size_t k) { gx[i] += gv[o] * std::conj(wv[k]); });
                     }
                     if (gi[1]) {
                       const cplx* xv = x.value().data().data();
                       cplx* gw = gi[1]->data().data();
                       for_each_tap([&](std::size_t o, std::size_t i, std::size_t k) { gw[k] += gv[o] * std::conj(xv[i]); });
                     }
                     if (gi.size() > 2 && gi[2]) {
                       for (std::size_t n = 0; n < N; ++n)
                         for (std::size_t co = 0; co < Cout; ++co)
                           for (std::size_t p = 0; p < OH * OW; ++p) (*gi[2])[co] += gv[(n * Cout + co) * OH * OW + p];
                     }
                   });
}

namespace {

struct PoolGeometry {
  std::size_t planes, H, W, k, OH, OW;
};

PoolGeometry pool_geometry(const char* op, const Variable& x, std::size_t k) {
  require_rank(op, x, 4);
  const Shape& s = x.shape();
  if (k == 0 || s[2] % k != 0 || s[3] % k != 0) {
    throw ShapeError(std::string(op) + ": window " + std::to_string(k) + " does not divide input " + to_string(s));
  }
  return {s[0] * s[1], s[2], s[3], k, s[2] / k, s[3] / k};
}

}  // namespace

Variable avgpool2d(const Variable& x, std::size_t k) {
  const PoolGeometry pg = pool_geometry("avgpool2d", x, k);
  const Shape& s = x.shape();
  ComplexTensor out({s[0], s[1], pg.OH, pg.OW});
  const double inv = 1.0 / static_cast<double>(k * k);
  for (std::size_t p = 0; p < pg.planes; ++p)
    for (std::size_t h = 0; h < pg.H; ++h)
      for (std::size_t w = 0; w < pg.W; ++w)
        out[(p * pg.OH + h / k) * pg.OW + w / k] += x.value()[(p * pg.H + h) * pg.W + w] * inv;
  return record_op(std::move(out), {x}, [pg, inv](const ComplexTensor& g, std::vector<ComplexTensor*>& gi) {
    if (!gi[0]) return;
    for (std::size_t p = 0; p < pg.planes; ++p)
      for (std::size_t h = 0; h < pg.H; ++h)
        for (std::size_t w = 0; w < pg.W; ++w)
          (*gi[0])[(p * pg.H + h) * pg.W + w] += g[(p * pg.OH + h / pg.k) * pg.OW + w / pg.k] * inv;
  });
}

Variable maxpool2d(const Variable& x, std::size_t k) {
  const PoolGeometry pg = pool_geometry("maxpool2d", x, k);
  const Shape& s = x.shape();
  ComplexTensor out({s[0], s[1], pg.OH, pg.OW});
  const std::size_t n_out = out.size();
  std::vector<std::size_t> arg_re(n_out), arg_im(n_out);
  for (std::size_t p = 0; p < pg.planes; ++p)
    for (std::size_t oh = 0; oh < pg.OH; ++oh)
      for (std::size_t ow = 0; ow < pg.OW; ++ow) {
        const std::size_t o = (p * pg.OH + oh) * pg.OW + ow;
        std::size_t best_re = 0, best_im = 0;
        bool first = true;
        for (std::size_t dh = 0; dh < k; ++dh)
          for (std::size_t dw = 0; dw < k; ++dw) {
            const std::size_t i = (p * pg.H + oh * k + dh) * pg.W + ow * k + dw;
            const cplx z = x.value()[i];
            if (first || z.real() > x.value()[best_re].real()) best_re = i;
            if (first || z.imag() > x.value()[best_im].imag()) best_im = i;
            first = false;
          }
        arg_re[o] = best_re;
        arg_im[o] = best_im;
        out[o] = cplx(x.value()[best_re].real(), x.value()[best_im].imag());
      }
  return record_op(std::move(out), {x}, [arg_re, arg_im](const ComplexTensor& g, std::vector<ComplexTensor*>& gi) {
    if (!gi[0]) return;
    for (std::size_t o = 0; o < g.size(); ++o) {
      (*gi[0])[arg_re[o]] += cplx(g[o].real(), 0.0);
      (*gi[0])[arg_im[o]] += cplx(0.0, g[o].imag());
    }
  });
}

Variable upsample2d(const Variable& x, std::size_t factor) {
  require_rank("upsample2d", x, 4);
  if (factor == 0) throw ShapeError("upsample2d: factor must be positive");
  const Shape& s = x.shape();
  const std::size_t planes = s[0] * s[1], H = s[2], W = s[3], OH = H * factor, OW = W * factor;
  ComplexTensor out({s[0], s[1], OH, OW});
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t h = 0; h < OH; ++h)
      for (std::size_t w = 0; w < OW; ++w) out[(p * OH + h) * OW + w] = x.value()[(p * H + h / factor) * W + w / factor];
  return record_op(std::move(out), {x}, [=](const ComplexTensor& g, std::vector<ComplexTensor*>& gi) {
    if (!gi[0]) return;
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t h = 0; h < OH; ++h)
        for (std::size_t w = 0; w < OW; ++w) (*gi[0])[(p * H + h / factor) * W + w / factor] += g[(p * OH + h) * OW + w];
  });
}

Variable linear(const Variable& x, const Variable& w, const Variable* bias) {
  require_rank("linear input", x, 2);
  require_rank("linear weight", w, 2);
  const std::size_t N = x.shape()[0], In = x.shape()[1], Out = w.shape()[0];
  if (w.shape()[1] != In) {
    throw ShapeError("linear: weight " + to_string(w.shape()) + " does not accept input " + to_string(x.shape()));
  }
  if (bias && bias->shape() != Shape{Out}) {
    throw ShapeError("linear: bias " + to_string(bias->shape()) + " does not match " + std::to_string(Out) + " outputs");
  }
  ComplexTensor out({N, Out});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < Out; ++o) {
      cplx acc = bias ? bias->value()[o] : cplx(0.0);
      for (std::size_t i = 0; i < In; ++i) acc += w.value()[o * In + i] * x.value()[n * In + i];
      out[n * Out + o] = acc;
    }
  std::vector<Variable> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  return record_op(std::move(out), inputs, [x, w, N, In, Out](const ComplexTensor& g, std::vector<ComplexTensor*>& gi) {
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t o = 0; o < Out; ++o) {
        const cplx go = g[n * Out + o];
        if (gi[0])
          for (std::size_t i = 0; i < In; ++i) (*gi[0])[n * In + i] += go * std::conj(w.value()[o * In + i]);
        if (gi[1])
          for (std::size_t i = 0; i < In; ++i) (*gi[1])[o * In + i] += go * std::conj(x.value()[n * In + i]);
        if (gi.size() > 2 && gi[2]) (*gi[2])[o] += go;
      }
  });
}

}  // namespace airode
