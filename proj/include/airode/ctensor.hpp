#pragma once

// Dense complex tensors with a small reverse-mode autodiff engine.
//
// Gradient convention: a complex parameter w = a + ib is treated as two real
// parameters. The stored gradient of w is dL/da + i dL/db for the (real)
// loss L. Under this convention the adjoint of z = w * u with respect to w is
// grad(z) * conj(u).

#include <complex>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace airode {

using cplx = std::complex<double>;
using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Row-major dense array of complex scalars.
class ComplexTensor {
 public:
  ComplexTensor() = default;
  explicit ComplexTensor(Shape shape);
  ComplexTensor(Shape shape, std::vector<cplx> data);

  static ComplexTensor scalar(cplx v) { return ComplexTensor({1}, {v}); }
  static ComplexTensor zeros_like(const ComplexTensor& t) { return ComplexTensor(t.shape()); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const cplx> data() const { return data_; }
  std::span<cplx> data() { return data_; }
  const std::vector<cplx>& vec() const { return data_; }

  cplx& operator[](std::size_t i) { return data_[i]; }
  const cplx& operator[](std::size_t i) const { return data_[i]; }

  // Same data, new shape. Throws ShapeError if element counts differ.
  ComplexTensor reshaped(Shape shape) const;

  // True if every component is finite.
  bool all_finite() const;

  friend bool operator==(const ComplexTensor&, const ComplexTensor&) = default;

 private:
  Shape shape_;
  std::vector<cplx> data_;
};

namespace detail {
struct Node;
}

// Grad recording is on by default; NoGradGuard disables it on this thread.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

class NoGradGuard {
 public:
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// A tensor value participating in the autodiff graph. Copies share the node.
class Variable {
 public:
  Variable() = default;
  explicit Variable(ComplexTensor value, bool requires_grad = false);

  const ComplexTensor& value() const;
  // Direct access for optimizer updates on leaves. Never mutate a tensor that
  // has already been consumed by a recorded op.
  ComplexTensor& mutable_value();
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool is_leaf() const;

  bool has_grad() const;
  const ComplexTensor& grad() const;
  void zero_grad();

  bool defined() const { return static_cast<bool>(node_); }
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Variable(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend Variable record_op(ComplexTensor, std::vector<Variable>,
                            std::function<void(const ComplexTensor&, std::vector<ComplexTensor*>&)>);
};

// Backward rule: receives the output gradient and one accumulator per input
// (nullptr when that input needs no gradient). Rules must add into the
// accumulators, never overwrite.
using BackwardRule = std::function<void(const ComplexTensor& grad_out, std::vector<ComplexTensor*>& grad_in)>;

// Creates a result node. The rule is kept only if grad mode is on and some
// input requires a gradient.
Variable record_op(ComplexTensor value, std::vector<Variable> inputs, BackwardRule rule);

// Nodes reachable from a root, in creation order (inputs before consumers).
class Tape {
 public:
  static Tape record(const Variable& root);
  std::size_t size() const { return nodes_.size(); }
  const std::vector<detail::Node*>& nodes() const { return nodes_; }

 private:
  std::vector<detail::Node*> nodes_;
  std::vector<std::shared_ptr<detail::Node>> keep_alive_;
};

// Populates grad() of every leaf reachable from `loss`, accumulating into any
// gradient already present. `loss` must be a single real scalar (im == 0).
void backward(const Variable& loss);

// ---- elementwise -------------------------------------------------------------

Variable add(const Variable& a, const Variable& b);
Variable sub(const Variable& a, const Variable& b);
Variable mul(const Variable& a, const Variable& b);
Variable scale(const Variable& a, cplx s);
Variable conj(const Variable& a);
// Modulus as a real-valued tensor (im = 0). Subgradient at 0 is 0.
Variable abs(const Variable& a);
// Real part embedded as im = 0.
Variable real_part(const Variable& a);
Variable crelu(const Variable& a);

Variable sum(const Variable& a);
Variable mean(const Variable& a);

// ---- shape -------------------------------------------------------------------

Variable reshape(const Variable& a, Shape shape);
// Swaps the last two axes.
Variable transpose(const Variable& a);
Variable concat(const std::vector<Variable>& parts, std::size_t axis);
// Zero padding; `widths[d]` = (before, after) for axis d.
Variable pad(const Variable& a, const std::vector<std::pair<std::size_t, std::size_t>>& widths);
// Extracts the block starting at `offset` with extent `shape`.
Variable crop(const Variable& a, const std::vector<std::size_t>& offset, Shape shape);

// ---- layers ------------------------------------------------------------------

// x: N x Cin x H x W, w: Cout x Cin x kH x kW, bias: Cout (optional).
// Cross-correlation with zero padding (pad_h, pad_w) and the given stride.
Variable conv2d(const Variable& x, const Variable& w, const Variable* bias,
                std::size_t stride, std::size_t pad_h, std::size_t pad_w);
// Non-overlapping k x k windows (stride k). Re and im pooled independently.
Variable avgpool2d(const Variable& x, std::size_t k);
Variable maxpool2d(const Variable& x, std::size_t k);
// Nearest-neighbour upsampling by an integer factor.
Variable upsample2d(const Variable& x, std::size_t factor);
// x: N x In, w: Out x In, bias: Out (optional).
Variable linear(const Variable& x, const Variable& w, const Variable* bias);

}  // namespace airode
