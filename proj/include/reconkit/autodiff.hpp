#pragma once

#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "reconkit/tensor.hpp"

namespace reconkit::ad {

/// Named trainable array with its gradient accumulator and Adam moments.
class Parameter {
 public:
  Parameter(std::string name, Tensor value);

  const std::string& name() const { return name_; }
  void zero_grad();

  Tensor value;
  Tensor grad;
  Tensor adam_m;
  Tensor adam_v;
  long adam_steps = 0;

 private:
  std::string name_;
};

/// Flat registry of parameters, ordered by name. Addresses are stable.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Tensor value);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  void zero_grad();

 private:
  std::map<std::string, std::unique_ptr<Parameter>> params_;
};

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  Parameter* param = nullptr;
  bool requires_grad = false;
  const char* op = "leaf";

  void accumulate(const Tensor& g);
  /// grad, or zeros of the value shape if nothing flowed here.
  Tensor grad_or_zero() const;
};

/// Handle to a node of the dynamic graph. Cheap to copy.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  /// Gradient accumulated at this node by the last backward pass(es).
  Tensor grad() const { return node_->grad_or_zero(); }
  double item() const { return node_->value[0]; }
  const std::shared_ptr<Node>& node() const { return node_; }
  bool defined() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

/// While alive, new nodes on this thread record no inputs or closures.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

Var constant(Tensor value);
/// Leaf that collects a gradient (for input-gradient checks).
Var leaf(Tensor value);
Var param(Parameter& p);
Var scalar(double v);

enum class PadKind { zero, reflect };

struct Padding {
  PadKind kind = PadKind::zero;
  std::size_t amount = 0;

  static Padding valid() { return {PadKind::zero, 0}; }
  static Padding zeros(std::size_t p) { return {PadKind::zero, p}; }
  static Padding reflect(std::size_t p) { return {PadKind::reflect, p}; }
};

// Convolutions on (N, C, H, W). Weights (O, I, kh, kw); no bias term exists.
Var conv2d(const Var& x, const Var& weight, std::size_t stride, Padding padding);
/// Transposed convolution, weight (I, O, kh, kw), no padding:
/// out extent = (in - 1) * stride + k.
Var conv_transpose2d(const Var& x, const Var& weight, std::size_t stride);

Var relu(const Var& x);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// Elementwise product with a constant tensor of the same shape.
Var mul_const(const Var& a, const Tensor& c);
/// s * x with s a scalar node of shape (1).
Var scalar_mul(const Var& s, const Var& x);
/// a / b for scalar nodes.
Var scalar_div(const Var& a, const Var& b);
/// a + c for a scalar node.
Var scalar_add_const(const Var& a, double c);
Var dot(const Var& a, const Var& b);
Var sum(const Var& a);
/// Sum of absolute values; subgradient 0 at 0.
Var abs_sum(const Var& a);
Var sum_squares(const Var& a);

Var reshape(const Var& x, Shape shape);
Var concat_channels(std::span<const Var> inputs);
Var slice_channels(const Var& x, std::size_t begin, std::size_t count);
/// Spatial padding of a rank-4 tensor.
Var pad2d(const Var& x, std::size_t top, std::size_t bottom, std::size_t left, std::size_t right,
          PadKind kind);
Var crop2d(const Var& x, std::size_t top, std::size_t left, std::size_t height, std::size_t width);

using LinearFn = std::function<Tensor(const Tensor&)>;
/// Node for a fixed linear map; backward applies `transpose`.
Var linear_map(const Var& x, const LinearFn& forward, const LinearFn& transpose);

/// Reverse sweep from a scalar loss. Parameter gradients accumulate into
/// Parameter::grad; every visited node accumulates into Node::grad.
void backward(const Var& loss);

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::span<Parameter* const> params);
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_;
};

// Raw kernels, exposed for operators that reuse them outside the graph.
namespace kernels {
Tensor pad2d(const Tensor& x, std::size_t top, std::size_t bottom, std::size_t left,
             std::size_t right, PadKind kind);
/// Adjoint of pad2d.
Tensor unpad2d(const Tensor& g, std::size_t top, std::size_t bottom, std::size_t left,
               std::size_t right, PadKind kind);
Tensor correlate_valid(const Tensor& x, const Tensor& w, std::size_t stride);
void correlate_backward_input(const Tensor& g, const Tensor& w, std::size_t stride, Tensor& dx);
void correlate_backward_weight(const Tensor& g, const Tensor& x, std::size_t stride, Tensor& dw);
}  // namespace kernels

}  // namespace reconkit::ad
