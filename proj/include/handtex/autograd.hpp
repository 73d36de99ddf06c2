#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "handtex/tensor.hpp"

/// Tape-free reverse-mode differentiation over Tensor values.
///
/// Every operation returns a Var whose node keeps its parents alive and a
/// closure that pushes the node's gradient into them. Gradients of leaf
/// variables accumulate across backward() calls until zero_grad().
namespace handtex::ad {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& grad_buffer();
  bool is_leaf() const { return !backward_fn; }
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void zero_grad();

  const std::vector<int>& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  Real item() const { return node_->value[0]; }
  bool defined() const { return static_cast<bool>(node_); }

  /// Same value, cut off from the graph.
  Var detach() const { return Var(node_->value, false); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

Var scalar(Real v);

/// Builds a non-leaf node. `backward` receives the node; its `grad` is
/// populated and it must accumulate into parents that require grad.
Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward);

/// Seeds d(root)/d(root) = 1 (root must have one element) and propagates.
void backward(const Var& root);
void backward(const Var& root, const Tensor& seed);

// Elementwise arithmetic (identical shapes).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, Real s);
Var mul_const(const Var& a, const Tensor& c);
Var add_const(const Var& a, const Tensor& c);
Var abs(const Var& a);
Var clamp(const Var& a, Real lo, Real hi);

Var relu(const Var& a);
Var leaky_relu(const Var& a, Real slope);
Var sigmoid(const Var& a);
Var tanh(const Var& a);

/// x: [Cin, H, W], weight: [Cout, Cin, k, k], bias: [Cout].
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);
Var avg_pool2(const Var& x);
Var upsample_nearest2(const Var& x);
Var concat_channels(const std::vector<Var>& parts);
Var zeros_like_detached(const Var& x);
/// Per-channel zero mean, unit variance over H x W (no affine terms).
Var instance_norm(const Var& x, Real eps = 1e-5);
/// [C, H, W] -> [C]
Var global_avg_pool(const Var& x);
/// x: [C], weight: [O, C], bias: [O] -> [O]
Var linear(const Var& x, const Var& weight, const Var& bias);

Var reshape(const Var& x, std::vector<int> shape);
/// Flat view [offset, offset + length).
Var slice(const Var& x, std::size_t offset, std::size_t length);
Var concat(const std::vector<Var>& parts);

Var sum(const Var& x);
Var mean(const Var& x);
/// Σ w_i · s_i over one-element vars.
Var weighted_sum(const std::vector<Var>& terms, const std::vector<Real>& weights);

}  // namespace handtex::ad
