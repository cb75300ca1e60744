// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over dense row-major tensors of rank 1 or 2.
//
// A Tensor is a handle to a graph node. Ops record their inputs and a
// backward closure; `backward(loss)` topologically sorts the nodes reachable
// from the loss, visits each exactly once in reverse order, and accumulates
// into the gradients of leaves that require them. Leaf gradients accumulate
// across calls until `zero_grad()`; intermediate gradients are reset per call.
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "petfuse/rng.hpp"

namespace petfuse::ad {

using Shape = std::vector<std::size_t>;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return parents.empty(); }
  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v) { return from({1}, {v}); }
  /// Row vector [1 x n].
  static Tensor row_vector(std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  /// Rank-1 tensors are treated as a single row.
  std::size_t rows() const { return rank() == 1 ? 1 : node_->shape[0]; }
  std::size_t cols() const { return node_->shape.back(); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  /// Direct write access, used by initializers and the optimizer on leaves.
  std::span<double> mutable_data() { return node_->value; }
  double operator[](std::size_t i) const { return node_->value[i]; }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient values; all zeros if nothing has been accumulated.
  std::vector<double> grad() const;
  std::span<double> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  /// Value copy with no graph history.
  Tensor detach() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Disables graph recording on this thread while alive.
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

void backward(const Tensor& loss);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
/// x [n x m] plus bias [m] broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor scale(const Tensor& x, double s);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// softmax(q k^T * scale) v. q [m x d], k [n x d], v [n x e] -> [m x e].
Tensor softmax_attention(const Tensor& q, const Tensor& k, const Tensor& v, double scale);
/// Attention matrix (rows sum to one) for inspection; not differentiable.
std::vector<double> attention_weights(const Tensor& q, const Tensor& k, double scale);

/// Per-row normalization to zero mean and unit variance. No learned scale or shift.
Tensor layer_norm(const Tensor& x, double eps = 1e-5);

/// Inverted dropout: survivors are scaled by 1/(1-p). Identity when not training.
Tensor dropout(const Tensor& x, double p, bool training, Rng& rng);

/// Same values, new shape of equal size.
Tensor reshape(const Tensor& x, Shape shape);
Tensor mean_rows(const Tensor& x);
Tensor row(const Tensor& x, std::size_t i);
Tensor stack_rows(std::span<const Tensor> rows);
/// Embedding lookup: rows of `table` selected by `indices`.
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices);

/// Mean binary cross-entropy on logits. `targets` has the logits' shape and
/// is treated as a constant. `pos_weight`, when non-empty, holds one weight
/// per column applied to the positive term.
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets,
                       std::span<const double> pos_weight = {});

}  // namespace petfuse::ad
