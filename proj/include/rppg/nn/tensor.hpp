// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rppg/error.hpp"

// Minimal reverse-mode differentiable 2-D tensors. Every value is a
// [rows, cols] matrix (scalars are [1, 1]); the computation graph is recorded
// implicitly through parent links and replayed by backward().
namespace rppg::nn {

template <typename T>
struct Node {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents that require grad.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return parents.empty(); }
  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <typename T>
class Tensor {
 public:
  using NodePtr = std::shared_ptr<Node<T>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor constant(std::size_t rows, std::size_t cols, std::vector<T> values) {
    if (values.size() != rows * cols) fail(ErrorCode::ShapeMismatch, "tensor values do not match shape");
    auto n = std::make_shared<Node<T>>();
    n->rows = rows;
    n->cols = cols;
    n->value = std::move(values);
    return Tensor(std::move(n));
  }
  static Tensor zeros(std::size_t rows, std::size_t cols) { return constant(rows, cols, std::vector<T>(rows * cols)); }
  static Tensor scalar(T v) { return constant(1, 1, {v}); }
  /// Leaf that accumulates gradients.
  static Tensor parameter(std::size_t rows, std::size_t cols, std::vector<T> values) {
    Tensor t = constant(rows, cols, std::move(values));
    t.node_->requires_grad = true;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  std::size_t rows() const { return node_->rows; }
  std::size_t cols() const { return node_->cols; }
  std::size_t size() const { return node_->value.size(); }
  std::vector<std::size_t> shape() const { return {node_->rows, node_->cols}; }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  std::span<const T> values() const { return node_->value; }
  std::span<T> mutable_values() { return node_->value; }
  T operator()(std::size_t r, std::size_t c) const { return node_->value[r * node_->cols + c]; }
  T item() const {
    if (size() != 1) fail(ErrorCode::NonScalarLoss, "item() on a non-scalar tensor");
    return node_->value[0];
  }

  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient view; all zeros when nothing was accumulated yet.
  std::span<const T> grad() const { return node_->grad_buffer(); }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

/// Reverse-mode accumulation from a scalar. Leaf gradients accumulate across
/// calls; interior gradients are recomputed each time.
template <typename T>
void backward(const Tensor<T>& loss);

}  // namespace rppg::nn
