// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace log3d::ad {

using Shape = std::vector<std::size_t>;

/// Storage aligned to the widest vector register.
template <typename T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Graph node. Values are written once at creation; grad is allocated on
/// first use and has the same element count as value.
template <typename T>
struct Node {
  Shape shape;
  Buffer<T> value;
  Buffer<T> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  /// Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }
  Buffer<T>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

/// Dense row-major tensor handle. Copies share the underlying node.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor constant(Shape shape, std::vector<T> values);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, T value);
  /// Leaf that receives gradients.
  static Tensor parameter(Shape shape, std::vector<T> values);

  explicit operator bool() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> values() const { return node_->value; }
  /// Direct write access, intended for leaves (parameter updates, test setup).
  std::span<T> mutable_values() { return node_->value; }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  const char* op() const { return node_->op; }
  void zero_grad();
  T item() const;

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Topologically ordered view of the graph reachable from a root: every
/// node appears after all of its parents and exactly once.
template <typename T>
class Tape {
 public:
  static Tape record(const Tensor<T>& root);

  const std::vector<Node<T>*>& nodes() const { return order_; }
  /// Seeds d(root)/d(root) = 1 and runs every recorded backward function in
  /// reverse order. Interior gradients are reset first; leaf gradients
  /// accumulate across calls.
  void backward();

 private:
  std::vector<Node<T>*> order_;
};

/// Reverse-mode sweep from a scalar loss. Throws ShapeError for non-scalars.
template <typename T>
void backward(const Tensor<T>& loss);

/// Builds an op result; parents and the backward closure are only retained
/// when some parent requires a gradient.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, Buffer<T> values,
                      std::vector<std::shared_ptr<Node<T>>> parents,
                      std::function<void(Node<T>&)> backward_fn);

/// Fixed-order pairwise summation.
template <typename T>
T pairwise_sum(std::span<const T> v);

}  // namespace log3d::ad
