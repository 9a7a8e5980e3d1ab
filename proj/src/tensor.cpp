// SPDX-License-Identifier: Apache-2.0
#include "log3d/tensor.hpp"

#include <algorithm>
#include <unordered_set>

namespace log3d::ad {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
Tensor<T> Tensor<T>::constant(Shape shape, std::vector<T> values) {
  if (ad::numel(shape) != values.size())
    throw ShapeError("tensor " + to_string(shape) + " needs " + std::to_string(ad::numel(shape)) +
                     " values, got " + std::to_string(values.size()));
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value.assign(values.begin(), values.end());
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  return full(std::move(shape), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  const std::size_t n = ad::numel(shape);
  return constant(std::move(shape), std::vector<T>(n, value));
}

template <typename T>
Tensor<T> Tensor<T>::parameter(Shape shape, std::vector<T> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

template <typename T>
Tape<T> Tape<T>::record(const Tensor<T>& root) {
  Tape tape;
  std::unordered_set<const Node<T>*> seen;
  // Iterative post-order DFS; a node is emitted after all of its parents.
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      tape.order_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

template <typename T>
void Tape<T>::backward() {
  if (order_.empty()) return;
  for (Node<T>* n : order_)
    if (!n->is_leaf() && n->requires_grad) {
      n->ensure_grad();
      std::fill(n->grad.begin(), n->grad.end(), T(0));
    }
  Node<T>* root = order_.back();
  if (!root->requires_grad) return;
  auto& g = root->ensure_grad();
  for (auto& v : g) v += T(1);
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    Node<T>* n = *it;
    if (n->is_leaf() || !n->requires_grad) continue;
    n->backward(*n);
  }
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) throw ShapeError("backward() needs a scalar loss, got " + to_string(loss.shape()));
  Tape<T>::record(loss).backward();
}

template <typename T>
Tensor<T> make_result(const char* op, Shape shape, Buffer<T> values,
                      std::vector<std::shared_ptr<Node<T>>> parents,
                      std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->op = op;
  node->shape = std::move(shape);
  node->value.assign(values.begin(), values.end());
  const bool needs = std::any_of(parents.begin(), parents.end(), [](const auto& p) { return p->requires_grad; });
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward_fn);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
T pairwise_sum(std::span<const T> v) {
  if (v.size() <= 8) {
    T s = T(0);
    for (T x : v) s += x;
    return s;
  }
  const std::size_t h = v.size() / 2;
  return pairwise_sum(v.subspan(0, h)) + pairwise_sum(v.subspan(h));
}

#define LOG3D_INSTANTIATE(T)                                                                     \
  template class Tensor<T>;                                                                      \
  template class Tape<T>;                                                                        \
  template void backward<T>(const Tensor<T>&);                                                   \
  template Tensor<T> make_result<T>(const char*, Shape, Buffer<T>,                          \
                                    std::vector<std::shared_ptr<Node<T>>>,                       \
                                    std::function<void(Node<T>&)>);                              \
  template T pairwise_sum<T>(std::span<const T>);

LOG3D_INSTANTIATE(float)
LOG3D_INSTANTIATE(double)
#undef LOG3D_INSTANTIATE

}  // namespace log3d::ad
