#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mcg/tensor.hpp"

namespace mcg {

template <class T>
struct Node;

template <class T>
using NodePtr = std::shared_ptr<Node<T>>;

/// One recorded operation (or a leaf). `backward` reads `grad` of this node
/// and accumulates into the grads of `inputs`.
template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until first touched by backward
  bool requires_grad = false;
  std::vector<NodePtr<T>> inputs;
  std::function<void(const Tensor<T>& gout)> backward;
  std::string op;

  bool is_leaf() const { return inputs.empty(); }

  Tensor<T>& ensure_grad() {
    if (grad.size() != value.size()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

namespace detail {
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

/// Disables tape recording for its lifetime (inference, eval loops).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Handle to a value that may participate in reverse-mode differentiation.
/// Copies share the underlying node, so parameter identity is pointer identity.
template <class T>
class Var {
 public:
  Var() : node_(std::make_shared<Node<T>>()) {}
  explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
    node_->op = "leaf";
  }
  explicit Var(NodePtr<T> node) : node_(std::move(node)) {}

  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t dim(std::size_t i) const { return node_->value.dim(i); }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size() && !node_->value.empty(); }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.fill(T{0});
  }

  const NodePtr<T>& node() const { return node_; }
  const std::string& op() const { return node_->op; }

  /// Scalar convenience accessor.
  T item() const {
    if (node_->value.size() != 1) throw NotScalarError("item() on " + shape_str(shape()));
    return node_->value[0];
  }

 private:
  NodePtr<T> node_;
};

/// Builds the output node of an op. Recording happens only when grad mode is on
/// and at least one input requires grad; otherwise the result is a constant.
template <class T, class Backward>
Var<T> make_op(std::string op, Tensor<T> value, std::vector<Var<T>> inputs, Backward&& backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = std::move(op);
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::forward<Backward>(backward);
  }
  return Var<T>(std::move(node));
}

/// Reverse topological order over the recorded graph reachable from `root`.
/// Each node appears exactly once, root first.
template <class T>
std::vector<Node<T>*> tape_order(const NodePtr<T>& root) {
  std::vector<Node<T>*> post;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  if (!root->requires_grad) return post;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      post.push_back(node);
      stack.pop_back();
    }
  }
  std::reverse(post.begin(), post.end());
  return post;
}

/// Reverse-mode sweep from a scalar loss. Leaf grads accumulate across calls;
/// interior grads are reset at the start of every sweep.
template <class T>
void backward(const Var<T>& loss) {
  if (loss.size() != 1) throw NotScalarError("backward() requires a scalar, got " + shape_str(loss.shape()));
  const auto order = tape_order(loss.node());
  if (order.empty()) return;
  for (Node<T>* n : order) {
    if (!n->is_leaf()) n->grad = Tensor<T>();
  }
  order.front()->ensure_grad()[0] += T{1};
  for (Node<T>* n : order) {
    if (n->is_leaf() || !n->backward || n->grad.empty()) continue;
    n->backward(n->grad);
  }
  // Interior grads are only needed during the sweep.
  for (Node<T>* n : order) {
    if (!n->is_leaf()) n->grad = Tensor<T>();
  }
}

/// Accumulates into input `k` of `node` when that input requires grad.
template <class T, class Fn>
void accumulate(Node<T>& input, Fn&& fn) {
  if (!input.requires_grad) return;
  fn(input.ensure_grad());
}

}  // namespace mcg
