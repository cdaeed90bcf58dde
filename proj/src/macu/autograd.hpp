#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "macu/tensor.hpp"

namespace macu {

// Reverse-mode autodiff over whole-tensor operations. Each forward op
// allocates one Node holding the result value, the parent links and a
// backward closure that scatters this node's gradient into the parents'
// gradient buffers. backward() walks the graph once in reverse topological
// order.
//
// Leaves created with requires_grad accumulate gradients across backward()
// calls until zero_grad(); interior node gradients are reset at the start of
// every backward() so a fresh run after zeroing reproduces identical values.

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until first needed
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return parents.empty(); }

  Tensor<T>& ensure_grad() {
    if (grad.empty()) grad = Tensor<T>::zeros(value.shape);
    return grad;
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->value.shape; }
  Tensor<T>& value() { return node_->value; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& grad() { return node_->ensure_grad(); }
  bool has_grad() const { return defined() && !node_->grad.empty(); }
  bool requires_grad() const { return defined() && node_->requires_grad; }

  void zero_grad() const {
    if (node_ && !node_->grad.empty()) node_->grad.fill(T(0));
  }

  std::shared_ptr<Node<T>> node() const { return node_; }

  static Var from_node(std::shared_ptr<Node<T>> n) {
    Var v;
    v.node_ = std::move(n);
    return v;
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Builds the result node for an op. requires_grad propagates from parents;
// the backward closure is dropped when no parent needs gradients so pure
// inference retains no graph.
template <typename T, typename F>
Var<T> make_op_node(Tensor<T> value, std::vector<Var<T>> parents, F backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  bool needs = false;
  for (const auto& p : parents)
    if (p.defined() && p.node()->requires_grad) needs = true;
  if (needs) {
    n->requires_grad = true;
    for (const auto& p : parents)
      if (p.defined()) n->parents.push_back(p.node());
    n->backward = std::move(backward);
  }
  return Var<T>::from_node(std::move(n));
}

// Reverse-topological traversal from loss. Iterative DFS; deep decoder graphs
// would otherwise risk stack depth.
template <typename T>
std::vector<Node<T>*> topo_order(Node<T>* root) {
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  stack.push_back({root, 0});
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  std::reverse(order.begin(), order.end());  // root first
  return order;
}

template <typename T>
void backward(const Var<T>& loss) {
  if (!loss.defined()) throw ValueError("backward: undefined variable");
  if (loss.shape().numel() != 1)
    throw ShapeError("backward requires a scalar loss, got " + loss.shape().str());
  Node<T>* root = loss.node().get();
  if (!root->requires_grad) return;  // nothing reachable needs gradients

  auto order = topo_order(root);
  for (Node<T>* n : order)
    if (!n->is_leaf()) {
      n->ensure_grad().fill(T(0));
    } else {
      n->ensure_grad();  // leaves accumulate; allocate only
    }
  root->ensure_grad().v[0] += T(1);  // interior roots were just zeroed
  for (Node<T>* n : order)
    if (n->backward) n->backward(*n);
}

}  // namespace macu
