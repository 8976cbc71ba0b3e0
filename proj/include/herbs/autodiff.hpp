#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "herbs/tensor.hpp"

namespace herbs {

// Reverse-mode autodiff over Tensor. Each op builds a Node holding the
// forward value and a closure that routes the incoming gradient to its
// parents. Graphs are rebuilt per forward pass; parameters are long-lived
// leaf nodes whose .grad accumulates across backward() calls until cleared.
struct Node {
  Tensor value;
  Tensor grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void accum(const Tensor& g) {
    if (grad.empty()) grad = Tensor::zeros(value.shape());
    grad.add_(g);
  }
  void accum_at(int64_t i, double g) {
    if (grad.empty()) grad = Tensor::zeros(value.shape());
    grad[i] += g;
  }
  Tensor& grad_ref() {
    if (grad.empty()) grad = Tensor::zeros(value.shape());
    return grad;
  }
};

using NodePtr = std::shared_ptr<Node>;

class Var {
public:
  Var() = default;
  explicit Var(NodePtr n) : n_(std::move(n)) {}

  static Var leaf(Tensor v, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }

  bool defined() const { return n_ != nullptr; }
  const Tensor& val() const { return n_->value; }
  Tensor& mutable_val() { return n_->value; }
  const Shape& shape() const { return n_->value.shape(); }
  int64_t numel() const { return n_->value.numel(); }
  bool requires_grad() const { return n_ && n_->requires_grad; }
  Tensor& grad() { return n_->grad_ref(); }
  const Tensor& grad_raw() const { return n_->grad; }
  bool has_grad() const { return n_ && !n_->grad.empty(); }
  void clear_grad() { n_->grad = Tensor(); }
  NodePtr node() const { return n_; }

private:
  NodePtr n_;
};

inline Var make_op(Tensor value, std::vector<NodePtr> parents,
                   std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const auto& p : parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return Var(std::move(n));
}

// Backpropagate from a scalar root. Topological order via iterative DFS.
inline void backward(const Var& root) {
  if (!root.defined()) throw std::logic_error("backward: undefined root");
  if (root.numel() != 1) throw std::logic_error("backward: root must be scalar");
  if (!root.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->accum(Tensor::full({1}, 1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

}  // namespace herbs
