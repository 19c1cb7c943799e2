#include "dsanet/autodiff.hpp"

#include <unordered_set>

#include "dsanet/errors.hpp"

namespace dsanet {

namespace {
thread_local bool g_grad_enabled = true;
thread_local bool g_checked = false;
}  // namespace

void Node::accumulate(const Tensor& g) {
  if (g.shape() != value.shape()) {
    throw ShapeError("gradient shape " + shape_str(g.shape()) + " != value shape " + shape_str(value.shape()) +
                     " in op " + op);
  }
  if (grad.empty()) {
    grad = g;
    return;
  }
  auto dst = grad.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Var::grad() const {
  if (node_->grad.empty()) return Tensor(node_->value.shape(), 0.0);
  return node_->grad;
}

void Var::zero_grad() { node_->grad = Tensor(); }

void Var::backward() const {
  if (node_->value.numel() != 1) {
    throw ShapeError("backward() requires a one-element root, got " + shape_str(node_->value.shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node* child = n->inputs[next++].get();
      if (child && child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->accumulate(Tensor(node_->value.shape(), 1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

Var make_result(Tensor value, std::string op, std::vector<Var> inputs, std::function<void(Node&)> backward) {
  if (g_checked && !value.all_finite()) throw NumericError("non-finite output from op " + op);
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = std::move(op);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& v : inputs) needs = needs || (v.defined() && v.requires_grad());
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& v : inputs) {
      node->inputs.push_back(v.node());  // may be null for optional inputs
    }
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool checked_mode() { return g_checked; }

CheckedModeGuard::CheckedModeGuard(bool on) : prev_(g_checked) { g_checked = on; }
CheckedModeGuard::~CheckedModeGuard() { g_checked = prev_; }

}  // namespace dsanet
