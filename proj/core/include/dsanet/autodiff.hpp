#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dsanet/tensor.hpp"

namespace dsanet {

// One recorded operation: its output value, accumulated gradient, the inputs
// it read, and the rule that pushes `grad` back into those inputs.
struct Node {
  Tensor value;
  Tensor grad;  // empty until the first accumulation
  bool requires_grad = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  void accumulate(const Tensor& g);
  Tensor& grad_buffer();  // allocates zeros on first use
};

// Handle to a node in the autodiff graph. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  std::size_t numel() const { return node_->value.numel(); }
  double item() const { return node_->value.item(); }

  bool requires_grad() const { return node_->requires_grad; }
  // Gradient after backward(); zeros of the value's shape if nothing flowed in.
  Tensor grad() const;
  void zero_grad();
  const std::string& op() const { return node_->op; }

  // Reverse-mode sweep from a one-element root.
  void backward() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Builds an op output. Inputs are only retained (and `backward` only kept)
// when at least one input requires grad and grad recording is enabled.
Var make_result(Tensor value, std::string op, std::vector<Var> inputs, std::function<void(Node&)> backward);

bool grad_enabled();

// Disables graph recording in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Checked mode: every op output is scanned for NaN/Inf (throws NumericError).
bool checked_mode();
class CheckedModeGuard {
 public:
  explicit CheckedModeGuard(bool on = true);
  ~CheckedModeGuard();
  CheckedModeGuard(const CheckedModeGuard&) = delete;
  CheckedModeGuard& operator=(const CheckedModeGuard&) = delete;

 private:
  bool prev_;
};

}  // namespace dsanet
