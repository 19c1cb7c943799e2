#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dsanet/autodiff.hpp"

// Differentiable tensor operations. Each op records a backward rule that is
// covered by a central finite-difference test.
namespace dsanet::ops {

using Axes = std::vector<std::size_t>;

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var relu(const Var& x);

Var reshape(const Var& x, Shape shape);
// Broadcast size-1 axes of `x` up to `shape` (same rank).
Var expand(const Var& x, const Shape& shape);
Var slice(const Var& x, std::size_t axis, std::size_t begin, std::size_t end);
Var concat(const std::vector<Var>& parts, std::size_t axis);
// Zero padding along one axis.
Var pad(const Var& x, std::size_t axis, std::size_t before, std::size_t after);
// y[i] = x[index[i]] along axis 0.
Var gather_rows(const Var& x, std::span<const std::size_t> index);

enum class ReduceKind { Max, Mean, Sum };

// Reduction over `axes`. Max routes its gradient to the lowest flat index among ties.
Var reduce(const Var& x, ReduceKind kind, const Axes& axes, bool keepdim = false);
Var sum(const Var& x);   // all elements -> scalar
Var mean(const Var& x);  // all elements -> scalar

// Softmax jointly over `axes` (max-subtracted).
Var softmax(const Var& x, const Axes& axes);

// x: [N, Cin, H, W], weight: [Cout, Cin, k, k], bias: [Cout] or undefined.
Var conv2d(const Var& x, const Var& weight, const Var& bias, std::size_t stride, std::size_t padding);

// x: [B, C], weight: [K, C] -> x * weight^T : [B, K]
Var linear(const Var& x, const Var& weight);

// y = gamma * (x - mean) / sqrt(var + eps) + beta per channel of x: [N, C, H, W].
// mean/var are constants (no gradient).
Var channel_norm(const Var& x, const Var& gamma, const Var& beta, const Tensor& mean, const Tensor& var,
                 double eps);

// Same affine map with the per-channel mean and biased variance of x itself
// (over N, H, W); gradient flows through the statistics. The statistics are
// written to *mean / *var when given.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, double eps, Tensor* mean = nullptr,
               Tensor* var = nullptr);

// Mean softmax cross-entropy of logits [B, K] against integer labels.
Var cross_entropy(const Var& logits, std::span<const int> labels);
// Per-row cross-entropy values, no graph.
Tensor cross_entropy_rows(const Tensor& logits, std::span<const int> labels);

// Mean of (a - b)^2 over all elements.
Var mse(const Var& a, const Var& b);

// Shape helpers shared with module code.
Shape reduced_shape(const Shape& shape, const Axes& axes, bool keepdim);
// Output flat index of every input element under a reduction over `axes` (keepdim layout).
std::vector<std::size_t> reduction_map(const Shape& shape, const Axes& axes);

}  // namespace dsanet::ops
