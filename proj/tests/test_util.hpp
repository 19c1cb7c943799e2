#pragma once

#include <cmath>
#include <random>

#include "dsanet/autodiff.hpp"
#include "dsanet/tensor.hpp"

namespace dsanet::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = u(rng);
  return t;
}

inline Var random_param(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  return Var(random_tensor(std::move(shape), rng, lo, hi), true);
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace dsanet::testing
