#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dsanet/autodiff.hpp"

namespace dsanet {

using NamedParams = std::vector<std::pair<std::string, Var>>;

struct GradCheckOptions {
  double eps = 1e-4;
  double tol = 1e-4;
  // Denominator floor for the relative error, so gradients near zero are
  // compared on an absolute scale.
  double floor = 1e-6;
  // 0 checks every coordinate; otherwise a seeded random subset per parameter.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  std::string name;
  bool passed = false;
  double max_rel_error = 0.0;
  std::string worst_location;
  std::size_t checked = 0;
  std::size_t skipped_nonsmooth = 0;
  std::vector<std::string> skipped_locations;  // first few only
  bool nonfinite = false;
  std::string nonfinite_location;
};

// Compares the reverse-mode gradient of the scalar `f` with respect to
// `params` against central differences (f(x+eps) - f(x-eps)) / (2 eps).
//
// A coordinate that misses the tolerance is re-examined at eps/2 and eps/4: if its
// one-sided difference quotients show a kink (max ties, ReLU boundaries,
// hinge corners), it is reported as a non-smooth point and skipped;
// otherwise the Richardson-extrapolated difference is used before failing.
GradCheckReport finite_diff_check(const std::function<Var()>& f, const NamedParams& params,
                                  const GradCheckOptions& options = {}, std::string name = "");

}  // namespace dsanet
