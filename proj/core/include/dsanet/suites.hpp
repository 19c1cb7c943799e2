#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dsanet/gradcheck.hpp"

// Registered finite-difference checks: one per loss term plus the composed
// objective, each taken end to end through a tiny network (c=16, two 8x8
// frames per clip, two identities with two clips each).
namespace dsanet::verify {

struct GradSuite {
  std::string name;
  std::function<GradCheckReport(const GradCheckOptions&)> run;
};

const std::vector<GradSuite>& gradcheck_suites();

// eps 1e-4, tol 1e-4, ten seeded coordinates per parameter tensor.
GradCheckOptions suite_options();

}  // namespace dsanet::verify
