#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dsanet/backbone.hpp"
#include "dsanet/gradcheck.hpp"
#include "dsanet/ops.hpp"
#include "test_util.hpp"

using namespace dsanet;

namespace {

// x^2 with a backward rule that is off by a factor, as a harness self-test.
Var bad_square(const Var& x, double factor) {
  Tensor y = x.value();
  for (auto& v : y.data()) v *= v;
  return make_result(std::move(y), "bad_square", {x}, [factor](Node& n) {
    Tensor g = n.grad;
    const Tensor& xv = n.inputs[0]->value;
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= factor * 2.0 * xv[i];
    n.inputs[0]->accumulate(g);
  });
}

}  // namespace

TEST(GradCheck, SumOfSquares) {
  Var x(Tensor::vector({1, 2}), true);
  auto f = [&] { return ops::sum(ops::mul(x, x)); };
  f().backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
  GradCheckOptions opt;
  opt.tol = 1e-6;
  const auto r = finite_diff_check(f, {{"x", x}}, opt);
  EXPECT_TRUE(r.passed);
  EXPECT_EQ(r.checked, 2u);
  EXPECT_LE(r.max_rel_error, 1e-6);
}

TEST(GradCheck, DetectsCorruptedBackward) {
  Var x(Tensor::vector({0.7, -1.3, 2.0}), true);
  const auto good = finite_diff_check([&] { return ops::sum(bad_square(x, 1.0)); }, {{"x", x}});
  EXPECT_TRUE(good.passed);
  const auto bad = finite_diff_check([&] { return ops::sum(bad_square(x, 1.01)); }, {{"x", x}});
  EXPECT_FALSE(bad.passed);
  EXPECT_GT(bad.max_rel_error, 1e-3);
  EXPECT_FALSE(bad.worst_location.empty());
}

TEST(GradCheck, MaxAtTieIsSkippedAsNonSmooth) {
  Var x(Tensor::vector({1.0, 1.0, 0.0}), true);
  const auto r = finite_diff_check([&] { return ops::sum(ops::reduce(x, ops::ReduceKind::Max, {0})); }, {{"x", x}});
  EXPECT_GE(r.skipped_nonsmooth, 1u);
  ASSERT_FALSE(r.skipped_locations.empty());
  EXPECT_EQ(r.skipped_locations.front().rfind("x[", 0), 0u);
  EXPECT_TRUE(r.passed);  // the smooth coordinate still checks out
}

TEST(GradCheck, ReluKinkIsSkipped) {
  Var x(Tensor::vector({0.0, 0.5}), true);
  const auto r = finite_diff_check([&] { return ops::sum(ops::relu(x)); }, {{"x", x}});
  EXPECT_EQ(r.skipped_nonsmooth, 1u);
  EXPECT_EQ(r.skipped_locations.front(), "x[0]");
}

TEST(GradCheck, NonFiniteIsReportedWithLocation) {
  Var x(Tensor::vector({1.0, std::numeric_limits<double>::quiet_NaN()}), true);
  const auto r = finite_diff_check([&] { return ops::sum(ops::mul(x, x)); }, {{"x", x}});
  EXPECT_FALSE(r.passed);
  EXPECT_TRUE(r.nonfinite);
  EXPECT_FALSE(r.nonfinite_location.empty());
}

TEST(GradCheck, DisentanglingLossOnRandomUnitVectors) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor a = dsanet::testing::random_tensor(Shape{4, 6}, rng), b = dsanet::testing::random_tensor(Shape{4, 6}, rng);
    for (Tensor* t : {&a, &b})
      for (std::size_t i = 0; i < 4; ++i) {
        double n = 0;
        for (std::size_t j = 0; j < 6; ++j) n += t->at({i, j}) * t->at({i, j});
        for (std::size_t j = 0; j < 6; ++j) t->at({i, j}) /= std::sqrt(n);
      }
    Var fa(a, true), fb(b, true);
    GradCheckOptions opt;
    opt.eps = 1e-4;
    opt.tol = 1e-4;
    const auto r =
        finite_diff_check([&] { return backbone::disentangling_loss(fa, fb); }, {{"f_id", fa}, {"f_cam", fb}}, opt);
    EXPECT_TRUE(r.passed) << r.worst_location << " " << r.max_rel_error;
  }
}

TEST(GradCheck, CoordinateSubsetIsSeeded) {
  std::mt19937_64 rng(22);
  Var x = dsanet::testing::random_param(Shape{50}, rng);
  GradCheckOptions opt;
  opt.max_coords_per_param = 7;
  const auto r = finite_diff_check([&] { return ops::sum(ops::mul(x, x)); }, {{"x", x}}, opt);
  EXPECT_EQ(r.checked, 7u);
  EXPECT_TRUE(r.passed);
}
