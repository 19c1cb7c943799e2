#include <gtest/gtest.h>

#include "dsanet/autodiff.hpp"
#include "dsanet/errors.hpp"
#include "dsanet/ops.hpp"

using namespace dsanet;

TEST(Autodiff, ProductRuleOnSharedInput) {
  // f = sum(x * x + x), df/dx = 2x + 1
  Var x(Tensor(Shape{3}, std::vector<double>{1, -2, 0.5}), true);
  Var f = ops::sum(ops::add(ops::mul(x, x), x));
  f.backward();
  const Tensor g = x.grad();
  EXPECT_DOUBLE_EQ(g[0], 3.0);
  EXPECT_DOUBLE_EQ(g[1], -3.0);
  EXPECT_DOUBLE_EQ(g[2], 2.0);
}

TEST(Autodiff, DiamondGraphAccumulatesOnce) {
  // y = 2x used twice: f = sum(y + y) -> df/dx = 4
  Var x(Tensor(Shape{2}, 1.0), true);
  Var y = ops::scale(x, 2.0);
  Var f = ops::sum(ops::add(y, y));
  f.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
}

TEST(Autodiff, ConstantsReceiveNoGraph) {
  Var c(Tensor(Shape{2}, 3.0), false);
  Var x(Tensor(Shape{2}, 1.0), true);
  Var f = ops::sum(ops::mul(c, x));
  EXPECT_TRUE(f.requires_grad());
  f.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 3.0);
  EXPECT_DOUBLE_EQ(c.grad()[0], 0.0);

  Var g = ops::sum(ops::mul(c, c));
  EXPECT_FALSE(g.requires_grad());
}

TEST(Autodiff, NoGradGuardStopsRecording) {
  Var x(Tensor(Shape{2}, 1.0), true);
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    Var f = ops::sum(ops::mul(x, x));
    EXPECT_FALSE(f.requires_grad());
    EXPECT_TRUE(f.node()->inputs.empty());
  }
  EXPECT_TRUE(grad_enabled());
}

TEST(Autodiff, BackwardNeedsScalarRoot) {
  Var x(Tensor(Shape{2}, 1.0), true);
  EXPECT_THROW(ops::scale(x, 2.0).backward(), ShapeError);
}

TEST(Autodiff, ZeroGradResets) {
  Var x(Tensor(Shape{1}, 2.0), true);
  ops::sum(ops::mul(x, x)).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
  ops::sum(ops::mul(x, x)).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 8.0);  // accumulates across passes
  x.zero_grad();
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.0);
}

TEST(Autodiff, CheckedModeFlagsNonFinite) {
  Var x(Tensor(Shape{1}, std::numeric_limits<double>::infinity()), true);
  EXPECT_NO_THROW(ops::scale(x, 0.0));  // inf*0 = nan, unchecked
  CheckedModeGuard on;
  EXPECT_THROW(ops::scale(x, 0.0), NumericError);
}

TEST(Autodiff, DeepChainDoesNotRecurse) {
  Var x(Tensor(Shape{1}, 1.0), true);
  Var y = x;
  for (int i = 0; i < 20000; ++i) y = ops::add(y, x);
  ops::sum(y).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 20001.0);
}
