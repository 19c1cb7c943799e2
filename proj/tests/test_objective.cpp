#include <gtest/gtest.h>

#include <random>

#include "dsanet/errors.hpp"
#include "dsanet/gradcheck.hpp"
#include "dsanet/objective.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace dsanet;
using namespace dsanet::objective;
using dsanet::testing::random_param;
using dsanet::testing::random_tensor;

TEST(IntraClass, KnownValues) {
  const std::vector<int> singles{0, 1, 2};
  std::mt19937_64 rng(1);
  EXPECT_EQ(intra_class_loss(Var(random_tensor(Shape{3, 4}, rng)), singles).item(), 0.0);
  const std::vector<int> same{5, 5, 5};
  EXPECT_NEAR(intra_class_loss(Var(Tensor(Shape{3, 4}, 0.7)), same).item(), 0.0, 1e-24);
  const std::vector<int> two{0, 0};
  EXPECT_DOUBLE_EQ(intra_class_loss(Var(Tensor(Shape{2, 1}, std::vector<double>{0, 2})), two).item(), 1.0);
}

TEST(IntraClass, SumsOverIdentities) {
  // class 0: {0, 2} -> 1 ; class 1: {1, 1, 4} -> mean 2, (1 + 1 + 4) / 3 = 2
  const std::vector<int> y{0, 1, 0, 1, 1};
  Var f(Tensor(Shape{5, 1}, std::vector<double>{0, 1, 2, 1, 4}));
  EXPECT_DOUBLE_EQ(intra_class_loss(f, y).item(), 3.0);
}

TEST(IntraClass, Gradients) {
  std::mt19937_64 rng(2);
  Var f = random_param(Shape{6, 4}, rng);
  const std::vector<int> y{0, 1, 0, 2, 1, 0};
  GradCheckOptions opt;
  opt.tol = 1e-7;
  EXPECT_TRUE(finite_diff_check([&] { return intra_class_loss(f, y); }, {{"f", f}}, opt).passed);
}

TEST(Triplet, IdenticalEmbeddingsGiveMargin) {
  const std::vector<int> y{0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(triplet_loss(Var(Tensor(Shape{4, 3}, 1.0)), y, 0.3).item(), 0.3);
}

TEST(Triplet, SeparatedClustersGiveZero) {
  const std::vector<int> y{0, 0, 1, 1};
  Var f(Tensor(Shape{4, 1}, std::vector<double>{0.0, 0.1, 5.0, 5.1}));
  EXPECT_EQ(triplet_loss(f, y, 0.3).item(), 0.0);
}

TEST(Triplet, MatchesExhaustiveMining) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t p = 2 + trial % 3, k = 2 + trial % 2, c = 1 + trial % 5;
    std::vector<int> y;
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j < k; ++j) y.push_back(static_cast<int>(i));
    std::shuffle(y.begin(), y.end(), rng);
    Tensor f = random_tensor(Shape{p * k, c}, rng);
    const double got = triplet_loss(Var(f), y, 0.3).item();
    const double want = oracle::triplet_exhaustive(std::vector<double>(f.data().begin(), f.data().end()), p * k, c, y, 0.3);
    EXPECT_NEAR(got, want, 1e-12) << "trial " << trial;
  }
}

TEST(Triplet, NeedsPositivesAndNegatives) {
  const std::vector<int> lonely{0, 1, 1};
  EXPECT_THROW(triplet_loss(Var(Tensor(Shape{3, 2}, 0.0)), lonely, 0.3), ConfigError);
  const std::vector<int> one_class{2, 2};
  EXPECT_THROW(triplet_loss(Var(Tensor(Shape{2, 2}, 0.0)), one_class, 0.3), ConfigError);
}

TEST(Triplet, Gradients) {
  std::mt19937_64 rng(4);
  Var f = random_param(Shape{8, 5}, rng);
  const std::vector<int> y{0, 0, 1, 1, 2, 2, 3, 3};
  GradCheckOptions opt;
  opt.tol = 1e-6;
  opt.eps = 1e-6;
  const auto r = finite_diff_check([&] { return triplet_loss(f, y, 1.0); }, {{"f", f}}, opt);
  EXPECT_TRUE(r.passed) << r.worst_location << " " << r.max_rel_error;
}

TEST(Compose, CrossEntropyMix) {
  EXPECT_DOUBLE_EQ(compose_ce(1, 1, 1, 1, 0.1, 0.1), 1.3);
  EXPECT_DOUBLE_EQ(compose_ce(0.7, 3, 2, 5, 0.0, 0.0), 0.7);
  EXPECT_THROW(compose_ce(1, -1, 1, 1, 0.1, 0.1), ArgumentError);
}

TEST(Compose, Total) {
  LossReport zero;
  EXPECT_EQ(compose_total(zero), 0.0);
  LossReport r;
  r.ce_id = 1.0;
  r.tri = 0.5;
  r.dis = 0.2;
  r.ic = 0.1;
  r.w_loss = 1.0;
  EXPECT_DOUBLE_EQ(compose_total(r), 1.9);
  EXPECT_DOUBLE_EQ(r.total, 1.9);
  r.ic_weight = 0.0;
  EXPECT_DOUBLE_EQ(compose_total(r), 1.8);
}

TEST(Compose, NonFiniteComponentIsNamed) {
  LossReport r;
  r.dis = std::nan("");
  try {
    compose_total(r);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("dis"), std::string::npos);
  }
}

TEST(LossReport, JsonKeys) {
  const auto j = LossReport{}.to_json();
  for (const char* k : {"ce_id", "ce_aug", "ce_lr", "ce_cam", "tri", "dis", "ic", "w_loss", "total"}) {
    EXPECT_TRUE(j.contains(k)) << k;
  }
}
