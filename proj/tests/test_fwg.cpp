#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dsanet/errors.hpp"
#include "dsanet/fwg.hpp"
#include "dsanet/gradcheck.hpp"
#include "dsanet/ops.hpp"
#include "test_util.hpp"

using namespace dsanet;
using namespace dsanet::fwg;
using dsanet::testing::random_param;
using dsanet::testing::random_tensor;

namespace {

std::vector<double> softmax_ref(std::vector<double> x) {
  double z = 0;
  for (double v : x) z += std::exp(v);
  for (double& v : x) v = std::exp(v) / z;
  return x;
}

}  // namespace

TEST(PseudoLabel, ReverseScores) {
  const Tensor d = reverse_scores(Tensor::vector({2, 1, 3}));
  EXPECT_EQ(d, Tensor::vector({1, 2, 0}));
}

TEST(PseudoLabel, SoftmaxOfReversedScores) {
  const Tensor w = to_distribution(Tensor::vector({1, 2, 0}), PseudoMode::Softmax);
  const auto ref = softmax_ref({1, 2, 0});
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(w[i], ref[i], 1e-15);
  EXPECT_NEAR(w[0], 0.2447, 5e-5);
  EXPECT_NEAR(w[1], 0.6652, 5e-5);
  EXPECT_NEAR(w[2], 0.0900, 5e-5);
  const Tensor n = to_distribution(Tensor::vector({1, 2, 0}), PseudoMode::Normalize);
  EXPECT_DOUBLE_EQ(n[1], 2.0 / 3.0);
}

TEST(PseudoLabel, FromFrameCrossEntropies) {
  // identity classifier over 2 classes; frame logits chosen so that CE = [2, 1, 3] exactly
  // CE(l, label 0) = log(1 + exp(l1 - l0)), so l1 - l0 = log(exp(ce) - 1)
  Tensor f(Shape{3, 2}, 0.0);
  const double ce[] = {2, 1, 3};
  for (std::size_t t = 0; t < 3; ++t) f.at({t, 1}) = std::log(std::exp(ce[t]) - 1.0);
  Tensor eye(Shape{2, 2}, std::vector<double>{1, 0, 0, 1});
  const Tensor w = pseudo_label(f, 0, eye);
  const auto ref = softmax_ref({1, 2, 0});
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(w[i], ref[i], 1e-12);
}

TEST(PseudoLabel, EqualFramesAreUniformAndSingleFrameIsOne) {
  std::mt19937_64 rng(1);
  Tensor row = random_tensor(Shape{4}, rng);
  Tensor f(Shape{3, 4});
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t c = 0; c < 4; ++c) f.at({t, c}) = row[c];
  const Tensor cls = random_tensor(Shape{5, 4}, rng);
  const Tensor w = pseudo_label(f, 2, cls);
  for (double v : w.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  EXPECT_EQ(pseudo_label(random_tensor(Shape{1, 4}, rng), 0, cls), Tensor::vector({1.0}));
}

TEST(PseudoLabel, DistributionProperties) {
  std::mt19937_64 rng(2);
  const Tensor f = random_tensor(Shape{6, 4, 5}, rng, -2, 2);
  const Tensor cls = random_tensor(Shape{3, 5}, rng);
  const std::vector<int> labels{0, 1, 2, 0, 1, 2};
  const Tensor w = pseudo_labels(f, labels, cls);
  for (std::size_t b = 0; b < 6; ++b) {
    double s = 0, mn = 1;
    for (std::size_t t = 0; t < 4; ++t) {
      EXPECT_GE(w.at({b, t}), 0.0);
      s += w.at({b, t});
      mn = std::min(mn, w.at({b, t}));
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
    // the hardest frame (d = 0) gets exactly the smallest weight e^0 / Z
    const Tensor ce = ops::cross_entropy_rows(ops::linear(Var(f.slice0(b)), Var(cls)).value(),
                                              std::vector<int>(4, labels[b]));
    std::size_t hardest = 0;
    for (std::size_t t = 1; t < 4; ++t)
      if (ce[t] > ce[hardest]) hardest = t;
    EXPECT_EQ(w.at({b, hardest}), mn);
  }
}

TEST(Predictor, ZeroWeightsGiveUniform) {
  std::mt19937_64 rng(3);
  Predictor p{Var(Tensor(Shape{5}, 0.0)), Var(Tensor(Shape{1}, 0.4))};
  const Tensor w = predict_weights(Var(random_tensor(Shape{2, 4, 5}, rng)), p).weights.value();
  for (double v : w.data()) EXPECT_NEAR(v, 0.25, 1e-15);
}

TEST(Predictor, ReversedScoresHandCase) {
  // a single channel with weight 1 passes the feature through as the score
  Predictor p{Var(Tensor::vector({1.0})), Var(Tensor::vector({0.0}))};
  Tensor f(Shape{1, 3, 1}, std::vector<double>{3, 1, 1});
  Prediction pr = predict_weights(Var(f), p);
  EXPECT_EQ(pr.scores.value(), Tensor(Shape{1, 3}, std::vector<double>{3, 1, 1}));
  const auto ref = softmax_ref({0, 2, 2});
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(pr.weights.value()[i], ref[i], 1e-15);
  EXPECT_NEAR(pr.weights.value()[0], 0.0634, 5e-5);
  EXPECT_NEAR(pr.weights.value()[1], 0.4683, 5e-5);

  Tensor one(Shape{1, 1, 1}, 2.0);
  EXPECT_EQ(predict_weights(Var(one), p).weights.value(), Tensor(Shape{1, 1}, 1.0));
}

TEST(FrameWeightLoss, Values) {
  Tensor w = Tensor::vector({0.2, 0.8}).reshaped(Shape{1, 2});
  EXPECT_EQ(frame_weight_loss(w, Var(w)).item(), 0.0);
  EXPECT_DOUBLE_EQ(frame_weight_loss(Tensor(Shape{1, 2}, std::vector<double>{1, 0}),
                                     Var(Tensor(Shape{1, 2}, std::vector<double>{0.5, 0.5})))
                       .item(),
                   0.25);
  EXPECT_THROW(frame_weight_loss(Tensor(Shape{1, 3}), Var(Tensor(Shape{1, 2}))), ShapeError);
}

TEST(TemporalAttend, UniformOneHotAndLoop) {
  std::mt19937_64 rng(4);
  Tensor f = random_tensor(Shape{2, 3, 4}, rng);
  const Tensor mean = temporal_attend(Var(f), Var(Tensor(Shape{2, 3}, 1.0 / 3.0))).value();
  Tensor onehot(Shape{2, 3}, 0.0);
  onehot.at({0, 2}) = onehot.at({1, 0}) = 1.0;
  const Tensor pick = temporal_attend(Var(f), Var(onehot)).value();
  Tensor w = random_tensor(Shape{2, 3}, rng, 0, 1);
  const Tensor any = temporal_attend(Var(f), Var(w)).value();
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 4; ++c) {
      double m = 0, acc = 0;
      for (std::size_t t = 0; t < 3; ++t) {
        m += f.at({b, t, c}) / 3.0;
        acc += w.at({b, t}) * f.at({b, t, c});
      }
      EXPECT_NEAR(mean.at({b, c}), m, 1e-15);
      EXPECT_NEAR(any.at({b, c}), acc, 1e-15);
    }
  EXPECT_EQ(pick.at({0, 1}), f.at({0, 2, 1}));
  EXPECT_EQ(pick.at({1, 3}), f.at({1, 0, 3}));
}

TEST(Fwg, WeightLossGradients) {
  std::mt19937_64 rng(5);
  Var f = random_param(Shape{3, 4, 6}, rng);
  Predictor p{random_param(Shape{6}, rng), random_param(Shape{1}, rng)};
  const Tensor target = pseudo_labels(f.value(), std::vector<int>{0, 1, 0}, random_tensor(Shape{2, 6}, rng));
  Var probe(random_tensor(Shape{3, 6}, rng));
  for (auto mode : {PredictMode::Reverse, PredictMode::Direct}) {
    const auto r = finite_diff_check(
        [&] {
          Prediction pr = predict_weights(f, p, mode);
          return ops::add(frame_weight_loss(target, pr.weights),
                          ops::sum(ops::mul(temporal_attend(f, pr.weights), probe)));
        },
        {{"f_t", f}, {"predictor.weight", p.weight}, {"predictor.bias", p.bias}});
    EXPECT_TRUE(r.passed) << r.worst_location << " " << r.max_rel_error;
  }
}
