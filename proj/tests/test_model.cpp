#include <gtest/gtest.h>

#include <random>

#include "dsanet/errors.hpp"
#include "dsanet/gradcheck.hpp"
#include "dsanet/model.hpp"
#include "dsanet/ops.hpp"
#include "test_util.hpp"

using namespace dsanet;
using dsanet::testing::random_tensor;

namespace {

ModelConfig tiny(Components comp = Components::all()) {
  ModelConfig m;
  m.backbone.c = 16;
  m.backbone.height = 8;
  m.backbone.width = 8;
  m.backbone.strides = {2, 1, 1, 1};
  m.num_ids = 3;
  m.num_cameras = 2;
  m.components = comp;
  m.seed = 11;
  return m;
}

}  // namespace

TEST(Components, ParseAndPrint) {
  EXPECT_EQ(Components::parse("all"), Components::all());
  EXPECT_EQ(Components::parse("none"), Components::none());
  Components c = Components::parse("tlm,fwg,l_w");
  EXPECT_TRUE(c.tlm && c.fwg && c.l_w);
  EXPECT_FALSE(c.sao || c.l_lr || c.l_cam);
  EXPECT_EQ(c.to_string(), "tlm,fwg,l_w");
  EXPECT_EQ(Components::parse(c.to_string()), c);
  EXPECT_THROW(Components::parse("tlm,bogus"), ArgumentError);
  EXPECT_THROW(Components::parse("l_lr").validate(), ConfigError);
}

TEST(DsaNet, ForwardShapes) {
  DsaNet net(tiny());
  std::mt19937_64 rng(1);
  FeatureBundle fb = net.forward(random_tensor(Shape{3, 2, 3, 8, 8}, rng, 0, 1), true);
  EXPECT_EQ(fb.X.shape(), (Shape{6, 8, 4, 4}));
  EXPECT_EQ(fb.F_id.shape(), (Shape{6, 16, 4, 4}));
  EXPECT_EQ(fb.F_cam.shape(), (Shape{6, 16, 4, 4}));
  EXPECT_EQ(fb.tlm->Z_attn.shape(), (Shape{6, 1, 4, 4}));
  EXPECT_EQ(fb.f_t.shape(), (Shape{3, 2, 16}));
  EXPECT_EQ(fb.f_id.shape(), (Shape{3, 16}));
  EXPECT_EQ(fb.f_cam.shape(), (Shape{3, 16}));
  EXPECT_EQ(fb.fwg->weights.shape(), (Shape{3, 2}));
}

TEST(DsaNet, BaselineEmbeddingIsTemporalMean) {
  DsaNet net(tiny(Components::none()));
  std::mt19937_64 rng(2);
  FeatureBundle fb = net.forward(random_tensor(Shape{2, 3, 3, 8, 8}, rng, 0, 1), false);
  EXPECT_FALSE(fb.F_cam.defined());
  EXPECT_FALSE(fb.tlm.has_value());
  const Tensor& ft = fb.f_t.value();
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 16; ++c) {
      const double m = (ft.at({b, 0, c}) + ft.at({b, 1, c}) + ft.at({b, 2, c})) / 3.0;
      EXPECT_NEAR(fb.f_id.value().at({b, c}), m, 1e-12);
    }
}

TEST(DsaNet, SaoAddsNoParameters) {
  Components with = Components::all(), without = Components::all();
  without.sao = false;
  DsaNet a(tiny(with)), b(tiny(without));
  EXPECT_EQ(a.parameter_count(), b.parameter_count());
  auto pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].first, pb[i].first);
    EXPECT_EQ(pa[i].second.shape(), pb[i].second.shape());
  }
}

TEST(DsaNet, RejectsNarrowFeatureMapsForTlm) {
  ModelConfig m = tiny();
  m.backbone.width = 8;
  m.backbone.strides = {2, 2, 1, 1};  // feature width 2
  EXPECT_THROW(DsaNet{m}, ConfigError);
  m.components.tlm = m.components.l_lr = false;
  EXPECT_NO_THROW(DsaNet{m});
}

TEST(ComputeLosses, ReportsEveryEnabledTerm) {
  DsaNet net(tiny());
  std::mt19937_64 rng(3), sao_rng(4);
  FeatureBundle fb = net.forward(random_tensor(Shape{4, 2, 3, 8, 8}, rng, 0, 1), true);
  const std::vector<int> ids{0, 0, 1, 1}, cams{0, 1, 0, 1};
  StepLosses l = compute_losses(net, fb, ids, cams, sao_rng, LossConfig{});
  const auto& r = l.report;
  for (double v : {r.ce_id, r.ce_aug, r.ce_lr, r.ce_cam, r.tri, r.w_loss}) EXPECT_GT(v, 0.0);
  EXPECT_GE(r.dis, 0.0);
  EXPECT_GE(r.ic, 0.0);
  objective::LossReport copy = r;
  EXPECT_NEAR(objective::compose_total(copy), r.total, 1e-12);
  ASSERT_TRUE(l.sao.has_value());
  EXPECT_EQ(l.pseudo_labels.shape(), (Shape{4, 2}));
}

TEST(ComputeLosses, DisabledTermsStayZero) {
  DsaNet net(tiny(Components::none()));
  std::mt19937_64 rng(5), sao_rng(6);
  FeatureBundle fb = net.forward(random_tensor(Shape{4, 2, 3, 8, 8}, rng, 0, 1), true);
  const std::vector<int> ids{0, 0, 1, 1}, cams{0, 1, 0, 1};
  LossConfig cfg;
  cfg.triplet = false;
  StepLosses l = compute_losses(net, fb, ids, cams, sao_rng, cfg);
  const auto& r = l.report;
  for (double v : {r.ce_aug, r.ce_lr, r.ce_cam, r.tri, r.dis, r.ic, r.w_loss}) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(r.total, r.ce_id);
}

TEST(ComputeLosses, TotalGradientOnTinyModel) {
  ModelConfig m = tiny();
  m.backbone.norm = backbone::NormKind::None;
  DsaNet net(m);
  std::mt19937_64 rng(7);
  const Tensor clips = random_tensor(Shape{4, 2, 3, 8, 8}, rng, 0, 1);
  const std::vector<int> ids{0, 0, 1, 1}, cams{0, 1, 0, 1};
  FeatureBundle fb0 = net.forward(clips, true);
  std::mt19937_64 r0(8);
  const Tensor fixed = compute_losses(net, fb0, ids, cams, r0, LossConfig{}).pseudo_labels;
  auto f = [&] {
    std::mt19937_64 sao_rng(8);  // same permutation every evaluation
    FeatureBundle fb = net.forward(clips, true);
    return compute_losses(net, fb, ids, cams, sao_rng, LossConfig{}, true, &fixed).total;
  };
  GradCheckOptions opt;
  opt.max_coords_per_param = 4;
  const auto r = finite_diff_check(f, net.parameters(), opt);
  EXPECT_TRUE(r.passed) << r.worst_location << " " << r.max_rel_error;
}
