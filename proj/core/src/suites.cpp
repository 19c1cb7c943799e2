#include "dsanet/suites.hpp"

#include <random>

#include "dsanet/model.hpp"
#include "dsanet/ops.hpp"

namespace dsanet::verify {

namespace {

const std::vector<int> kIds{0, 0, 1, 1};
const std::vector<int> kCams{0, 1, 0, 1};

ModelConfig tiny_config() {
  ModelConfig m;
  m.backbone.c = 16;
  m.backbone.height = 8;
  m.backbone.width = 8;
  m.backbone.strides = {2, 1, 1, 1};
  m.num_ids = 3;
  m.num_cameras = 2;
  m.seed = 21;
  return m;
}

Tensor tiny_clips() {
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor t(Shape{4, 2, 3, 8, 8});
  for (auto& v : t.data()) v = u(rng);
  return t;
}

using Term = std::function<Var(DsaNet&, const FeatureBundle&, const Tensor& pseudo)>;

// Fresh network per suite; pseudo-labels and the SAO permutation are held
// fixed across evaluations because they are constants of the objective.
GradCheckReport check_term(const std::string& name, const Term& term, const GradCheckOptions& opt) {
  DsaNet net(tiny_config());
  const Tensor clips = tiny_clips();
  Tensor pseudo;
  {
    NoGradGuard g;
    FeatureBundle fb = net.forward(clips, true);
    pseudo = fwg::pseudo_labels(fb.f_t.value(), kIds, net.id_classifier().value(), net.config().pseudo);
  }
  auto f = [&] {
    FeatureBundle fb = net.forward(clips, true);
    return term(net, fb, pseudo);
  };
  return finite_diff_check(f, net.parameters(), opt, name);
}

Var sao_term(DsaNet& net, const FeatureBundle& fb) {
  std::mt19937_64 rng(23);
  auto batch = sao::switch_and_aggregate(fb.f_id, fb.f_cam, kIds, kCams, rng);
  return sao::sao_ce_loss(*batch, net.id_classifier());
}

std::vector<GradSuite> build() {
  auto suite = [](std::string name, Term term) {
    return GradSuite{name, [name, term](const GradCheckOptions& o) { return check_term(name, term, o); }};
  };
  std::vector<GradSuite> s;
  s.push_back(suite("L_dis", [](DsaNet&, const FeatureBundle& fb, const Tensor&) {
    return backbone::disentangling_loss(fb.f_id, fb.f_cam);
  }));
  s.push_back(suite("L_lr", [](DsaNet& net, const FeatureBundle& fb, const Tensor&) {
    return tlm::lr_loss(tlm::side_vectors(fb.F_t), fb.clips, kIds, net.id_classifier());
  }));
  s.push_back(suite("L_w", [](DsaNet&, const FeatureBundle& fb, const Tensor& pseudo) {
    return fwg::frame_weight_loss(pseudo, fb.fwg->weights);
  }));
  s.push_back(suite("L_ic", [](DsaNet&, const FeatureBundle& fb, const Tensor&) {
    return objective::intra_class_loss(fb.f_id, kIds);
  }));
  s.push_back(suite("L_cam", [](DsaNet& net, const FeatureBundle& fb, const Tensor&) {
    return backbone::camera_ce_loss(fb.f_cam, kCams, net.camera_classifier());
  }));
  s.push_back(suite("triplet", [](DsaNet&, const FeatureBundle& fb, const Tensor&) {
    return objective::triplet_loss(fb.f_id, kIds, 0.3);
  }));
  s.push_back(suite("sao_ce", [](DsaNet& net, const FeatureBundle& fb, const Tensor&) { return sao_term(net, fb); }));
  s.push_back(suite("L_total", [](DsaNet& net, const FeatureBundle& fb, const Tensor& pseudo) {
    std::mt19937_64 rng(23);
    return compute_losses(net, fb, kIds, kCams, rng, LossConfig{}, true, &pseudo).total;
  }));
  return s;
}

}  // namespace

const std::vector<GradSuite>& gradcheck_suites() {
  static const std::vector<GradSuite> suites = build();
  return suites;
}

GradCheckOptions suite_options() {
  GradCheckOptions o;
  o.eps = 1e-4;
  o.tol = 1e-4;
  o.max_coords_per_param = 10;
  o.seed = 5;
  return o;
}

}  // namespace dsanet::verify
