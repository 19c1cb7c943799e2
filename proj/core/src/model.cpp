#include "dsanet/model.hpp"

#include <cmath>
#include <sstream>

#include "dsanet/errors.hpp"
#include "dsanet/ops.hpp"

namespace dsanet {

using ops::ReduceKind;

const std::vector<std::string>& Components::names() {
  static const std::vector<std::string> n{"tlm", "fwg", "sao", "l_lr", "l_w", "l_ic", "l_dis", "l_cam"};
  return n;
}

Components Components::parse(const std::string& list) {
  if (list == "all") return all();
  Components c = none();
  if (list.empty() || list == "none") return c;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "tlm") c.tlm = true;
    else if (item == "fwg") c.fwg = true;
    else if (item == "sao") c.sao = true;
    else if (item == "l_lr") c.l_lr = true;
    else if (item == "l_w") c.l_w = true;
    else if (item == "l_ic") c.l_ic = true;
    else if (item == "l_dis") c.l_dis = true;
    else if (item == "l_cam") c.l_cam = true;
    else {
      std::string valid;
      for (const auto& n : names()) valid += (valid.empty() ? "" : ", ") + n;
      throw ArgumentError("unknown component '" + item + "' (valid: " + valid + ")");
    }
  }
  return c;
}

std::string Components::to_string() const {
  const bool flags[] = {tlm, fwg, sao, l_lr, l_w, l_ic, l_dis, l_cam};
  std::string out;
  for (std::size_t i = 0; i < names().size(); ++i) {
    if (flags[i]) out += (out.empty() ? "" : ",") + names()[i];
  }
  return out.empty() ? "none" : out;
}

void Components::validate() const {
  if (l_lr && !tlm) throw ConfigError("component l_lr requires tlm");
  if (l_w && !fwg) throw ConfigError("component l_w requires fwg");
}

namespace {

Var normal_param(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, stddev);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = nd(rng);
  return Var(std::move(t), true);
}

}  // namespace

DsaNet::DsaNet(const ModelConfig& config) : config_(config) {
  config_.backbone.validate();
  config_.components.validate();
  if (config_.num_ids < 2) throw ConfigError("model needs at least 2 identities");
  if (config_.components.tlm && config_.backbone.out_width() % 4 != 0) {
    throw ConfigError("target localization needs feature width divisible by 4, got " +
                      std::to_string(config_.backbone.out_width()));
  }
  std::mt19937_64 rng(config_.seed);
  backbone_ = backbone::Backbone(config_.backbone, rng);
  const std::size_t c = config_.backbone.c;
  if (config_.components.camera_branch()) {
    if (config_.num_cameras < 2) throw ConfigError("camera branch needs at least 2 cameras");
    cel_kernel_ = normal_param(Shape{c, c / 2, 1, 1}, std::sqrt(2.0 / static_cast<double>(c / 2)), rng);
    cam_classifier_ = normal_param(Shape{config_.num_cameras, c}, 0.01, rng);
  }
  if (config_.components.tlm) {
    attention_.weight = normal_param(Shape{1, 2, 3, 3}, std::sqrt(2.0 / 18.0), rng);
    attention_.bias = Var(Tensor(Shape{1}, 0.0), true);
  }
  if (config_.components.fwg) {
    predictor_.weight = normal_param(Shape{c}, 0.01, rng);
    predictor_.bias = Var(Tensor(Shape{1}, 0.0), true);
  }
  id_classifier_ = normal_param(Shape{config_.num_ids, c}, 0.01, rng);
}

FeatureBundle DsaNet::forward(const Tensor& clips, bool training) {
  const Shape& s = clips.shape();
  if (s.size() != 5 || s[2] != 3) throw ShapeError("forward: clips must be [B,T,3,H,W], got " + shape_str(s));
  FeatureBundle fb;
  fb.clips = s[0];
  fb.frames = s[1];
  const std::size_t n = s[0] * s[1];
  Var frames(clips.reshaped(Shape{n, 3, s[3], s[4]}));

  auto bb = backbone_.forward(frames, training && !stats_frozen_);
  fb.X = bb.X;
  fb.F_id = bb.F_id;
  const auto& comp = config_.components;
  if (comp.camera_branch()) {
    fb.F_cam = backbone::cel(fb.X, cel_kernel_);
    fb.f_cam = backbone::clip_max_pool(fb.F_cam, fb.clips);
  }
  if (comp.tlm) {
    fb.tlm = tlm::tlm_forward(fb.F_id, attention_);
    fb.F_t = fb.tlm->F_t;
  } else {
    fb.F_t = fb.F_id;
  }
  const std::size_t c = fb.F_t.shape()[1];
  Var per_frame = ops::reduce(fb.F_t, ReduceKind::Max, {2, 3});  // [B*T, c]
  fb.f_t = ops::reshape(per_frame, Shape{fb.clips, fb.frames, c});
  if (comp.fwg) {
    fb.fwg = fwg::predict_weights(fb.f_t, predictor_, config_.predict);
    fb.f_id = fwg::temporal_attend(fb.f_t, fb.fwg->weights);
  } else {
    fb.f_id = ops::reduce(fb.f_t, ReduceKind::Mean, {1});
  }
  return fb;
}

NamedParams DsaNet::parameters() const {
  NamedParams out;
  backbone_.collect_parameters(out, "backbone.");
  if (cel_kernel_.defined()) out.emplace_back("cel.weight", cel_kernel_);
  if (attention_.weight.defined()) {
    out.emplace_back("tlm.conv.weight", attention_.weight);
    out.emplace_back("tlm.conv.bias", attention_.bias);
  }
  if (predictor_.weight.defined()) {
    out.emplace_back("fwg.weight", predictor_.weight);
    out.emplace_back("fwg.bias", predictor_.bias);
  }
  out.emplace_back("classifier.id", id_classifier_);
  if (cam_classifier_.defined()) out.emplace_back("classifier.camera", cam_classifier_);
  return out;
}

std::size_t DsaNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : parameters()) n += p.numel();
  return n;
}

std::vector<std::pair<std::string, Tensor*>> DsaNet::buffers() {
  std::vector<std::pair<std::string, Tensor*>> out;
  backbone_.collect_buffers(out, "backbone.");
  return out;
}

std::vector<std::pair<std::string, bool*>> DsaNet::flags() {
  std::vector<std::pair<std::string, bool*>> out;
  backbone_.collect_flags(out, "backbone.");
  return out;
}

StepLosses compute_losses(const DsaNet& model, const FeatureBundle& fb, std::span<const int> id_labels,
                          std::span<const int> camera_labels, std::mt19937_64& sao_rng, const LossConfig& config,
                          bool training, const Tensor* fixed_pseudo_labels) {
  if (id_labels.size() != fb.clips || camera_labels.size() != fb.clips) {
    throw ShapeError("compute_losses: expected " + std::to_string(fb.clips) + " labels");
  }
  const auto& comp = model.config().components;
  const Var& P = model.id_classifier();
  StepLosses out;
  auto& r = out.report;
  r.lambda = config.lambda;
  r.lambda_cam = config.lambda_cam;
  r.ic_weight = config.ic_weight;

  Var ce_id = ops::cross_entropy(ops::linear(fb.f_id, P), id_labels);
  r.ce_id = ce_id.item();

  Var aux;  // ce_aug + ce_lr, both scaled by lambda
  auto add_to = [](Var& acc, const Var& v) { acc = acc.defined() ? ops::add(acc, v) : v; };

  if (comp.sao && training) {
    out.sao = sao::switch_and_aggregate(fb.f_id, fb.f_cam, id_labels, camera_labels, sao_rng,
                                        sao::SaoOptions{config.sao_cross_camera_only});
    if (out.sao) {
      Var ce_aug = sao::sao_ce_loss(*out.sao, P);
      r.ce_aug = ce_aug.item();
      add_to(aux, ce_aug);
    }
  }
  if (comp.tlm && comp.l_lr) {
    Var ce_lr = tlm::lr_loss(tlm::side_vectors(fb.F_t), fb.clips, id_labels, P);
    r.ce_lr = ce_lr.item();
    add_to(aux, ce_lr);
  }

  Var total = ce_id;
  if (aux.defined()) total = ops::add(total, ops::scale(aux, config.lambda));
  if (comp.l_cam) {
    Var ce_cam = backbone::camera_ce_loss(fb.f_cam, camera_labels, model.camera_classifier());
    r.ce_cam = ce_cam.item();
    total = ops::add(total, ops::scale(ce_cam, config.lambda_cam));
  }
  if (config.triplet) {
    Var tri = objective::triplet_loss(fb.f_id, id_labels, config.triplet_margin);
    r.tri = tri.item();
    total = ops::add(total, tri);
  }
  if (comp.l_dis) {
    backbone::DisentangleStats stats;
    Var dis = backbone::disentangling_loss(fb.f_id, fb.f_cam, config.dis_margin, &stats);
    out.degenerate_dis_rows = stats.degenerate;
    r.dis = dis.item();
    total = ops::add(total, dis);
  }
  if (comp.l_ic) {
    Var ic = objective::intra_class_loss(fb.f_id, id_labels);
    r.ic = ic.item();
    total = ops::add(total, ops::scale(ic, config.ic_weight));
  }
  if (comp.fwg) {
    out.pseudo_labels = fixed_pseudo_labels
                            ? *fixed_pseudo_labels
                            : fwg::pseudo_labels(fb.f_t.value(), id_labels, P.value(), model.config().pseudo);
    if (comp.l_w) {
      Var w = fwg::frame_weight_loss(out.pseudo_labels, fb.fwg->weights);
      r.w_loss = w.item();
      total = ops::add(total, ops::scale(w, config.lambda));
    }
  }
  objective::check_finite(r);
  r.total = total.item();
  if (!std::isfinite(r.total)) throw NumericError("non-finite total loss");
  out.total = total;
  return out;
}

}  // namespace dsanet
