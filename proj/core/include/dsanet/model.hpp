#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dsanet/backbone.hpp"
#include "dsanet/fwg.hpp"
#include "dsanet/gradcheck.hpp"
#include "dsanet/objective.hpp"
#include "dsanet/sao.hpp"
#include "dsanet/tlm.hpp"

namespace dsanet {

// Switchable parts of the network and objective, named as in the ablation table.
struct Components {
  bool tlm = true;
  bool fwg = true;
  bool sao = true;
  bool l_lr = true;
  bool l_w = true;
  bool l_ic = true;
  bool l_dis = true;
  bool l_cam = true;

  static Components all() { return {}; }
  static Components none() { return {false, false, false, false, false, false, false, false}; }
  // Comma-separated subset of {tlm,fwg,sao,l_lr,l_w,l_ic,l_dis,l_cam}; also "all" / "none".
  static Components parse(const std::string& list);
  std::string to_string() const;
  static const std::vector<std::string>& names();

  bool camera_branch() const { return sao || l_dis || l_cam; }
  void validate() const;

  friend bool operator==(const Components&, const Components&) = default;
};

struct LossConfig {
  double lambda = 0.1;
  double lambda_cam = 0.1;
  double triplet_margin = 0.3;
  bool triplet = true;
  double dis_margin = 0.0;
  double ic_weight = 1.0;
  bool sao_cross_camera_only = false;
};

struct ModelConfig {
  backbone::BackboneConfig backbone;
  std::size_t num_ids = 16;
  std::size_t num_cameras = 4;
  Components components;
  fwg::PseudoMode pseudo = fwg::PseudoMode::Softmax;
  fwg::PredictMode predict = fwg::PredictMode::Reverse;
  std::uint64_t seed = 0;
};

// Everything the forward pass produces for a batch of B clips of T frames.
struct FeatureBundle {
  std::size_t clips = 0;
  std::size_t frames = 0;  // T
  Var X;                   // [B*T, c/2, h, w]
  Var F_id;                // [B*T, c, h, w]
  Var F_cam;               // [B*T, c, h, w] (camera branch only)
  Var F_t;                 // [B*T, c, h, w]
  std::optional<tlm::TlmMaps> tlm;
  Var f_t;    // [B, T, c]
  Var f_id;   // [B, c]
  Var f_cam;  // [B, c] (camera branch only)
  std::optional<fwg::Prediction> fwg;
};

class DsaNet {
 public:
  explicit DsaNet(const ModelConfig& config);

  // clips: [B, T, 3, H, W]. In training mode the normalization statistics
  // are updated unless frozen.
  FeatureBundle forward(const Tensor& clips, bool training);

  const ModelConfig& config() const { return config_; }
  NamedParams parameters() const;
  std::size_t parameter_count() const;
  std::vector<std::pair<std::string, Tensor*>> buffers();
  std::vector<std::pair<std::string, bool*>> flags();

  const Var& id_classifier() const { return id_classifier_; }
  const Var& camera_classifier() const { return cam_classifier_; }

  void set_stats_frozen(bool frozen) { stats_frozen_ = frozen; }
  bool stats_frozen() const { return stats_frozen_; }

 private:
  ModelConfig config_;
  backbone::Backbone backbone_;
  Var cel_kernel_;
  tlm::AttentionConv attention_;
  fwg::Predictor predictor_;
  Var id_classifier_;
  Var cam_classifier_;
  bool stats_frozen_ = false;
};

struct StepLosses {
  Var total;
  objective::LossReport report;
  std::optional<sao::SaoBatch> sao;
  Tensor pseudo_labels;  // [B, T] when FWG is on
  std::size_t degenerate_dis_rows = 0;
};

// All enabled loss terms for one batch, composed into the total objective.
// Pseudo-labels are a constant target; `fixed_pseudo_labels` replaces their
// computation (finite-difference checks hold them fixed the same way).
StepLosses compute_losses(const DsaNet& model, const FeatureBundle& bundle, std::span<const int> id_labels,
                          std::span<const int> camera_labels, std::mt19937_64& sao_rng, const LossConfig& config,
                          bool training = true, const Tensor* fixed_pseudo_labels = nullptr);

}  // namespace dsanet
