#pragma once

#include <span>
#include <string>

#include <nlohmann/json.hpp>

#include "dsanet/autodiff.hpp"

namespace dsanet::objective {

// Named loss values of one training step.
struct LossReport {
  double ce_id = 0.0;
  double ce_aug = 0.0;
  double ce_lr = 0.0;
  double ce_cam = 0.0;
  double tri = 0.0;
  double dis = 0.0;
  double ic = 0.0;
  double w_loss = 0.0;
  double lambda = 0.1;
  double lambda_cam = 0.1;
  double ic_weight = 1.0;
  double total = 0.0;

  nlohmann::json to_json() const;
};

// Batch-hard triplet loss on euclidean distances of unnormalized embeddings:
// mean over anchors of max(d(a, hardest positive) - d(a, hardest negative) + margin, 0).
// Every anchor needs at least one other same-label row and one different-label row.
Var triplet_loss(const Var& embeddings, std::span<const int> labels, double margin = 0.3);

// Sum over identities of the per-identity mean squared deviation from the
// identity centroid (summed over feature dimensions).
Var intra_class_loss(const Var& embeddings, std::span<const int> labels);

// ce_id + lambda (ce_aug + ce_lr) + lambda_cam ce_cam
double compose_ce(double ce_id, double ce_aug, double ce_lr, double ce_cam, double lambda, double lambda_cam);

// L_ce + tri + dis + ic_weight ic + lambda w_loss; also stores the result in report.total.
double compose_total(LossReport& report);

// Throws NumericError naming the first non-finite component.
void check_finite(const LossReport& report);

}  // namespace dsanet::objective
