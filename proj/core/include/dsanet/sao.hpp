#pragma once

#include <optional>
#include <random>
#include <span>
#include <vector>

#include "dsanet/autodiff.hpp"

// Switching and aggregation: camera vectors are shuffled across the batch
// and added to the ID vectors. The augmented vector keeps the identity label
// of its ID component. No parameters are involved.
namespace dsanet::sao {

struct SaoBatch {
  std::vector<std::size_t> permutation;  // f_aug[i] = f_id[i] + f_cam[permutation[i]]
  Var f_aug;                             // [B, C]
  std::vector<int> id_labels;
};

struct SaoOptions {
  // Only pair rows whose camera labels differ (falls back to unrestricted
  // when no such permutation is found).
  bool cross_camera_only = false;
};

// Uniform random permutation of [0, n).
std::vector<std::size_t> random_permutation(std::size_t n, std::mt19937_64& rng);

// Element-wise sum with a fixed permutation.
SaoBatch aggregate(const Var& f_id, const Var& f_cam, std::span<const std::size_t> permutation,
                   std::span<const int> id_labels);

// Returns nullopt (and performs no augmentation) when B < 2.
std::optional<SaoBatch> switch_and_aggregate(const Var& f_id, const Var& f_cam, std::span<const int> id_labels,
                                             std::span<const int> camera_labels, std::mt19937_64& rng,
                                             const SaoOptions& options = {});

// Mean cross-entropy of the shared ID classifier on f_aug.
Var sao_ce_loss(const SaoBatch& batch, const Var& classifier);

}  // namespace dsanet::sao
