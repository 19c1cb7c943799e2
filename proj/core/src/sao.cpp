#include "dsanet/sao.hpp"

#include <algorithm>
#include <iostream>
#include <numeric>

#include "dsanet/errors.hpp"
#include "dsanet/ops.hpp"

namespace dsanet::sao {

std::vector<std::size_t> random_permutation(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  // Fisher-Yates
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(p[i - 1], p[pick(rng)]);
  }
  return p;
}

SaoBatch aggregate(const Var& f_id, const Var& f_cam, std::span<const std::size_t> permutation,
                   std::span<const int> id_labels) {
  if (f_id.shape() != f_cam.shape() || f_id.shape().size() != 2) {
    throw ShapeError("sao: f_id " + shape_str(f_id.shape()) + " and f_cam " + shape_str(f_cam.shape()) +
                     " must both be [B,C]");
  }
  const std::size_t b = f_id.shape()[0];
  if (permutation.size() != b || id_labels.size() != b) throw ShapeError("sao: permutation/labels size mismatch");
  std::vector<bool> hit(b, false);
  for (auto p : permutation) {
    if (p >= b || hit[p]) throw ArgumentError("sao: not a permutation");
    hit[p] = true;
  }
  SaoBatch out;
  out.permutation.assign(permutation.begin(), permutation.end());
  out.id_labels.assign(id_labels.begin(), id_labels.end());
  out.f_aug = ops::add(f_id, ops::gather_rows(f_cam, permutation));
  return out;
}

std::optional<SaoBatch> switch_and_aggregate(const Var& f_id, const Var& f_cam, std::span<const int> id_labels,
                                             std::span<const int> camera_labels, std::mt19937_64& rng,
                                             const SaoOptions& options) {
  const std::size_t b = f_id.shape().empty() ? 0 : f_id.shape()[0];
  if (b < 2) {
    std::clog << "sao: batch of " << b << " cannot be switched; skipping augmentation\n";
    return std::nullopt;
  }
  auto perm = random_permutation(b, rng);
  if (options.cross_camera_only) {
    if (camera_labels.size() != b) throw ShapeError("sao: camera label count mismatch");
    auto crosses = [&](const std::vector<std::size_t>& p) {
      for (std::size_t i = 0; i < b; ++i) {
        if (camera_labels[i] == camera_labels[p[i]]) return false;
      }
      return true;
    };
    bool found = crosses(perm);
    for (int attempt = 0; attempt < 1000 && !found; ++attempt) {
      perm = random_permutation(b, rng);
      found = crosses(perm);
    }
    if (!found) std::clog << "sao: no cross-camera permutation found; using unrestricted draw\n";
  }
  return aggregate(f_id, f_cam, perm, id_labels);
}

Var sao_ce_loss(const SaoBatch& batch, const Var& classifier) {
  return ops::cross_entropy(ops::linear(batch.f_aug, classifier), batch.id_labels);
}

}  // namespace dsanet::sao
