#include "dsanet/tlm.hpp"

#include "dsanet/errors.hpp"
#include "dsanet/ops.hpp"

namespace dsanet::tlm {

using ops::ReduceKind;

Regions split_lmr(const Var& F_id) {
  const Shape& s = F_id.shape();
  if (s.size() != 4) throw ShapeError("split_lmr: expects [N,C,h,w], got " + shape_str(s));
  const std::size_t w = s[3];
  if (w % 4 != 0) {
    throw ConfigError("target localization needs feature width divisible by 4, got " + std::to_string(w));
  }
  return Regions{ops::slice(F_id, 3, 0, w / 2), ops::slice(F_id, 3, w / 4, 3 * w / 4), ops::slice(F_id, 3, w / 2, w)};
}

Var region_attention(const Var& Z, const AttentionConv& conv) {
  Var mx = ops::reduce(Z, ReduceKind::Max, {1}, true);
  Var av = ops::reduce(Z, ReduceKind::Mean, {1}, true);
  Var logits = ops::conv2d(ops::concat({mx, av}, 1), conv.weight, conv.bias, 1, 1);
  return ops::softmax(logits, {2, 3});
}

Var fuse_attention(const Var& A_left, const Var& A_middle, const Var& A_right) {
  if (A_left.shape() != A_middle.shape() || A_left.shape() != A_right.shape()) {
    throw ShapeError("fuse_attention: region maps must share a shape");
  }
  const std::size_t half = A_left.shape()[3];
  if (half % 2 != 0) throw ShapeError("fuse_attention: half width must be even");
  Var both = ops::concat({A_left, A_right}, 3);
  return ops::add(both, ops::pad(A_middle, 3, half / 2, half / 2));
}

Var reweight(const Var& F_id, const Var& Z_attn) {
  const Shape& s = F_id.shape();
  if (Z_attn.shape() != Shape{s[0], 1, s[2], s[3]}) {
    throw ShapeError("reweight: attention " + shape_str(Z_attn.shape()) + " does not fit " + shape_str(s));
  }
  return ops::add(ops::mul(ops::expand(Z_attn, s), F_id), F_id);
}

TlmMaps tlm_forward(const Var& F_id, const AttentionConv& conv) {
  TlmMaps m;
  m.regions = split_lmr(F_id);
  m.A_left = region_attention(m.regions.left, conv);
  m.A_middle = region_attention(m.regions.middle, conv);
  m.A_right = region_attention(m.regions.right, conv);
  m.Z_attn = fuse_attention(m.A_left, m.A_middle, m.A_right);
  m.F_t = reweight(F_id, m.Z_attn);
  return m;
}

SideVectors side_vectors(const Var& F_t) {
  const std::size_t w = F_t.shape()[3];
  return SideVectors{ops::reduce(ops::slice(F_t, 3, 0, w / 2), ReduceKind::Max, {2, 3}),
                     ops::reduce(ops::slice(F_t, 3, w / 2, w), ReduceKind::Max, {2, 3})};
}

namespace {

Var clip_pool(const Var& per_frame, std::size_t clips) {
  const Shape& s = per_frame.shape();
  if (clips == 0 || s[0] % clips != 0) throw ShapeError("lr_loss: frames not divisible into clips");
  return ops::reduce(ops::reshape(per_frame, Shape{clips, s[0] / clips, s[1]}), ReduceKind::Max, {1});
}

}  // namespace

Var lr_loss(const SideVectors& sides, std::size_t clips, std::span<const int> id_labels, const Var& classifier) {
  Var left = ops::cross_entropy(ops::linear(clip_pool(sides.left, clips), classifier), id_labels);
  Var right = ops::cross_entropy(ops::linear(clip_pool(sides.right, clips), classifier), id_labels);
  return ops::add(left, right);
}

}  // namespace dsanet::tlm
