#pragma once

#include <span>

#include "dsanet/autodiff.hpp"

// Target localization: overlapping left / middle / right spatial attention
// over the ID map, fused into one map that re-weights the features
// residually, plus a side-classification loss on the left and right halves.
//
// Maps are frame-major [N, C, h, w]; attention maps keep a singleton
// channel axis, [N, 1, h, w/2], so they broadcast over channels.
namespace dsanet::tlm {

struct Regions {
  Var left;    // columns [0, w/2)
  Var middle;  // columns [w/4, 3w/4)
  Var right;   // columns [w/2, w)
};

struct TlmMaps {
  Regions regions;
  Var A_left, A_middle, A_right;  // [N, 1, h, w/2]
  Var Z_attn;                     // [N, 1, h, w]
  Var F_t;                        // [N, C, h, w]
};

// Per-frame side vectors pooled from the halves of F_t: [N, C] each.
struct SideVectors {
  Var left, right;
};

// Shared region-attention convolution: [1, 2, 3, 3] kernel and [1] bias.
struct AttentionConv {
  Var weight;
  Var bias;
};

Regions split_lmr(const Var& F_id);

// softmax over (h, w/2) of conv3x3([max_c Z ; mean_c Z])
Var region_attention(const Var& Z, const AttentionConv& conv);

// concat(A_L, A_R) along width, with A_M added onto the central w/2 columns.
Var fuse_attention(const Var& A_left, const Var& A_middle, const Var& A_right);

// F_t = Z_attn * F_id + F_id (Z_attn broadcast over channels)
Var reweight(const Var& F_id, const Var& Z_attn);

TlmMaps tlm_forward(const Var& F_id, const AttentionConv& conv);

SideVectors side_vectors(const Var& F_t);

// Sum of the ID cross-entropies of the clip-level (max over t) left and right
// side vectors. left/right: [B*T, C]; classifier: [C_id, C].
Var lr_loss(const SideVectors& sides, std::size_t clips, std::span<const int> id_labels, const Var& classifier);

}  // namespace dsanet::tlm
