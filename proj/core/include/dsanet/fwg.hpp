#pragma once

#include <span>
#include <string>

#include "dsanet/autodiff.hpp"

// Frame weight generation.
//
// Pseudo-labels come from per-frame classification difficulty: the frame
// cross-entropies are reversed (max CE - CE) and turned into a distribution.
// A one-layer predictor produces the same kind of distribution from the
// frame features; the final embedding is the weighted sum of frame vectors.
namespace dsanet::fwg {

// How reversed scores become a distribution.
enum class PseudoMode { Softmax, Normalize };
// Whether the predictor reverses its scores before the softmax.
enum class PredictMode { Reverse, Direct };

PseudoMode parse_pseudo_mode(const std::string& s);
PredictMode parse_predict_mode(const std::string& s);
std::string to_string(PseudoMode m);
std::string to_string(PredictMode m);

// d = max(ce) - ce
Tensor reverse_scores(const Tensor& ce);
Tensor to_distribution(const Tensor& d, PseudoMode mode);

// Single clip. f_t: [T, C], classifier: [C_id, C]. Returns w: [T].
// A constant target: nothing here is recorded for backprop.
Tensor pseudo_label(const Tensor& f_t, int id_label, const Tensor& classifier, PseudoMode mode = PseudoMode::Softmax);
// Batched: f_t [B, T, C] -> w [B, T].
Tensor pseudo_labels(const Tensor& f_t, std::span<const int> id_labels, const Tensor& classifier,
                     PseudoMode mode = PseudoMode::Softmax);

// 1x1 convolution over channels (weight [C], bias [1]).
struct Predictor {
  Var weight;
  Var bias;
};

struct Prediction {
  Var scores;   // s: [B, T]
  Var weights;  // w_hat: [B, T]
};

// f_t: [B, T, C]
Prediction predict_weights(const Var& f_t, const Predictor& predictor, PredictMode mode = PredictMode::Reverse);

// mean over entries of (w - w_hat)^2
Var frame_weight_loss(const Tensor& w, const Var& w_hat);

// sum_t w_hat[b, t] * f_t[b, t, :] -> [B, C]
Var temporal_attend(const Var& f_t, const Var& w_hat);

}  // namespace dsanet::fwg
