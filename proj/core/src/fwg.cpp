#include "dsanet/fwg.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "dsanet/errors.hpp"
#include "dsanet/ops.hpp"

namespace dsanet::fwg {

using ops::ReduceKind;

PseudoMode parse_pseudo_mode(const std::string& s) {
  if (s == "softmax") return PseudoMode::Softmax;
  if (s == "normalize") return PseudoMode::Normalize;
  throw ConfigError("fwg.pseudo must be 'softmax' or 'normalize', got '" + s + "'");
}

PredictMode parse_predict_mode(const std::string& s) {
  if (s == "reverse") return PredictMode::Reverse;
  if (s == "direct") return PredictMode::Direct;
  throw ConfigError("fwg.predict must be 'reverse' or 'direct', got '" + s + "'");
}

std::string to_string(PseudoMode m) { return m == PseudoMode::Softmax ? "softmax" : "normalize"; }
std::string to_string(PredictMode m) { return m == PredictMode::Reverse ? "reverse" : "direct"; }

Tensor reverse_scores(const Tensor& ce) {
  Tensor d = ce;
  const double mx = *std::max_element(ce.data().begin(), ce.data().end());
  for (auto& v : d.data()) v = mx - v;
  return d;
}

Tensor to_distribution(const Tensor& d, PseudoMode mode) {
  Tensor w = d;
  auto v = w.data();
  const double n = static_cast<double>(v.size());
  if (mode == PseudoMode::Softmax) {
    const double mx = *std::max_element(v.begin(), v.end());
    double s = 0.0;
    for (auto& x : v) {
      x = std::exp(x - mx);
      s += x;
    }
    for (auto& x : v) x /= s;
  } else {
    double s = 0.0;
    for (auto x : v) s += x;
    if (s <= 0.0) {
      for (auto& x : v) x = 1.0 / n;
    } else {
      for (auto& x : v) x /= s;
    }
  }
  return w;
}

Tensor pseudo_label(const Tensor& f_t, int id_label, const Tensor& classifier, PseudoMode mode) {
  if (f_t.rank() != 2) throw ShapeError("pseudo_label: f_t must be [T,C], got " + shape_str(f_t.shape()));
  const std::size_t t = f_t.dim(0);
  if (t == 1) return Tensor(Shape{1}, 1.0);
  NoGradGuard guard;
  Var logits = ops::linear(Var(f_t), Var(classifier));
  std::vector<int> labels(t, id_label);
  Tensor ce = ops::cross_entropy_rows(logits.value(), labels);
  return to_distribution(reverse_scores(ce), mode);
}

Tensor pseudo_labels(const Tensor& f_t, std::span<const int> id_labels, const Tensor& classifier, PseudoMode mode) {
  if (f_t.rank() != 3) throw ShapeError("pseudo_labels: f_t must be [B,T,C], got " + shape_str(f_t.shape()));
  const std::size_t b = f_t.dim(0), t = f_t.dim(1);
  if (id_labels.size() != b) throw ShapeError("pseudo_labels: label count mismatch");
  Tensor out(Shape{b, t});
  for (std::size_t i = 0; i < b; ++i) {
    Tensor w = pseudo_label(f_t.slice0(i), id_labels[i], classifier, mode);
    std::copy(w.data().begin(), w.data().end(), out.ptr() + i * t);
  }
  return out;
}

Prediction predict_weights(const Var& f_t, const Predictor& predictor, PredictMode mode) {
  const Shape& s = f_t.shape();
  if (s.size() != 3) throw ShapeError("predict_weights: f_t must be [B,T,C], got " + shape_str(s));
  const std::size_t b = s[0], t = s[1], c = s[2];
  Var w = ops::reshape(predictor.weight, Shape{1, c});
  Var flat = ops::linear(ops::reshape(f_t, Shape{b * t, c}), w);  // [B*T, 1]
  Var bias = ops::expand(ops::reshape(predictor.bias, Shape{1, 1}), Shape{b * t, 1});
  Prediction p;
  p.scores = ops::reshape(ops::add(flat, bias), Shape{b, t});
  if (mode == PredictMode::Reverse) {
    Var mx = ops::expand(ops::reduce(p.scores, ReduceKind::Max, {1}, true), Shape{b, t});
    p.weights = ops::softmax(ops::sub(mx, p.scores), {1});
  } else {
    p.weights = ops::softmax(p.scores, {1});
  }
  return p;
}

Var frame_weight_loss(const Tensor& w, const Var& w_hat) {
  if (w.shape() != w_hat.shape()) {
    throw ShapeError("frame_weight_loss: " + shape_str(w.shape()) + " vs " + shape_str(w_hat.shape()));
  }
  return ops::mse(w_hat, Var(w));
}

Var temporal_attend(const Var& f_t, const Var& w_hat) {
  const Shape& s = f_t.shape();
  if (s.size() != 3 || w_hat.shape() != Shape{s[0], s[1]}) {
    throw ShapeError("temporal_attend: f_t " + shape_str(s) + " with weights " + shape_str(w_hat.shape()));
  }
  Var w = ops::expand(ops::reshape(w_hat, Shape{s[0], s[1], 1}), s);
  return ops::reduce(ops::mul(f_t, w), ReduceKind::Sum, {1});
}

}  // namespace dsanet::fwg
