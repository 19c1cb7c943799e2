#include "dsanet/objective.hpp"

#include <cmath>
#include <map>
#include <vector>

#include "dsanet/errors.hpp"

namespace dsanet::objective {

nlohmann::json LossReport::to_json() const {
  return nlohmann::json{{"ce_id", ce_id}, {"ce_aug", ce_aug}, {"ce_lr", ce_lr}, {"ce_cam", ce_cam},
                        {"tri", tri},     {"dis", dis},       {"ic", ic},       {"w_loss", w_loss},
                        {"total", total}};
}

namespace {

void check_rows(const Var& e, std::span<const int> labels, const char* op) {
  const Shape& s = e.shape();
  if (s.size() != 2) throw ShapeError(std::string(op) + ": embeddings must be [B,C], got " + shape_str(s));
  if (labels.size() != s[0]) throw ShapeError(std::string(op) + ": label count mismatch");
}

}  // namespace

Var triplet_loss(const Var& embeddings, std::span<const int> labels, double margin) {
  check_rows(embeddings, labels, "triplet_loss");
  const std::size_t b = embeddings.shape()[0], c = embeddings.shape()[1];
  const double* f = embeddings.value().ptr();

  std::vector<double> dist(b * b, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = i + 1; j < b; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < c; ++k) {
        const double d = f[i * c + k] - f[j * c + k];
        s += d * d;
      }
      dist[i * b + j] = dist[j * b + i] = std::sqrt(s);
    }
  }

  struct Anchor {
    std::size_t pos = 0, neg = 0;
    bool active = false;
  };
  std::vector<Anchor> anchors(b);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    bool has_pos = false, has_neg = false;
    double dp = 0.0, dn = 0.0;
    for (std::size_t j = 0; j < b; ++j) {
      if (j == i) continue;
      const double d = dist[i * b + j];
      if (labels[j] == labels[i]) {
        if (!has_pos || d > dp) {
          dp = d;
          anchors[i].pos = j;
          has_pos = true;
        }
      } else if (!has_neg || d < dn) {
        dn = d;
        anchors[i].neg = j;
        has_neg = true;
      }
    }
    if (!has_pos || !has_neg) {
      throw ConfigError("triplet_loss: anchor " + std::to_string(i) +
                        " lacks a positive or a negative (need P>=2 identities with K>=2 clips)");
    }
    const double v = dp - dn + margin;
    if (v > 0.0) {
      anchors[i].active = true;
      total += v;
    }
  }
  const double inv_b = 1.0 / static_cast<double>(b);
  return make_result(Tensor::scalar(total * inv_b), "triplet_loss", {embeddings},
                     [anchors = std::move(anchors), dist = std::move(dist), b, c, inv_b](Node& self) {
                       const double g = self.grad[0] * inv_b;
                       const double* f = self.inputs[0]->value.ptr();
                       Tensor gf(self.inputs[0]->value.shape(), 0.0);
                       auto pull = [&](std::size_t i, std::size_t j, double sign) {
                         const double d = dist[i * b + j];
                         if (d <= 0.0) return;  // subgradient zero at coincident points
                         for (std::size_t k = 0; k < c; ++k) {
                           const double u = sign * g * (f[i * c + k] - f[j * c + k]) / d;
                           gf[i * c + k] += u;
                           gf[j * c + k] -= u;
                         }
                       };
                       for (std::size_t i = 0; i < b; ++i) {
                         if (!anchors[i].active) continue;
                         pull(i, anchors[i].pos, 1.0);
                         pull(i, anchors[i].neg, -1.0);
                       }
                       self.inputs[0]->accumulate(gf);
                     });
}

Var intra_class_loss(const Var& embeddings, std::span<const int> labels) {
  check_rows(embeddings, labels, "intra_class_loss");
  const std::size_t b = embeddings.shape()[0], c = embeddings.shape()[1];
  if (b == 0) throw ArgumentError("intra_class_loss: empty batch");
  const double* f = embeddings.value().ptr();

  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < b; ++i) groups[labels[i]].push_back(i);

  Tensor centroid_of_row(Shape{b, c}, 0.0);
  std::vector<double> inv_count(b, 0.0);
  double total = 0.0;
  for (const auto& [label, rows] : groups) {
    const double n = static_cast<double>(rows.size());
    std::vector<double> mu(c, 0.0);
    for (auto r : rows) {
      for (std::size_t k = 0; k < c; ++k) mu[k] += f[r * c + k];
    }
    for (auto& m : mu) m /= n;
    for (auto r : rows) {
      for (std::size_t k = 0; k < c; ++k) {
        const double d = f[r * c + k] - mu[k];
        total += d * d / n;
        centroid_of_row[r * c + k] = mu[k];
      }
      inv_count[r] = 1.0 / n;
    }
  }
  return make_result(Tensor::scalar(total), "intra_class_loss", {embeddings},
                     [centroid_of_row = std::move(centroid_of_row), inv_count = std::move(inv_count), b,
                      c](Node& self) {
                       // d/df_i of sum_k 1/n_k sum_j |f_j - mu_k|^2 = 2/n_k (f_i - mu_k)
                       const double g = self.grad[0];
                       const double* f = self.inputs[0]->value.ptr();
                       Tensor gf(self.inputs[0]->value.shape());
                       for (std::size_t i = 0; i < b; ++i) {
                         for (std::size_t k = 0; k < c; ++k) {
                           gf[i * c + k] = g * 2.0 * inv_count[i] * (f[i * c + k] - centroid_of_row[i * c + k]);
                         }
                       }
                       self.inputs[0]->accumulate(gf);
                     });
}

double compose_ce(double ce_id, double ce_aug, double ce_lr, double ce_cam, double lambda, double lambda_cam) {
  const std::pair<const char*, double> parts[] = {
      {"ce_id", ce_id}, {"ce_aug", ce_aug}, {"ce_lr", ce_lr}, {"ce_cam", ce_cam}, {"lambda", lambda},
      {"lambda_cam", lambda_cam}};
  for (const auto& [name, v] : parts) {
    if (v < 0.0) throw ArgumentError(std::string("compose_ce: negative component ") + name);
  }
  return ce_id + lambda * (ce_aug + ce_lr) + lambda_cam * ce_cam;
}

void check_finite(const LossReport& r) {
  const std::pair<const char*, double> parts[] = {{"ce_id", r.ce_id}, {"ce_aug", r.ce_aug}, {"ce_lr", r.ce_lr},
                                                  {"ce_cam", r.ce_cam}, {"tri", r.tri},       {"dis", r.dis},
                                                  {"ic", r.ic},         {"w_loss", r.w_loss}};
  for (const auto& [name, v] : parts) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite loss component: ") + name);
  }
}

double compose_total(LossReport& r) {
  check_finite(r);
  r.total = compose_ce(r.ce_id, r.ce_aug, r.ce_lr, r.ce_cam, r.lambda, r.lambda_cam) + r.tri + r.dis + r.ic_weight * r.ic +
            r.lambda * r.w_loss;
  return r.total;
}

}  // namespace dsanet::objective
