#include "dsanet/backbone.hpp"

#include <cmath>

#include "dsanet/errors.hpp"
#include "dsanet/ops.hpp"

namespace dsanet::backbone {

void BackboneConfig::validate() const {
  if (c == 0 || c % 8 != 0) throw ConfigError("backbone.c must be a positive multiple of 8, got " + std::to_string(c));
  for (auto s : strides) {
    if (s < 1 || s > 2) throw ConfigError("backbone.strides entries must be 1 or 2");
  }
  if (strides[3] != 1 && strides[3] != 2) throw ConfigError("final-stage stride must be 1 or 2");
  const auto ds = downsample();
  if (height % ds != 0 || width % ds != 0) {
    throw ConfigError("input " + std::to_string(height) + "x" + std::to_string(width) +
                      " not divisible by total downsampling " + std::to_string(ds));
  }
}

NormKind parse_norm(const std::string& s) {
  if (s == "batch") return NormKind::Batch;
  if (s == "running") return NormKind::Running;
  if (s == "none") return NormKind::None;
  throw ConfigError("backbone.norm must be 'batch', 'running' or 'none', got '" + s + "'");
}

std::string to_string(NormKind k) {
  switch (k) {
    case NormKind::Batch: return "batch";
    case NormKind::Running: return "running";
    default: return "none";
  }
}

ChannelNorm::ChannelNorm(std::size_t channels, double momentum_, double eps_)
    : gamma(Tensor(Shape{channels}, 1.0), true),
      beta(Tensor(Shape{channels}, 0.0), true),
      running_mean(Shape{channels}, 0.0),
      running_var(Shape{channels}, 1.0),
      momentum(momentum_),
      eps(eps_) {}

Var ChannelNorm::forward(const Var& x, bool batch_stats) {
  if (!batch_stats) return ops::channel_norm(x, gamma, beta, running_mean, running_var, eps);
  Tensor mean, var;
  Var y;
  if (batch_coupled) {
    y = ops::batch_norm(x, gamma, beta, eps, &mean, &var);
  } else {
    NoGradGuard no_grad;
    ops::batch_norm(x, gamma, beta, eps, &mean, &var);
  }
  for (std::size_t ch = 0; ch < mean.numel(); ++ch) {
    if (!initialized) {
      running_mean[ch] = mean[ch];
      running_var[ch] = var[ch];
    } else {
      running_mean[ch] = (1.0 - momentum) * running_mean[ch] + momentum * mean[ch];
      running_var[ch] = (1.0 - momentum) * running_var[ch] + momentum * var[ch];
    }
  }
  initialized = true;
  return batch_coupled ? y : ops::channel_norm(x, gamma, beta, running_mean, running_var, eps);
}

namespace {

Var he_conv(std::size_t cout, std::size_t cin, std::size_t k, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / static_cast<double>(cin * k * k)));
  Tensor w(Shape{cout, cin, k, k});
  for (auto& v : w.data()) v = nd(rng);
  return Var(std::move(w), true);
}

}  // namespace

Backbone::Backbone(const BackboneConfig& config, std::mt19937_64& rng) : config_(config) {
  config_.validate();
  const auto widths = config_.widths();
  std::size_t cin = 3;
  for (std::size_t s = 0; s < 4; ++s) {
    Stage& st = stages_[s];
    st.stride = config_.strides[s];
    st.conv1 = he_conv(widths[s], cin, 3, rng);
    st.conv2 = he_conv(widths[s], widths[s], 3, rng);
    if (config_.norm != NormKind::None) {
      st.norm1 = ChannelNorm(widths[s]);
      st.norm2 = ChannelNorm(widths[s]);
      st.norm1.batch_coupled = st.norm2.batch_coupled = config_.norm == NormKind::Batch;
    } else {
      st.bias1 = Var(Tensor(Shape{widths[s]}, 0.0), true);
      st.bias2 = Var(Tensor(Shape{widths[s]}, 0.0), true);
    }
    cin = widths[s];
  }
}

BackboneOutput Backbone::forward(const Var& frames, bool batch_stats) {
  const Shape& fs = frames.shape();
  if (fs.size() != 4 || fs[1] != 3) throw ShapeError("backbone: frames must be [N,3,H,W], got " + shape_str(fs));
  if (fs[2] % config_.downsample() != 0 || fs[3] % config_.downsample() != 0) {
    throw ShapeError("backbone: frame size " + std::to_string(fs[2]) + "x" + std::to_string(fs[3]) +
                     " not divisible by downsampling " + std::to_string(config_.downsample()));
  }
  BackboneOutput out;
  Var h = frames;
  for (std::size_t s = 0; s < 4; ++s) {
    Stage& st = stages_[s];
    h = ops::conv2d(h, st.conv1, st.bias1, st.stride, 1);
    if (config_.norm != NormKind::None) h = st.norm1.forward(h, batch_stats);
    h = ops::relu(h);
    h = ops::conv2d(h, st.conv2, st.bias2, 1, 1);
    if (config_.norm != NormKind::None) h = st.norm2.forward(h, batch_stats);
    h = ops::relu(h);
    if (s == 2) out.X = h;
  }
  out.F_id = h;
  return out;
}

void Backbone::collect_parameters(NamedParams& out, const std::string& prefix) const {
  for (std::size_t s = 0; s < 4; ++s) {
    const Stage& st = stages_[s];
    const std::string p = prefix + "stage" + std::to_string(s + 1) + ".";
    out.emplace_back(p + "conv1.weight", st.conv1);
    if (st.bias1.defined()) out.emplace_back(p + "conv1.bias", st.bias1);
    if (config_.norm != NormKind::None) {
      out.emplace_back(p + "norm1.gamma", st.norm1.gamma);
      out.emplace_back(p + "norm1.beta", st.norm1.beta);
    }
    out.emplace_back(p + "conv2.weight", st.conv2);
    if (st.bias2.defined()) out.emplace_back(p + "conv2.bias", st.bias2);
    if (config_.norm != NormKind::None) {
      out.emplace_back(p + "norm2.gamma", st.norm2.gamma);
      out.emplace_back(p + "norm2.beta", st.norm2.beta);
    }
  }
}

void Backbone::collect_buffers(std::vector<std::pair<std::string, Tensor*>>& out, const std::string& prefix) {
  if (config_.norm == NormKind::None) return;
  for (std::size_t s = 0; s < 4; ++s) {
    Stage& st = stages_[s];
    const std::string p = prefix + "stage" + std::to_string(s + 1) + ".";
    out.emplace_back(p + "norm1.running_mean", &st.norm1.running_mean);
    out.emplace_back(p + "norm1.running_var", &st.norm1.running_var);
    out.emplace_back(p + "norm2.running_mean", &st.norm2.running_mean);
    out.emplace_back(p + "norm2.running_var", &st.norm2.running_var);
  }
}

void Backbone::collect_flags(std::vector<std::pair<std::string, bool*>>& out, const std::string& prefix) {
  if (config_.norm == NormKind::None) return;
  for (std::size_t s = 0; s < 4; ++s) {
    Stage& st = stages_[s];
    const std::string p = prefix + "stage" + std::to_string(s + 1) + ".";
    out.emplace_back(p + "norm1.initialized", &st.norm1.initialized);
    out.emplace_back(p + "norm2.initialized", &st.norm2.initialized);
  }
}

Var cel(const Var& X, const Var& kernel) {
  const Shape& ks = kernel.shape();
  if (ks.size() != 4 || ks[2] != 1 || ks[3] != 1 || ks[0] != 2 * ks[1]) {
    throw ShapeError("cel: kernel must be [2m, m, 1, 1], got " + shape_str(ks));
  }
  if (X.shape().size() != 4 || X.shape()[1] != ks[1]) {
    throw ShapeError("cel: input channels must be " + std::to_string(ks[1]) + ", got " + shape_str(X.shape()));
  }
  return ops::conv2d(X, kernel, Var(), 1, 0);
}

Var clip_max_pool(const Var& F, std::size_t clips) {
  const Shape& s = F.shape();
  if (s.size() != 4 || clips == 0 || s[0] % clips != 0) {
    throw ShapeError("clip_max_pool: " + shape_str(s) + " cannot be split into " + std::to_string(clips) + " clips");
  }
  const std::size_t t = s[0] / clips;
  // [B*T, C, h, w] -> [B, T, C, h*w] -> max over T and h*w
  Var r = ops::reshape(F, Shape{clips, t, s[1], s[2] * s[3]});
  return ops::reduce(r, ops::ReduceKind::Max, {1, 3}, false);
}

Var disentangling_loss(const Var& f_id, const Var& f_cam, double margin, DisentangleStats* stats) {
  if (f_id.shape() != f_cam.shape()) {
    throw ShapeError("disentangling_loss: " + shape_str(f_id.shape()) + " vs " + shape_str(f_cam.shape()));
  }
  const Shape& s = f_id.shape();
  if (s.size() != 1 && s.size() != 2) throw ShapeError("disentangling_loss: expects [C] or [B,C]");
  const std::size_t b = s.size() == 1 ? 1 : s[0];
  const std::size_t c = s.size() == 1 ? s[0] : s[1];
  const double* u = f_id.value().ptr();
  const double* v = f_cam.value().ptr();

  struct Row {
    bool active = false;
    double nu = 0, nv = 0, cos = 0;
  };
  std::vector<Row> rows(b);
  double total = 0.0;
  std::size_t degenerate = 0;
  for (std::size_t i = 0; i < b; ++i) {
    double dot = 0, uu = 0, vv = 0;
    for (std::size_t k = 0; k < c; ++k) {
      dot += u[i * c + k] * v[i * c + k];
      uu += u[i * c + k] * u[i * c + k];
      vv += v[i * c + k] * v[i * c + k];
    }
    Row& r = rows[i];
    r.nu = std::sqrt(uu);
    r.nv = std::sqrt(vv);
    if (r.nu < 1e-12 || r.nv < 1e-12) {
      ++degenerate;
      continue;
    }
    r.cos = dot / (r.nu * r.nv);
    if (r.cos - margin > 0.0) {
      r.active = true;
      total += r.cos - margin;
    }
  }
  if (stats) stats->degenerate += degenerate;
  const double inv_b = 1.0 / static_cast<double>(b);
  return make_result(Tensor::scalar(total * inv_b), "disentangling_loss", {f_id, f_cam},
                     [rows = std::move(rows), b, c, inv_b](Node& self) {
                       const auto& U = self.inputs[0];
                       const auto& V = self.inputs[1];
                       const double g = self.grad[0] * inv_b;
                       Tensor gu(U->value.shape(), 0.0), gv(V->value.shape(), 0.0);
                       const double* u = U->value.ptr();
                       const double* v = V->value.ptr();
                       for (std::size_t i = 0; i < b; ++i) {
                         const Row& r = rows[i];
                         if (!r.active) continue;
                         for (std::size_t k = 0; k < c; ++k) {
                           const double uk = u[i * c + k], vk = v[i * c + k];
                           gu[i * c + k] = g * (vk / (r.nu * r.nv) - r.cos * uk / (r.nu * r.nu));
                           gv[i * c + k] = g * (uk / (r.nu * r.nv) - r.cos * vk / (r.nv * r.nv));
                         }
                       }
                       if (U->requires_grad) U->accumulate(gu);
                       if (V->requires_grad) V->accumulate(gv);
                     });
}

Var camera_ce_loss(const Var& f_cam, std::span<const int> camera_labels, const Var& classifier) {
  if (classifier.shape().size() != 2 || classifier.shape()[0] < 2) {
    throw ConfigError("camera classifier needs at least 2 camera classes");
  }
  return ops::cross_entropy(ops::linear(f_cam, classifier), camera_labels);
}

}  // namespace dsanet::backbone
