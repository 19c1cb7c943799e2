#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>

#include "dsanet/autodiff.hpp"
#include "dsanet/gradcheck.hpp"

// Four-stage plain CNN (ID branch), the channel expansion layer (camera
// branch), and the two losses that separate them.
//
// Feature maps are laid out frame-major: [N, C, H, W] where N = clips x T.
// Frames are processed independently; the temporal axis only mixes later.
namespace dsanet::backbone {

// batch: batch statistics in training, running statistics in eval.
// running: running statistics always (updated from each training batch
// without gradient), so frames never interact.
enum class NormKind { Batch, Running, None };

struct BackboneConfig {
  std::size_t c = 64;                       // final channel count
  std::array<std::size_t, 4> strides{2, 2, 2, 1};
  NormKind norm = NormKind::Batch;
  std::size_t height = 64;
  std::size_t width = 32;

  std::array<std::size_t, 4> widths() const { return {c / 8, c / 4, c / 2, c}; }
  std::size_t downsample() const { return strides[0] * strides[1] * strides[2] * strides[3]; }
  std::size_t out_height() const { return height / downsample(); }
  std::size_t out_width() const { return width / downsample(); }
  void validate() const;  // throws ConfigError
};

NormKind parse_norm(const std::string& s);
std::string to_string(NormKind k);

// Per-channel affine normalization. Training normalizes with the statistics
// of the current batch of frames (gradient flows through them) and folds
// them into the running statistics; evaluation uses the running statistics.
class ChannelNorm {
 public:
  ChannelNorm() = default;
  ChannelNorm(std::size_t channels, double momentum = 0.1, double eps = 1e-5);

  Var forward(const Var& x, bool batch_stats);

  Var gamma, beta;
  Tensor running_mean, running_var;
  double momentum = 0.1;
  double eps = 1e-5;
  bool initialized = false;
  bool batch_coupled = true;
};

struct Stage {
  Var conv1, conv2;  // [Cout, Cin, 3, 3]
  Var bias1, bias2;  // only without normalization
  ChannelNorm norm1, norm2;
  std::size_t stride = 1;
};

struct BackboneOutput {
  Var X;     // stage-3 map [N, c/2, h, w]
  Var F_id;  // stage-4 map [N, c, h, w]
};

class Backbone {
 public:
  Backbone() = default;
  Backbone(const BackboneConfig& config, std::mt19937_64& rng);

  // frames: [N, 3, H, W]
  BackboneOutput forward(const Var& frames, bool batch_stats);

  const BackboneConfig& config() const { return config_; }
  void collect_parameters(NamedParams& out, const std::string& prefix) const;
  // Running statistics, as (name, tensor*) for checkpointing.
  void collect_buffers(std::vector<std::pair<std::string, Tensor*>>& out, const std::string& prefix);
  void collect_flags(std::vector<std::pair<std::string, bool*>>& out, const std::string& prefix);

 private:
  BackboneConfig config_;
  std::array<Stage, 4> stages_;
};

// Single 1x1 convolution doubling the channel count: X [N, c/2, h, w] -> F_cam [N, c, h, w].
// kernel: [c, c/2, 1, 1].
Var cel(const Var& X, const Var& kernel);

// max over (t, h, w) per channel: F [B*T, C, h, w] -> [B, C]
Var clip_max_pool(const Var& F, std::size_t clips);

struct DisentangleStats {
  std::size_t degenerate = 0;  // rows skipped because a vector had norm < 1e-12
};

// Mean over rows of max(cos(f_id, f_cam) - margin, 0). Accepts [C] or [B, C].
Var disentangling_loss(const Var& f_id, const Var& f_cam, double margin = 0.0, DisentangleStats* stats = nullptr);

// Mean softmax cross-entropy of W f_cam against camera labels. f_cam: [B, C], W: [C_cam, C].
Var camera_ce_loss(const Var& f_cam, std::span<const int> camera_labels, const Var& classifier);

}  // namespace dsanet::backbone
