#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsanet/tensor.hpp"

// Synthetic video re-identification corpus with separately controlled
// identity (foreground appearance) and camera (background, scene obstacle,
// occluder style) factors, plus P x K batch sampling, restricted random
// frame sampling and clip-consistent augmentation.
namespace dsanet::data {

struct SynthSpec {
  std::size_t num_ids = 32;
  std::size_t num_cameras = 4;
  std::size_t tracklets_per_id_per_camera = 2;
  std::size_t frames_per_tracklet = 8;
  std::size_t height = 64;
  std::size_t width = 32;
  double occlusion = 0.2;      // per-frame probability of a partial occluder
  double jitter = 0.15;        // bbox jitter amplitude, fraction of width
  double train_fraction = 0.5; // leading identities used for training
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
  std::size_t num_train_ids() const;
  nlohmann::json to_json() const;
  static SynthSpec from_json(const nlohmann::json& j);
};

enum class Split { Train, Query, Gallery };
std::string to_string(Split s);
Split parse_split(const std::string& s);

struct Tracklet {
  Tensor frames;  // [t, 3, H, W], values in [0, 1]
  int person_id = 0;
  int camera_id = 0;
  int index = 0;  // position among the (person, camera) tracklets
  Split split = Split::Train;
  std::vector<bool> occluded;  // per frame

  std::size_t length() const { return frames.dim(0); }
};

struct Dataset {
  SynthSpec spec;
  std::vector<Tracklet> tracklets;
  std::vector<int> train_ids;
  std::vector<int> test_ids;

  std::vector<std::size_t> indices(Split s) const;
};

// Rendering controls for one tracklet.
struct RenderOptions {
  bool random_occlusion = true;
  // Frame whose target is entirely covered by the camera's occluder.
  std::optional<std::size_t> heavy_occlusion_frame;
  // Horizontal placement of the target centre as a fraction of width,
  // overriding the random trajectory (jitter still applies unless disabled).
  std::optional<double> center_x;
  bool disable_jitter = false;
};

Tensor render_tracklet(const SynthSpec& spec, int person_id, int camera_id, std::uint64_t tracklet_seed,
                       std::size_t length, const RenderOptions& options = {},
                       std::vector<bool>* occluded = nullptr);

// Camera scene without any person, [3, H, W].
Tensor render_background(const SynthSpec& spec, int camera_id, std::uint64_t tracklet_seed);

// Deterministic from spec.seed.
Dataset generate_corpus(const SynthSpec& spec);

// corpus/{train,query,gallery}/id_<k>/cam_<m>/tracklet_<n>.dstn + manifest.json
void save_corpus(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_corpus(const std::filesystem::path& dir);
nlohmann::json manifest(const Dataset& ds);

// One frame index from each of T equal chunks, in order. Shorter tracklets
// are padded by repeating the last frame.
std::vector<std::size_t> rrs_sample(std::size_t length, std::size_t T, std::mt19937_64& rng);
// [L, 3, H, W] -> [T, 3, H, W]
Tensor gather_frames(const Tensor& frames, const std::vector<std::size_t>& idx);

struct AugmentConfig {
  double flip_probability = 0.5;
  double erase_probability = 0.5;
  double erase_area_min = 0.02;
  double erase_area_max = 0.33;
  double erase_aspect_min = 0.3;
  double erase_aspect_max = 3.3;
};

struct EraseRect {
  std::size_t y = 0, x = 0, h = 0, w = 0;
};

struct AugmentResult {
  Tensor clip;
  bool flipped = false;
  std::optional<EraseRect> erased;
};

// Clip-consistent horizontal flip and random erasing (same rectangle and
// noise in every frame).
AugmentResult augment(const Tensor& clip, std::mt19937_64& rng, const AugmentConfig& config = {});
std::optional<EraseRect> draw_erase_rect(std::size_t height, std::size_t width, std::mt19937_64& rng,
                                         const AugmentConfig& config = {});

struct SamplerConfig {
  std::size_t p = 8;
  std::size_t k = 4;
  std::size_t t = 4;
  void validate(std::size_t frames_per_tracklet) const;
};

struct MiniBatch {
  std::vector<std::size_t> tracklets;
  std::vector<int> id_labels;      // classifier index among training identities
  std::vector<int> camera_labels;
  Tensor clips;                    // [P*K, T, 3, H, W]
};

// P identities x K tracklets per batch. Identities are visited in shuffled
// passes; tracklets are drawn without replacement when an identity has at
// least K of them.
class PKSampler {
 public:
  PKSampler(const Dataset& dataset, SamplerConfig config, std::uint64_t seed, bool augment = true,
            AugmentConfig augment_config = {});

  MiniBatch next();
  std::vector<std::size_t> next_indices();
  MiniBatch assemble(const std::vector<std::size_t>& indices);

  std::string rng_state() const;
  void set_rng_state(const std::string& state);
  const SamplerConfig& config() const { return config_; }

 private:
  const Dataset* dataset_;
  SamplerConfig config_;
  bool augment_;
  AugmentConfig augment_config_;
  std::mt19937_64 rng_;
  std::vector<int> id_queue_;
  std::vector<std::vector<std::size_t>> by_id_;  // train tracklets per class index
  std::vector<int> id_of_class_;
};

}  // namespace dsanet::data
