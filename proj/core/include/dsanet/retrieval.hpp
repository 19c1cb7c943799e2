#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsanet/data.hpp"
#include "dsanet/model.hpp"

// Test-time feature extraction, cosine retrieval with CMC / mAP, and linear
// probes used to measure what the ID and camera vectors encode.
namespace dsanet::eval {

struct ClipFeatures {
  Tensor f_id;   // [c]
  Tensor f_cam;  // [c], empty without a camera branch
};

// Consecutive T-frame clips covering every frame (last clip right-aligned),
// f_ID averaged over clips. Runs in eval mode without recording a graph.
ClipFeatures extract_clip_features(DsaNet& model, const Tensor& frames, std::size_t T);
Tensor extract_clip_feature(DsaNet& model, const Tensor& frames, std::size_t T);

// Start frame of every clip for a tracklet of `length` frames.
std::vector<std::size_t> clip_starts(std::size_t length, std::size_t T);

struct GalleryIndex {
  Tensor embeddings;  // [N, c] f_ID
  Tensor camera_embeddings;  // [N, c] f_cam (camera branch only)
  std::vector<int> person_ids;
  std::vector<int> camera_ids;
  std::vector<std::size_t> tracklets;  // dataset indices
};

GalleryIndex build_index(DsaNet& model, const data::Dataset& dataset, data::Split split, std::size_t T);

// D[i][j] = 1 - cos(q_i, g_j); a zero vector gets distance 1 (counted in *zero_rows).
Tensor cosine_distance_matrix(const Tensor& queries, const Tensor& gallery, std::size_t* zero_rows = nullptr);

struct RetrievalResult {
  std::vector<std::vector<std::size_t>> rankings;  // filtered gallery order per query
  std::vector<double> ap;                          // per query; NaN when excluded
  std::vector<bool> valid;
  std::vector<double> cmc;  // cmc[k] = fraction of valid queries matched within rank k+1
  double mAP = 0.0;
  std::size_t num_queries = 0;  // valid queries
  std::size_t excluded = 0;

  double cmc_at(std::size_t rank) const;  // 1-based; clamps to the curve length
  nlohmann::json to_json() const;         // results.json
};

// Standard protocol: per query, gallery entries with the same person and
// camera are removed; ties keep gallery order.
RetrievalResult cmc_map(const Tensor& distances, std::span<const int> query_ids, std::span<const int> gallery_ids,
                        std::span<const int> query_cams, std::span<const int> gallery_cams);

void write_rankings_csv(std::ostream& os, const RetrievalResult& r, const GalleryIndex& query,
                        const GalleryIndex& gallery, std::size_t top = 20);

struct ProbeConfig {
  std::size_t epochs = 100;
  std::size_t batch = 32;
  double lr = 1e-2;
  double train_fraction = 0.5;
  std::uint64_t seed = 0;
};

struct ProbeResult {
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double chance = 0.0;  // 1 / num_classes
  std::size_t num_classes = 0;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
};

// Standardized linear softmax probe on frozen embeddings [N, c]; stratified
// split, Adam, fixed seed. Throws ArgumentError with fewer than 2 classes.
ProbeResult probe_features(const Tensor& embeddings, std::span<const int> labels, const ProbeConfig& config = {});

// mean over rows of max(cos(a_i, b_i), 0)
double mean_positive_cosine(const Tensor& a, const Tensor& b);

// Z_attn of each query-split tracklet's first clip, as DSTN [T, 1, h, w].
void dump_attention(DsaNet& model, const data::Dataset& dataset, std::size_t T, const std::filesystem::path& dir);
// One JSON line per training tracklet: pseudo-label w and prediction w_hat of its first clip.
void dump_frame_weights(DsaNet& model, const data::Dataset& dataset, std::size_t T,
                        const std::filesystem::path& path);

}  // namespace dsanet::eval
