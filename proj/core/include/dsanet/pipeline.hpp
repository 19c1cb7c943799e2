#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsanet/config.hpp"

// End-to-end runs built from a resolved configuration: corpus, training,
// retrieval evaluation, feature probes and ablation rows.
namespace dsanet::pipeline {

// Loads `corpus` when set, otherwise generates the synthetic corpus.
data::Dataset load_dataset(const config::RunConfig& rc);

struct TrainResult {
  std::unique_ptr<DsaNet> model;
  std::vector<engine::StepRecord> trace;
  std::size_t rejected_steps = 0;
};

TrainResult train(const config::RunConfig& rc, const data::Dataset& ds, std::ostream* metrics = nullptr);

struct Evaluation {
  eval::GalleryIndex query;
  eval::GalleryIndex gallery;
  eval::RetrievalResult retrieval;
};

Evaluation evaluate(DsaNet& model, const data::Dataset& ds, std::size_t T);

// What the two vectors encode, measured on query + gallery together.
struct DisentangleReport {
  double mean_positive_cosine = 0.0;
  eval::ProbeResult camera_on_fcam;
  eval::ProbeResult camera_on_fid;
  eval::ProbeResult id_on_fid;

  nlohmann::json to_json() const;
};

// Throws ConfigError when the model has no camera branch.
DisentangleReport disentangle_report(const Evaluation& ev, const eval::ProbeConfig& probe);

struct AblationRow {
  std::string label;
  Components components;
};

// Rows in the order of the component ablation: baseline, each module without
// and with its loss, both modules without and with L_ic, then SAO on top.
// Every row past the baseline carries the camera branch (L_dis, L_cam).
const std::vector<AblationRow>& table_rows();

struct AblationOutcome {
  AblationRow row;
  std::vector<std::uint64_t> seeds;
  std::vector<double> map;
  std::vector<double> rank1;
  double mean_map = 0.0;
  double mean_rank1 = 0.0;
};

// Trains and evaluates one row per seed; `seed` and `synth.seed` are both set
// to each value so every seed sees its own corpus draw.
AblationOutcome run_row(const config::Settings& base, const AblationRow& row, std::span<const std::uint64_t> seeds);

void write_ablation_csv(std::ostream& os, const std::vector<AblationOutcome>& rows);

}  // namespace dsanet::pipeline
