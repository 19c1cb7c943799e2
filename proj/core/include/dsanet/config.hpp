#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsanet/data.hpp"
#include "dsanet/engine.hpp"
#include "dsanet/model.hpp"
#include "dsanet/retrieval.hpp"

namespace dsanet::config {

struct EvalConfig {
  std::size_t t = 0;  // clip length at test time; 0 follows sampler.t
  bool dumps = false;
};

// Fully typed run configuration.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string corpus;  // empty: generate in memory from `synth`
  data::SynthSpec synth;
  ModelConfig model;   // num_ids / num_cameras are filled from the corpus
  LossConfig loss;
  data::SamplerConfig sampler;
  bool augment = true;
  data::AugmentConfig augment_config;
  engine::TrainConfig train;
  EvalConfig eval;
  eval::ProbeConfig probe;

  std::size_t eval_t() const { return eval.t ? eval.t : sampler.t; }
};

// Flat `key = value` settings with defaults. Unknown keys are rejected.
class Settings {
 public:
  Settings();

  void set(const std::string& key, const std::string& value);
  // "key=value"
  void assign(const std::string& assignment);
  // Lines of `key = value`; '#' starts a comment.
  void parse(const std::string& text, const std::string& origin = "<config>");
  void load(const std::filesystem::path& path);

  const std::string& get(const std::string& key) const;
  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  nlohmann::json to_json() const;

  static const std::vector<std::string>& keys();
  static std::string valid_keys();

 private:
  std::map<std::string, std::string> values_;
};

// Throws ConfigError on malformed values.
RunConfig resolve(const Settings& settings);

// Dataset dimensions copied into the model config; backbone input size from the corpus.
ModelConfig model_for(const RunConfig& config, const data::Dataset& dataset);

}  // namespace dsanet::config
