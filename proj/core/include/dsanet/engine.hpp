#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsanet/data.hpp"
#include "dsanet/model.hpp"

namespace dsanet::engine {

struct TrainConfig {
  double base_lr = 3.5e-4;
  double decay = 0.1;
  std::size_t decay_every = 40;  // epochs
  double weight_decay = 5e-4;
  bool decoupled_weight_decay = false;  // default: L2 added to the gradient
  std::size_t epochs = 20;
  std::size_t batches_per_epoch = 0;  // 0: training tracklets / (P K), at least 1
  std::string precision = "double";
  bool checked = false;  // scan every op output for NaN/Inf
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

// base_lr * decay^floor(epoch / decay_every)
double lr_at(std::size_t epoch, const TrainConfig& config);

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m, v;
  std::uint64_t t = 0;  // completed steps
};

struct AdamResult {
  std::vector<Tensor> params;
  AdamState state;
  bool rejected = false;
  std::string reason;
};

// One bias-corrected Adam update. Pure: inputs are not modified. A
// non-finite gradient rejects the whole step (params and state returned
// unchanged, `rejected` set).
AdamResult adam_step(const std::vector<Tensor>& params, const std::vector<Tensor>& grads, const AdamState& state,
                     double lr, double weight_decay, bool decoupled = false, const AdamHyper& hyper = {});

AdamState zero_state(const std::vector<Tensor>& params);

struct StepRecord {
  std::uint64_t step = 0;  // 1-based global step
  std::size_t epoch = 0;
  double lr = 0.0;
  objective::LossReport losses;
  bool rejected = false;

  nlohmann::json to_json() const;  // one metrics line
};

// Owns the optimizer state, sampler and SAO stream for one model.
class Trainer {
 public:
  Trainer(DsaNet& model, const data::Dataset& dataset, TrainConfig train, LossConfig loss,
          data::SamplerConfig sampler, bool augment = true, data::AugmentConfig augment_config = {});

  // Forward, all enabled losses, backward, one optimizer step.
  StepRecord train_step(const data::MiniBatch& batch);
  // Draws the next batch and trains on it, advancing the epoch counter.
  StepRecord step();
  // Runs until `epochs` are complete (or max_steps more steps, if nonzero).
  std::vector<StepRecord> fit(std::ostream* metrics = nullptr, std::size_t max_steps = 0,
                              const std::function<void(const StepRecord&)>& on_step = {});

  bool done() const { return epoch_ >= train_.epochs; }
  std::uint64_t global_step() const { return step_; }
  std::size_t epoch() const { return epoch_; }
  std::size_t batches_per_epoch() const { return batches_per_epoch_; }
  std::size_t rejected_steps() const { return rejected_; }
  const TrainConfig& train_config() const { return train_; }
  data::PKSampler& sampler() { return sampler_; }

  // "DSCK" | u32 header length | JSON header | DSTN (f64) tensors in header order.
  void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& config_echo = {}) const;
  void load_checkpoint(const std::filesystem::path& path);

 private:
  DsaNet* model_;
  const data::Dataset* dataset_;
  TrainConfig train_;
  LossConfig loss_;
  data::PKSampler sampler_;
  std::mt19937_64 sao_rng_;
  AdamState adam_;
  std::uint64_t step_ = 0;
  std::size_t epoch_ = 0;
  std::size_t batch_in_epoch_ = 0;
  std::size_t batches_per_epoch_ = 1;
  std::size_t rejected_ = 0;
};

// JSON header of a checkpoint (step, components, the config echo given to
// save_checkpoint under "config") without reading the tensors.
nlohmann::json read_checkpoint_header(const std::filesystem::path& path);

// Independent stream seeds from one run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace dsanet::engine
