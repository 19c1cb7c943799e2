#include "dsanet/engine.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "dsanet/dstn.hpp"
#include "dsanet/errors.hpp"

namespace dsanet::engine {

void TrainConfig::validate() const {
  if (!(base_lr > 0.0)) throw ConfigError("train.base_lr must be > 0");
  if (!(decay > 0.0 && decay < 1.0)) throw ConfigError("train.decay must be in (0,1)");
  if (decay_every == 0) throw ConfigError("train.decay_every must be >= 1");
  if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be >= 0");
  if (precision != "double") {
    throw ConfigError("train.precision: only 'double' is supported, got '" + precision + "'");
  }
}

double lr_at(std::size_t epoch, const TrainConfig& config) {
  return config.base_lr * std::pow(config.decay, static_cast<double>(epoch / config.decay_every));
}

AdamState zero_state(const std::vector<Tensor>& params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.shape(), 0.0);
    s.v.emplace_back(p.shape(), 0.0);
  }
  return s;
}

AdamResult adam_step(const std::vector<Tensor>& params, const std::vector<Tensor>& grads, const AdamState& state,
                     double lr, double weight_decay, bool decoupled, const AdamHyper& h) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: params, grads and state differ in length");
  }
  AdamResult out;
  out.params = params;
  out.state = state;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].shape() || state.m[i].shape() != params[i].shape() ||
        state.v[i].shape() != params[i].shape()) {
      throw ShapeError("adam_step: shape mismatch at parameter " + std::to_string(i));
    }
    if (!grads[i].all_finite()) {
      out.rejected = true;
      out.reason = "non-finite gradient in parameter " + std::to_string(i);
      return out;
    }
  }
  const std::uint64_t t = state.t + 1;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    double* p = out.params[i].ptr();
    double* m = out.state.m[i].ptr();
    double* v = out.state.v[i].ptr();
    const double* g = grads[i].ptr();
    for (std::size_t k = 0; k < params[i].numel(); ++k) {
      const double gk = decoupled ? g[k] : g[k] + weight_decay * p[k];
      m[k] = h.beta1 * m[k] + (1.0 - h.beta1) * gk;
      v[k] = h.beta2 * v[k] + (1.0 - h.beta2) * gk * gk;
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      if (decoupled) p[k] -= lr * weight_decay * p[k];
      p[k] -= lr * mhat / (std::sqrt(vhat) + h.eps);
    }
  }
  out.state.t = t;
  return out;
}

nlohmann::json StepRecord::to_json() const {
  return {{"step", step},
          {"epoch", epoch},
          {"lr", lr},
          {"ce_id", losses.ce_id},
          {"ce_aug", losses.ce_aug},
          {"ce_lr", losses.ce_lr},
          {"ce_cam", losses.ce_cam},
          {"tri", losses.tri},
          {"dis", losses.dis},
          {"ic", losses.ic},
          {"w_loss", losses.w_loss},
          {"total", losses.total}};
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t x = seed ^ (0x9E3779B97F4A7C15ull * (stream + 1));
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

namespace {

std::vector<Tensor> param_values(const NamedParams& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& [name, p] : params) out.push_back(p.value());
  return out;
}

}  // namespace

Trainer::Trainer(DsaNet& model, const data::Dataset& dataset, TrainConfig train, LossConfig loss,
                 data::SamplerConfig sampler, bool augment, data::AugmentConfig augment_config)
    : model_(&model),
      dataset_(&dataset),
      train_(std::move(train)),
      loss_(loss),
      sampler_(dataset, sampler, derive_seed(train_.seed, 1), augment, augment_config),
      sao_rng_(derive_seed(train_.seed, 2)) {
  train_.validate();
  adam_ = zero_state(param_values(model.parameters()));
  const std::size_t n_train = dataset.indices(data::Split::Train).size();
  batches_per_epoch_ = train_.batches_per_epoch
                           ? train_.batches_per_epoch
                           : std::max<std::size_t>(1, n_train / (sampler.p * sampler.k));
}

StepRecord Trainer::train_step(const data::MiniBatch& batch) {
  CheckedModeGuard checked(train_.checked || checked_mode());
  StepRecord rec;
  rec.epoch = epoch_;
  rec.lr = lr_at(epoch_, train_);

  const NamedParams params = model_->parameters();
  for (const auto& [name, p] : params) {
    Var(p).zero_grad();
  }
  FeatureBundle fb = model_->forward(batch.clips, true);
  StepLosses losses = compute_losses(*model_, fb, batch.id_labels, batch.camera_labels, sao_rng_, loss_, true);
  losses.total.backward();

  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (const auto& [name, p] : params) grads.push_back(p.grad());
  AdamResult res = adam_step(param_values(params), grads, adam_, rec.lr, train_.weight_decay,
                             train_.decoupled_weight_decay);
  if (res.rejected) {
    ++rejected_;
    rec.rejected = true;
    std::clog << "step " << step_ + 1 << " rejected: " << res.reason << '\n';
  } else {
    for (std::size_t i = 0; i < params.size(); ++i) Var(params[i].second).mutable_value() = std::move(res.params[i]);
    adam_ = std::move(res.state);
  }
  rec.losses = losses.report;
  rec.step = ++step_;
  return rec;
}

StepRecord Trainer::step() {
  if (done()) throw ConfigError("trainer: all epochs already completed");
  StepRecord rec = train_step(sampler_.next());
  if (++batch_in_epoch_ >= batches_per_epoch_) {
    batch_in_epoch_ = 0;
    ++epoch_;
  }
  return rec;
}

std::vector<StepRecord> Trainer::fit(std::ostream* metrics, std::size_t max_steps,
                                     const std::function<void(const StepRecord&)>& on_step) {
  std::vector<StepRecord> out;
  while (!done() && (max_steps == 0 || out.size() < max_steps)) {
    out.push_back(step());
    if (metrics) *metrics << out.back().to_json().dump() << '\n';
    if (on_step) on_step(out.back());
  }
  return out;
}

namespace {

constexpr char kMagic[4] = {'D', 'S', 'C', 'K'};

void put_u32(std::ostream& os, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    const int c = is.get();
    if (c == EOF) throw FormatError("checkpoint: truncated header");
    v |= static_cast<std::uint32_t>(c) << (8 * i);
  }
  return v;
}

}  // namespace

void Trainer::save_checkpoint(const std::filesystem::path& path, const nlohmann::json& config_echo) const {
  const NamedParams params = model_->parameters();
  const auto buffers = model_->buffers();
  const auto flags = model_->flags();

  nlohmann::json header;
  std::vector<const Tensor*> tensors;
  nlohmann::json names = nlohmann::json::array();
  for (std::size_t i = 0; i < params.size(); ++i) {
    names.push_back("param/" + params[i].first);
    tensors.push_back(&params[i].second.value());
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    names.push_back("adam.m/" + params[i].first);
    tensors.push_back(&adam_.m[i]);
    names.push_back("adam.v/" + params[i].first);
    tensors.push_back(&adam_.v[i]);
  }
  for (const auto& [name, t] : buffers) {
    names.push_back("buffer/" + name);
    tensors.push_back(t);
  }
  nlohmann::json flag_json = nlohmann::json::object();
  for (const auto& [name, f] : flags) flag_json[name] = *f;

  std::ostringstream sao_state;
  sao_state << sao_rng_;
  header["tensors"] = names;
  header["flags"] = flag_json;
  header["adam_t"] = adam_.t;
  header["step"] = step_;
  header["epoch"] = epoch_;
  header["batch_in_epoch"] = batch_in_epoch_;
  header["rejected"] = rejected_;
  header["sampler_state"] = sampler_.rng_state();
  header["sao_rng_state"] = sao_state.str();
  header["components"] = model_->config().components.to_string();
  header["config"] = config_echo;

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write checkpoint " + path.string());
  const std::string h = header.dump();
  os.write(kMagic, 4);
  put_u32(os, static_cast<std::uint32_t>(h.size()));
  os.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const Tensor* t : tensors) dstn::write(os, *t, dstn::Version::F64);
  if (!os) throw FormatError("write failed for checkpoint " + path.string());
}

namespace {

nlohmann::json read_header(std::istream& is, const std::filesystem::path& path) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) throw FormatError(path.string() + ": not a checkpoint");
  const std::uint32_t len = get_u32(is);
  std::string h(len, '\0');
  is.read(h.data(), len);
  if (!is) throw FormatError("checkpoint: truncated header");
  try {
    return nlohmann::json::parse(h);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
}

}  // namespace

nlohmann::json read_checkpoint_header(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint " + path.string());
  return read_header(is, path);
}

void Trainer::load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint " + path.string());
  const nlohmann::json header = read_header(is, path);
  if (header.at("components").get<std::string>() != model_->config().components.to_string()) {
    throw ConfigError("checkpoint was written for components '" + header.at("components").get<std::string>() +
                      "', model has '" + model_->config().components.to_string() + "'");
  }

  std::map<std::string, Tensor> loaded;
  for (const auto& name : header.at("tensors")) loaded[name.get<std::string>()] = dstn::read(is);

  auto take = [&](const std::string& key, const Shape& shape) -> Tensor {
    auto it = loaded.find(key);
    if (it == loaded.end()) throw FormatError("checkpoint lacks tensor " + key);
    if (it->second.shape() != shape) {
      throw ShapeError("checkpoint tensor " + key + " has shape " + shape_str(it->second.shape()) + ", expected " +
                       shape_str(shape));
    }
    return it->second;
  };

  const NamedParams params = model_->parameters();
  AdamState adam;
  for (const auto& [name, p] : params) {
    Var(p).mutable_value() = take("param/" + name, p.shape());
    adam.m.push_back(take("adam.m/" + name, p.shape()));
    adam.v.push_back(take("adam.v/" + name, p.shape()));
  }
  for (auto& [name, t] : model_->buffers()) *t = take("buffer/" + name, t->shape());
  const auto& flag_json = header.at("flags");
  for (auto& [name, f] : model_->flags()) *f = flag_json.at(name).get<bool>();
  adam.t = header.at("adam_t").get<std::uint64_t>();
  adam_ = std::move(adam);

  step_ = header.at("step").get<std::uint64_t>();
  epoch_ = header.at("epoch").get<std::size_t>();
  batch_in_epoch_ = header.at("batch_in_epoch").get<std::size_t>();
  rejected_ = header.at("rejected").get<std::size_t>();
  sampler_.set_rng_state(header.at("sampler_state").get<std::string>());
  std::istringstream sao_state(header.at("sao_rng_state").get<std::string>());
  sao_state >> sao_rng_;
  if (!sao_state) throw FormatError("checkpoint: bad SAO rng state");
}

}  // namespace dsanet::engine
