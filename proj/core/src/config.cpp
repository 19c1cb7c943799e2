#include "dsanet/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <utility>

#include "dsanet/errors.hpp"

namespace dsanet::config {

namespace {

const std::vector<std::pair<std::string, std::string>>& defaults() {
  static const std::vector<std::pair<std::string, std::string>> d{
      {"seed", "0"},
      {"data.corpus", ""},
      {"synth.ids", "32"},
      {"synth.cameras", "4"},
      {"synth.tracklets", "2"},
      {"synth.frames", "8"},
      {"synth.height", "64"},
      {"synth.width", "32"},
      {"synth.occlusion", "0.2"},
      {"synth.jitter", "0.15"},
      {"synth.train_fraction", "0.5"},
      {"synth.seed", "0"},
      {"backbone.c", "64"},
      {"backbone.strides", "2,2,2,1"},
      {"backbone.norm", "batch"},
      {"model.components", "all"},
      {"loss.lambda", "0.1"},
      {"loss.lambda_cam", "0.1"},
      {"loss.triplet", "true"},
      {"loss.triplet_margin", "0.3"},
      {"loss.dis_margin", "0"},
      {"loss.ic_weight", "1"},
      {"fwg.pseudo", "softmax"},
      {"fwg.predict", "reverse"},
      {"sao.cross_camera_only", "false"},
      {"sampler.p", "8"},
      {"sampler.k", "4"},
      {"sampler.t", "4"},
      {"augment.enabled", "true"},
      {"augment.flip", "0.5"},
      {"augment.erase", "0.5"},
      {"augment.erase_area_min", "0.02"},
      {"augment.erase_area_max", "0.33"},
      {"augment.erase_aspect_min", "0.3"},
      {"augment.erase_aspect_max", "3.3"},
      {"train.base_lr", "3.5e-4"},
      {"train.decay", "0.1"},
      {"train.decay_every", "40"},
      {"train.weight_decay", "5e-4"},
      {"train.decoupled_weight_decay", "false"},
      {"train.epochs", "20"},
      {"train.batches_per_epoch", "0"},
      {"train.precision", "double"},
      {"train.checked", "false"},
      {"eval.t", "0"},
      {"eval.dumps", "false"},
      {"probe.epochs", "100"},
      {"probe.batch", "32"},
      {"probe.lr", "0.01"},
      {"probe.train_fraction", "0.5"},
  };
  return d;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const Settings& s, const std::string& key) {
  const std::string& v = s.get(key);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_u64(const Settings& s, const std::string& key) { return parse_u64(key, s.get(key)); }

std::size_t to_size(const Settings& s, const std::string& key) { return static_cast<std::size_t>(to_u64(s, key)); }

bool to_bool(const Settings& s, const std::string& key) {
  const std::string& v = s.get(key);
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

}  // namespace

Settings::Settings() {
  for (const auto& [k, v] : defaults()) values_[k] = v;
}

const std::vector<std::string>& Settings::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [key, v] : defaults()) out.push_back(key);
    return out;
  }();
  return k;
}

std::string Settings::valid_keys() {
  std::string out;
  for (const auto& k : keys()) out += (out.empty() ? "" : ", ") + k;
  return out;
}

void Settings::set(const std::string& key, const std::string& value) {
  if (!values_.count(key)) throw ConfigError("unknown config key '" + key + "'; valid keys: " + valid_keys());
  values_[key] = value;
}

void Settings::assign(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void Settings::parse(const std::string& text, const std::string& origin) {
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.find('=') == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected `key = value`");
    }
    assign(line);
  }
}

void Settings::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  parse(ss.str(), path.string());
}

const std::string& Settings::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

nlohmann::json Settings::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : values_) j[k] = v;
  return j;
}

RunConfig resolve(const Settings& s) {
  RunConfig c;
  c.seed = to_u64(s, "seed");
  c.corpus = s.get("data.corpus");

  auto& sy = c.synth;
  sy.num_ids = to_size(s, "synth.ids");
  sy.num_cameras = to_size(s, "synth.cameras");
  sy.tracklets_per_id_per_camera = to_size(s, "synth.tracklets");
  sy.frames_per_tracklet = to_size(s, "synth.frames");
  sy.height = to_size(s, "synth.height");
  sy.width = to_size(s, "synth.width");
  sy.occlusion = to_double(s, "synth.occlusion");
  sy.jitter = to_double(s, "synth.jitter");
  sy.train_fraction = to_double(s, "synth.train_fraction");
  sy.seed = to_u64(s, "synth.seed");

  auto& bb = c.model.backbone;
  bb.c = to_size(s, "backbone.c");
  {
    std::stringstream ss(s.get("backbone.strides"));
    std::string item;
    std::size_t i = 0;
    while (std::getline(ss, item, ',')) {
      if (i >= 4) throw ConfigError("backbone.strides: expected 4 comma-separated values");
      bb.strides[i++] = static_cast<std::size_t>(parse_u64("backbone.strides", trim(item)));
    }
    if (i != 4) throw ConfigError("backbone.strides: expected 4 comma-separated values");
  }
  try {
    bb.norm = backbone::parse_norm(s.get("backbone.norm"));
    c.model.components = Components::parse(s.get("model.components"));
    c.model.pseudo = fwg::parse_pseudo_mode(s.get("fwg.pseudo"));
    c.model.predict = fwg::parse_predict_mode(s.get("fwg.predict"));
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
  c.model.seed = c.seed;

  c.loss.lambda = to_double(s, "loss.lambda");
  c.loss.lambda_cam = to_double(s, "loss.lambda_cam");
  c.loss.triplet = to_bool(s, "loss.triplet");
  c.loss.triplet_margin = to_double(s, "loss.triplet_margin");
  c.loss.dis_margin = to_double(s, "loss.dis_margin");
  c.loss.ic_weight = to_double(s, "loss.ic_weight");
  c.loss.sao_cross_camera_only = to_bool(s, "sao.cross_camera_only");

  c.sampler.p = to_size(s, "sampler.p");
  c.sampler.k = to_size(s, "sampler.k");
  c.sampler.t = to_size(s, "sampler.t");

  c.augment = to_bool(s, "augment.enabled");
  c.augment_config.flip_probability = to_double(s, "augment.flip");
  c.augment_config.erase_probability = to_double(s, "augment.erase");
  c.augment_config.erase_area_min = to_double(s, "augment.erase_area_min");
  c.augment_config.erase_area_max = to_double(s, "augment.erase_area_max");
  c.augment_config.erase_aspect_min = to_double(s, "augment.erase_aspect_min");
  c.augment_config.erase_aspect_max = to_double(s, "augment.erase_aspect_max");

  auto& tr = c.train;
  tr.base_lr = to_double(s, "train.base_lr");
  tr.decay = to_double(s, "train.decay");
  tr.decay_every = to_size(s, "train.decay_every");
  tr.weight_decay = to_double(s, "train.weight_decay");
  tr.decoupled_weight_decay = to_bool(s, "train.decoupled_weight_decay");
  tr.epochs = to_size(s, "train.epochs");
  tr.batches_per_epoch = to_size(s, "train.batches_per_epoch");
  tr.precision = s.get("train.precision");
  tr.checked = to_bool(s, "train.checked");
  tr.seed = c.seed;
  tr.validate();

  c.eval.t = to_size(s, "eval.t");
  c.eval.dumps = to_bool(s, "eval.dumps");

  c.probe.epochs = to_size(s, "probe.epochs");
  c.probe.batch = to_size(s, "probe.batch");
  c.probe.lr = to_double(s, "probe.lr");
  c.probe.train_fraction = to_double(s, "probe.train_fraction");
  c.probe.seed = engine::derive_seed(c.seed, 3);

  if (c.loss.lambda < 0 || c.loss.lambda_cam < 0 || c.loss.ic_weight < 0) throw ConfigError("loss weights must be >= 0");
  c.model.components.validate();
  return c;
}

ModelConfig model_for(const RunConfig& config, const data::Dataset& dataset) {
  ModelConfig m = config.model;
  m.num_ids = dataset.train_ids.size();
  m.num_cameras = dataset.spec.num_cameras;
  m.backbone.height = dataset.spec.height;
  m.backbone.width = dataset.spec.width;
  return m;
}

}  // namespace dsanet::config
