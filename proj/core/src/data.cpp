#include "dsanet/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "dsanet/dstn.hpp"
#include "dsanet/errors.hpp"

namespace dsanet::data {

namespace {

using Rgb = std::array<double, 3>;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0, std::uint64_t d = 0) {
  std::uint64_t h = splitmix(seed);
  for (auto v : {a, b, c, d}) h = splitmix(h ^ v);
  return h;
}

constexpr std::uint64_t kCameraTag = 0xCA;
constexpr std::uint64_t kPersonTag = 0x1D;
constexpr std::uint64_t kTrackletTag = 0x7C;

Rgb hsv(double h, double s, double v) {
  h = h - std::floor(h);
  const double hh = h * 6.0;
  const int i = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

double uni(std::mt19937_64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

struct CameraStyle {
  int family = 0;
  Rgb c1{}, c2{};
  double period = 6.0;
  double phase = 0.0;
  Rgb obstacle{};
  double ob_x0 = 0, ob_x1 = 0, ob_y0 = 0, ob_y1 = 0;  // fractions of the frame
  Rgb occluder{}, occluder_alt{};
  double occluder_period = 3.0;
};

CameraStyle camera_style(const SynthSpec& spec, int cam) {
  std::mt19937_64 rng(mix(spec.seed, kCameraTag, static_cast<std::uint64_t>(cam)));
  CameraStyle s;
  s.family = cam % 4;
  const double base = uni(rng, 0.0, 1.0);
  s.c1 = hsv(base, uni(rng, 0.3, 0.8), uni(rng, 0.35, 0.9));
  s.c2 = hsv(base + uni(rng, 0.2, 0.8), uni(rng, 0.3, 0.8), uni(rng, 0.35, 0.9));
  s.period = uni(rng, 4.0, 9.0) * static_cast<double>(spec.height) / 64.0;
  s.phase = uni(rng, 0.0, s.period);
  s.obstacle = hsv(uni(rng, 0.0, 1.0), uni(rng, 0.6, 1.0), uni(rng, 0.5, 1.0));
  const double ob_w = uni(rng, 0.12, 0.22);
  s.ob_x0 = uni(rng, 0.0, 1.0 - ob_w);
  s.ob_x1 = s.ob_x0 + ob_w;
  s.ob_y0 = uni(rng, 0.0, 0.5);
  s.ob_y1 = s.ob_y0 + uni(rng, 0.3, 0.5);
  s.occluder = hsv(uni(rng, 0.0, 1.0), uni(rng, 0.5, 1.0), uni(rng, 0.3, 0.9));
  s.occluder_alt = hsv(uni(rng, 0.0, 1.0), uni(rng, 0.5, 1.0), uni(rng, 0.3, 0.9));
  s.occluder_period = uni(rng, 2.0, 5.0);
  return s;
}

Rgb background_pixel(const CameraStyle& s, double y, double x) {
  double u = 0.0;
  switch (s.family) {
    case 0: u = std::fmod(y + s.phase, s.period) < s.period / 2 ? 0.0 : 1.0; break;
    case 1: u = std::fmod(x + s.phase, s.period) < s.period / 2 ? 0.0 : 1.0; break;
    case 2: {
      const int a = static_cast<int>(std::floor((y + s.phase) / s.period));
      const int b = static_cast<int>(std::floor((x + s.phase) / s.period));
      u = ((a + b) & 1) ? 1.0 : 0.0;
      break;
    }
    default: u = 0.5 + 0.5 * std::sin((x + y + s.phase) * 2.0 * M_PI / (2.0 * s.period)); break;
  }
  return {s.c1[0] * (1 - u) + s.c2[0] * u, s.c1[1] * (1 - u) + s.c2[1] * u, s.c1[2] * (1 - u) + s.c2[2] * u};
}

struct PersonStyle {
  Rgb upper{}, lower{}, head{};
  double body_w = 0.45, body_h = 0.8, torso = 0.5;
};

PersonStyle person_style(const SynthSpec& spec, int pid) {
  std::mt19937_64 rng(mix(spec.seed, kPersonTag, static_cast<std::uint64_t>(pid)));
  PersonStyle p;
  p.upper = hsv(uni(rng, 0.0, 1.0), uni(rng, 0.55, 1.0), uni(rng, 0.45, 1.0));
  p.lower = hsv(uni(rng, 0.0, 1.0), uni(rng, 0.55, 1.0), uni(rng, 0.3, 0.9));
  p.head = hsv(uni(rng, 0.02, 0.12), uni(rng, 0.3, 0.6), uni(rng, 0.5, 0.95));
  p.body_w = uni(rng, 0.35, 0.55);
  p.body_h = uni(rng, 0.72, 0.9);
  p.torso = uni(rng, 0.42, 0.6);
  return p;
}

struct Frame {
  std::size_t h, w;
  double* px;  // [3, h, w]
  void put(long y, long x, const Rgb& c) {
    if (y < 0 || x < 0 || y >= static_cast<long>(h) || x >= static_cast<long>(w)) return;
    for (std::size_t ch = 0; ch < 3; ++ch) px[(ch * h + static_cast<std::size_t>(y)) * w + static_cast<std::size_t>(x)] = c[ch];
  }
};

struct Box {
  double y0, x0, y1, x1;
};

void draw_person(Frame& f, const PersonStyle& p, double cx, double top) {
  const double H = static_cast<double>(f.h), W = static_cast<double>(f.w);
  const double bw = p.body_w * W, bh = p.body_h * H;
  const double head_h = 0.16 * bh;
  const double torso_h = p.torso * (bh - head_h);
  const double head_w = 0.5 * bw;
  for (long y = 0; y < static_cast<long>(f.h); ++y) {
    for (long x = 0; x < static_cast<long>(f.w); ++x) {
      const double py = static_cast<double>(y) + 0.5, pxx = static_cast<double>(x) + 0.5;
      const double dx = pxx - cx;
      if (py >= top && py < top + head_h) {
        const double ey = (py - (top + head_h / 2)) / (head_h / 2);
        const double ex = dx / (head_w / 2);
        if (ex * ex + ey * ey <= 1.0) f.put(y, x, p.head);
      } else if (py >= top + head_h && py < top + head_h + torso_h) {
        if (std::abs(dx) <= bw / 2) f.put(y, x, p.upper);
      } else if (py >= top + head_h + torso_h && py < top + bh) {
        // two legs with a gap
        const double ax = std::abs(dx);
        if (ax <= bw * 0.42 && ax >= bw * 0.06) f.put(y, x, p.lower);
      }
    }
  }
}

void draw_occluder(Frame& f, const CameraStyle& s, const Box& b) {
  for (long y = static_cast<long>(std::floor(b.y0)); y < static_cast<long>(std::ceil(b.y1)); ++y) {
    for (long x = static_cast<long>(std::floor(b.x0)); x < static_cast<long>(std::ceil(b.x1)); ++x) {
      const bool alt = std::fmod(static_cast<double>(x + y), 2.0 * s.occluder_period) < s.occluder_period;
      f.put(y, x, alt ? s.occluder_alt : s.occluder);
    }
  }
}

}  // namespace

void SynthSpec::validate() const {
  if (num_cameras < 2) throw ConfigError("synth: num_cameras must be >= 2, got " + std::to_string(num_cameras));
  if (num_ids < 2) throw ConfigError("synth: num_ids must be >= 2");
  if (tracklets_per_id_per_camera < 2) {
    throw ConfigError("synth: tracklets_per_id_per_camera must be >= 2 (query and gallery per camera)");
  }
  if (frames_per_tracklet < 1) throw ConfigError("synth: frames_per_tracklet must be >= 1");
  if (height < 8 || width < 8) throw ConfigError("synth: frame size must be at least 8x8");
  if (occlusion < 0.0 || occlusion > 1.0) throw ConfigError("synth: occlusion probability must be in [0,1]");
  if (jitter < 0.0 || jitter > 0.5) throw ConfigError("synth: jitter must be in [0,0.5]");
  const auto n_train = num_train_ids();
  if (n_train < 1 || n_train >= num_ids) throw ConfigError("synth: train_fraction leaves no train or test identities");
}

std::size_t SynthSpec::num_train_ids() const {
  return static_cast<std::size_t>(std::llround(static_cast<double>(num_ids) * train_fraction));
}

nlohmann::json SynthSpec::to_json() const {
  return {{"num_ids", num_ids},
          {"num_cameras", num_cameras},
          {"tracklets_per_id_per_camera", tracklets_per_id_per_camera},
          {"frames_per_tracklet", frames_per_tracklet},
          {"height", height},
          {"width", width},
          {"occlusion", occlusion},
          {"jitter", jitter},
          {"train_fraction", train_fraction},
          {"seed", seed}};
}

SynthSpec SynthSpec::from_json(const nlohmann::json& j) {
  SynthSpec s;
  s.num_ids = j.at("num_ids").get<std::size_t>();
  s.num_cameras = j.at("num_cameras").get<std::size_t>();
  s.tracklets_per_id_per_camera = j.at("tracklets_per_id_per_camera").get<std::size_t>();
  s.frames_per_tracklet = j.at("frames_per_tracklet").get<std::size_t>();
  s.height = j.at("height").get<std::size_t>();
  s.width = j.at("width").get<std::size_t>();
  s.occlusion = j.at("occlusion").get<double>();
  s.jitter = j.at("jitter").get<double>();
  s.train_fraction = j.at("train_fraction").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Query: return "query";
    default: return "gallery";
  }
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "query") return Split::Query;
  if (s == "gallery") return Split::Gallery;
  throw FormatError("unknown split '" + s + "'");
}

std::vector<std::size_t> Dataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < tracklets.size(); ++i) {
    if (tracklets[i].split == s) out.push_back(i);
  }
  return out;
}

Tensor render_background(const SynthSpec& spec, int camera_id, std::uint64_t tracklet_seed) {
  const CameraStyle cs = camera_style(spec, camera_id);
  Tensor out(Shape{3, spec.height, spec.width});
  Frame f{spec.height, spec.width, out.ptr()};
  for (std::size_t y = 0; y < spec.height; ++y) {
    for (std::size_t x = 0; x < spec.width; ++x) {
      f.put(static_cast<long>(y), static_cast<long>(x),
            background_pixel(cs, static_cast<double>(y), static_cast<double>(x)));
    }
  }
  const double H = static_cast<double>(spec.height), W = static_cast<double>(spec.width);
  for (long y = static_cast<long>(cs.ob_y0 * H); y < static_cast<long>(cs.ob_y1 * H); ++y) {
    for (long x = static_cast<long>(cs.ob_x0 * W); x < static_cast<long>(cs.ob_x1 * W); ++x) f.put(y, x, cs.obstacle);
  }
  (void)tracklet_seed;
  return out;
}

Tensor render_tracklet(const SynthSpec& spec, int person_id, int camera_id, std::uint64_t tracklet_seed,
                       std::size_t length, const RenderOptions& options, std::vector<bool>* occluded) {
  if (length == 0) throw ArgumentError("render_tracklet: zero length");
  const CameraStyle cs = camera_style(spec, camera_id);
  const PersonStyle ps = person_style(spec, person_id);
  std::mt19937_64 rng(tracklet_seed);
  const double H = static_cast<double>(spec.height), W = static_cast<double>(spec.width);
  const double amp = options.disable_jitter ? 0.0 : spec.jitter * W;

  const double gain = uni(rng, 0.85, 1.15);
  const double x_start = amp > 0 ? uni(rng, -amp, amp) : 0.0;
  const double x_end = amp > 0 ? uni(rng, -amp, amp) : 0.0;
  const double dy = amp > 0 ? uni(rng, -amp / 3, amp / 3) : 0.0;
  const double base_cx = options.center_x ? *options.center_x * W : W / 2.0;
  const double top0 = (H - ps.body_h * H) / 2.0 + dy;

  const Tensor background = render_background(spec, camera_id, tracklet_seed);
  const std::size_t plane = spec.height * spec.width;
  Tensor out(Shape{length, 3, spec.height, spec.width});
  if (occluded) occluded->assign(length, false);
  std::normal_distribution<double> noise(0.0, 0.03);

  for (std::size_t t = 0; t < length; ++t) {
    double* px = out.ptr() + t * 3 * plane;
    std::copy(background.data().begin(), background.data().end(), px);
    Frame f{spec.height, spec.width, px};
    const double a = length > 1 ? static_cast<double>(t) / static_cast<double>(length - 1) : 0.0;
    const double wobble = amp > 0 ? uni(rng, -amp / 3, amp / 3) : 0.0;
    const double cx = base_cx + x_start + (x_end - x_start) * a + wobble;
    const double top = top0 + (amp > 0 ? uni(rng, -1.0, 1.0) : 0.0);
    draw_person(f, ps, cx, top);

    const double bw = ps.body_w * W, bh = ps.body_h * H;
    const bool partial = options.random_occlusion && uni(rng, 0.0, 1.0) < spec.occlusion;
    const bool heavy = options.heavy_occlusion_frame && *options.heavy_occlusion_frame == t;
    if (heavy) {
      draw_occluder(f, cs, Box{top - 2.0, cx - bw / 2 - 2.0, top + bh + 2.0, cx + bw / 2 + 2.0});
    } else if (partial) {
      const double frac = uni(rng, 0.35, 0.6);
      const double y0 = top + uni(rng, 0.0, 1.0 - frac) * bh;
      draw_occluder(f, cs, Box{y0, cx - bw / 2 - 2.0, y0 + frac * bh, cx + bw / 2 + 2.0});
    }
    if (occluded) (*occluded)[t] = heavy || partial;

    for (std::size_t i = 0; i < 3 * plane; ++i) {
      const double v = std::clamp(px[i] * gain + noise(rng), 0.0, 1.0);
      px[i] = static_cast<double>(static_cast<float>(v));
    }
  }
  return out;
}

Dataset generate_corpus(const SynthSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.spec = spec;
  const auto n_train = spec.num_train_ids();
  for (std::size_t pid = 0; pid < spec.num_ids; ++pid) {
    (pid < n_train ? ds.train_ids : ds.test_ids).push_back(static_cast<int>(pid));
    for (std::size_t cam = 0; cam < spec.num_cameras; ++cam) {
      for (std::size_t n = 0; n < spec.tracklets_per_id_per_camera; ++n) {
        Tracklet t;
        t.person_id = static_cast<int>(pid);
        t.camera_id = static_cast<int>(cam);
        t.index = static_cast<int>(n);
        t.split = pid < n_train ? Split::Train : (n == 0 ? Split::Query : Split::Gallery);
        t.frames = render_tracklet(spec, t.person_id, t.camera_id, mix(spec.seed, kTrackletTag, pid, cam, n),
                                   spec.frames_per_tracklet, {}, &t.occluded);
        ds.tracklets.push_back(std::move(t));
      }
    }
  }
  return ds;
}

namespace {

std::filesystem::path tracklet_path(const Tracklet& t) {
  return std::filesystem::path(to_string(t.split)) / ("id_" + std::to_string(t.person_id)) /
         ("cam_" + std::to_string(t.camera_id)) / ("tracklet_" + std::to_string(t.index) + ".dstn");
}

}  // namespace

nlohmann::json manifest(const Dataset& ds) {
  nlohmann::json items = nlohmann::json::array();
  std::size_t counts[3] = {0, 0, 0};
  for (const auto& t : ds.tracklets) {
    std::vector<int> occ(t.occluded.begin(), t.occluded.end());
    items.push_back({{"path", tracklet_path(t).generic_string()},
                     {"person_id", t.person_id},
                     {"camera_id", t.camera_id},
                     {"index", t.index},
                     {"split", to_string(t.split)},
                     {"frames", t.length()},
                     {"occluded", occ}});
    ++counts[static_cast<int>(t.split)];
  }
  return {{"spec", ds.spec.to_json()},
          {"train_ids", ds.train_ids},
          {"test_ids", ds.test_ids},
          {"counts", {{"train", counts[0]}, {"query", counts[1]}, {"gallery", counts[2]}}},
          {"tracklets", items}};
}

void save_corpus(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& t : ds.tracklets) dstn::save(dir / tracklet_path(t), t.frames, dstn::Version::F32);
  std::ofstream os(dir / "manifest.json");
  if (!os) throw FormatError("cannot write manifest in " + dir.string());
  os << manifest(ds).dump(2) << '\n';
}

Dataset load_corpus(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw FormatError("no manifest.json in " + dir.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest.json: ") + e.what());
  }
  Dataset ds;
  ds.spec = SynthSpec::from_json(j.at("spec"));
  ds.train_ids = j.at("train_ids").get<std::vector<int>>();
  ds.test_ids = j.at("test_ids").get<std::vector<int>>();
  for (const auto& item : j.at("tracklets")) {
    Tracklet t;
    t.person_id = item.at("person_id").get<int>();
    t.camera_id = item.at("camera_id").get<int>();
    t.index = item.at("index").get<int>();
    t.split = parse_split(item.at("split").get<std::string>());
    t.frames = dstn::load(dir / item.at("path").get<std::string>());
    for (int v : item.at("occluded").get<std::vector<int>>()) t.occluded.push_back(v != 0);
    ds.tracklets.push_back(std::move(t));
  }
  return ds;
}

std::vector<std::size_t> rrs_sample(std::size_t length, std::size_t T, std::mt19937_64& rng) {
  if (length == 0 || T == 0) throw ArgumentError("rrs_sample: empty tracklet or T = 0");
  std::vector<std::size_t> idx;
  idx.reserve(T);
  if (length < T) {
    std::clog << "rrs_sample: tracklet of " << length << " frames padded to " << T << " by repeating the last frame\n";
    for (std::size_t k = 0; k < T; ++k) idx.push_back(std::min(k, length - 1));
    return idx;
  }
  for (std::size_t k = 0; k < T; ++k) {
    const std::size_t lo = k * length / T;
    const std::size_t hi = (k + 1) * length / T;  // exclusive, > lo since length >= T
    idx.push_back(std::uniform_int_distribution<std::size_t>(lo, hi - 1)(rng));
  }
  return idx;
}

Tensor gather_frames(const Tensor& frames, const std::vector<std::size_t>& idx) {
  if (frames.rank() != 4) throw ShapeError("gather_frames: expects [L,3,H,W]");
  const std::size_t per = frames.numel() / frames.dim(0);
  Shape s = frames.shape();
  s[0] = idx.size();
  Tensor out(s);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= frames.dim(0)) throw ArgumentError("gather_frames: index out of range");
    std::copy_n(frames.ptr() + idx[i] * per, per, out.ptr() + i * per);
  }
  return out;
}

std::optional<EraseRect> draw_erase_rect(std::size_t height, std::size_t width, std::mt19937_64& rng,
                                         const AugmentConfig& cfg) {
  const double area = static_cast<double>(height * width);
  for (int attempt = 0; attempt < 100; ++attempt) {
    const double target = uni(rng, cfg.erase_area_min, cfg.erase_area_max) * area;
    const double aspect = uni(rng, cfg.erase_aspect_min, cfg.erase_aspect_max);
    const auto h = static_cast<std::size_t>(std::llround(std::sqrt(target * aspect)));
    const auto w = static_cast<std::size_t>(std::llround(std::sqrt(target / aspect)));
    if (h == 0 || w == 0 || h >= height || w >= width) continue;
    // rounding can push the realized rectangle outside the bounds; redraw then
    const double real_area = static_cast<double>(h * w) / area;
    const double real_aspect = static_cast<double>(h) / static_cast<double>(w);
    if (real_area < cfg.erase_area_min || real_area > cfg.erase_area_max) continue;
    if (real_aspect < cfg.erase_aspect_min || real_aspect > cfg.erase_aspect_max) continue;
    EraseRect r;
    r.h = h;
    r.w = w;
    r.y = std::uniform_int_distribution<std::size_t>(0, height - h)(rng);
    r.x = std::uniform_int_distribution<std::size_t>(0, width - w)(rng);
    return r;
  }
  return std::nullopt;
}

AugmentResult augment(const Tensor& clip, std::mt19937_64& rng, const AugmentConfig& cfg) {
  if (clip.rank() != 4 || clip.dim(1) != 3) throw ShapeError("augment: clip must be [T,3,H,W]");
  AugmentResult res;
  res.clip = clip;
  const std::size_t T = clip.dim(0), H = clip.dim(2), W = clip.dim(3);
  double* px = res.clip.ptr();

  if (uni(rng, 0.0, 1.0) < cfg.flip_probability) {
    res.flipped = true;
    for (std::size_t p = 0; p < T * 3 * H; ++p) std::reverse(px + p * W, px + (p + 1) * W);
  }
  if (uni(rng, 0.0, 1.0) < cfg.erase_probability) {
    res.erased = draw_erase_rect(H, W, rng, cfg);
    if (res.erased) {
      const auto& r = *res.erased;
      std::vector<double> fill(3 * r.h * r.w);
      for (auto& v : fill) v = uni(rng, 0.0, 1.0);
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t ch = 0; ch < 3; ++ch) {
          for (std::size_t y = 0; y < r.h; ++y) {
            for (std::size_t x = 0; x < r.w; ++x) {
              px[((t * 3 + ch) * H + r.y + y) * W + r.x + x] = fill[(ch * r.h + y) * r.w + x];
            }
          }
        }
      }
    }
  }
  return res;
}

void SamplerConfig::validate(std::size_t frames_per_tracklet) const {
  if (p < 2) throw ConfigError("sampler: P must be >= 2 for triplet mining");
  if (k < 2) throw ConfigError("sampler: K must be >= 2 for triplet mining");
  if (t < 1) throw ConfigError("sampler: T must be >= 1");
  if (t > frames_per_tracklet) {
    throw ConfigError("sampler: T=" + std::to_string(t) + " exceeds frames per tracklet " +
                      std::to_string(frames_per_tracklet));
  }
}

PKSampler::PKSampler(const Dataset& dataset, SamplerConfig config, std::uint64_t seed, bool augment,
                     AugmentConfig augment_config)
    : dataset_(&dataset), config_(config), augment_(augment), augment_config_(augment_config), rng_(seed) {
  config_.validate(dataset.spec.frames_per_tracklet);
  if (dataset.train_ids.size() < config_.p) {
    throw ConfigError("sampler: " + std::to_string(dataset.train_ids.size()) + " training identities < P=" +
                      std::to_string(config_.p));
  }
  id_of_class_ = dataset.train_ids;
  by_id_.resize(id_of_class_.size());
  for (std::size_t i = 0; i < dataset.tracklets.size(); ++i) {
    const auto& t = dataset.tracklets[i];
    if (t.split != Split::Train) continue;
    auto it = std::find(id_of_class_.begin(), id_of_class_.end(), t.person_id);
    by_id_[static_cast<std::size_t>(it - id_of_class_.begin())].push_back(i);
  }
  for (std::size_t c = 0; c < by_id_.size(); ++c) {
    if (by_id_[c].empty()) throw ConfigError("sampler: identity " + std::to_string(id_of_class_[c]) + " has no tracklets");
  }
}

std::vector<std::size_t> PKSampler::next_indices() {
  if (id_queue_.size() < config_.p) {
    id_queue_.resize(id_of_class_.size());
    std::iota(id_queue_.begin(), id_queue_.end(), 0);
    std::shuffle(id_queue_.begin(), id_queue_.end(), rng_);
  }
  std::vector<int> classes(id_queue_.begin(), id_queue_.begin() + static_cast<std::ptrdiff_t>(config_.p));
  id_queue_.erase(id_queue_.begin(), id_queue_.begin() + static_cast<std::ptrdiff_t>(config_.p));

  std::vector<std::size_t> out;
  for (int cls : classes) {
    auto pool = by_id_[static_cast<std::size_t>(cls)];
    if (pool.size() >= config_.k) {
      std::shuffle(pool.begin(), pool.end(), rng_);
      out.insert(out.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(config_.k));
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      for (std::size_t k = 0; k < config_.k; ++k) out.push_back(pool[pick(rng_)]);
    }
  }
  return out;
}

MiniBatch PKSampler::assemble(const std::vector<std::size_t>& indices) {
  MiniBatch mb;
  mb.tracklets = indices;
  std::vector<Tensor> clips;
  clips.reserve(indices.size());
  for (auto i : indices) {
    const Tracklet& t = dataset_->tracklets.at(i);
    auto it = std::find(id_of_class_.begin(), id_of_class_.end(), t.person_id);
    mb.id_labels.push_back(static_cast<int>(it - id_of_class_.begin()));
    mb.camera_labels.push_back(t.camera_id);
    Tensor clip = gather_frames(t.frames, rrs_sample(t.length(), config_.t, rng_));
    if (augment_) clip = augment(clip, rng_, augment_config_).clip;
    clips.push_back(std::move(clip));
  }
  mb.clips = stack(clips);
  return mb;
}

MiniBatch PKSampler::next() { return assemble(next_indices()); }

std::string PKSampler::rng_state() const {
  std::ostringstream os;
  os << rng_ << '|';
  for (std::size_t i = 0; i < id_queue_.size(); ++i) os << (i ? "," : "") << id_queue_[i];
  return os.str();
}

void PKSampler::set_rng_state(const std::string& state) {
  const auto bar = state.find('|');
  if (bar == std::string::npos) throw FormatError("sampler state: missing queue section");
  std::istringstream is(state.substr(0, bar));
  is >> rng_;
  if (!is) throw FormatError("sampler state: bad rng state");
  id_queue_.clear();
  std::stringstream qs(state.substr(bar + 1));
  std::string item;
  while (std::getline(qs, item, ',')) {
    if (!item.empty()) id_queue_.push_back(std::stoi(item));
  }
}

}  // namespace dsanet::data
