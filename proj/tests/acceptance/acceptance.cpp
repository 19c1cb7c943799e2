// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.
// Usage: dsanet_acceptance [--config FILE] [--overlay FILE] [--only 1,4,...]
// Criteria 4 and 6 share one trained model, built from the config plus the
// overlay.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include <unistd.h>

#include "dsanet/config.hpp"
#include "dsanet/engine.hpp"
#include "dsanet/fwg.hpp"
#include "dsanet/model.hpp"
#include "dsanet/pipeline.hpp"
#include "dsanet/retrieval.hpp"
#include "dsanet/suites.hpp"
#include "dsanet/tlm.hpp"
#include "oracles.hpp"

using namespace dsanet;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int id, bool ok, const std::string& what, const std::string& detail) {
  std::cout << (ok ? "PASS" : "FAIL") << " criterion " << id << ": " << what << " | " << detail << std::endl;
  if (!ok) ++failures;
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << std::fixed << v;
  return os.str();
}

config::Settings load_settings(const std::vector<std::string>& paths) {
  config::Settings s;
  for (const auto& p : paths) s.load(p);
  return s;
}

// 1. finite differences on every loss term and the composed objective
void gradients() {
  const auto t0 = Clock::now();
  bool ok = true;
  std::string worst;
  double worst_err = 0.0;
  std::size_t checked = 0;
  for (const auto& suite : verify::gradcheck_suites()) {
    const auto r = suite.run(verify::suite_options());
    ok = ok && r.passed;
    checked += r.checked;
    if (r.max_rel_error >= worst_err) {
      worst_err = r.max_rel_error;
      worst = suite.name;
    }
    if (!r.passed) std::cout << "  gradcheck " << suite.name << " failed, max rel err " << r.max_rel_error << "\n";
  }
  const double secs = seconds_since(t0);
  report(1, ok && secs < 120.0, "finite-difference gradients (rel err <= 1e-4, eps 1e-4, < 120 s)",
         std::to_string(verify::gradcheck_suites().size()) + " suites, " + std::to_string(checked) +
             " coords, worst " + worst + " " + fmt(worst_err * 1e6, 2) + "e-6, " + fmt(secs, 1) + " s");
}

// 2. retrieval metrics and batch-hard mining against brute force
void oracles() {
  std::mt19937_64 rng(2024);
  std::size_t retrieval_bad = 0;
  // exclusions are expected here; keep the log quiet
  auto* log = std::clog.rdbuf(nullptr);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t nq = 1 + rng() % 10, ng = 1 + rng() % 50;
    std::vector<double> d(nq * ng);
    // coarse grid so that ties occur
    for (auto& v : d) v = static_cast<double>(rng() % 20) / 10.0;
    std::vector<int> qid(nq), gid(ng), qc(nq), gc(ng);
    for (auto& v : qid) v = static_cast<int>(rng() % 5);
    for (auto& v : gid) v = static_cast<int>(rng() % 5);
    for (auto& v : qc) v = static_cast<int>(rng() % 3);
    for (auto& v : gc) v = static_cast<int>(rng() % 3);
    const auto got = eval::cmc_map(Tensor(Shape{nq, ng}, d), qid, gid, qc, gc);
    const auto want = oracle::retrieval(d, nq, ng, qid, gid, qc, gc);
    bool same = got.mAP == want.mAP && got.cmc == want.cmc && got.excluded == want.excluded;
    for (std::size_t i = 0; same && i < nq; ++i)
      same = std::isnan(want.ap[i]) ? std::isnan(got.ap[i]) : got.ap[i] == want.ap[i];
    retrieval_bad += !same;
  }
  std::clog.rdbuf(log);

  std::size_t triplet_bad = 0;
  double triplet_worst = 0.0;
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t p = 2 + rng() % 4, k = 2 + rng() % 3, c = 1 + rng() % 8;
    std::vector<int> y;
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j < k; ++j) y.push_back(static_cast<int>(i));
    std::shuffle(y.begin(), y.end(), rng);
    std::vector<double> f(p * k * c);
    for (auto& v : f) v = n(rng);
    const double got = objective::triplet_loss(Var(Tensor(Shape{p * k, c}, f)), y, 0.3).item();
    const double want = oracle::triplet_exhaustive(f, p * k, c, y, 0.3);
    triplet_worst = std::max(triplet_worst, std::abs(got - want));
    triplet_bad += std::abs(got - want) > 1e-9;
  }
  report(2, retrieval_bad == 0 && triplet_bad == 0, "CMC/mAP exact vs brute force (200), triplet vs exhaustive (100)",
         std::to_string(200 - retrieval_bad) + "/200 retrieval exact, " + std::to_string(100 - triplet_bad) +
             "/100 triplet within 1e-9 (worst " + fmt(triplet_worst * 1e15, 2) + "e-15)");
}

// 3. shapes and structural properties of TLM, CEL and FWG
void invariants() {
  std::vector<std::string> broken;
  auto expect = [&](bool cond, const std::string& name) {
    if (!cond) broken.push_back(name);
  };
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto rand = [&](Shape s) {
    Tensor t(std::move(s));
    for (auto& v : t.data()) v = u(rng);
    return t;
  };

  // split / attention / fuse on a [N, C, h, w] map
  const std::size_t N = 3, C = 5, h = 4, w = 8;
  const Tensor F = rand(Shape{N, C, h, w});
  const Var Fv(F);
  const auto R = tlm::split_lmr(Fv);
  const Shape half{N, C, h, w / 2};
  expect(R.left.shape() == half && R.middle.shape() == half && R.right.shape() == half, "split shapes");
  bool cols = true;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w / 2; ++j) {
          cols = cols && R.left.value().at({n, c, i, j}) == F.at({n, c, i, j});
          cols = cols && R.middle.value().at({n, c, i, j}) == F.at({n, c, i, j + w / 4});
          cols = cols && R.right.value().at({n, c, i, j}) == F.at({n, c, i, j + w / 2});
        }
  expect(cols, "split columns");

  tlm::AttentionConv conv{Var(rand(Shape{1, 2, 3, 3}), true), Var(rand(Shape{1}), true)};
  const Var A = tlm::region_attention(R.left, conv);
  expect(A.shape() == (Shape{N, 1, h, w / 2}), "attention shape");
  bool softmax = true;
  for (std::size_t n = 0; n < N; ++n) {
    double s = 0.0;
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w / 2; ++j) {
        const double a = A.value().at({n, 0, i, j});
        softmax = softmax && a > 0.0;
        s += a;
      }
    softmax = softmax && std::abs(s - 1.0) < 1e-12;
  }
  expect(softmax, "attention is a distribution over (h, w/2)");

  const Tensor AL = rand(Shape{N, 1, h, w / 2}), AM = rand(Shape{N, 1, h, w / 2}), AR = rand(Shape{N, 1, h, w / 2});
  const Var Z = tlm::fuse_attention(Var(AL), Var(AM), Var(AR));
  expect(Z.shape() == (Shape{N, 1, h, w}), "fuse shape");
  bool fused = true;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        double want = j < w / 2 ? AL.at({n, 0, i, j}) : AR.at({n, 0, i, j - w / 2});
        if (j >= w / 4 && j < 3 * w / 4) want += AM.at({n, 0, i, j - w / 4});
        fused = fused && std::abs(Z.value().at({n, 0, i, j}) - want) < 1e-15;
      }
  expect(fused, "fuse values");

  const Var same = tlm::reweight(Fv, Var(Tensor(Shape{N, 1, h, w}, 0.0)));
  expect(same.value() == F, "residual identity under zero attention");

  // whole network: CEL doubling, w and w_hat distributions
  ModelConfig m;
  m.backbone.c = 16;
  m.backbone.height = 16;
  m.backbone.width = 8;
  m.backbone.strides = {2, 1, 1, 1};
  m.num_ids = 4;
  m.num_cameras = 2;
  m.seed = 4;
  DsaNet net(m);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Tensor clips(Shape{2, 4, 3, 16, 8});
  for (auto& v : clips.data()) v = u01(rng);
  NoGradGuard g;
  const auto fb = net.forward(clips, false);
  expect(fb.F_cam.shape()[1] == 2 * fb.X.shape()[1], "CEL doubles channels");
  expect(fb.F_cam.shape() == fb.F_id.shape(), "F_cam matches F_id");
  expect(fb.f_id.shape() == (Shape{2, 16}) && fb.f_cam.shape() == (Shape{2, 16}), "clip vectors");
  const std::vector<int> ids{1, 3};
  const Tensor w_pseudo = fwg::pseudo_labels(fb.f_t.value(), ids, net.id_classifier().value(), m.pseudo);
  const Tensor& w_hat = fb.fwg->weights.value();
  auto rows_are_distributions = [](const Tensor& t) {
    for (std::size_t b = 0; b < t.dim(0); ++b) {
      double s = 0.0;
      for (std::size_t k = 0; k < t.dim(1); ++k) {
        if (!(t.at({b, k}) >= 0.0)) return false;
        s += t.at({b, k});
      }
      if (std::abs(s - 1.0) > 1e-12) return false;
    }
    return true;
  };
  expect(w_pseudo.shape() == (Shape{2, 4}) && rows_are_distributions(w_pseudo), "w is a distribution over frames");
  expect(w_hat.shape() == (Shape{2, 4}) && rows_are_distributions(w_hat), "w_hat is a distribution over frames");

  std::string detail = broken.empty() ? "all 13 checks hold" : "broken:";
  for (const auto& b : broken) detail += " [" + b + "]";
  report(3, broken.empty(), "TLM/CEL/FWG shape and structure invariants", detail);
}

struct Trained {
  config::RunConfig rc;
  data::Dataset ds;
  std::unique_ptr<DsaNet> model;
  double seconds = 0.0;
};

Trained train_full(const config::Settings& base) {
  const auto t0 = Clock::now();
  config::Settings s = base;
  s.set("model.components", "all");
  Trained t{config::resolve(s), {}, nullptr, 0.0};
  t.ds = pipeline::load_dataset(t.rc);
  t.model = pipeline::train(t.rc, t.ds).model;
  t.seconds = seconds_since(t0);
  return t;
}

// 4. f_ID and f_cam carry the intended factors
void disentanglement(Trained& t) {
  const auto t0 = Clock::now();
  const auto ev = pipeline::evaluate(*t.model, t.ds, t.rc.eval_t());
  const auto r = pipeline::disentangle_report(ev, t.rc.probe);
  const double secs = t.seconds + seconds_since(t0);
  const bool corpus = t.ds.spec.num_ids == 32 && t.ds.spec.num_cameras == 4;
  const bool ok = corpus && secs <= 900.0 && r.mean_positive_cosine <= 0.10 && r.camera_on_fcam.test_accuracy >= 0.90 &&
                  r.camera_on_fid.test_accuracy <= r.camera_on_fid.chance + 0.15 && r.id_on_fid.test_accuracy >= 0.90;
  report(4, ok, "disentanglement on 32 IDs x 4 cameras (cos <= 0.10, cam|f_cam >= 0.90, cam|f_ID <= chance+0.15, "
                "id|f_ID >= 0.90, <= 900 s)",
         "cos " + fmt(r.mean_positive_cosine) + ", cam|f_cam " + fmt(r.camera_on_fcam.test_accuracy, 3) +
             ", cam|f_ID " + fmt(r.camera_on_fid.test_accuracy, 3) + " (chance " + fmt(r.camera_on_fid.chance, 2) +
             "), id|f_ID " + fmt(r.id_on_fid.test_accuracy, 3) + ", " + fmt(secs, 1) + " s");
}

// 5. ablation direction over three seeds
void table_direction(const config::Settings& base) {
  const std::vector<std::uint64_t> seeds{0, 1, 2};
  const auto& rows = pipeline::table_rows();
  const auto baseline = pipeline::run_row(base, rows.front(), seeds);
  const auto mid = pipeline::run_row(base, rows[rows.size() - 2], seeds);
  const auto full = pipeline::run_row(base, rows.back(), seeds);
  const double b = 100.0 * baseline.mean_map, m = 100.0 * mid.mean_map, f = 100.0 * full.mean_map;
  report(5, b < m && m <= f && f >= b + 3.0,
         "mean mAP baseline < +TLM+FWG <= +TLM+FWG+SAO, full >= baseline + 3 (3 seeds)",
         "baseline " + fmt(b, 2) + ", +TLM+FWG " + fmt(m, 2) + ", full " + fmt(f, 2));
}

// 6. a frame whose target is hidden gets the lowest pseudo-label weight
void frame_weights(Trained& t) {
  DsaNet& net = *t.model;
  const std::size_t T = t.rc.sampler.t;
  std::mt19937_64 rng(606);
  std::size_t hits = 0;
  const std::size_t clips = 50;
  NoGradGuard g;
  for (std::size_t i = 0; i < clips; ++i) {
    const int pid = t.ds.train_ids[rng() % t.ds.train_ids.size()];
    const int cam = static_cast<int>(rng() % t.ds.spec.num_cameras);
    data::RenderOptions opt;
    opt.random_occlusion = false;
    opt.heavy_occlusion_frame = rng() % T;
    const Tensor frames = data::render_tracklet(t.ds.spec, pid, cam, 1000000 + rng() % 1000000, T, opt);
    const Shape& fs = frames.shape();
    const auto fb = net.forward(frames.reshaped(Shape{1, fs[0], fs[1], fs[2], fs[3]}), false);
    const Tensor f_t = fb.f_t.value().slice0(0);
    const Tensor w = fwg::pseudo_label(f_t, pid, net.id_classifier().value(), net.config().pseudo);
    std::size_t arg = 0;
    for (std::size_t k = 1; k < T; ++k)
      if (w[k] < w[arg]) arg = k;
    hits += arg == *opt.heavy_occlusion_frame;
  }
  const double rate = static_cast<double>(hits) / static_cast<double>(clips);
  report(6, rate >= 0.80, "occluded frame gets the minimum pseudo-label weight in >= 80% of 50 clips",
         std::to_string(hits) + "/50 (" + fmt(100.0 * rate, 0) + "%)");
}

// 7. SAO adds no parameters
void parameterless(const config::Settings& base) {
  config::Settings on = base, off = base;
  on.set("model.components", "all");
  off.set("model.components", "tlm,fwg,l_lr,l_w,l_ic,l_dis,l_cam");
  const auto rc_on = config::resolve(on), rc_off = config::resolve(off);
  const auto ds = pipeline::load_dataset(rc_on);
  const DsaNet a(config::model_for(rc_on, ds)), b(config::model_for(rc_off, ds));
  const auto pa = a.parameters(), pb = b.parameters();
  bool same = pa.size() == pb.size() && a.parameter_count() == b.parameter_count();
  for (std::size_t i = 0; same && i < pa.size(); ++i)
    same = pa[i].first == pb[i].first && pa[i].second.shape() == pb[i].second.shape();
  report(7, same, "parameter census identical with SAO on and off",
         std::to_string(pa.size()) + " vs " + std::to_string(pb.size()) + " tensors, " +
             std::to_string(a.parameter_count()) + " vs " + std::to_string(b.parameter_count()) + " scalars");
}

// 8. reruns and checkpoint restores are bit-exact
void determinism(const config::Settings& base) {
  config::Settings s = base;
  s.set("model.components", "all");
  s.set("train.epochs", "2");
  const auto rc = config::resolve(s);
  const auto ds = pipeline::load_dataset(rc);

  auto run = [&] {
    auto tr = pipeline::train(rc, ds);
    std::string trace;
    for (const auto& r : tr.trace) trace += r.to_json().dump() + "\n";
    const auto ev = pipeline::evaluate(*tr.model, ds, rc.eval_t());
    return std::pair{trace, ev.retrieval.to_json().dump()};
  };
  const auto [trace_a, results_a] = run();
  const auto [trace_b, results_b] = run();

  const fs::path ck = fs::temp_directory_path() / ("dsanet_acceptance_" + std::to_string(::getpid()) + ".dsck");
  DsaNet m1(config::model_for(rc, ds));
  engine::Trainer t1(m1, ds, rc.train, rc.loss, rc.sampler, rc.augment, rc.augment_config);
  for (int i = 0; i < 3; ++i) t1.step();
  t1.save_checkpoint(ck);
  const double next_a = t1.step().losses.total;
  DsaNet m2(config::model_for(rc, ds));
  engine::Trainer t2(m2, ds, rc.train, rc.loss, rc.sampler, rc.augment, rc.augment_config);
  t2.load_checkpoint(ck);
  const double next_b = t2.step().losses.total;
  fs::remove(ck);

  const bool traces = !trace_a.empty() && trace_a == trace_b;
  const bool results = results_a == results_b;
  const bool resume = next_a == next_b;
  report(8, traces && results && resume, "bitwise loss traces, identical results.json, exact next-step loss after restore",
         std::string("traces ") + (traces ? "equal" : "differ") + ", results " + (results ? "equal" : "differ") +
             ", next-step loss " + (resume ? "equal" : "differs (" + fmt(next_a, 17) + " vs " + fmt(next_b, 17) + ")"));
}

}  // namespace

int main(int argc, char** argv) {
  std::string cfg = DSANET_ACCEPTANCE_CONFIG;
  std::string overlay = DSANET_DISENTANGLE_OVERLAY;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) {
      cfg = argv[++i];
    } else if (a == "--overlay" && i + 1 < argc) {
      overlay = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string item; std::getline(ss, item, ',');) only.insert(std::stoi(item));
    } else {
      std::cerr << "usage: dsanet_acceptance [--config FILE] [--overlay FILE] [--only 1,2,...]\n";
      return 2;
    }
  }
  auto want = [&](int id) { return only.empty() || only.count(id); };

  try {
    const auto base = load_settings({cfg});
    std::cout << "settings: " << cfg << " (criteria 4, 6 add " << overlay << ")" << std::endl;
    if (want(1)) gradients();
    if (want(2)) oracles();
    if (want(3)) invariants();
    std::optional<Trained> t;
    if (want(4) || want(6)) t = train_full(load_settings({cfg, overlay}));
    if (want(4)) disentanglement(*t);
    if (want(5)) table_direction(base);
    if (want(6)) frame_weights(*t);
    if (want(7)) parameterless(base);
    if (want(8)) determinism(base);
  } catch (const std::exception& e) {
    std::cout << "FAIL acceptance aborted: " << e.what() << std::endl;
    return 1;
  }
  std::cout << (failures ? std::to_string(failures) + " criteria failed" : std::string("all criteria passed"))
            << std::endl;
  return failures ? 1 : 0;
}
