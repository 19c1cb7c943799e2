#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "dsanet/config.hpp"
#include "dsanet/dstn.hpp"
#include "dsanet/errors.hpp"
#include "dsanet/pipeline.hpp"
#include "dsanet/suites.hpp"

namespace fs = std::filesystem;
using namespace dsanet;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kVerifyFailed = 1;
constexpr int kUsage = 2;

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out = "runs/latest";
  std::optional<std::uint64_t> seed;
  std::string checkpoint;
};

// Base settings from a checkpoint echo (if any), then --config, --set, --seed.
config::Settings build_settings(const Common& c, const json* echo = nullptr) {
  config::Settings s;
  if (echo) {
    for (const auto& [k, v] : echo->items()) {
      if (config::Settings{}.contains(k)) s.set(k, v.get<std::string>());
    }
  }
  if (!c.config_path.empty()) s.load(c.config_path);
  for (const auto& kv : c.sets) s.assign(kv);
  if (c.seed) {
    s.set("seed", std::to_string(*c.seed));
    s.set("synth.seed", std::to_string(*c.seed));
  }
  return s;
}

void write_json(const fs::path& p, const json& j) {
  fs::create_directories(p.parent_path());
  std::ofstream os(p);
  if (!os) throw FormatError("cannot write " + p.string());
  os << j.dump(2) << '\n';
}

class RunRecord {
 public:
  RunRecord(std::string command, const Common& c, const config::Settings& s, int argc, char** argv)
      : path_(fs::path(c.out) / "run.json") {
    std::vector<std::string> args(argv, argv + argc);
    j_ = {{"command", std::move(command)}, {"argv", args}, {"out", c.out}, {"config", s.to_json()}};
    if (!c.checkpoint.empty()) j_["checkpoint"] = c.checkpoint;
    start_ = std::chrono::steady_clock::now();
    write_json(path_, j_);
  }
  json& operator[](const std::string& k) { return j_[k]; }
  void finish(int code) {
    j_["exit_code"] = code;
    j_["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    write_json(path_, j_);
  }

 private:
  fs::path path_;
  json j_;
  std::chrono::steady_clock::time_point start_;
};

void print_counts(const data::Dataset& ds) {
  std::cout << "train " << ds.indices(data::Split::Train).size() << "  query " << ds.indices(data::Split::Query).size()
            << "  gallery " << ds.indices(data::Split::Gallery).size() << " tracklets\n";
}

void print_retrieval(const eval::RetrievalResult& r) {
  std::cout << std::fixed << std::setprecision(2) << "mAP " << 100 * r.mAP << "  R1 " << 100 * r.cmc_at(1) << "  R5 "
            << 100 * r.cmc_at(5) << "  R10 " << 100 * r.cmc_at(10) << "  (" << r.num_queries << " queries, "
            << r.excluded << " excluded)\n";
}

// Model + weights from a checkpoint; the corpus comes from the echoed config.
struct Restored {
  config::RunConfig rc;
  config::Settings settings;
  data::Dataset ds;
  std::unique_ptr<DsaNet> model;
};

Restored restore(const Common& c) {
  if (c.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  const json header = engine::read_checkpoint_header(c.checkpoint);
  const json echo = header.value("config", json::object());
  Restored r;
  r.settings = build_settings(c, &echo);
  r.rc = config::resolve(r.settings);
  r.ds = pipeline::load_dataset(r.rc);
  r.model = std::make_unique<DsaNet>(config::model_for(r.rc, r.ds));
  engine::Trainer tr(*r.model, r.ds, r.rc.train, r.rc.loss, r.rc.sampler);
  tr.load_checkpoint(c.checkpoint);
  return r;
}

int cmd_synth(const Common& c, const config::Settings& s, RunRecord& rec) {
  const auto rc = config::resolve(s);
  const auto ds = data::generate_corpus(rc.synth);
  const fs::path dir = fs::path(c.out) / "corpus";
  data::save_corpus(ds, dir);
  print_counts(ds);
  std::cout << "corpus written to " << dir.string() << '\n';
  rec["corpus"] = dir.string();
  return kOk;
}

int cmd_train(const Common& c, const config::Settings& s, RunRecord& rec) {
  const auto rc = config::resolve(s);
  const auto ds = pipeline::load_dataset(rc);
  print_counts(ds);
  DsaNet model(config::model_for(rc, ds));
  engine::Trainer tr(model, ds, rc.train, rc.loss, rc.sampler, rc.augment, rc.augment_config);
  if (!c.checkpoint.empty() && fs::exists(c.checkpoint)) {
    tr.load_checkpoint(c.checkpoint);
    std::cout << "resumed at step " << tr.global_step() << '\n';
  }
  std::cout << "parameters " << model.parameter_count() << ", " << tr.batches_per_epoch() << " batches per epoch, "
            << rc.train.epochs << " epochs\n";
  const fs::path out(c.out);
  std::ofstream metrics(out / "metrics.jsonl", std::ios::app);
  tr.fit(&metrics, 0, [&](const engine::StepRecord& r) {
    if (r.step % 50 == 0) std::cout << "step " << r.step << "  epoch " << r.epoch << "  total " << r.losses.total << '\n';
  });
  const fs::path ckpt = out / "checkpoint.dsck";
  tr.save_checkpoint(ckpt, s.to_json());
  const auto ev = pipeline::evaluate(model, ds, rc.eval_t());
  write_json(out / "results.json", ev.retrieval.to_json());
  print_retrieval(ev.retrieval);
  rec["checkpoint_out"] = ckpt.string();
  rec["rejected_steps"] = tr.rejected_steps();
  return kOk;
}

void dump_embeddings(const pipeline::Evaluation& ev, const fs::path& dir) {
  dstn::save(dir / "query_f_id.dstn", ev.query.embeddings, dstn::Version::F64);
  dstn::save(dir / "gallery_f_id.dstn", ev.gallery.embeddings, dstn::Version::F64);
  if (!ev.query.camera_embeddings.empty()) {
    dstn::save(dir / "query_f_cam.dstn", ev.query.camera_embeddings, dstn::Version::F64);
    dstn::save(dir / "gallery_f_cam.dstn", ev.gallery.camera_embeddings, dstn::Version::F64);
  }
}

int cmd_eval(const Common& c, RunRecord& rec) {
  auto r = restore(c);
  rec["config"] = r.settings.to_json();
  const auto ev = pipeline::evaluate(*r.model, r.ds, r.rc.eval_t());
  const fs::path out(c.out);
  write_json(out / "results.json", ev.retrieval.to_json());
  std::ofstream csv(out / "rankings.csv");
  eval::write_rankings_csv(csv, ev.retrieval, ev.query, ev.gallery);
  if (r.rc.eval.dumps) {
    dump_embeddings(ev, out / "embeddings");
    if (r.model->config().components.tlm) eval::dump_attention(*r.model, r.ds, r.rc.eval_t(), out / "attention");
    if (r.model->config().components.fwg)
      eval::dump_frame_weights(*r.model, r.ds, r.rc.eval_t(), out / "frame_weights.jsonl");
  }
  print_retrieval(ev.retrieval);
  return kOk;
}

int cmd_probe(const Common& c, RunRecord& rec) {
  auto r = restore(c);
  rec["config"] = r.settings.to_json();
  const auto ev = pipeline::evaluate(*r.model, r.ds, r.rc.eval_t());
  const auto rep = pipeline::disentangle_report(ev, r.rc.probe);
  write_json(fs::path(c.out) / "probe.json", rep.to_json());
  std::cout << std::fixed << std::setprecision(3) << "mean max(cos(f_id, f_cam), 0)  " << rep.mean_positive_cosine
            << "\ncamera probe on f_cam  " << rep.camera_on_fcam.test_accuracy << "\ncamera probe on f_id   "
            << rep.camera_on_fid.test_accuracy << "  (chance " << rep.camera_on_fid.chance << ")\nid probe on f_id       "
            << rep.id_on_fid.test_accuracy << "  (chance " << rep.id_on_fid.chance << ")\n";
  return kOk;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoull(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ConfigError("bad seed '" + tok + "' in --seeds");
    }
  }
  if (out.empty()) throw ConfigError("--seeds is empty");
  return out;
}

int cmd_ablate(const Common& c, const config::Settings& s, const std::string& seeds_text,
               const std::vector<std::string>& rows_text, RunRecord& rec) {
  config::resolve(s);  // reject bad settings before any training
  const auto seeds = parse_seeds(seeds_text);
  std::vector<pipeline::AblationRow> rows;
  for (const auto& t : rows_text) {
    Components comp = Components::parse(t);
    comp.validate();
    rows.push_back({t, comp});
  }
  if (rows.empty()) rows = pipeline::table_rows();

  std::vector<pipeline::AblationOutcome> done;
  json j = json::array();
  for (const auto& row : rows) {
    std::cout << std::left << std::setw(22) << row.label << std::flush;
    done.push_back(pipeline::run_row(s, row, seeds));
    const auto& o = done.back();
    std::cout << std::fixed << std::setprecision(2) << "R1 " << 100 * o.mean_rank1 << "  mAP " << 100 * o.mean_map
              << '\n';
    j.push_back({{"label", row.label},
                 {"components", row.components.to_string()},
                 {"seeds", o.seeds},
                 {"mAP", o.map},
                 {"rank1", o.rank1},
                 {"mean_mAP", o.mean_map},
                 {"mean_rank1", o.mean_rank1}});
  }
  const fs::path out(c.out);
  std::ofstream csv(out / "ablation.csv");
  pipeline::write_ablation_csv(csv, done);
  write_json(out / "ablation.json", j);
  rec["rows"] = j.size();
  return kOk;
}

int cmd_gradcheck(const Common& c, const std::vector<std::string>& only, RunRecord& rec) {
  const auto& suites = verify::gradcheck_suites();
  for (const auto& name : only) {
    bool known = false;
    for (const auto& s : suites) known = known || s.name == name;
    if (!known) throw ConfigError("unknown gradcheck suite '" + name + "'");
  }
  bool all_passed = true;
  json j = json::array();
  for (const auto& s : suites) {
    if (!only.empty() && std::find(only.begin(), only.end(), s.name) == only.end()) continue;
    const auto r = s.run(verify::suite_options());
    all_passed = all_passed && r.passed;
    std::cout << std::left << std::setw(10) << s.name << (r.passed ? "PASS" : "FAIL") << "  worst rel err "
              << std::scientific << std::setprecision(2) << r.max_rel_error << " at " << r.worst_location << "  ("
              << r.checked << " checked, " << r.skipped_nonsmooth << " non-smooth skipped)\n";
    j.push_back({{"suite", s.name},
                 {"passed", r.passed},
                 {"max_rel_error", r.max_rel_error},
                 {"worst_location", r.worst_location},
                 {"checked", r.checked},
                 {"skipped_nonsmooth", r.skipped_nonsmooth},
                 {"nonfinite", r.nonfinite}});
  }
  write_json(fs::path(c.out) / "gradcheck.json", j);
  rec["passed"] = all_passed;
  return all_passed ? kOk : kVerifyFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DSANet video re-identification on a synthetic corpus"};
  app.require_subcommand(1);
  Common c;
  auto add_common = [&c](CLI::App* sub) {
    sub->add_option("--config", c.config_path, "settings file (key = value lines)");
    sub->add_option("--set", c.sets, "override, key=value (repeatable)");
    sub->add_option("--out", c.out, "output directory")->capture_default_str();
    sub->add_option("--seed", c.seed, "run seed (also seeds the corpus)");
    sub->add_option("--checkpoint", c.checkpoint, "checkpoint to resume from or evaluate");
  };

  auto* synth = app.add_subcommand("synth", "generate and save the synthetic corpus");
  std::optional<std::size_t> ids, cameras, tracklets, frames;
  synth->add_option("--ids", ids, "identities");
  synth->add_option("--cameras", cameras, "cameras");
  synth->add_option("--tracklets", tracklets, "tracklets per identity and camera");
  synth->add_option("--frames", frames, "frames per tracklet");
  auto* train = app.add_subcommand("train", "train, save a checkpoint and evaluate");
  auto* evalc = app.add_subcommand("eval", "evaluate a checkpoint (results.json, rankings.csv)");
  auto* probe = app.add_subcommand("probe", "linear probes on f_id and f_cam of a checkpoint");
  auto* ablate = app.add_subcommand("ablate", "train and evaluate the component ablation rows");
  std::string seeds = "0,1,2";
  std::vector<std::string> rows;
  ablate->add_option("--seeds", seeds, "comma-separated seeds")->capture_default_str();
  ablate->add_option("--row", rows, "custom row as a component list (repeatable); default: the standard rows");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference checks of every loss term");
  std::vector<std::string> only;
  gradcheck->add_option("--suite", only, "run only these suites");
  for (auto* sub : {synth, train, evalc, probe, ablate, gradcheck}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (command == "synth") {
      if (ids) c.sets.push_back("synth.ids=" + std::to_string(*ids));
      if (cameras) c.sets.push_back("synth.cameras=" + std::to_string(*cameras));
      if (tracklets) c.sets.push_back("synth.tracklets=" + std::to_string(*tracklets));
      if (frames) c.sets.push_back("synth.frames=" + std::to_string(*frames));
    }
    const config::Settings s = build_settings(c);
    RunRecord rec(command, c, s, argc, argv);
    int code = kOk;
    if (command == "synth") code = cmd_synth(c, s, rec);
    if (command == "train") code = cmd_train(c, s, rec);
    if (command == "eval") code = cmd_eval(c, rec);
    if (command == "probe") code = cmd_probe(c, rec);
    if (command == "ablate") code = cmd_ablate(c, s, seeds, rows, rec);
    if (command == "gradcheck") code = cmd_gradcheck(c, only, rec);
    rec.finish(code);
    return code;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const ArgumentError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kVerifyFailed;
  }
}
