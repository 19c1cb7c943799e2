#include "dsanet/pipeline.hpp"

#include <algorithm>
#include <iomanip>
#include <ostream>

#include "dsanet/errors.hpp"

namespace dsanet::pipeline {

data::Dataset load_dataset(const config::RunConfig& rc) {
  if (!rc.corpus.empty()) return data::load_corpus(rc.corpus);
  return data::generate_corpus(rc.synth);
}

TrainResult train(const config::RunConfig& rc, const data::Dataset& ds, std::ostream* metrics) {
  TrainResult out;
  out.model = std::make_unique<DsaNet>(config::model_for(rc, ds));
  engine::Trainer tr(*out.model, ds, rc.train, rc.loss, rc.sampler, rc.augment, rc.augment_config);
  out.trace = tr.fit(metrics);
  out.rejected_steps = tr.rejected_steps();
  return out;
}

Evaluation evaluate(DsaNet& model, const data::Dataset& ds, std::size_t T) {
  Evaluation ev;
  ev.query = eval::build_index(model, ds, data::Split::Query, T);
  ev.gallery = eval::build_index(model, ds, data::Split::Gallery, T);
  const Tensor D = eval::cosine_distance_matrix(ev.query.embeddings, ev.gallery.embeddings);
  ev.retrieval = eval::cmc_map(D, ev.query.person_ids, ev.gallery.person_ids, ev.query.camera_ids,
                               ev.gallery.camera_ids);
  return ev;
}

namespace {

Tensor stack_rows(const Tensor& a, const Tensor& b) {
  Tensor out(Shape{a.dim(0) + b.dim(0), a.dim(1)});
  std::copy(a.data().begin(), a.data().end(), out.ptr());
  std::copy(b.data().begin(), b.data().end(), out.ptr() + a.numel());
  return out;
}

template <class T>
std::vector<T> join(const std::vector<T>& a, const std::vector<T>& b) {
  std::vector<T> out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

nlohmann::json probe_json(const eval::ProbeResult& p) {
  return {{"test_accuracy", p.test_accuracy}, {"train_accuracy", p.train_accuracy}, {"chance", p.chance},
          {"classes", p.num_classes},         {"test_size", p.test_size}};
}

}  // namespace

nlohmann::json DisentangleReport::to_json() const {
  return {{"mean_positive_cosine", mean_positive_cosine},
          {"camera_probe_on_f_cam", probe_json(camera_on_fcam)},
          {"camera_probe_on_f_id", probe_json(camera_on_fid)},
          {"id_probe_on_f_id", probe_json(id_on_fid)}};
}

DisentangleReport disentangle_report(const Evaluation& ev, const eval::ProbeConfig& probe) {
  if (ev.query.camera_embeddings.empty()) throw ConfigError("disentanglement report needs the camera branch");
  const Tensor fid = stack_rows(ev.query.embeddings, ev.gallery.embeddings);
  const Tensor fcam = stack_rows(ev.query.camera_embeddings, ev.gallery.camera_embeddings);
  const auto pid = join(ev.query.person_ids, ev.gallery.person_ids);
  const auto cam = join(ev.query.camera_ids, ev.gallery.camera_ids);
  DisentangleReport r;
  r.mean_positive_cosine = eval::mean_positive_cosine(fid, fcam);
  r.camera_on_fcam = eval::probe_features(fcam, cam, probe);
  r.camera_on_fid = eval::probe_features(fid, cam, probe);
  r.id_on_fid = eval::probe_features(fid, pid, probe);
  return r;
}

const std::vector<AblationRow>& table_rows() {
  static const std::vector<AblationRow> rows = {
      {"baseline", Components::none()},
      {"+TLM w/o L_lr", Components::parse("tlm,l_dis,l_cam")},
      {"+TLM", Components::parse("tlm,l_lr,l_dis,l_cam")},
      {"+FWG w/o L_w", Components::parse("fwg,l_dis,l_cam")},
      {"+FWG", Components::parse("fwg,l_w,l_dis,l_cam")},
      {"+TLM +FWG w/o L_ic", Components::parse("tlm,l_lr,fwg,l_w,l_dis,l_cam")},
      {"+TLM +FWG", Components::parse("tlm,l_lr,fwg,l_w,l_ic,l_dis,l_cam")},
      {"+TLM +FWG +SAO", Components::all()},
  };
  return rows;
}

AblationOutcome run_row(const config::Settings& base, const AblationRow& row, std::span<const std::uint64_t> seeds) {
  AblationOutcome out;
  out.row = row;
  for (auto seed : seeds) {
    config::Settings s = base;
    s.set("seed", std::to_string(seed));
    s.set("synth.seed", std::to_string(seed));
    s.set("model.components", row.components.to_string().empty() ? "none" : row.components.to_string());
    const auto rc = config::resolve(s);
    const auto ds = load_dataset(rc);
    auto trained = train(rc, ds);
    const auto ev = evaluate(*trained.model, ds, rc.eval_t());
    out.seeds.push_back(seed);
    out.map.push_back(ev.retrieval.mAP);
    out.rank1.push_back(ev.retrieval.cmc_at(1));
  }
  const double n = static_cast<double>(std::max<std::size_t>(out.map.size(), 1));
  for (double v : out.map) out.mean_map += v / n;
  for (double v : out.rank1) out.mean_rank1 += v / n;
  return out;
}

void write_ablation_csv(std::ostream& os, const std::vector<AblationOutcome>& rows) {
  os << "configuration,components,rank1,mAP,seeds\n";
  os << std::fixed << std::setprecision(2);
  for (const auto& r : rows) {
    std::string seeds;
    for (auto s : r.seeds) seeds += (seeds.empty() ? "" : " ") + std::to_string(s);
    os << '"' << r.row.label << "\",\"" << r.row.components.to_string() << "\"," << 100.0 * r.mean_rank1 << ','
       << 100.0 * r.mean_map << ',' << seeds << '\n';
  }
}

}  // namespace dsanet::pipeline
