#include "dsanet/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <random>

#include "dsanet/dstn.hpp"
#include "dsanet/engine.hpp"
#include "dsanet/errors.hpp"
#include "dsanet/ops.hpp"

namespace dsanet::eval {

std::vector<std::size_t> clip_starts(std::size_t length, std::size_t T) {
  if (length == 0) throw ArgumentError("empty tracklet");
  if (T == 0) throw ArgumentError("clip length T must be >= 1");
  if (length <= T) return {0};
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + T <= length; s += T) starts.push_back(s);
  if (length % T != 0) starts.push_back(length - T);
  return starts;
}

namespace {

// [L,3,H,W] -> [n_clips, T, 3, H, W]; tracklets shorter than T repeat their last frame.
Tensor make_clips(const Tensor& frames, std::size_t T) {
  if (frames.rank() != 4 || frames.dim(1) != 3) throw ShapeError("tracklet frames must be [L,3,H,W]");
  const std::size_t L = frames.dim(0);
  const auto starts = clip_starts(L, T);
  const std::size_t per = frames.numel() / L;
  Tensor out(Shape{starts.size(), T, 3, frames.dim(2), frames.dim(3)});
  for (std::size_t c = 0; c < starts.size(); ++c) {
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t src = std::min(starts[c] + t, L - 1);
      std::copy_n(frames.ptr() + src * per, per, out.ptr() + (c * T + t) * per);
    }
  }
  return out;
}

Tensor row_mean(const Tensor& m) {
  const std::size_t n = m.dim(0), c = m.dim(1);
  Tensor out(Shape{c}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < c; ++k) out[k] += m[i * c + k];
  }
  for (std::size_t k = 0; k < c; ++k) out[k] /= static_cast<double>(n);
  return out;
}

}  // namespace

ClipFeatures extract_clip_features(DsaNet& model, const Tensor& frames, std::size_t T) {
  if (frames.rank() >= 1 && frames.dim(0) == 0) throw ArgumentError("empty tracklet");
  NoGradGuard no_grad;
  FeatureBundle fb = model.forward(make_clips(frames, T), false);
  ClipFeatures out;
  out.f_id = row_mean(fb.f_id.value());
  if (fb.f_cam.defined()) out.f_cam = row_mean(fb.f_cam.value());
  return out;
}

Tensor extract_clip_feature(DsaNet& model, const Tensor& frames, std::size_t T) {
  return extract_clip_features(model, frames, T).f_id;
}

GalleryIndex build_index(DsaNet& model, const data::Dataset& dataset, data::Split split, std::size_t T) {
  GalleryIndex idx;
  std::vector<Tensor> ids, cams;
  for (auto i : dataset.indices(split)) {
    const auto& t = dataset.tracklets[i];
    ClipFeatures f = extract_clip_features(model, t.frames, T);
    ids.push_back(std::move(f.f_id));
    if (!f.f_cam.empty()) cams.push_back(std::move(f.f_cam));
    idx.person_ids.push_back(t.person_id);
    idx.camera_ids.push_back(t.camera_id);
    idx.tracklets.push_back(i);
  }
  if (ids.empty()) throw ArgumentError("split '" + data::to_string(split) + "' is empty");
  idx.embeddings = stack(ids);
  if (!cams.empty()) idx.camera_embeddings = stack(cams);
  return idx;
}

Tensor cosine_distance_matrix(const Tensor& q, const Tensor& g, std::size_t* zero_rows) {
  if (q.rank() != 2 || g.rank() != 2) throw ShapeError("cosine_distance_matrix: expects [Nq,c] and [Ng,c]");
  if (q.dim(1) != g.dim(1)) {
    throw ShapeError("cosine_distance_matrix: feature dims differ (" + std::to_string(q.dim(1)) + " vs " +
                     std::to_string(g.dim(1)) + ")");
  }
  const std::size_t nq = q.dim(0), ng = g.dim(0), c = q.dim(1);
  auto norms = [c](const Tensor& m) {
    std::vector<double> n(m.dim(0));
    for (std::size_t i = 0; i < n.size(); ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < c; ++k) s += m[i * c + k] * m[i * c + k];
      n[i] = std::sqrt(s);
    }
    return n;
  };
  const auto qn = norms(q), gn = norms(g);
  std::size_t zeros = 0;
  for (double v : qn) zeros += v == 0.0;
  for (double v : gn) zeros += v == 0.0;
  if (zeros) std::clog << "cosine_distance_matrix: " << zeros << " zero vector(s); their distances are set to 1\n";
  if (zero_rows) *zero_rows = zeros;

  Tensor d(Shape{nq, ng});
  for (std::size_t i = 0; i < nq; ++i) {
    for (std::size_t j = 0; j < ng; ++j) {
      if (qn[i] == 0.0 || gn[j] == 0.0) {
        d[i * ng + j] = 1.0;
        continue;
      }
      double dot = 0.0;
      for (std::size_t k = 0; k < c; ++k) dot += q[i * c + k] * g[j * c + k];
      d[i * ng + j] = 1.0 - std::clamp(dot / (qn[i] * gn[j]), -1.0, 1.0);
    }
  }
  return d;
}

double RetrievalResult::cmc_at(std::size_t rank) const {
  if (rank == 0) throw ArgumentError("cmc_at: ranks are 1-based");
  if (cmc.empty()) return 0.0;
  return cmc[std::min(rank, cmc.size()) - 1];
}

nlohmann::json RetrievalResult::to_json() const {
  nlohmann::json j;
  j["mAP"] = mAP;
  for (std::size_t k : {1, 5, 10, 20}) j["CMC@" + std::to_string(k)] = cmc_at(k);
  j["num_queries"] = num_queries;
  j["excluded_queries"] = excluded;
  return j;
}

RetrievalResult cmc_map(const Tensor& D, std::span<const int> qid, std::span<const int> gid,
                        std::span<const int> qcam, std::span<const int> gcam) {
  if (D.rank() != 2) throw ShapeError("cmc_map: distances must be [Nq,Ng]");
  const std::size_t nq = D.dim(0), ng = D.dim(1);
  if (qid.size() != nq || qcam.size() != nq || gid.size() != ng || gcam.size() != ng) {
    throw ShapeError("cmc_map: label counts do not match the distance matrix");
  }
  RetrievalResult r;
  r.cmc.assign(ng, 0.0);
  r.rankings.resize(nq);
  r.ap.assign(nq, std::numeric_limits<double>::quiet_NaN());
  r.valid.assign(nq, false);
  double ap_sum = 0.0;

  std::vector<std::size_t> order(ng);
  for (std::size_t i = 0; i < nq; ++i) {
    std::iota(order.begin(), order.end(), 0);
    const double* row = D.ptr() + i * ng;
    std::stable_sort(order.begin(), order.end(), [row](std::size_t a, std::size_t b) { return row[a] < row[b]; });
    auto& ranking = r.rankings[i];
    for (auto j : order) {
      if (gid[j] == qid[i] && gcam[j] == qcam[i]) continue;
      ranking.push_back(j);
    }
    std::size_t hits = 0, first = ng;
    double precision_sum = 0.0;
    for (std::size_t pos = 0; pos < ranking.size(); ++pos) {
      if (gid[ranking[pos]] != qid[i]) continue;
      if (hits == 0) first = pos;
      ++hits;
      precision_sum += static_cast<double>(hits) / static_cast<double>(pos + 1);
    }
    if (hits == 0) {
      ++r.excluded;
      continue;
    }
    r.valid[i] = true;
    r.ap[i] = precision_sum / static_cast<double>(hits);
    ap_sum += r.ap[i];
    ++r.num_queries;
    for (std::size_t k = first; k < ng; ++k) r.cmc[k] += 1.0;
  }
  if (r.excluded) std::clog << "cmc_map: " << r.excluded << " query(ies) without a valid match excluded\n";
  if (r.num_queries) {
    r.mAP = ap_sum / static_cast<double>(r.num_queries);
    for (auto& v : r.cmc) v /= static_cast<double>(r.num_queries);
  }
  return r;
}

void write_rankings_csv(std::ostream& os, const RetrievalResult& r, const GalleryIndex& query,
                        const GalleryIndex& gallery, std::size_t top) {
  os << "query_tracklet,query_person,query_camera,rank,gallery_tracklet,gallery_person,gallery_camera,match\n";
  for (std::size_t i = 0; i < r.rankings.size(); ++i) {
    const auto& ranking = r.rankings[i];
    for (std::size_t k = 0; k < std::min(top, ranking.size()); ++k) {
      const auto j = ranking[k];
      os << query.tracklets[i] << ',' << query.person_ids[i] << ',' << query.camera_ids[i] << ',' << k + 1 << ','
         << gallery.tracklets[j] << ',' << gallery.person_ids[j] << ',' << gallery.camera_ids[j] << ','
         << (gallery.person_ids[j] == query.person_ids[i] ? 1 : 0) << '\n';
    }
  }
}

ProbeResult probe_features(const Tensor& X, std::span<const int> labels, const ProbeConfig& cfg) {
  if (X.rank() != 2) throw ShapeError("probe_features: embeddings must be [N,c]");
  const std::size_t n = X.dim(0), c = X.dim(1);
  if (labels.size() != n) throw ShapeError("probe_features: label count mismatch");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < n; ++i) by_class[labels[i]].push_back(i);
  if (by_class.size() < 2) throw ArgumentError("probe_features: need at least 2 classes");
  if (cfg.epochs == 0 || cfg.batch == 0) throw ArgumentError("probe_features: epochs and batch must be >= 1");

  std::map<int, int> class_index;
  for (const auto& [label, rows] : by_class) class_index[label] = static_cast<int>(class_index.size());

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> train, test;
  for (auto& [label, rows] : by_class) {
    auto shuffled = rows;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const auto n_train = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(cfg.train_fraction * static_cast<double>(rows.size()))));
    for (std::size_t k = 0; k < shuffled.size(); ++k) (k < n_train ? train : test).push_back(shuffled[k]);
  }

  // standardize with training statistics, then append a constant bias column
  std::vector<double> mu(c, 0.0), sd(c, 0.0);
  for (auto i : train) {
    for (std::size_t k = 0; k < c; ++k) mu[k] += X[i * c + k];
  }
  for (auto& m : mu) m /= static_cast<double>(train.size());
  for (auto i : train) {
    for (std::size_t k = 0; k < c; ++k) sd[k] += (X[i * c + k] - mu[k]) * (X[i * c + k] - mu[k]);
  }
  for (auto& s : sd) s = std::sqrt(s / static_cast<double>(train.size())) + 1e-8;
  auto features = [&](const std::vector<std::size_t>& rows) {
    Tensor f(Shape{rows.size(), c + 1});
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::size_t k = 0; k < c; ++k) f[r * (c + 1) + k] = (X[rows[r] * c + k] - mu[k]) / sd[k];
      f[r * (c + 1) + c] = 1.0;
    }
    return f;
  };
  auto targets = [&](const std::vector<std::size_t>& rows) {
    std::vector<int> y;
    for (auto i : rows) y.push_back(class_index.at(labels[i]));
    return y;
  };

  const std::size_t K = class_index.size();
  Var W(Tensor(Shape{K, c + 1}, 0.0), true);
  engine::AdamState state = engine::zero_state({W.value()});
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < order.size(); b += cfg.batch) {
      std::vector<std::size_t> rows;
      for (std::size_t k = b; k < std::min(order.size(), b + cfg.batch); ++k) rows.push_back(train[order[k]]);
      W.zero_grad();
      const auto y = targets(rows);
      Var loss = ops::cross_entropy(ops::linear(Var(features(rows)), W), y);
      loss.backward();
      auto res = engine::adam_step({W.value()}, {W.grad()}, state, cfg.lr, 0.0);
      if (res.rejected) throw NumericError("probe_features: " + res.reason);
      W.mutable_value() = std::move(res.params[0]);
      state = std::move(res.state);
    }
  }

  auto accuracy = [&](const std::vector<std::size_t>& rows) {
    if (rows.empty()) return 0.0;
    NoGradGuard no_grad;
    const Tensor logits = ops::linear(Var(features(rows)), W).value();
    const auto y = targets(rows);
    std::size_t correct = 0;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const double* l = logits.ptr() + r * K;
      const auto pred = static_cast<int>(std::max_element(l, l + K) - l);
      correct += pred == y[r];
    }
    return static_cast<double>(correct) / static_cast<double>(rows.size());
  };
  ProbeResult res;
  res.num_classes = K;
  res.chance = 1.0 / static_cast<double>(K);
  res.train_size = train.size();
  res.test_size = test.size();
  res.train_accuracy = accuracy(train);
  res.test_accuracy = accuracy(test);
  return res;
}

double mean_positive_cosine(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || a.shape() != b.shape()) throw ShapeError("mean_positive_cosine: expects two [N,c] tensors");
  const std::size_t n = a.dim(0), c = a.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      dot += a[i * c + k] * b[i * c + k];
      na += a[i * c + k] * a[i * c + k];
      nb += b[i * c + k] * b[i * c + k];
    }
    if (na > 0.0 && nb > 0.0) total += std::max(dot / std::sqrt(na * nb), 0.0);
  }
  return total / static_cast<double>(n);
}

namespace {

Tensor first_clip(const Tensor& frames, std::size_t T) {
  Tensor clips = make_clips(frames, T);
  const std::size_t per = clips.numel() / clips.dim(0);
  Shape s = clips.shape();
  s[0] = 1;
  Tensor out(s);
  std::copy_n(clips.ptr(), per, out.ptr());
  return out;
}

}  // namespace

void dump_attention(DsaNet& model, const data::Dataset& dataset, std::size_t T, const std::filesystem::path& dir) {
  if (!model.config().components.tlm) return;
  NoGradGuard no_grad;
  for (auto i : dataset.indices(data::Split::Query)) {
    const auto& t = dataset.tracklets[i];
    FeatureBundle fb = model.forward(first_clip(t.frames, T), false);
    dstn::save(dir / ("id_" + std::to_string(t.person_id) + "_cam_" + std::to_string(t.camera_id) + "_tracklet_" +
                      std::to_string(t.index) + ".dstn"),
               fb.tlm->Z_attn.value());
  }
}

void dump_frame_weights(DsaNet& model, const data::Dataset& dataset, std::size_t T,
                        const std::filesystem::path& path) {
  if (!model.config().components.fwg) return;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write " + path.string());
  NoGradGuard no_grad;
  for (auto i : dataset.indices(data::Split::Train)) {
    const auto& t = dataset.tracklets[i];
    const auto cls = std::find(dataset.train_ids.begin(), dataset.train_ids.end(), t.person_id) -
                     dataset.train_ids.begin();
    FeatureBundle fb = model.forward(first_clip(t.frames, T), false);
    const int label = static_cast<int>(cls);
    const Tensor w = fwg::pseudo_labels(fb.f_t.value(), std::span<const int>(&label, 1),
                                        model.id_classifier().value(), model.config().pseudo);
    const auto& wh = fb.fwg->weights.value();
    nlohmann::json line{{"tracklet", i},
                        {"person_id", t.person_id},
                        {"camera_id", t.camera_id},
                        {"w", std::vector<double>(w.data().begin(), w.data().end())},
                        {"w_hat", std::vector<double>(wh.data().begin(), wh.data().end())}};
    os << line.dump() << '\n';
  }
}

}  // namespace dsanet::eval
