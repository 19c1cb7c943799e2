#pragma once

// Brute-force reference implementations used as test oracles. They are
// written without sorting or mining shortcuts so that they share no logic
// with the library code they check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace dsanet::oracle {

struct Retrieval {
  std::vector<double> ap;  // NaN when excluded
  std::vector<double> cmc;  // length ng
  double mAP = 0.0;
  std::size_t valid = 0;
  std::size_t excluded = 0;
};

// D is row-major [nq, ng]. Rank of gallery j for query i is 1 + the number of
// kept entries that come before it: smaller distance, or equal distance and a
// lower gallery index.
inline Retrieval retrieval(const std::vector<double>& D, std::size_t nq, std::size_t ng, const std::vector<int>& qid,
                           const std::vector<int>& gid, const std::vector<int>& qcam, const std::vector<int>& gcam) {
  Retrieval r;
  r.cmc.assign(ng, 0.0);
  double ap_sum = 0.0;
  for (std::size_t i = 0; i < nq; ++i) {
    auto kept = [&](std::size_t j) { return !(gid[j] == qid[i] && gcam[j] == qcam[i]); };
    auto before = [&](std::size_t k, std::size_t j) {
      const double a = D[i * ng + k], b = D[i * ng + j];
      return a < b || (a == b && k < j);
    };
    std::vector<std::size_t> match_rank;  // 1-based ranks of correct matches
    for (std::size_t j = 0; j < ng; ++j) {
      if (!kept(j) || gid[j] != qid[i]) continue;
      std::size_t rank = 1;
      for (std::size_t k = 0; k < ng; ++k)
        if (k != j && kept(k) && before(k, j)) ++rank;
      match_rank.push_back(rank);
    }
    if (match_rank.empty()) {
      r.ap.push_back(std::nan(""));
      ++r.excluded;
      continue;
    }
    // precision at each hit, visited in rank order
    std::vector<std::size_t> sorted_ranks;
    for (std::size_t want = 1; sorted_ranks.size() < match_rank.size(); ++want)
      for (auto m : match_rank)
        if (m == want) sorted_ranks.push_back(m);
    double psum = 0.0;
    for (std::size_t h = 0; h < sorted_ranks.size(); ++h)
      psum += static_cast<double>(h + 1) / static_cast<double>(sorted_ranks[h]);
    const double ap = psum / static_cast<double>(sorted_ranks.size());
    r.ap.push_back(ap);
    ap_sum += ap;
    ++r.valid;
    for (std::size_t k = sorted_ranks.front() - 1; k < ng; ++k) r.cmc[k] += 1.0;
  }
  if (r.valid) {
    r.mAP = ap_sum / static_cast<double>(r.valid);
    for (auto& v : r.cmc) v /= static_cast<double>(r.valid);
  }
  return r;
}

// Mean over anchors of the largest hinge over every (positive, negative) pair,
// which equals the hardest-positive / hardest-negative form.
inline double triplet_exhaustive(const std::vector<double>& f, std::size_t b, std::size_t c, const std::vector<int>& y,
                                 double margin) {
  auto dist = [&](std::size_t i, std::size_t j) {
    double s = 0;
    for (std::size_t k = 0; k < c; ++k) s += (f[i * c + k] - f[j * c + k]) * (f[i * c + k] - f[j * c + k]);
    return std::sqrt(s);
  };
  double total = 0.0;
  for (std::size_t a = 0; a < b; ++a) {
    double worst = 0.0;
    for (std::size_t p = 0; p < b; ++p) {
      if (p == a || y[p] != y[a]) continue;
      for (std::size_t n = 0; n < b; ++n) {
        if (y[n] == y[a]) continue;
        worst = std::max(worst, dist(a, p) - dist(a, n) + margin);
      }
    }
    total += worst;
  }
  return total / static_cast<double>(b);
}

}  // namespace dsanet::oracle
