#pragma once

// Direct transcriptions of the definitions, written for clarity rather than
// speed. Used to cross-check the optimized implementations.

#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "colotrace/ingest.hpp"
#include "colotrace/metrics.hpp"
#include "colotrace/truth.hpp"

namespace oracle {

using colotrace::Epoch;

// Dense presence cube over the records' users, APs and epochs.
class Presence {
 public:
  explicit Presence(const colotrace::RecordSet& records) : records_(records) {
    auto range = records.epoch_range();
    first_ = range ? range->first : 0;
    last_ = range ? range->second : -1;
    users_ = records.users().size();
    aps_ = records.aps().size();
    cube_.assign(users_ * aps_ * static_cast<std::size_t>(last_ - first_ + 1), false);
    for (const auto& r : records.records()) cube_[index(r.user, r.ap, r.epoch)] = true;
  }

  bool at(std::size_t user, std::size_t ap, Epoch e) const {
    if (e < first_ || e > last_) return false;
    return cube_[index(user, ap, e)];
  }

  // Users on (ap, e), counted one by one.
  int crowd(std::size_t ap, Epoch e) const {
    int n = 0;
    for (std::size_t u = 0; u < users_; ++u) n += at(u, ap, e);
    return n;
  }

  std::size_t users() const { return users_; }
  std::size_t aps() const { return aps_; }
  const colotrace::RecordSet& records() const { return records_; }

 private:
  std::size_t index(std::size_t user, std::size_t ap, Epoch e) const {
    return (user * aps_ + ap) * static_cast<std::size_t>(last_ - first_ + 1) +
           static_cast<std::size_t>(e - first_);
  }

  const colotrace::RecordSet& records_;
  Epoch first_ = 0;
  Epoch last_ = -1;
  std::size_t users_ = 0;
  std::size_t aps_ = 0;
  std::vector<bool> cube_;
};

// w_ab(t) by looping over every AP and every epoch of the window.
inline double weight(const Presence& p, std::size_t a, std::size_t b, Epoch t, Epoch tau_g,
                     double alpha) {
  double w = 0.0;
  for (std::size_t k = 0; k < p.aps(); ++k)
    for (Epoch e = t - tau_g; e <= t; ++e)
      if (p.at(a, k, e) && p.at(b, k, e)) w += 1.0 / std::pow(p.crowd(k, e), alpha);
  return w;
}

struct Graph {
  std::set<std::size_t> nodes;
  std::map<std::pair<std::size_t, std::size_t>, double> edges;  // a < b, weight > 0
};

// Quadratic over user pairs.
inline Graph graph(const Presence& p, Epoch t, Epoch tau_g, double alpha) {
  Graph g;
  for (std::size_t u = 0; u < p.users(); ++u)
    for (std::size_t k = 0; k < p.aps(); ++k)
      for (Epoch e = t - tau_g; e <= t; ++e)
        if (p.at(u, k, e)) g.nodes.insert(u);
  for (std::size_t a = 0; a < p.users(); ++a)
    for (std::size_t b = a + 1; b < p.users(); ++b) {
      double w = weight(p, a, b, t, tau_g, alpha);
      if (w > 0) g.edges[{a, b}] = w;
    }
  return g;
}

// Weight between two named users at t; 0 when either is absent.
inline double named_weight(const Presence& p, const std::string& a, const std::string& b, Epoch t,
                           const colotrace::GraphParams& params) {
  auto ia = p.records().users().find(a);
  auto ib = p.records().users().find(b);
  if (!ia || !ib) return 0.0;
  return weight(p, *ia, *ib, t, params.tau_g, params.alpha);
}

struct PpvCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::map<std::size_t, std::size_t> histogram;
};

// Contact PPV counts over every (i, j) pair with the snapshot at t_i.
inline PpvCounts contact_ppv(const Presence& p, const colotrace::TruthSet& truth,
                             const colotrace::EvalParams& params) {
  PpvCounts counts;
  for (const auto& [i, li] : truth.labels) {
    if (!li.positive) continue;
    std::size_t plausible = 0;
    for (const auto& [j, lj] : truth.labels) {
      if (j == i) continue;
      bool still_in = !(lj.positive && lj.t_positive <= li.t_positive);
      if (!still_in) continue;
      double w = named_weight(p, i, j, li.t_positive, params.graph);
      if (w <= 0 || w < params.gamma) continue;
      bool hit = lj.positive && lj.t_positive > li.t_positive &&
                 lj.t_positive <= li.t_positive + params.tau_p;
      if (hit) {
        ++counts.tp;
        ++plausible;
      } else {
        ++counts.fp;
      }
    }
    ++counts.histogram[plausible];
  }
  return counts;
}

inline double ppv_rand(const colotrace::TruthSet& truth, Epoch tau_p) {
  double sum = 0.0;
  int positives = 0;
  for (const auto& [i, li] : truth.labels) {
    if (!li.positive) continue;
    ++positives;
    int later = 0;
    int remaining = 0;
    for (const auto& [j, lj] : truth.labels) {
      if (lj.positive && lj.t_positive <= li.t_positive) continue;
      ++remaining;
      if (lj.positive && lj.t_positive <= li.t_positive + tau_p) ++later;
    }
    if (remaining > 0) sum += static_cast<double>(later) / remaining;
  }
  return sum / positives;
}

// s_i(t) straight from the definition.
inline double exposure(const Presence& p, const std::string& user, Epoch t,
                       const colotrace::TruthSet& truth, const colotrace::GraphParams& graph,
                       Epoch tau_s) {
  double s = 0.0;
  for (const auto& [j, lj] : truth.positives())
    if (j != user && lj <= t && t <= lj + tau_s) s += named_weight(p, user, j, lj, graph);
  return s;
}

// The four prediction rules applied literally.
inline colotrace::Outcome classify(std::optional<Epoch> crossing, const colotrace::Label& label,
                                   Epoch tau_p) {
  using colotrace::Outcome;
  if (!crossing) return label.positive ? Outcome::kFalseNegative : Outcome::kTrueNegative;
  if (!label.positive) return Outcome::kFalsePositive;
  if (*crossing > label.t_positive) return Outcome::kExcluded;
  if (label.t_positive - *crossing <= tau_p) return Outcome::kTruePositive;
  return Outcome::kFalsePositive;
}

// Wilson score interval with the 95% normal quantile written out.
inline std::pair<double, double> wilson95(double s, double n) {
  const double z = 1.959963984540054;
  double phat = s / n;
  double denom = 1 + z * z / n;
  double center = (phat + z * z / (2 * n)) / denom;
  double half = z * std::sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom;
  return {center - half, center + half};
}

}  // namespace oracle
