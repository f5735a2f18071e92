#include "colotrace/exposure.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "colotrace/csv.hpp"
#include "colotrace/error.hpp"
#include "colotrace/parallel.hpp"

namespace colotrace {

SnapshotCache::SnapshotCache(RecordSet records, GraphParams params, unsigned threads)
    : records_(std::move(records)), params_(params), threads_(std::max(1u, threads)) {
  params_.validate();
}

const ContactGraph& SnapshotCache::at(Epoch t) {
  {
    std::lock_guard lock(mutex_);
    if (auto it = graphs_.find(t); it != graphs_.end()) return *it->second;
  }
  auto graph = std::make_unique<ContactGraph>(build_graph(records_, t, params_, threads_));
  std::lock_guard lock(mutex_);
  auto [it, inserted] = graphs_.emplace(t, std::move(graph));
  return *it->second;
}

void SnapshotCache::prepare(std::span<const Epoch> times) {
  std::vector<Epoch> missing;
  {
    std::lock_guard lock(mutex_);
    for (Epoch t : times)
      if (!graphs_.count(t)) missing.push_back(t);
  }
  std::sort(missing.begin(), missing.end());
  missing.erase(std::unique(missing.begin(), missing.end()), missing.end());
  // Parallel over snapshots; each build is single-threaded.
  std::vector<std::unique_ptr<ContactGraph>> built(missing.size());
  parallel_for(missing.size(), threads_, [&](std::size_t i) {
    built[i] = std::make_unique<ContactGraph>(build_graph(records_, missing[i], params_, 1));
  });
  std::lock_guard lock(mutex_);
  for (std::size_t i = 0; i < missing.size(); ++i) graphs_.emplace(missing[i], std::move(built[i]));
}

void ExposureParams::validate() const {
  if (tau_s <= 0) fail(ErrorCode::kParameter, fmt::format("tau_s must be > 0, got {}", tau_s));
  if (!(gamma >= 0.0) || std::isnan(gamma))
    fail(ErrorCode::kParameter, fmt::format("gamma must be >= 0, got {}", gamma));
}

double ExposureTimeline::at(Epoch t) const {
  auto it = std::upper_bound(samples.begin(), samples.end(), t,
                             [](Epoch e, const auto& s) { return e < s.first; });
  if (it == samples.begin()) return 0.0;
  return std::prev(it)->second;
}

namespace {

double pair_weight(const ContactGraph& g, std::string_view a, std::string_view b) {
  auto ia = g.users().find(a);
  auto ib = g.users().find(b);
  if (!ia || !ib) return 0.0;
  return g.weight(*ia, *ib);
}

// One positive neighbor's contribution to a user's score.
struct Contribution {
  Epoch start;  // t_j
  double weight;
};

// Contributions must be in canonical positive order.
ExposureTimeline assemble(std::string user, const std::vector<Contribution>& contributions,
                          Epoch tau_s, EpochRange study) {
  std::vector<Epoch> points{study.first, study.last};
  for (const auto& c : contributions) {
    if (study.contains(c.start)) points.push_back(c.start);
    if (study.contains(c.start + tau_s + 1)) points.push_back(c.start + tau_s + 1);
  }
  std::sort(points.begin(), points.end());
  points.erase(std::unique(points.begin(), points.end()), points.end());
  ExposureTimeline timeline{std::move(user), {}};
  timeline.samples.reserve(points.size());
  for (Epoch t : points) {
    double score = 0.0;
    for (const auto& c : contributions)
      if (t >= c.start && t <= c.start + tau_s) score += c.weight;
    timeline.samples.emplace_back(t, score);
  }
  return timeline;
}

}  // namespace

double exposure_score(std::string_view user, Epoch t, const TruthSet& truth,
                      const GraphProvider& graph_at, const ExposureParams& params) {
  params.validate();
  double score = 0.0;
  for (const auto& [other, t_j] : truth.positives()) {
    if (other == user || t < t_j || t > t_j + params.tau_s) continue;
    score += pair_weight(graph_at(t_j), user, other);
  }
  return score;
}

ExposureTimeline exposure_timeline(std::string_view user, const TruthSet& truth,
                                   const GraphProvider& graph_at, const ExposureParams& params,
                                   EpochRange study) {
  params.validate();
  std::vector<Contribution> contributions;
  for (const auto& [other, t_j] : truth.positives()) {
    if (other == user) continue;
    double w = pair_weight(graph_at(t_j), user, other);
    if (w != 0.0) contributions.push_back({t_j, w});
  }
  return assemble(std::string(user), contributions, params.tau_s, study);
}

std::vector<ExposureTimeline> exposure_timelines(const std::vector<std::string>& users,
                                                 const TruthSet& truth,
                                                 const GraphProvider& graph_at,
                                                 const ExposureParams& params, EpochRange study,
                                                 unsigned threads) {
  params.validate();
  std::map<std::string_view, std::size_t> slot;
  for (std::size_t i = 0; i < users.size(); ++i) slot.emplace(users[i], i);

  // Walk positives in canonical order so each user's list stays ordered.
  std::vector<std::vector<Contribution>> per_user(users.size());
  for (const auto& [positive, t_j] : truth.positives()) {
    const ContactGraph& g = graph_at(t_j);
    auto index = g.users().find(positive);
    if (!index) continue;
    for (const auto& n : g.neighbors(*index)) {
      auto it = slot.find(g.users().name(n.user));
      if (it != slot.end()) per_user[it->second].push_back({t_j, n.weight});
    }
  }

  std::vector<ExposureTimeline> out(users.size());
  parallel_for(users.size(), threads, [&](std::size_t i) {
    out[i] = assemble(users[i], per_user[i], params.tau_s, study);
  });
  return out;
}

std::optional<Epoch> first_crossing(const ExposureTimeline& timeline, double gamma) {
  for (const auto& [epoch, score] : timeline.samples)
    if (score >= gamma) return epoch;
  return std::nullopt;
}

std::string timelines_to_csv(std::span<const ExposureTimeline> timelines) {
  std::string out = "user_id,epoch,score\n";
  for (const auto& timeline : timelines) {
    std::optional<double> previous;
    for (const auto& [epoch, score] : timeline.samples) {
      if (previous && *previous == score) continue;
      out += fmt::format("{},{},{}\n", csv::escape(timeline.user), epoch, score);
      previous = score;
    }
  }
  return out;
}

}  // namespace colotrace
