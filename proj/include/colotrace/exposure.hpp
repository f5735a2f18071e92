#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "colotrace/graph.hpp"
#include "colotrace/truth.hpp"

namespace colotrace {

using GraphProvider = std::function<const ContactGraph&(Epoch)>;

// Lazily built, shared snapshots G(t) over one record set.
class SnapshotCache {
 public:
  SnapshotCache(RecordSet records, GraphParams params, unsigned threads = 1);

  // Thread-safe; the returned reference stays valid for the cache lifetime.
  const ContactGraph& at(Epoch t);
  // Builds every missing snapshot up front.
  void prepare(std::span<const Epoch> times);

  GraphProvider provider() {
    return [this](Epoch t) -> const ContactGraph& { return at(t); };
  }
  const RecordSet& records() const { return records_; }
  const GraphParams& params() const { return params_; }

 private:
  RecordSet records_;
  GraphParams params_;
  unsigned threads_;
  std::mutex mutex_;
  std::map<Epoch, std::unique_ptr<ContactGraph>> graphs_;
};

struct ExposureParams {
  Epoch tau_s = 7 * 96;
  double gamma = 0.0;

  void validate() const;
};

// Piecewise-constant s_i(t), sampled at the study endpoints and at every
// epoch where a positive neighbor enters (t_j) or leaves (t_j + tau_s + 1)
// the window.
struct ExposureTimeline {
  std::string user;
  std::vector<std::pair<Epoch, double>> samples;  // strictly increasing epochs

  // Score at t: the last sample at or before t (0 before the first).
  double at(Epoch t) const;
};

// s_i(t) = sum over positives j with t in [t_j, t_j + tau_s] of w_ij(t_j),
// w taken from the snapshot at t_j. Terms are added in (t_j, user) order.
double exposure_score(std::string_view user, Epoch t, const TruthSet& truth,
                      const GraphProvider& graph_at, const ExposureParams& params);

ExposureTimeline exposure_timeline(std::string_view user, const TruthSet& truth,
                                   const GraphProvider& graph_at, const ExposureParams& params,
                                   EpochRange study);

// Batch form: one pass over every positive's neighborhood, then per-user
// timelines in parallel. Matches exposure_timeline exactly.
std::vector<ExposureTimeline> exposure_timelines(const std::vector<std::string>& users,
                                                 const TruthSet& truth,
                                                 const GraphProvider& graph_at,
                                                 const ExposureParams& params, EpochRange study,
                                                 unsigned threads = 1);

// Earliest sample epoch with score >= gamma.
std::optional<Epoch> first_crossing(const ExposureTimeline& timeline, double gamma);

// CSV user_id,epoch,score keeping only samples where the score changes
// (plus each user's first sample).
std::string timelines_to_csv(std::span<const ExposureTimeline> timelines);

}  // namespace colotrace
