#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "colotrace/exposure.hpp"
#include "colotrace/graph.hpp"
#include "colotrace/truth.hpp"

namespace colotrace {

struct EvalParams {
  double gamma = 1.0;
  Epoch tau_p = 7 * 96;
  GraphParams graph;
  Epoch tau_s = 7 * 96;

  void validate() const;
};

struct WilsonInterval {
  double lo;
  double hi;
};

// Wilson score interval for a binomial proportion. Throws
// Error(kParameter) unless 0 <= successes <= trials and trials > 0.
WilsonInterval wilson_interval(std::int64_t successes, std::int64_t trials,
                               double confidence = 0.95);

struct CaseResult {
  std::string user;
  Epoch t_positive;
  std::size_t predicted;   // contacts with w >= gamma still in the study
  std::size_t plausible;   // of those, positive within (t_i, t_i + tau_p]
};

struct ValidationReport {
  EvalParams params;
  std::optional<double> ppv;  // empty when no contacts were predicted
  double ppv_rand = 0.0;
  double scale = 0.0;
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::optional<WilsonInterval> wilson_95;
  std::size_t positives = 0;
  std::size_t population = 0;
  std::vector<CaseResult> per_case;  // in (t_positive, user) order
};

// Contact-level positive predictive value. For each positive i, neighbors
// j of i in G(t_i) with w_ij >= gamma and still in the study at t_i are
// predicted; a prediction is a TP when t_i < t_j <= t_i + tau_p. Users
// leave the study at their positive epoch; only labeled users count.
// Throws Error(kData) when truth has no positives.
ValidationReport contact_ppv(const TruthSet& truth, const GraphProvider& graph_at,
                             const EvalParams& params);

// PPV of contacts chosen uniformly from those still in the study.
double ppv_rand(const TruthSet& truth, Epoch tau_p);

// Histogram of plausible transmissions R_i: bin -> number of positives.
std::map<std::size_t, std::size_t> plausible_transmissions(const TruthSet& truth,
                                                           const GraphProvider& graph_at,
                                                           const EvalParams& params);

enum class Outcome { kTruePositive, kFalsePositive, kTrueNegative, kFalseNegative, kExcluded };

// Per-user outcome of predicting by first crossing of gamma.
Outcome classify_user(const std::optional<Epoch>& crossing, const Label& label, Epoch tau_p);

struct RocPoint {
  double gamma = 0.0;
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t tn = 0;
  std::int64_t fn = 0;
  std::int64_t excluded = 0;
  // Computed exactly as tp/(tp+fp) and fn/(tp+fn); the first is what is
  // conventionally called precision. Empty when the denominator is zero.
  std::optional<double> tpr;
  std::optional<double> mdr;
};

// One point per gamma over every labeled user. Throws Error(kData) if a
// labeled user has no timeline.
std::vector<RocPoint> exposure_roc(const TruthSet& truth,
                                   std::span<const ExposureTimeline> timelines,
                                   std::span<const double> gammas, Epoch tau_p);

struct RiskRatioPoint {
  Epoch date = 0;
  std::optional<double> ratio;  // empty when undefined
  std::int64_t above_total = 0;
  std::int64_t above_positive = 0;
  std::int64_t below_total = 0;
  std::int64_t below_positive = 0;
};

// Odds of a positive in (d, d + tau_p] for users with s_i(d) >= gamma over
// the same odds for users below gamma, among users not yet positive at d.
std::vector<RiskRatioPoint> risk_ratio_series(const TruthSet& truth,
                                              std::span<const ExposureTimeline> timelines,
                                              double gamma, Epoch tau_p,
                                              std::span<const Epoch> dates);

// Positives with t_positive in (d, d + tau_p], per date.
std::vector<std::pair<Epoch, std::int64_t>> new_case_series(const TruthSet& truth, Epoch tau_p,
                                                            std::span<const Epoch> dates);

struct SensitivityRow {
  double fraction;
  std::size_t retained_users;
  std::size_t retained_positives;
  ValidationReport report;
};

// Recomputes contact_ppv on random user subsets. The universe is every
// user in records or truth; fraction 1.0 keeps everything.
std::vector<SensitivityRow> sensitivity(const RecordSet& records, const TruthSet& truth,
                                        const EvalParams& params, std::span<const double> fractions,
                                        std::uint64_t seed, unsigned threads = 1);

struct HighSpreadRow {
  std::string ap;
  std::int64_t day;  // local date
  int hour;          // local hour
  std::int64_t total_users;
  std::int64_t positive_short;
  std::int64_t positive_long;
};

struct HighSpreadOptions {
  std::int64_t min_users = 10;
  double short_days = 7;
  double long_days = 14;
  std::size_t top_k = 5;
};

struct HighSpreadTable {
  std::vector<HighSpreadRow> by_percentage;  // among pairs with >= min_users
  std::vector<HighSpreadRow> by_count;
};

// Ranks (AP, local hour) pairs by the share and by the number of their
// users who become positive within the long horizon after the hour. Each
// AP appears at most once per ranking.
HighSpreadTable high_spread_events(const RecordSet& records, const TruthSet& truth,
                                   const LocalClock& clock, const HighSpreadOptions& options);

}  // namespace colotrace
