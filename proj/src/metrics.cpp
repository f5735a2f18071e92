#include "colotrace/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>

#include <boost/math/distributions/normal.hpp>
#include <fmt/format.h>

#include "colotrace/error.hpp"

namespace colotrace {

void EvalParams::validate() const {
  if (!(gamma >= 0.0) || std::isnan(gamma))
    fail(ErrorCode::kParameter, fmt::format("gamma must be >= 0, got {}", gamma));
  if (tau_p <= 0) fail(ErrorCode::kParameter, fmt::format("tau_p must be > 0, got {}", tau_p));
  if (tau_s <= 0) fail(ErrorCode::kParameter, fmt::format("tau_s must be > 0, got {}", tau_s));
  graph.validate();
}

WilsonInterval wilson_interval(std::int64_t successes, std::int64_t trials, double confidence) {
  if (trials <= 0) fail(ErrorCode::kParameter, "Wilson interval needs trials > 0");
  if (successes < 0 || successes > trials)
    fail(ErrorCode::kParameter,
         fmt::format("Wilson interval needs 0 <= successes <= trials, got {}/{}", successes, trials));
  if (!(confidence > 0.0 && confidence < 1.0))
    fail(ErrorCode::kParameter, fmt::format("confidence must lie in (0, 1), got {}", confidence));
  double z = boost::math::quantile(boost::math::normal(), 0.5 + confidence / 2.0);
  double n = static_cast<double>(trials);
  double p = static_cast<double>(successes) / n;
  double z2 = z * z;
  double denom = 1.0 + z2 / n;
  double center = (p + z2 / (2.0 * n)) / denom;
  double half = z / denom * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n));
  WilsonInterval interval{std::max(0.0, center - half), std::min(1.0, center + half)};
  if (successes == 0) interval.lo = 0.0;
  if (successes == trials) interval.hi = 1.0;
  return interval;
}

namespace {

// Label lookup by the user index of whichever table a snapshot uses.
class LabelIndex {
 public:
  explicit LabelIndex(const TruthSet& truth) : truth_(truth) {}

  const Label* operator()(const ContactGraph& g, UserIndex user) {
    if (table_ != &g.users()) {
      table_ = &g.users();
      labels_.assign(table_->size(), nullptr);
      for (const auto& [name, label] : truth_.labels)
        if (auto index = table_->find(name)) labels_[*index] = &label;
    }
    return labels_[user];
  }

 private:
  const TruthSet& truth_;
  const IdTable* table_ = nullptr;
  std::vector<const Label*> labels_;
};

bool in_study(const Label& label, Epoch t) { return !label.positive || label.t_positive > t; }

bool positive_within(const Label& label, Epoch t, Epoch horizon) {
  return label.positive && label.t_positive > t && label.t_positive <= t + horizon;
}

std::vector<CaseResult> evaluate_cases(const TruthSet& truth, const GraphProvider& graph_at,
                                       const EvalParams& params) {
  params.validate();
  auto positives = truth.positives();
  if (positives.empty()) fail(ErrorCode::kData, "truth set has no positives");
  LabelIndex label_of(truth);
  std::vector<CaseResult> cases;
  cases.reserve(positives.size());
  for (const auto& [user, t_i] : positives) {
    CaseResult result{user, t_i, 0, 0};
    const ContactGraph& g = graph_at(t_i);
    if (auto index = g.users().find(user)) {
      for (const auto& n : g.neighbors(*index)) {
        if (n.weight < params.gamma) continue;
        const Label* label = label_of(g, n.user);
        if (!label || !in_study(*label, t_i)) continue;
        ++result.predicted;
        if (positive_within(*label, t_i, params.tau_p)) ++result.plausible;
      }
    }
    cases.push_back(std::move(result));
  }
  return cases;
}

}  // namespace

ValidationReport contact_ppv(const TruthSet& truth, const GraphProvider& graph_at,
                             const EvalParams& params) {
  ValidationReport report;
  report.params = params;
  report.per_case = evaluate_cases(truth, graph_at, params);
  report.positives = report.per_case.size();
  report.population = truth.size();
  for (const auto& c : report.per_case) {
    report.tp += static_cast<std::int64_t>(c.plausible);
    report.fp += static_cast<std::int64_t>(c.predicted - c.plausible);
  }
  std::int64_t predicted = report.tp + report.fp;
  report.scale = static_cast<double>(predicted) / static_cast<double>(report.positives);
  if (predicted > 0) {
    report.ppv = static_cast<double>(report.tp) / static_cast<double>(predicted);
    report.wilson_95 = wilson_interval(report.tp, predicted, 0.95);
  }
  report.ppv_rand = ppv_rand(truth, params.tau_p);
  return report;
}

double ppv_rand(const TruthSet& truth, Epoch tau_p) {
  if (tau_p <= 0) fail(ErrorCode::kParameter, fmt::format("tau_p must be > 0, got {}", tau_p));
  auto positives = truth.positives();
  if (positives.empty()) fail(ErrorCode::kData, "truth set has no positives");
  std::vector<Epoch> times;
  for (const auto& p : positives) times.push_back(p.second);  // ascending
  auto population = static_cast<std::int64_t>(truth.size());
  double sum = 0.0;
  for (Epoch t_i : times) {
    auto at_or_before = std::upper_bound(times.begin(), times.end(), t_i) - times.begin();
    auto within = std::upper_bound(times.begin(), times.end(), t_i + tau_p) - times.begin() -
                  at_or_before;
    std::int64_t remaining = population - at_or_before;
    if (remaining > 0) sum += static_cast<double>(within) / static_cast<double>(remaining);
  }
  return sum / static_cast<double>(times.size());
}

std::map<std::size_t, std::size_t> plausible_transmissions(const TruthSet& truth,
                                                           const GraphProvider& graph_at,
                                                           const EvalParams& params) {
  std::map<std::size_t, std::size_t> histogram;
  for (const auto& c : evaluate_cases(truth, graph_at, params)) ++histogram[c.plausible];
  return histogram;
}

Outcome classify_user(const std::optional<Epoch>& crossing, const Label& label, Epoch tau_p) {
  if (!label.positive) return crossing ? Outcome::kFalsePositive : Outcome::kTrueNegative;
  if (!crossing) return Outcome::kFalseNegative;
  if (*crossing > label.t_positive) return Outcome::kExcluded;
  return label.t_positive - *crossing <= tau_p ? Outcome::kTruePositive : Outcome::kFalsePositive;
}

namespace {

std::map<std::string_view, const ExposureTimeline*> index_timelines(
    const TruthSet& truth, std::span<const ExposureTimeline> timelines) {
  std::map<std::string_view, const ExposureTimeline*> by_user;
  for (const auto& t : timelines) by_user.emplace(t.user, &t);
  for (const auto& [user, label] : truth.labels)
    if (!by_user.count(user)) fail(ErrorCode::kData, "no exposure timeline for user " + user);
  return by_user;
}

std::optional<double> ratio_of(std::int64_t num, std::int64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

std::vector<RocPoint> exposure_roc(const TruthSet& truth,
                                   std::span<const ExposureTimeline> timelines,
                                   std::span<const double> gammas, Epoch tau_p) {
  if (tau_p <= 0) fail(ErrorCode::kParameter, fmt::format("tau_p must be > 0, got {}", tau_p));
  auto by_user = index_timelines(truth, timelines);
  std::vector<RocPoint> points;
  for (double gamma : gammas) {
    RocPoint point;
    point.gamma = gamma;
    for (const auto& [user, label] : truth.labels) {
      switch (classify_user(first_crossing(*by_user.at(user), gamma), label, tau_p)) {
        case Outcome::kTruePositive: ++point.tp; break;
        case Outcome::kFalsePositive: ++point.fp; break;
        case Outcome::kTrueNegative: ++point.tn; break;
        case Outcome::kFalseNegative: ++point.fn; break;
        case Outcome::kExcluded: ++point.excluded; break;
      }
    }
    point.tpr = ratio_of(point.tp, point.tp + point.fp);
    point.mdr = ratio_of(point.fn, point.tp + point.fn);
    points.push_back(point);
  }
  return points;
}

std::vector<RiskRatioPoint> risk_ratio_series(const TruthSet& truth,
                                              std::span<const ExposureTimeline> timelines,
                                              double gamma, Epoch tau_p,
                                              std::span<const Epoch> dates) {
  if (tau_p <= 0) fail(ErrorCode::kParameter, fmt::format("tau_p must be > 0, got {}", tau_p));
  auto by_user = index_timelines(truth, timelines);
  std::vector<RiskRatioPoint> series;
  for (Epoch d : dates) {
    RiskRatioPoint point;
    point.date = d;
    for (const auto& [user, label] : truth.labels) {
      if (!in_study(label, d)) continue;
      bool positive = positive_within(label, d, tau_p);
      if (by_user.at(user)->at(d) >= gamma) {
        ++point.above_total;
        point.above_positive += positive;
      } else {
        ++point.below_total;
        point.below_positive += positive;
      }
    }
    bool defined = point.above_total > 0 && point.below_total > 0 && point.below_positive > 0 &&
                   point.above_positive < point.above_total;
    if (defined) {
      // odds_a / odds_b = a+ (b - b+) / ((a - a+) b+)
      double num = static_cast<double>(point.above_positive) *
                   static_cast<double>(point.below_total - point.below_positive);
      double den = static_cast<double>(point.above_total - point.above_positive) *
                   static_cast<double>(point.below_positive);
      point.ratio = num / den;
    }
    series.push_back(point);
  }
  return series;
}

std::vector<std::pair<Epoch, std::int64_t>> new_case_series(const TruthSet& truth, Epoch tau_p,
                                                            std::span<const Epoch> dates) {
  if (tau_p <= 0) fail(ErrorCode::kParameter, fmt::format("tau_p must be > 0, got {}", tau_p));
  std::vector<Epoch> times;
  for (const auto& p : truth.positives()) times.push_back(p.second);
  std::vector<std::pair<Epoch, std::int64_t>> out;
  for (Epoch d : dates) {
    auto lo = std::upper_bound(times.begin(), times.end(), d);
    auto hi = std::upper_bound(times.begin(), times.end(), d + tau_p);
    out.emplace_back(d, hi - lo);
  }
  return out;
}

std::vector<SensitivityRow> sensitivity(const RecordSet& records, const TruthSet& truth,
                                        const EvalParams& params, std::span<const double> fractions,
                                        std::uint64_t seed, unsigned threads) {
  params.validate();
  std::set<std::string> universe;
  for (UserIndex u : records.present_users()) universe.insert(records.users().name(u));
  for (const auto& [user, label] : truth.labels) universe.insert(user);
  std::vector<std::string> names(universe.begin(), universe.end());

  std::vector<SensitivityRow> rows;
  for (double fraction : fractions) {
    auto mask = sample_mask(names.size(), fraction, seed);
    std::set<std::string> kept;
    for (std::size_t i = 0; i < names.size(); ++i)
      if (mask[i]) kept.insert(names[i]);
    std::vector<bool> keep(records.users().size(), false);
    for (UserIndex u = 0; u < keep.size(); ++u) keep[u] = kept.count(records.users().name(u)) > 0;

    TruthSet sub_truth = truth.restrict_to(kept);
    SnapshotCache cache(records.filter_users(keep), params.graph, threads);
    std::vector<Epoch> times;
    for (const auto& p : sub_truth.positives()) times.push_back(p.second);
    cache.prepare(times);
    SensitivityRow row{fraction, kept.size(), sub_truth.positive_count(), {}};
    row.report = contact_ppv(sub_truth, cache.provider(), params);
    rows.push_back(std::move(row));
  }
  return rows;
}

HighSpreadTable high_spread_events(const RecordSet& records, const TruthSet& truth,
                                   const LocalClock& clock, const HighSpreadOptions& options) {
  const EpochConfig& cfg = clock.epochs;
  Epoch short_epochs = cfg.days_to_epochs(options.short_days);
  Epoch long_epochs = cfg.days_to_epochs(options.long_days);
  if (short_epochs <= 0 || long_epochs <= 0)
    fail(ErrorCode::kParameter, "high-spread horizons must be positive");

  std::vector<const Label*> label_of(records.users().size(), nullptr);
  for (const auto& [name, label] : truth.labels)
    if (auto index = records.users().find(name)) label_of[*index] = &label;

  std::vector<HighSpreadRow> rows;
  std::vector<UserIndex> users;
  for (ApIndex ap = 0; ap < records.aps().size(); ++ap) {
    auto block = records.ap_block(ap);
    for (std::size_t i = 0; i < block.size();) {
      LocalTime local = clock.at(block[i].epoch);
      users.clear();
      std::size_t j = i;
      for (; j < block.size(); ++j) {
        LocalTime other = clock.at(block[j].epoch);
        if (other.day != local.day || other.hour != local.hour) break;
        users.push_back(block[j].user);
      }
      i = j;
      std::sort(users.begin(), users.end());
      users.erase(std::unique(users.begin(), users.end()), users.end());

      // Horizons start at the last epoch that begins inside the hour.
      UnixSeconds hour_end = (local.day * kSecondsPerDay + (local.hour + 1) * 3600) -
                             std::int64_t{clock.utc_offset_minutes} * 60;
      Epoch anchor = floor_div(hour_end - 1 - cfg.origin, cfg.width_seconds());
      HighSpreadRow row{records.aps().name(ap), local.day, local.hour,
                        static_cast<std::int64_t>(users.size()), 0, 0};
      for (UserIndex u : users) {
        const Label* label = label_of[u];
        if (!label) continue;
        row.positive_short += positive_within(*label, anchor, short_epochs);
        row.positive_long += positive_within(*label, anchor, long_epochs);
      }
      rows.push_back(std::move(row));
    }
  }

  auto tie_break = [](const HighSpreadRow& a, const HighSpreadRow& b) {
    return std::tie(a.ap, a.day, a.hour) < std::tie(b.ap, b.day, b.hour);
  };
  auto best_per_ap = [&](std::vector<HighSpreadRow> ranked) {
    std::vector<HighSpreadRow> out;
    std::set<std::string> seen;
    for (auto& row : ranked) {
      if (out.size() >= options.top_k) break;
      if (seen.insert(row.ap).second) out.push_back(std::move(row));
    }
    return out;
  };

  HighSpreadTable table;
  std::vector<HighSpreadRow> eligible;
  for (const auto& row : rows)
    if (row.total_users >= options.min_users) eligible.push_back(row);
  std::sort(eligible.begin(), eligible.end(), [&](const auto& a, const auto& b) {
    // Share compared by cross-multiplication to stay exact.
    auto lhs = a.positive_long * b.total_users;
    auto rhs = b.positive_long * a.total_users;
    if (lhs != rhs) return lhs > rhs;
    if (a.positive_long != b.positive_long) return a.positive_long > b.positive_long;
    return tie_break(a, b);
  });
  table.by_percentage = best_per_ap(std::move(eligible));

  std::sort(rows.begin(), rows.end(), [&](const auto& a, const auto& b) {
    if (a.positive_long != b.positive_long) return a.positive_long > b.positive_long;
    if (a.positive_short != b.positive_short) return a.positive_short > b.positive_short;
    if (a.total_users != b.total_users) return a.total_users > b.total_users;
    return tie_break(a, b);
  });
  table.by_count = best_per_ap(std::move(rows));
  return table;
}

}  // namespace colotrace
