#include "colotrace/report.hpp"

#include <fmt/format.h>

#include "colotrace/csv.hpp"

namespace colotrace::report {

namespace {

std::string optional_number(const std::optional<double>& value) {
  return value ? number(*value) : std::string();
}

Json optional_json(const std::optional<double>& value) {
  if (value) return *value;
  return nullptr;
}

std::string date_of(Epoch e, const LocalClock& clock) { return format_date(clock.at(e).day); }

std::string percent(const Json& value) {
  if (value.is_null()) return "undefined";
  return fmt::format("{:.2f}%", 100.0 * value.get<double>());
}

}  // namespace

std::string number(double value) { return fmt::format("{}", value); }

Json to_json(const EvalParams& params) {
  return Json{{"gamma", params.gamma},
              {"tau_p", params.tau_p},
              {"tau_g", params.graph.tau_g},
              {"alpha", params.graph.alpha},
              {"tau_s", params.tau_s}};
}

Json to_json(const ValidationReport& report) {
  Json j;
  j["params"] = to_json(report.params);
  j["ppv"] = optional_json(report.ppv);
  j["ppv_rand"] = report.ppv_rand;
  j["scale"] = report.scale;
  j["tp"] = report.tp;
  j["fp"] = report.fp;
  if (report.wilson_95)
    j["wilson_95"] = {report.wilson_95->lo, report.wilson_95->hi};
  else
    j["wilson_95"] = nullptr;
  j["positives"] = report.positives;
  j["population"] = report.population;
  auto& cases = j["per_case"] = Json::array();
  for (const auto& c : report.per_case)
    cases.push_back({{"user_id", c.user},
                     {"t_positive", c.t_positive},
                     {"predicted", c.predicted},
                     {"plausible", c.plausible}});
  return j;
}

Json to_json(const RocPoint& point) {
  return Json{{"gamma", point.gamma}, {"tp", point.tp},       {"fp", point.fp},
              {"tn", point.tn},       {"fn", point.fn},       {"excluded", point.excluded},
              {"tpr", optional_json(point.tpr)}, {"mdr", optional_json(point.mdr)}};
}

Json to_json(const SensitivityRow& row) {
  Json j = to_json(row.report);
  j.erase("per_case");
  return Json{{"fraction", row.fraction},
              {"retained_users", row.retained_users},
              {"retained_positives", row.retained_positives},
              {"report", j}};
}

std::string ppv_vs_gamma_csv(std::span<const ValidationReport> sweep) {
  std::string out = "gamma,ppv,ppv_rand,scale,tp,fp,wilson_lo,wilson_hi\n";
  for (const auto& r : sweep) {
    out += fmt::format("{},{},{},{},{},{},{},{}\n", number(r.params.gamma), optional_number(r.ppv),
                       number(r.ppv_rand), number(r.scale), r.tp, r.fp,
                       r.wilson_95 ? number(r.wilson_95->lo) : "",
                       r.wilson_95 ? number(r.wilson_95->hi) : "");
  }
  return out;
}

std::string scale_vs_ppv_csv(std::span<const ValidationReport> sweep) {
  std::string out = "scale,ppv,ppv_rand,gamma\n";
  for (const auto& r : sweep)
    out += fmt::format("{},{},{},{}\n", number(r.scale), optional_number(r.ppv),
                       number(r.ppv_rand), number(r.params.gamma));
  return out;
}

std::string roc_csv(std::span<const RocPoint> points) {
  std::string out = "gamma,tp,fp,tn,fn,excluded,tpr,mdr\n";
  for (const auto& p : points)
    out += fmt::format("{},{},{},{},{},{},{},{}\n", number(p.gamma), p.tp, p.fp, p.tn, p.fn,
                       p.excluded, optional_number(p.tpr), optional_number(p.mdr));
  return out;
}

std::string risk_ratio_csv(std::span<const RiskRatioPoint> series, const LocalClock& clock) {
  std::string out =
      "date,epoch,ratio,above_total,above_positive,below_total,below_positive\n";
  for (const auto& p : series)
    out += fmt::format("{},{},{},{},{},{},{}\n", date_of(p.date, clock), p.date,
                       optional_number(p.ratio), p.above_total, p.above_positive, p.below_total,
                       p.below_positive);
  return out;
}

std::string rhat_hist_csv(const std::map<std::size_t, std::size_t>& histogram) {
  std::string out = "rhat,count\n";
  for (const auto& [bin, count] : histogram) out += fmt::format("{},{}\n", bin, count);
  return out;
}

std::string new_cases_csv(std::span<const std::pair<Epoch, std::int64_t>> series,
                          const LocalClock& clock) {
  std::string out = "date,epoch,count\n";
  for (const auto& [d, count] : series)
    out += fmt::format("{},{},{}\n", date_of(d, clock), d, count);
  return out;
}

std::string high_spread_csv(const HighSpreadTable& table) {
  std::string out =
      "ranking,rank,ap_id,date,hour,total_users,positive_short,positive_long,percent_long\n";
  auto rows = [&](std::string_view ranking, const std::vector<HighSpreadRow>& list) {
    for (std::size_t k = 0; k < list.size(); ++k) {
      const auto& r = list[k];
      double share = r.total_users > 0 ? 100.0 * static_cast<double>(r.positive_long) /
                                             static_cast<double>(r.total_users)
                                       : 0.0;
      out += fmt::format("{},{},{},{},{:02d}:00,{},{},{},{:.1f}\n", ranking, k + 1,
                         csv::escape(r.ap), format_date(r.day), r.hour, r.total_users,
                         r.positive_short, r.positive_long, share);
    }
  };
  rows("percentage", table.by_percentage);
  rows("count", table.by_count);
  return out;
}

std::string sensitivity_csv(std::span<const SensitivityRow> rows) {
  std::string out =
      "fraction,retained_users,retained_positives,ppv,scale,tp,fp,wilson_lo,wilson_hi\n";
  for (const auto& row : rows) {
    const auto& r = row.report;
    out += fmt::format("{},{},{},{},{},{},{},{},{}\n", number(row.fraction), row.retained_users,
                       row.retained_positives, optional_number(r.ppv), number(r.scale), r.tp,
                       r.fp, r.wilson_95 ? number(r.wilson_95->lo) : "",
                       r.wilson_95 ? number(r.wilson_95->hi) : "");
  }
  return out;
}

std::string markdown(const Json& document) {
  std::string out = "# Contact tracing validation\n\n## Parameters\n\n| parameter | value |\n|---|---|\n";
  for (const auto& [key, value] : document.at("params").items())
    out += fmt::format("| {} | {} |\n", key, value.dump());

  const Json& r = document.at("report");
  out += "\n## Contact-level prediction\n\n";
  out += fmt::format("- Positives: {} of {} labeled users\n", r.at("positives").get<std::int64_t>(),
                     r.at("population").get<std::int64_t>());
  out += fmt::format("- Predicted contacts: {} (TP {}, FP {})\n",
                     r.at("tp").get<std::int64_t>() + r.at("fp").get<std::int64_t>(),
                     r.at("tp").get<std::int64_t>(), r.at("fp").get<std::int64_t>());
  out += fmt::format("- PPV: {}", percent(r.at("ppv")));
  if (!r.at("wilson_95").is_null())
    out += fmt::format(" (95% Wilson interval {} to {})", percent(r.at("wilson_95")[0]),
                       percent(r.at("wilson_95")[1]));
  out += "\n";
  out += fmt::format("- Random-contact PPV: {}\n", percent(r.at("ppv_rand")));
  out += fmt::format("- Scale: {:.3f} contacts per positive\n", r.at("scale").get<double>());
  if (!r.at("ppv").is_null() && r.at("ppv_rand").get<double>() > 0)
    out += fmt::format("- Enrichment over random: {:.2f}x\n",
                       r.at("ppv").get<double>() / r.at("ppv_rand").get<double>());

  if (document.contains("ppv_vs_gamma")) {
    out += "\n## Threshold sweep\n\n| gamma | PPV | 95% Wilson | scale | TP | FP |\n|---|---|---|---|---|---|\n";
    for (const auto& row : document.at("ppv_vs_gamma")) {
      std::string wilson = row.at("wilson_95").is_null()
                               ? "undefined"
                               : percent(row.at("wilson_95")[0]) + " to " +
                                     percent(row.at("wilson_95")[1]);
      out += fmt::format("| {} | {} | {} | {:.3f} | {} | {} |\n", row.at("params").at("gamma").dump(),
                         percent(row.at("ppv")), wilson, row.at("scale").get<double>(),
                         row.at("tp").get<std::int64_t>(), row.at("fp").get<std::int64_t>());
    }
  }

  if (document.contains("roc")) {
    out += "\n## Exposure score\n\n| gamma | TP | FP | TN | FN | excluded | TP/(TP+FP) | FN/(TP+FN) |\n|---|---|---|---|---|---|---|---|\n";
    for (const auto& p : document.at("roc"))
      out += fmt::format("| {} | {} | {} | {} | {} | {} | {} | {} |\n", p.at("gamma").dump(),
                         p.at("tp").get<std::int64_t>(), p.at("fp").get<std::int64_t>(),
                         p.at("tn").get<std::int64_t>(), p.at("fn").get<std::int64_t>(),
                         p.at("excluded").get<std::int64_t>(), percent(p.at("tpr")),
                         percent(p.at("mdr")));
  }

  if (document.contains("sensitivity")) {
    out += "\n## Participation sensitivity\n\n| fraction | users | positives | PPV | 95% Wilson | scale |\n|---|---|---|---|---|---|\n";
    for (const auto& row : document.at("sensitivity")) {
      const Json& s = row.at("report");
      std::string wilson = s.at("wilson_95").is_null()
                               ? "undefined"
                               : percent(s.at("wilson_95")[0]) + " to " +
                                     percent(s.at("wilson_95")[1]);
      out += fmt::format("| {} | {} | {} | {} | {} | {:.3f} |\n", row.at("fraction").dump(),
                         row.at("retained_users").get<std::int64_t>(),
                         row.at("retained_positives").get<std::int64_t>(), percent(s.at("ppv")),
                         wilson, s.at("scale").get<double>());
    }
  }
  return out;
}

}  // namespace colotrace::report
