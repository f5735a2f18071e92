#pragma once

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "colotrace/metrics.hpp"
#include "json.hpp"

namespace colotrace::report {

using Json = nlohmann::ordered_json;

// Shortest representation that parses back to the same double.
std::string number(double value);

Json to_json(const EvalParams& params);
Json to_json(const ValidationReport& report);
Json to_json(const RocPoint& point);
Json to_json(const SensitivityRow& row);

// Figure-analog series. Undefined values are written as empty fields.
std::string ppv_vs_gamma_csv(std::span<const ValidationReport> sweep);
std::string scale_vs_ppv_csv(std::span<const ValidationReport> sweep);
std::string roc_csv(std::span<const RocPoint> points);
std::string risk_ratio_csv(std::span<const RiskRatioPoint> series, const LocalClock& clock);
std::string rhat_hist_csv(const std::map<std::size_t, std::size_t>& histogram);
std::string new_cases_csv(std::span<const std::pair<Epoch, std::int64_t>> series,
                          const LocalClock& clock);
std::string high_spread_csv(const HighSpreadTable& table);
std::string sensitivity_csv(std::span<const SensitivityRow> rows);

// Human-readable summary of a validation document as written by the
// validate command.
std::string markdown(const Json& document);

}  // namespace colotrace::report
