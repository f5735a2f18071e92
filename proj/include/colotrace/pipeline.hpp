#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "colotrace/ingest.hpp"
#include "colotrace/metrics.hpp"
#include "colotrace/simgen.hpp"

namespace colotrace {

inline const std::vector<std::string> kCommands = {
    "simulate", "ingest", "build-graph", "infer-truth", "score", "validate", "high-spread", "report"};

// Everything a subcommand needs. Durations are in days and converted to
// epochs of epoch_minutes. Unset input paths fall back to the file of the
// conventional name in out_dir when one exists there.
struct RunConfig {
  std::string command;

  std::optional<std::filesystem::path> log;
  std::optional<LogFormat> log_format;
  std::optional<std::filesystem::path> device_map;
  std::optional<std::filesystem::path> records;
  std::optional<std::filesystem::path> buildings;
  std::optional<std::filesystem::path> occupancy;
  std::optional<std::filesystem::path> truth;
  std::optional<std::filesystem::path> sim_config;
  std::optional<std::filesystem::path> report;
  std::filesystem::path out_dir = "out";

  int epoch_minutes = 15;
  int utc_offset_minutes = 0;
  double tau_g_days = 7.0;
  double alpha = 1.0;
  double gamma = 1.0;
  double tau_p_days = 7.0;
  double tau_s_days = 7.0;
  std::optional<int> tau_r;        // calibrated when unset and capacities are known
  std::optional<int> window_hour;  // chosen from occupancy when unset and available
  bool top_capacity = false;
  std::vector<double> gamma_sweep = {0.25, 0.5, 1, 2, 4, 8, 16, 32, 64};
  std::vector<double> fractions = {1.0, 0.75, 0.5};
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
  std::optional<std::string> as_of;  // epoch index or timestamp
  double max_reject_ratio = 0.01;
  std::optional<std::string> anonymize_salt;
  bool drop_unmapped = false;
  std::int64_t min_users = 10;
  std::size_t top_k = 5;

  EpochConfig epochs() const;
  GraphParams graph_params() const;
  EvalParams eval_params(double gamma) const;
  ExposureParams exposure_params() const;
  // Throws Error(kParameter).
  void validate() const;
};

// SimConfig from JSON, or from TOML/INI when the extension says so.
sim::SimConfig load_sim_config(const std::filesystem::path& path);

// Runs one subcommand. Progress goes to out; failures are reported on err
// as a single JSON object and mapped to the error's exit status.
int run(const RunConfig& config, std::ostream& out, std::ostream& err);

}  // namespace colotrace
