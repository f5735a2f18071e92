#include <algorithm>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "colotrace/error.hpp"
#include "colotrace/parallel.hpp"
#include "colotrace/pipeline.hpp"
#include "json.hpp"

namespace {

using colotrace::ErrorCode;

// Config files in TOML/INI, or JSON when the content is an object. Keys may
// use underscores or dashes.
class ConfigReader : public CLI::ConfigTOML {
 public:
  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    std::string text((std::istreambuf_iterator<char>(input)), std::istreambuf_iterator<char>());
    auto first = text.find_first_not_of(" \t\r\n");
    std::vector<CLI::ConfigItem> items;
    if (first != std::string::npos && text[first] == '{') {
      auto j = nlohmann::json::parse(text, nullptr, false);
      if (j.is_discarded() || !j.is_object()) throw CLI::ParseError("config is not a JSON object", 4);
      flatten(j, {}, items);
    } else {
      std::istringstream stream(text);
      items = CLI::ConfigTOML::from_config(stream);
    }
    for (auto& item : items) std::replace(item.name.begin(), item.name.end(), '_', '-');
    return items;
  }

 private:
  static std::string scalar(const nlohmann::json& v) {
    return v.is_string() ? v.get<std::string>() : v.dump();
  }

  static void flatten(const nlohmann::json& j, std::vector<std::string> parents,
                      std::vector<CLI::ConfigItem>& items) {
    for (const auto& [key, value] : j.items()) {
      if (value.is_object()) {
        auto nested = parents;
        nested.push_back(key);
        flatten(value, nested, items);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array())
        for (const auto& v : value) item.inputs.push_back(scalar(v));
      else
        item.inputs.push_back(scalar(value));
      items.push_back(std::move(item));
    }
  }
};

// "auto" or an integer.
std::optional<int> auto_or_int(const std::string& text, const std::string& flag) {
  if (text == "auto") return std::nullopt;
  try {
    std::size_t used = 0;
    int value = std::stoi(text, &used);
    if (used == text.size()) return value;
  } catch (const std::exception&) {
  }
  colotrace::fail(ErrorCode::kParameter, flag + " must be an integer or auto, got " + text);
}

int parse_error(const std::string& message) {
  nlohmann::ordered_json j;
  j["error"] = colotrace::error_code_name(ErrorCode::kParameter);
  j["code"] = static_cast<int>(ErrorCode::kParameter);
  j["message"] = message;
  std::cerr << j.dump() << "\n";
  return static_cast<int>(ErrorCode::kParameter);
}

}  // namespace

int main(int argc, char** argv) {
  colotrace::RunConfig cfg;
  CLI::App app{"Contact tracing from WiFi association logs"};
  app.fallthrough();
  app.require_subcommand(1, 1);
  app.config_formatter(std::make_shared<ConfigReader>());
  app.set_config("--config", "", "TOML, INI or JSON file with option values");

  std::string out_dir = cfg.out_dir.string();
  std::string log_format, tau_r = "auto", window_hour = "auto";
  std::optional<std::string> log, device_map, records, buildings, occupancy, truth, sim_config,
      report_path;
  std::optional<std::uint64_t> seed;
  unsigned threads = cfg.threads;

  app.add_option("--out", out_dir, "Output directory; also searched for unset inputs")
      ->capture_default_str();
  app.add_option("--log", log, "Association log (CSV or JSONL)");
  app.add_option("--log-format", log_format, "csv or jsonl; default from the extension");
  app.add_option("--device-map", device_map, "CSV device_id,user_id");
  app.add_option("--records", records, "Colocation records from ingest");
  app.add_option("--buildings", buildings, "CSV ap_id,building_id,role,capacity");
  app.add_option("--occupancy", occupancy, "CSV building_id,date,count for hour selection");
  app.add_option("--truth", truth, "Labels CSV user_id,label,positive_epoch; bypasses inference");
  app.add_option("--sim-config", sim_config, "Simulation config (JSON or TOML)");
  app.add_option("--report", report_path, "Existing report.json to summarize");

  app.add_option("--epoch-minutes", cfg.epoch_minutes, "Epoch width")->capture_default_str();
  app.add_option("--utc-offset-minutes", cfg.utc_offset_minutes, "Local time offset from UTC")
      ->capture_default_str();
  app.add_option("--tau-g-days", cfg.tau_g_days, "Graph look-back window")->capture_default_str();
  app.add_option("--alpha", cfg.alpha, "Crowd-size discount exponent")->capture_default_str();
  app.add_option("--gamma", cfg.gamma, "Contact and exposure threshold")->capture_default_str();
  app.add_option("--tau-p-days", cfg.tau_p_days, "Prediction horizon")->capture_default_str();
  app.add_option("--tau-s-days", cfg.tau_s_days, "Exposure window")->capture_default_str();
  app.add_option("--tau-r", tau_r, "Resident threshold in mornings, or auto")->capture_default_str();
  app.add_option("--window-hour", window_hour, "Local hour counted as a morning, or auto")
      ->capture_default_str();
  app.add_flag("--top-capacity", cfg.top_capacity,
               "Pick each dorm's most frequent users up to its capacity");
  app.add_option("--gamma-sweep", cfg.gamma_sweep, "Thresholds for the sweep series")
      ->delimiter(',')
      ->capture_default_str();
  app.add_option("--fractions", cfg.fractions, "Participation fractions for sensitivity")
      ->delimiter(',')
      ->capture_default_str();
  app.add_option("--seed", seed, "Random seed (simulation and subsampling)");
  app.add_option("--threads", threads, "Worker threads; 0 uses every core")->capture_default_str();
  app.add_option("--as-of", cfg.as_of, "Graph snapshot time: epoch index or timestamp");
  app.add_option("--max-reject-ratio", cfg.max_reject_ratio, "Tolerated share of bad log lines")
      ->capture_default_str();
  app.add_option("--anonymize-salt", cfg.anonymize_salt, "Replace identifiers by salted digests");
  app.add_flag("--drop-unmapped", cfg.drop_unmapped, "Drop devices missing from the device map");
  app.add_option("--min-users", cfg.min_users, "High-spread minimum users")->capture_default_str();
  app.add_option("--top-k", cfg.top_k, "High-spread rows per ranking")->capture_default_str();

  for (const auto& name : colotrace::kCommands) app.add_subcommand(name)->fallthrough();
  app.get_subcommand("simulate")->description("Generate a synthetic campus, logs and ground truth");
  app.get_subcommand("ingest")->description("Parse logs into deduplicated colocation records");
  app.get_subcommand("build-graph")->description("Write the contact graph at --as-of");
  app.get_subcommand("infer-truth")->description("Infer residents and positive labels");
  app.get_subcommand("score")->description("Write exposure score timelines");
  app.get_subcommand("validate")->description("Compute the validation report and series");
  app.get_subcommand("high-spread")->description("Rank high-spread (AP, hour) events");
  app.get_subcommand("report")->description("Write a markdown summary");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return parse_error(e.what());
  }

  try {
    cfg.command = app.get_subcommands().front()->get_name();
    cfg.out_dir = out_dir;
    auto set = [](auto& target, const std::optional<std::string>& value) {
      if (value) target = *value;
    };
    set(cfg.log, log);
    set(cfg.device_map, device_map);
    set(cfg.records, records);
    set(cfg.buildings, buildings);
    set(cfg.occupancy, occupancy);
    set(cfg.truth, truth);
    set(cfg.sim_config, sim_config);
    set(cfg.report, report_path);
    if (!log_format.empty()) {
      cfg.log_format = colotrace::parse_log_format(log_format);
      if (!cfg.log_format) colotrace::fail(ErrorCode::kParameter, "unknown log format " + log_format);
    }
    cfg.tau_r = auto_or_int(tau_r, "--tau-r");
    cfg.window_hour = auto_or_int(window_hour, "--window-hour");
    cfg.seed = seed;
    cfg.threads = colotrace::resolve_threads(threads);
  } catch (const colotrace::Error& e) {
    return parse_error(e.what());
  }
  return colotrace::run(cfg, std::cout, std::cerr);
}
