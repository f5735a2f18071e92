#include "colotrace/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "colotrace/csv.hpp"
#include "colotrace/error.hpp"
#include "colotrace/report.hpp"

namespace colotrace {

namespace fs = std::filesystem;
using report::Json;

EpochConfig RunConfig::epochs() const { return EpochConfig{epoch_minutes, 0}; }

GraphParams RunConfig::graph_params() const {
  return GraphParams{epochs().days_to_epochs(tau_g_days), alpha};
}

EvalParams RunConfig::eval_params(double g) const {
  return EvalParams{g, epochs().days_to_epochs(tau_p_days), graph_params(),
                    epochs().days_to_epochs(tau_s_days)};
}

ExposureParams RunConfig::exposure_params() const {
  return ExposureParams{epochs().days_to_epochs(tau_s_days), gamma};
}

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& message) {
    if (!ok) fail(ErrorCode::kParameter, message);
  };
  require(std::find(kCommands.begin(), kCommands.end(), command) != kCommands.end(),
          "unknown command " + command);
  epochs().validate();
  require(utc_offset_minutes > -24 * 60 && utc_offset_minutes < 24 * 60,
          "utc offset must be within a day");
  require(std::isfinite(tau_g_days) && tau_g_days > 0, "tau_g must be > 0 days");
  require(std::isfinite(tau_p_days) && tau_p_days > 0, "tau_p must be > 0 days");
  require(std::isfinite(tau_s_days) && tau_s_days > 0, "tau_s must be > 0 days");
  graph_params().validate();
  eval_params(gamma).validate();
  exposure_params().validate();
  require(!gamma_sweep.empty(), "gamma sweep must not be empty");
  for (double g : gamma_sweep) require(std::isfinite(g) && g >= 0, "gamma values must be >= 0");
  for (double f : fractions) require(f > 0 && f <= 1, "participation fractions must lie in (0, 1]");
  if (tau_r) require(*tau_r >= 0 && *tau_r <= kMaxTauR, "tau_r must lie in [0, 30]");
  if (window_hour) require(*window_hour >= 0 && *window_hour < 24, "window hour must lie in [0, 24)");
  require(threads >= 1, "threads must be >= 1");
  require(max_reject_ratio >= 0 && max_reject_ratio <= 1, "max reject ratio must lie in [0, 1]");
  require(min_users >= 1, "min users must be >= 1");
}

sim::SimConfig load_sim_config(const fs::path& path) {
  auto ext = path.extension().string();
  if (ext != ".toml" && ext != ".ini") return sim::SimConfig::load(path);
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kMissingInput, "cannot open " + path.string());
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigTOML().from_config(in);
  } catch (const CLI::Error& e) {
    fail(ErrorCode::kFormat, path.string() + ": " + e.what());
  }
  nlohmann::json j = nlohmann::json::object();
  for (const auto& item : items) {
    if (item.inputs.size() != 1) fail(ErrorCode::kFormat, path.string() + ": bad value for " + item.name);
    auto value = nlohmann::json::parse(item.inputs[0], nullptr, false);
    j[item.name] = value.is_discarded() ? nlohmann::json(item.inputs[0]) : value;
  }
  return sim::SimConfig::from_json(j.dump());
}

namespace {

struct Context {
  const RunConfig& cfg;
  std::ostream& out;

  std::optional<fs::path> input(const std::optional<fs::path>& given, std::string_view name) const {
    if (given) {
      if (!fs::exists(*given)) fail(ErrorCode::kMissingInput, "missing input " + given->string());
      return given;
    }
    fs::path fallback = cfg.out_dir / name;
    if (fs::exists(fallback)) return fallback;
    return std::nullopt;
  }

  fs::path require_input(const std::optional<fs::path>& given, std::string_view name,
                         std::string_view what) const {
    auto path = input(given, name);
    if (!path)
      fail(ErrorCode::kMissingInput,
           fmt::format("no {} given and {} not found", what, (cfg.out_dir / name).string()));
    return *path;
  }

  fs::path output(std::string_view name) const {
    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    if (ec) fail(ErrorCode::kIo, "cannot create " + cfg.out_dir.string() + ": " + ec.message());
    return cfg.out_dir / name;
  }

  void write(std::string_view name, const std::string& content) const {
    csv::write_file(output(name), content);
    out << "wrote " << (cfg.out_dir / name).string() << "\n";
  }
};

std::string path_string(const std::optional<fs::path>& p) { return p ? p->string() : ""; }

Json params_json(const RunConfig& cfg) {
  EvalParams eval = cfg.eval_params(cfg.gamma);
  Json j;
  j["epoch_minutes"] = cfg.epoch_minutes;
  j["utc_offset_minutes"] = cfg.utc_offset_minutes;
  j["tau_g_days"] = cfg.tau_g_days;
  j["tau_g"] = eval.graph.tau_g;
  j["alpha"] = cfg.alpha;
  j["gamma"] = cfg.gamma;
  j["tau_p_days"] = cfg.tau_p_days;
  j["tau_p"] = eval.tau_p;
  j["tau_s_days"] = cfg.tau_s_days;
  j["tau_s"] = eval.tau_s;
  j["gamma_sweep"] = cfg.gamma_sweep;
  j["fractions"] = cfg.fractions;
  j["seed"] = cfg.seed.value_or(42);
  j["min_users"] = cfg.min_users;
  j["top_k"] = cfg.top_k;
  return j;
}

// Sidecar for one artifact: command, parameters and inputs.
void write_sidecar(const Context& ctx, std::string_view artifact, const Json& inputs,
                   Json extra = Json::object()) {
  Json j;
  j["artifact"] = artifact;
  j["command"] = ctx.cfg.command;
  j["params"] = params_json(ctx.cfg);
  j["inputs"] = inputs;
  for (auto& [key, value] : extra.items()) j[key] = value;
  auto stem = fs::path(std::string(artifact)).stem().string();
  ctx.write(stem + ".json", j.dump(2) + "\n");
}

struct LoadedRecords {
  RecordSet records;
  Json inputs;
  std::optional<DiscretizeSummary> summary;
  std::vector<Reject> rejects;
  std::size_t data_lines = 0;
  std::size_t disassociations = 0;
};

LoadedRecords ingest_log(const Context& ctx, const fs::path& log_path) {
  const RunConfig& cfg = ctx.cfg;
  LoadedRecords loaded;
  ParseOptions options{cfg.max_reject_ratio, cfg.threads};
  auto parsed = parse_events_file(log_path, cfg.log_format.value_or(log_format_for(log_path)), options);
  DeviceUserMap map;
  auto map_path = ctx.input(cfg.device_map, "device_map.csv");
  if (map_path) map = DeviceUserMap::load(*map_path);
  EventLog log = std::move(parsed.log);
  if (cfg.anonymize_salt) {
    log = anonymize_devices(log, *cfg.anonymize_salt);
    map = anonymize_map(map, *cfg.anonymize_salt);
  }
  auto result = discretize(log, map, cfg.epochs(),
                           cfg.drop_unmapped ? UnmappedPolicy::kDrop : UnmappedPolicy::kPromoteToUser);
  loaded.records = std::move(result.records);
  loaded.summary = result.summary;
  loaded.rejects = std::move(parsed.rejects);
  loaded.data_lines = parsed.data_lines;
  loaded.disassociations = parsed.disassociations;
  loaded.inputs = {{"log", log_path.string()}, {"device_map", path_string(map_path)}};
  return loaded;
}

// Records from --records, else from a log, else from out_dir.
LoadedRecords load_records(const Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  if (cfg.records || !cfg.log) {
    if (auto path = ctx.input(cfg.records, "records.csv")) {
      LoadedRecords loaded;
      loaded.records = RecordSet::parse_csv(csv::read_file(*path), path->string());
      loaded.inputs = {{"records", path->string()}};
      return loaded;
    }
  }
  return ingest_log(ctx, ctx.require_input(cfg.log, "association_log.csv", "association log"));
}

EpochRange study_range(const RecordSet& records) {
  auto range = records.epoch_range();
  if (!range) fail(ErrorCode::kData, "no colocation records");
  return {range->first, range->second};
}

ResidencyParams residency_params(const RunConfig& cfg) {
  ResidencyParams params;
  params.utc_offset_minutes = cfg.utc_offset_minutes;
  params.selection = cfg.top_capacity ? ResidentSelection::kTopCapacity : ResidentSelection::kThreshold;
  if (cfg.window_hour) params.window_hour = *cfg.window_hour;
  if (cfg.tau_r) params.tau_r = *cfg.tau_r;
  return params;
}

struct InferredTruth {
  TruthSet truth;
  ResidencyParams params;
  std::optional<HourChoice> hour;
  std::optional<TauCalibration> calibration;
  std::map<std::string, std::set<std::string>> residents;
  Json inputs;
};

InferredTruth infer_truth(const Context& ctx, const RecordSet& records) {
  const RunConfig& cfg = ctx.cfg;
  InferredTruth inferred;
  auto buildings = ctx.require_input(cfg.buildings, "buildings.csv", "buildings file");
  CampusLayout layout = CampusLayout::load(buildings);
  inferred.params = residency_params(cfg);
  inferred.inputs = {{"buildings", buildings.string()}};
  LocalClock clock{cfg.epochs(), cfg.utc_offset_minutes};
  if (!cfg.window_hour) {
    if (auto occupancy = ctx.input(cfg.occupancy, "occupancy.csv")) {
      inferred.hour = choose_occupancy_hour(records, layout, load_occupancy(*occupancy), clock);
      inferred.params.window_hour = inferred.hour->hour;
      inferred.inputs["occupancy"] = occupancy->string();
    }
  }
  if (!cfg.tau_r) {
    bool capacities = false;
    for (const auto& b : layout.buildings()) {
      if (b.role != BuildingRole::kRegularDorm) continue;
      capacities = b.capacity.has_value();
      if (!capacities) break;
    }
    if (capacities) {
      inferred.calibration = calibrate_tau_r(records, layout, inferred.params, cfg.epochs());
      inferred.params.tau_r = inferred.calibration->tau_r;
    }
  }
  inferred.truth = infer_positives(records, layout, inferred.params, cfg.epochs(), study_range(records));
  inferred.residents = infer_residents(records, layout, inferred.params, cfg.epochs());
  return inferred;
}

struct LoadedTruth {
  TruthSet truth;
  Json inputs;
};

// Injected labels when given (or truth.csv from infer-truth in out_dir),
// otherwise inferred from the buildings file.
LoadedTruth load_truth(const Context& ctx, const RecordSet& records) {
  if (auto path = ctx.input(ctx.cfg.truth, "truth.csv"))
    return {TruthSet::load(*path), Json{{"truth", path->string()}}};
  auto inferred = infer_truth(ctx, records);
  Json inputs = inferred.inputs;
  inputs["tau_r"] = inferred.params.tau_r;
  inputs["window_hour"] = inferred.params.window_hour;
  return {std::move(inferred.truth), inputs};
}

Json merge(Json a, const Json& b) {
  for (const auto& [key, value] : b.items()) a[key] = value;
  return a;
}

std::vector<Epoch> daily_dates(const EpochRange& study, const RunConfig& cfg) {
  EpochConfig epochs = cfg.epochs();
  LocalClock clock{epochs, cfg.utc_offset_minutes};
  UnixSeconds midnight =
      clock.at(study.first).day * kSecondsPerDay - std::int64_t{cfg.utc_offset_minutes} * 60;
  Epoch first = floor_div(midnight - epochs.origin, epochs.width_seconds());
  if (first < study.first) first += epochs.epochs_per_day();
  std::vector<Epoch> dates;
  for (Epoch d = first; d <= study.last; d += epochs.epochs_per_day()) dates.push_back(d);
  return dates;
}

int cmd_simulate(const Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  sim::SimConfig sim_cfg;
  if (cfg.sim_config) {
    if (!fs::exists(*cfg.sim_config))
      fail(ErrorCode::kMissingInput, "missing input " + cfg.sim_config->string());
    sim_cfg = load_sim_config(*cfg.sim_config);
  }
  if (cfg.seed) sim_cfg.seed = *cfg.seed;
  sim_cfg.validate();
  auto output = sim::generate(sim_cfg);
  ctx.output("");
  auto paths = sim::export_files(output, sim_cfg, cfg.out_dir);
  for (const auto& p : {paths.log, paths.device_map, paths.buildings, paths.occupancy, paths.labels,
                        paths.sim_truth})
    ctx.out << "wrote " << p.string() << "\n";
  ctx.write("sim_config.json", sim_cfg.to_json());
  ctx.out << fmt::format("{} events, {} infections, {} positives\n", output.log.events.size(),
                         output.truth.infections.size(), output.truth.labels().positive_count());
  return 0;
}

int cmd_ingest(const Context& ctx) {
  auto log_path = ctx.require_input(ctx.cfg.log, "association_log.csv", "association log");
  auto loaded = ingest_log(ctx, log_path);
  ctx.write("records.csv", loaded.records.to_csv());
  ctx.write("rejects.jsonl", rejects_to_jsonl(loaded.rejects));
  const auto& s = *loaded.summary;
  Json summary = {{"data_lines", loaded.data_lines},
                  {"rejected_lines", loaded.rejects.size()},
                  {"disassociations", loaded.disassociations},
                  {"events", s.events},
                  {"records", s.records},
                  {"users", loaded.records.users().size()},
                  {"aps", loaded.records.aps().size()},
                  {"unmapped_events", s.unmapped_events},
                  {"dropped_events", s.dropped_events},
                  {"anonymized", ctx.cfg.anonymize_salt.has_value()}};
  write_sidecar(ctx, "records.csv", loaded.inputs, {{"summary", summary}});
  ctx.out << fmt::format("{} events -> {} records, {} rejected lines\n", s.events, s.records,
                         loaded.rejects.size());
  return 0;
}

Epoch parse_as_of(const std::string& text, const EpochConfig& epochs) {
  Epoch value = 0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec == std::errc() && ptr == end) return value;
  auto t = parse_timestamp(text);
  if (!t) fail(ErrorCode::kParameter, "--as-of must be an epoch index or a timestamp, got " + text);
  return to_epoch(*t, epochs);
}

int cmd_build_graph(const Context& ctx) {
  auto loaded = load_records(ctx);
  Epoch t = ctx.cfg.as_of ? parse_as_of(*ctx.cfg.as_of, ctx.cfg.epochs())
                          : study_range(loaded.records).last;
  auto graph = build_graph(loaded.records, t, ctx.cfg.graph_params(), ctx.cfg.threads);
  ctx.write("graph.csv", graph.edges_csv());
  Json sidecar = Json::parse(graph.sidecar_json());
  write_sidecar(ctx, "graph.csv", loaded.inputs, sidecar);
  ctx.out << fmt::format("G({}) has {} nodes and {} edges\n", t, graph.nodes().size(),
                         graph.edges().size());
  return 0;
}

int cmd_infer_truth(const Context& ctx) {
  auto loaded = load_records(ctx);
  auto inferred = infer_truth(ctx, loaded.records);
  ctx.write("truth.csv", inferred.truth.to_csv());
  std::string residents = "user_id,building_id\n";
  for (const auto& [user, buildings] : inferred.residents)
    for (const auto& b : buildings) residents += csv::escape(user) + "," + csv::escape(b) + "\n";
  ctx.write("residents.csv", residents);

  Json extra;
  extra["tau_r"] = inferred.params.tau_r;
  extra["window_hour"] = inferred.params.window_hour;
  extra["selection"] = ctx.cfg.top_capacity ? "top_capacity" : "threshold";
  extra["hour_mse"] = inferred.hour ? Json(inferred.hour->mse) : Json(nullptr);
  extra["tau_r_mse"] = inferred.calibration ? Json(inferred.calibration->mse) : Json(nullptr);
  extra["labeled"] = inferred.truth.size();
  extra["positives"] = inferred.truth.positive_count();
  Json inputs = merge(loaded.inputs, inferred.inputs);
  write_sidecar(ctx, "truth.csv", inputs, extra);
  write_sidecar(ctx, "residents.csv", inputs, extra);
  ctx.out << fmt::format("window hour {}, tau_r {}: {} labeled, {} positive\n",
                         inferred.params.window_hour, inferred.params.tau_r, inferred.truth.size(),
                         inferred.truth.positive_count());
  return 0;
}

std::vector<Epoch> positive_times(const TruthSet& truth) {
  std::vector<Epoch> times;
  for (const auto& [user, t] : truth.positives()) times.push_back(t);
  return times;
}

std::vector<std::string> labeled_users(const TruthSet& truth) {
  std::vector<std::string> users;
  for (const auto& [user, label] : truth.labels) users.push_back(user);
  return users;
}

int cmd_score(const Context& ctx) {
  auto loaded = load_records(ctx);
  auto truth = load_truth(ctx, loaded.records);
  EpochRange study = study_range(loaded.records);
  SnapshotCache cache(loaded.records, ctx.cfg.graph_params(), ctx.cfg.threads);
  auto times = positive_times(truth.truth);
  cache.prepare(times);
  auto timelines = exposure_timelines(labeled_users(truth.truth), truth.truth, cache.provider(),
                                      ctx.cfg.exposure_params(), study, ctx.cfg.threads);
  ctx.write("exposure.csv", timelines_to_csv(timelines));
  write_sidecar(ctx, "exposure.csv", merge(loaded.inputs, truth.inputs),
                {{"study", {{"first_epoch", study.first}, {"last_epoch", study.last}}}});
  return 0;
}

HighSpreadOptions high_spread_options(const RunConfig& cfg) {
  return HighSpreadOptions{cfg.min_users, 7, 14, cfg.top_k};
}

int cmd_high_spread(const Context& ctx) {
  auto loaded = load_records(ctx);
  auto truth = load_truth(ctx, loaded.records);
  LocalClock clock{ctx.cfg.epochs(), ctx.cfg.utc_offset_minutes};
  auto table = high_spread_events(loaded.records, truth.truth, clock, high_spread_options(ctx.cfg));
  ctx.write("high_spread.csv", report::high_spread_csv(table));
  write_sidecar(ctx, "high_spread.csv", merge(loaded.inputs, truth.inputs));
  return 0;
}

Json run_validation(const Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  auto loaded = load_records(ctx);
  auto truth_input = load_truth(ctx, loaded.records);
  const TruthSet& truth = truth_input.truth;
  Json inputs = merge(loaded.inputs, truth_input.inputs);
  EpochRange study = study_range(loaded.records);
  LocalClock clock{cfg.epochs(), cfg.utc_offset_minutes};

  SnapshotCache cache(loaded.records, cfg.graph_params(), cfg.threads);
  auto times = positive_times(truth);
  cache.prepare(times);
  auto provider = cache.provider();

  ValidationReport main = contact_ppv(truth, provider, cfg.eval_params(cfg.gamma));
  std::vector<ValidationReport> sweep;
  for (double g : cfg.gamma_sweep) sweep.push_back(contact_ppv(truth, provider, cfg.eval_params(g)));
  auto histogram = plausible_transmissions(truth, provider, cfg.eval_params(cfg.gamma));

  auto timelines = exposure_timelines(labeled_users(truth), truth, provider, cfg.exposure_params(),
                                      study, cfg.threads);
  Epoch tau_p = cfg.eval_params(cfg.gamma).tau_p;
  auto roc = exposure_roc(truth, timelines, cfg.gamma_sweep, tau_p);
  auto dates = daily_dates(study, cfg);
  auto risk = risk_ratio_series(truth, timelines, cfg.gamma, tau_p, dates);
  auto cases = new_case_series(truth, tau_p, dates);
  auto spread = high_spread_events(loaded.records, truth, clock, high_spread_options(cfg));
  auto rows = sensitivity(loaded.records, truth, cfg.eval_params(cfg.gamma), cfg.fractions,
                          cfg.seed.value_or(42), cfg.threads);

  ctx.write("ppv_vs_gamma.csv", report::ppv_vs_gamma_csv(sweep));
  ctx.write("scale_vs_ppv.csv", report::scale_vs_ppv_csv(sweep));
  ctx.write("roc.csv", report::roc_csv(roc));
  ctx.write("risk_ratio.csv", report::risk_ratio_csv(risk, clock));
  ctx.write("rhat_hist.csv", report::rhat_hist_csv(histogram));
  ctx.write("new_cases.csv", report::new_cases_csv(cases, clock));
  ctx.write("high_spread.csv", report::high_spread_csv(spread));
  ctx.write("sensitivity.csv", report::sensitivity_csv(rows));
  for (std::string_view name : {"ppv_vs_gamma.csv", "scale_vs_ppv.csv", "roc.csv", "risk_ratio.csv",
                                "rhat_hist.csv", "new_cases.csv", "high_spread.csv",
                                "sensitivity.csv"})
    write_sidecar(ctx, name, inputs);

  Json doc;
  doc["command"] = cfg.command;
  doc["params"] = params_json(cfg);
  doc["inputs"] = inputs;
  doc["study"] = {{"first_epoch", study.first}, {"last_epoch", study.last}};
  doc["report"] = report::to_json(main);
  auto& sweep_json = doc["ppv_vs_gamma"] = Json::array();
  for (const auto& r : sweep) {
    Json j = report::to_json(r);
    j.erase("per_case");
    sweep_json.push_back(std::move(j));
  }
  auto& hist_json = doc["rhat_hist"] = Json::object();
  for (const auto& [bin, count] : histogram) hist_json[std::to_string(bin)] = count;
  auto& roc_json = doc["roc"] = Json::array();
  for (const auto& p : roc) roc_json.push_back(report::to_json(p));
  auto& sens_json = doc["sensitivity"] = Json::array();
  for (const auto& row : rows) sens_json.push_back(report::to_json(row));
  ctx.write("report.json", doc.dump(2) + "\n");

  ctx.out << fmt::format("gamma {}: ppv {}, ppv_rand {}, scale {}\n", cfg.gamma,
                         main.ppv ? report::number(*main.ppv) : "undefined",
                         report::number(main.ppv_rand), report::number(main.scale));
  return doc;
}

int cmd_validate(const Context& ctx) {
  run_validation(ctx);
  return 0;
}

int cmd_report(const Context& ctx) {
  Json doc;
  if (auto path = ctx.input(ctx.cfg.report, "report.json")) {
    doc = Json::parse(csv::read_file(*path), nullptr, false);
    if (doc.is_discarded() || !doc.contains("report") || !doc.contains("params"))
      fail(ErrorCode::kFormat, path->string() + " is not a validation report");
  } else {
    doc = run_validation(ctx);
  }
  ctx.write("report.md", report::markdown(doc));
  return 0;
}

}  // namespace

int run(const RunConfig& config, std::ostream& out, std::ostream& err) {
  static const std::map<std::string, std::function<int(const Context&)>, std::less<>> commands = {
      {"simulate", cmd_simulate},   {"ingest", cmd_ingest},           {"build-graph", cmd_build_graph},
      {"infer-truth", cmd_infer_truth}, {"score", cmd_score},         {"validate", cmd_validate},
      {"high-spread", cmd_high_spread}, {"report", cmd_report}};
  auto report_error = [&](ErrorCode code, const std::string& message) {
    nlohmann::ordered_json j;
    j["error"] = error_code_name(code);
    j["code"] = static_cast<int>(code);
    j["message"] = message;
    err << j.dump() << "\n";
    return static_cast<int>(code);
  };
  try {
    config.validate();
    return commands.at(config.command)(Context{config, out});
  } catch (const Error& e) {
    return report_error(e.code(), e.what());
  } catch (const nlohmann::json::exception& e) {
    return report_error(ErrorCode::kFormat, e.what());
  } catch (const std::bad_alloc&) {
    return report_error(ErrorCode::kData, "out of memory");
  }
}

}  // namespace colotrace
