#include <cstdlib>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include "json.hpp"

#include "colotrace/pipeline.hpp"
#include "testing.hpp"

using namespace colotrace;
namespace fs = std::filesystem;

namespace {

const char* kSmallSim = R"({"n_users": 80, "n_buildings": 8, "n_isolation_dorms": 2,
  "n_regular_dorms": 3, "n_dining_halls": 1, "n_aps_per_building": 4, "study_days": 21,
  "class_size": 10, "initial_infected": 5, "seed_window_days": 5, "transmission_prob": 0.01,
  "seed": 3})";

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result invoke(RunConfig cfg) {
  std::ostringstream out;
  std::ostringstream err;
  int code = run(cfg, out, err);
  return {code, out.str(), err.str()};
}

// Runs the CLI binary; returns its exit status and stderr.
Result cli(const std::string& args, const fs::path& dir) {
  auto err_path = dir / "stderr.txt";
  std::string command = std::string(COLOTRACE_CLI_PATH) + " " + args + " > " +
                        (dir / "stdout.txt").string() + " 2> " + err_path.string();
  int status = std::system(command.c_str());
  int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return {code, slurp(dir / "stdout.txt"), slurp(err_path)};
}

fs::path simulated(const std::string& name) {
  auto dir = testing::scratch_dir(name);
  std::ofstream(dir / "sim.json") << kSmallSim;
  RunConfig cfg;
  cfg.command = "simulate";
  cfg.out_dir = dir;
  cfg.sim_config = dir / "sim.json";
  auto result = invoke(cfg);
  REQUIRE_MESSAGE(result.code == 0, result.err);
  return dir;
}

}  // namespace

TEST_CASE("simulate then validate") {
  auto dir = simulated("pipeline_validate");
  for (auto name : {"association_log.csv", "device_map.csv", "buildings.csv", "occupancy.csv",
                    "true_labels.csv", "sim_truth.json"})
    CHECK(fs::exists(dir / name));

  RunConfig cfg;
  cfg.command = "validate";
  cfg.out_dir = dir;
  cfg.truth = dir / "true_labels.csv";
  cfg.gamma_sweep = {0.5, 2, 8};
  auto result = invoke(cfg);
  REQUIRE_MESSAGE(result.code == 0, result.err);

  auto roc = slurp(dir / "roc.csv");
  CHECK(std::count(roc.begin(), roc.end(), '\n') == 4);
  for (auto stem : {"roc", "ppv_vs_gamma", "scale_vs_ppv", "risk_ratio", "rhat_hist", "new_cases",
                    "high_spread", "sensitivity"}) {
    CHECK(fs::exists(dir / (std::string(stem) + ".csv")));
    CHECK(fs::exists(dir / (std::string(stem) + ".json")));
  }
  auto report = nlohmann::json::parse(slurp(dir / "report.json"));
  CHECK(report["command"] == "validate");
  CHECK(report["ppv_vs_gamma"].size() == 3);
  CHECK(report["sensitivity"].size() == 3);

  cfg.command = "report";
  cfg.report = dir / "report.json";
  REQUIRE(invoke(cfg).code == 0);
  auto md = slurp(dir / "report.md");
  CHECK(md.find("PPV") != std::string::npos);
}

TEST_CASE("inferred truth path") {
  auto dir = simulated("pipeline_infer");
  RunConfig cfg;
  cfg.out_dir = dir;
  cfg.command = "ingest";
  REQUIRE(invoke(cfg).code == 0);
  CHECK(fs::exists(dir / "records.csv"));
  CHECK(fs::exists(dir / "rejects.jsonl"));
  cfg.command = "infer-truth";
  auto result = invoke(cfg);
  REQUIRE_MESSAGE(result.code == 0, result.err);
  auto meta = nlohmann::json::parse(slurp(dir / "truth.json"));
  CHECK(meta.contains("tau_r"));
  CHECK(meta.contains("window_hour"));
  auto truth = TruthSet::load(dir / "truth.csv");
  CHECK(truth.size() > 0);
  cfg.command = "score";
  CHECK(invoke(cfg).code == 0);
  CHECK(fs::exists(dir / "exposure.csv"));
  cfg.command = "high-spread";
  CHECK(invoke(cfg).code == 0);
  CHECK(fs::exists(dir / "high_spread.csv"));
}

TEST_CASE("cli build-graph is reproducible") {
  auto dir = simulated("pipeline_graph");
  auto first = cli("build-graph --out " + dir.string() + " --as-of 500 --threads 2", dir);
  REQUIRE_MESSAGE(first.code == 0, first.err);
  auto bytes = slurp(dir / "graph.csv");
  auto sidecar = slurp(dir / "graph.json");
  auto second = cli("build-graph --out " + dir.string() + " --as-of 500 --threads 1", dir);
  REQUIRE(second.code == 0);
  CHECK(slurp(dir / "graph.csv") == bytes);
  CHECK(slurp(dir / "graph.json") == sidecar);
  CHECK(bytes.rfind("user_i,user_j,weight", 0) == 0);
}

TEST_CASE("cli errors") {
  auto dir = simulated("pipeline_errors");
  auto bad_param = cli("validate --out " + dir.string() + " --tau-p-days 0", dir);
  CHECK(bad_param.code == 4);
  auto error = nlohmann::json::parse(bad_param.err);
  CHECK(error["code"] == 4);
  CHECK(error.contains("message"));

  CHECK(cli("validate --out " + dir.string() + " --gamma -1", dir).code == 4);
  CHECK(cli("bogus", dir).code == 4);

  auto empty = testing::scratch_dir("pipeline_missing");
  CHECK(cli("ingest --out " + empty.string(), empty).code == 5);
  CHECK(cli("ingest --out " + empty.string() + " --log " + (empty / "nope.csv").string(), empty).code ==
        5);

  std::ofstream(empty / "bad.csv") << "who,where\na,b\n";
  std::ofstream(empty / "map.csv") << "device_id,user_id\n";
  CHECK(cli("ingest --out " + empty.string() + " --log " + (empty / "bad.csv").string() +
                " --device-map " + (empty / "map.csv").string(),
            empty)
            .code == 3);
}

TEST_CASE("cli config file") {
  auto dir = simulated("pipeline_config");
  std::ofstream(dir / "run.toml") << "gamma = 2\ntau_p_days = 5\ngamma_sweep = [1, 4]\n";
  auto result = cli("validate --out " + dir.string() + " --truth " + (dir / "true_labels.csv").string() +
                        " --config " + (dir / "run.toml").string(),
                    dir);
  REQUIRE_MESSAGE(result.code == 0, result.err);
  auto report = nlohmann::json::parse(slurp(dir / "report.json"));
  CHECK(report["params"]["gamma"] == 2.0);
  CHECK(report["ppv_vs_gamma"].size() == 2);
}
