#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "colotrace/ingest.hpp"
#include "colotrace/truth.hpp"

namespace colotrace::sim {

// Synthetic campus and epidemic. Local time is fixed-offset; the study
// starts at local midnight of start_date.
struct SimConfig {
  std::uint64_t seed = 42;
  int n_users = 500;
  int n_buildings = 20;
  int n_isolation_dorms = 5;
  int n_regular_dorms = 8;
  int n_dining_halls = 2;
  int n_aps_per_building = 12;
  int study_days = 90;
  int epoch_minutes = 15;
  std::string start_date = "2021-02-01";
  int utc_offset_minutes = 0;

  // Mobility. Residents sleep at home during [night_start_hour,
  // night_end_hour) with only their phone associating.
  int night_start_hour = 0;
  int night_end_hour = 7;
  double night_activity_prob = 0.5;   // phone, per asleep epoch
  double day_activity_prob = 0.7;     // phone, per awake epoch
  double laptop_activity_prob = 0.3;  // per awake epoch, never at night
  int max_laptops = 2;
  int courses_per_user = 4;
  int class_size = 25;
  double class_attendance = 0.9;
  double dining_prob = 0.6;           // per meal
  double evening_visit_prob = 0.1;    // evening in another regular dorm
  double overnight_visit_prob = 0.02; // night in another regular dorm
  int staff_per_building = 2;         // non-dorm and isolation buildings, awake hours

  // Epidemic.
  int initial_infected = 20;
  double seed_window_days = 30.0;     // seeds are exposed uniformly in this window
  double transmission_prob = 0.0008;  // per infectious co-present user per AP-epoch
  double incubation_days = 2.0;
  double infectious_days = 10.0;
  double test_cadence_days = 3.5;
  double isolation_lag_days = 0.5;
  double isolation_days = 10.0;
  bool confounded = false;
  double community_infection_prob = 0.0;  // per susceptible per day, confounded mode

  // Keep every (epoch, user, ap) true position; test-scale only.
  bool record_presence = false;

  void validate() const;
  static SimConfig from_json(std::string_view text);
  static SimConfig load(const std::filesystem::path& path);
  std::string to_json() const;
};

struct Infection {
  std::string user;
  Epoch infection_epoch;                    // first epoch in the exposed state
  std::optional<Epoch> detection_epoch;     // positive test
  std::optional<Epoch> isolation_start;     // move-in
  std::optional<Epoch> isolation_end;       // move-out (exclusive)
  std::optional<std::string> isolation_building;
  std::string source;                       // "seed", "community", or "network"
  std::optional<std::string> infector;
  std::optional<std::string> ap;            // where the transmission happened
  std::optional<Epoch> colocation_epoch;
};

struct Presence {
  Epoch epoch;
  std::uint32_t user;  // index into SimOutput::people
  std::uint32_t ap;    // index into SimOutput::ap_names
};

struct SimTruth {
  std::map<std::string, std::string> residents;  // user -> home dorm
  std::vector<std::string> staff;
  std::vector<Infection> infections;             // in infection order
  OccupancyCounts occupancy;                     // isolation dorms x study days
  EpochRange study{0, 0};
  Epoch incubation_epochs = 0;
  Epoch infectious_epochs = 0;

  // Residents whose isolation began within the study, positive at move-in.
  TruthSet labels() const;
  std::string to_json(const SimConfig& config) const;
};

struct SimOutput {
  EventLog log;
  DeviceUserMap devices;
  CampusLayout layout;
  SimTruth truth;
  EpochConfig epochs;
  std::vector<std::string> people;    // residents then staff
  std::vector<std::string> ap_names;
  std::vector<Presence> presence;     // only with record_presence
};

// Deterministic in config.seed. Throws Error(kParameter) on an infeasible
// configuration.
SimOutput generate(const SimConfig& config);

struct ExportPaths {
  std::filesystem::path log;
  std::filesystem::path device_map;
  std::filesystem::path buildings;
  std::filesystem::path occupancy;
  std::filesystem::path labels;
  std::filesystem::path sim_truth;
};

ExportPaths export_files(const SimOutput& output, const SimConfig& config,
                         const std::filesystem::path& directory);

std::string log_to_csv(const EventLog& log);

}  // namespace colotrace::sim
