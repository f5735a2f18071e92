#pragma once

#include <array>
#include <compare>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "colotrace/ingest.hpp"

namespace colotrace {

enum class BuildingRole { kRegularDorm, kIsolationDorm, kOther };

std::string_view role_name(BuildingRole role);
std::optional<BuildingRole> parse_role(std::string_view name);

struct BuildingInfo {
  std::string id;
  BuildingRole role = BuildingRole::kOther;
  std::optional<std::int64_t> capacity;
  std::vector<std::string> ap_ids;
};

// Buildings and the AP -> building assignment. Every AP belongs to at most
// one building.
class CampusLayout {
 public:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  void add_building(BuildingInfo building);

  const std::vector<BuildingInfo>& buildings() const { return buildings_; }
  std::optional<std::size_t> find_building(std::string_view id) const;
  std::optional<std::size_t> building_of(std::string_view ap) const;

  // For each AP in the table, its building index or npos.
  std::vector<std::size_t> map_aps(const IdTable& aps) const;

  // CSV ap_id,building_id,role,capacity. A row with an empty ap_id declares
  // a building without APs.
  static CampusLayout parse(std::string_view text, std::string_view source = "buildings");
  static CampusLayout load(const std::filesystem::path& path);
  std::string to_csv() const;

 private:
  std::vector<BuildingInfo> buildings_;
  std::map<std::string, std::size_t, std::less<>> by_id_;
  std::map<std::string, std::size_t, std::less<>> by_ap_;
};

// Maps epochs to local wall-clock time.
struct LocalClock {
  EpochConfig epochs;
  int utc_offset_minutes = 0;

  // Local time at the start of the epoch.
  LocalTime at(Epoch e) const { return to_local(epochs.start_of(e), utc_offset_minutes); }
};

struct BuildingDay {
  std::string building;
  std::int64_t day;  // local days since 1970-01-01

  auto operator<=>(const BuildingDay&) const = default;
};

using OccupancyCounts = std::map<BuildingDay, std::int64_t>;

// CSV building_id,date,count.
OccupancyCounts parse_occupancy(std::string_view text, std::string_view source = "occupancy");
OccupancyCounts load_occupancy(const std::filesystem::path& path);
std::string occupancy_to_csv(const OccupancyCounts& counts);

// Distinct users seen on each building's APs during local hour
// [hour, hour+1), per local date. Epochs are attributed by their start.
OccupancyCounts hourly_device_counts(const RecordSet& records, const CampusLayout& layout,
                                     int hour, const LocalClock& clock);

struct HourChoice {
  int hour = 0;
  std::array<double, 24> mse{};
};

// Picks the hour whose counts best match true_counts (least mean squared
// error over (building, date) pairs within the records' date range; ties
// go to the smaller hour). Throws Error(kData) when nothing overlaps.
HourChoice choose_occupancy_hour(const RecordSet& records, const CampusLayout& layout,
                                 const OccupancyCounts& true_counts, const LocalClock& clock);

enum class ResidentSelection {
  kThreshold,    // at least tau_r mornings
  kTopCapacity,  // the N_h users with the most mornings in building h;
                 // buildings without a capacity use the threshold
};

struct ResidencyParams {
  int window_hour = 4;
  int tau_r = 3;
  int utc_offset_minutes = 0;
  ResidentSelection selection = ResidentSelection::kThreshold;

  void validate() const;
};

// Distinct local mornings each user was seen in each dorm during the
// window hour. Keyed by user name, then building id.
using MorningCounts = std::map<std::string, std::map<std::string, int>>;

MorningCounts morning_counts(const RecordSet& records, const CampusLayout& layout,
                             int window_hour, const LocalClock& clock);

// Probable residents of regular and isolation dorms.
std::map<std::string, std::set<std::string>> infer_residents(const RecordSet& records,
                                                             const CampusLayout& layout,
                                                             const ResidencyParams& params,
                                                             const EpochConfig& epochs);

struct TauCalibration {
  int tau_r = 0;
  std::vector<double> mse;  // index = tau_r, 0..30
};

inline constexpr int kMaxTauR = 30;

// Sweeps tau_r over [0, 30] against regular-dorm capacities. Throws
// Error(kData) if a regular dorm lacks a capacity or none exist.
TauCalibration calibrate_tau_r(const RecordSet& records, const CampusLayout& layout,
                               const ResidencyParams& params, const EpochConfig& epochs);

struct Label {
  bool positive = false;
  Epoch t_positive = 0;  // meaningful only when positive

  friend bool operator==(const Label&, const Label&) = default;
};

enum class Provenance { kInferred, kInjected };

struct EpochRange {
  Epoch first;
  Epoch last;  // inclusive

  bool contains(Epoch e) const { return e >= first && e <= last; }
};

// Labeled population: positives with their positive epoch, and assumed
// negatives.
struct TruthSet {
  std::map<std::string, Label> labels;
  Provenance provenance = Provenance::kInjected;

  std::size_t size() const { return labels.size(); }
  std::size_t positive_count() const;
  // (user, t_positive) sorted by (t_positive, user).
  std::vector<std::pair<std::string, Epoch>> positives() const;

  // Keeps only listed users.
  TruthSet restrict_to(const std::set<std::string>& users) const;

  // CSV user_id,label,positive_epoch; label is positive or assumed_negative.
  std::string to_csv() const;
  static TruthSet parse(std::string_view text, std::string_view source = "truth");
  static TruthSet load(const std::filesystem::path& path);

  bool operator==(const TruthSet& other) const = default;
};

// Residents of regular dorms labeled positive when seen in isolation dorms
// on >= tau_r distinct mornings (t_positive = first isolation association),
// assumed negative otherwise. Records outside study are ignored.
TruthSet infer_positives(const RecordSet& records, const CampusLayout& layout,
                         const ResidencyParams& params, const EpochConfig& epochs,
                         EpochRange study);

// Half-open [begin, end).
struct Stay {
  Epoch begin;
  Epoch end;

  friend bool operator==(const Stay&, const Stay&) = default;
};

// From the user's first isolation-dorm record to their next record in any
// other building; without one, through their last record (end = last + 1).
// Throws Error(kData) if the user is not positive in truth.
Stay isolation_stay(const RecordSet& records, std::string_view user, const CampusLayout& layout,
                    const TruthSet& truth);

}  // namespace colotrace
