#include "colotrace/truth.hpp"

#include <algorithm>
#include <limits>
#include <tuple>

#include <fmt/format.h>

#include "colotrace/csv.hpp"
#include "colotrace/error.hpp"

namespace colotrace {

std::string_view role_name(BuildingRole role) {
  switch (role) {
    case BuildingRole::kRegularDorm: return "regular_dorm";
    case BuildingRole::kIsolationDorm: return "isolation_dorm";
    case BuildingRole::kOther: return "other";
  }
  return "other";
}

std::optional<BuildingRole> parse_role(std::string_view name) {
  if (name == "regular_dorm") return BuildingRole::kRegularDorm;
  if (name == "isolation_dorm") return BuildingRole::kIsolationDorm;
  if (name == "other") return BuildingRole::kOther;
  return std::nullopt;
}

void CampusLayout::add_building(BuildingInfo building) {
  if (building.id.empty()) fail(ErrorCode::kData, "empty building_id");
  if (by_id_.count(building.id)) fail(ErrorCode::kData, "duplicate building " + building.id);
  std::size_t index = buildings_.size();
  for (const auto& ap : building.ap_ids) {
    if (!by_ap_.emplace(ap, index).second)
      fail(ErrorCode::kData, fmt::format("AP {} assigned to more than one building", ap));
  }
  by_id_.emplace(building.id, index);
  buildings_.push_back(std::move(building));
}

std::optional<std::size_t> CampusLayout::find_building(std::string_view id) const {
  if (auto it = by_id_.find(id); it != by_id_.end()) return it->second;
  return std::nullopt;
}

std::optional<std::size_t> CampusLayout::building_of(std::string_view ap) const {
  if (auto it = by_ap_.find(ap); it != by_ap_.end()) return it->second;
  return std::nullopt;
}

std::vector<std::size_t> CampusLayout::map_aps(const IdTable& aps) const {
  std::vector<std::size_t> out(aps.size(), npos);
  for (std::size_t i = 0; i < aps.size(); ++i)
    if (auto b = building_of(aps.name(static_cast<std::uint32_t>(i)))) out[i] = *b;
  return out;
}

CampusLayout CampusLayout::parse(std::string_view text, std::string_view source) {
  auto table = csv::parse_table(text, source);
  CampusLayout layout;
  if (table.header.empty()) return layout;
  std::size_t ap_col = table.require_column("ap_id", source);
  std::size_t building_col = table.require_column("building_id", source);
  std::size_t role_col = table.require_column("role", source);
  auto capacity_col = table.column("capacity");

  // Buildings keep first-appearance order.
  std::vector<BuildingInfo> pending;
  std::map<std::string, std::size_t, std::less<>> index;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    auto where = fmt::format("{}:{}", source, table.line_numbers[i]);
    auto role = parse_role(row[role_col]);
    if (!role) fail(ErrorCode::kFormat, fmt::format("{}: unknown role '{}'", where, row[role_col]));
    std::optional<std::int64_t> capacity;
    if (capacity_col && !row[*capacity_col].empty()) {
      try {
        std::size_t used = 0;
        capacity = std::stoll(row[*capacity_col], &used);
        if (used != row[*capacity_col].size() || *capacity < 0) throw std::invalid_argument("");
      } catch (const std::exception&) {
        fail(ErrorCode::kFormat, fmt::format("{}: bad capacity '{}'", where, row[*capacity_col]));
      }
    }
    const std::string& id = row[building_col];
    auto [it, inserted] = index.emplace(id, pending.size());
    if (inserted) {
      pending.push_back({id, *role, capacity, {}});
    } else {
      auto& b = pending[it->second];
      if (b.role != *role || (capacity && b.capacity && *capacity != *b.capacity))
        fail(ErrorCode::kData, fmt::format("{}: conflicting attributes for building {}", where, id));
      if (!b.capacity) b.capacity = capacity;
    }
    if (!row[ap_col].empty()) pending[it->second].ap_ids.push_back(row[ap_col]);
  }
  for (auto& b : pending) layout.add_building(std::move(b));
  return layout;
}

CampusLayout CampusLayout::load(const std::filesystem::path& path) {
  return parse(csv::read_file(path), path.string());
}

std::string CampusLayout::to_csv() const {
  std::string out = "ap_id,building_id,role,capacity\n";
  for (const auto& b : buildings_) {
    std::string capacity = b.capacity ? std::to_string(*b.capacity) : "";
    if (b.ap_ids.empty())
      out += fmt::format(",{},{},{}\n", csv::escape(b.id), role_name(b.role), capacity);
    for (const auto& ap : b.ap_ids)
      out += fmt::format("{},{},{},{}\n", csv::escape(ap), csv::escape(b.id), role_name(b.role),
                         capacity);
  }
  return out;
}

OccupancyCounts parse_occupancy(std::string_view text, std::string_view source) {
  auto table = csv::parse_table(text, source);
  OccupancyCounts counts;
  if (table.header.empty()) return counts;
  std::size_t building = table.require_column("building_id", source);
  std::size_t date = table.require_column("date", source);
  std::size_t count = table.require_column("count", source);
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    auto day = parse_date(row[date]);
    std::int64_t value = 0;
    bool ok = day.has_value();
    if (ok) {
      try {
        std::size_t used = 0;
        value = std::stoll(row[count], &used);
        ok = used == row[count].size() && value >= 0;
      } catch (const std::exception&) {
        ok = false;
      }
    }
    if (!ok) fail(ErrorCode::kFormat, fmt::format("{}:{}: bad row", source, table.line_numbers[i]));
    counts[{row[building], *day}] = value;
  }
  return counts;
}

OccupancyCounts load_occupancy(const std::filesystem::path& path) {
  return parse_occupancy(csv::read_file(path), path.string());
}

std::string occupancy_to_csv(const OccupancyCounts& counts) {
  std::string out = "building_id,date,count\n";
  for (const auto& [key, count] : counts)
    out += fmt::format("{},{},{}\n", csv::escape(key.building), format_date(key.day), count);
  return out;
}

namespace {

// (building, local day, local hour, user) for every record on a mapped AP.
struct Sighting {
  std::uint32_t building;
  std::int64_t day;
  int hour;
  UserIndex user;

  auto operator<=>(const Sighting&) const = default;
};

template <typename Keep>
std::vector<Sighting> sightings(const RecordSet& records, const CampusLayout& layout,
                                const LocalClock& clock, Keep&& keep) {
  auto ap_building = layout.map_aps(records.aps());
  std::vector<Sighting> out;
  for (const auto& r : records.records()) {
    std::size_t b = ap_building[r.ap];
    if (b == CampusLayout::npos || !keep(layout.buildings()[b])) continue;
    LocalTime local = clock.at(r.epoch);
    out.push_back({static_cast<std::uint32_t>(b), local.day, local.hour, r.user});
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

bool is_dorm(const BuildingInfo& b) {
  return b.role == BuildingRole::kRegularDorm || b.role == BuildingRole::kIsolationDorm;
}

void check_hour(int hour) {
  if (hour < 0 || hour >= 24)
    fail(ErrorCode::kParameter, fmt::format("hour must lie in [0, 24), got {}", hour));
}

}  // namespace

OccupancyCounts hourly_device_counts(const RecordSet& records, const CampusLayout& layout, int hour,
                                     const LocalClock& clock) {
  check_hour(hour);
  OccupancyCounts counts;
  for (const auto& s : sightings(records, layout, clock, [](const BuildingInfo&) { return true; }))
    if (s.hour == hour) ++counts[{layout.buildings()[s.building].id, s.day}];
  return counts;
}

HourChoice choose_occupancy_hour(const RecordSet& records, const CampusLayout& layout,
                                 const OccupancyCounts& true_counts, const LocalClock& clock) {
  auto range = records.epoch_range();
  if (!range || true_counts.empty())
    fail(ErrorCode::kData, "occupancy hour selection needs records and true counts");
  std::int64_t first_day = clock.at(range->first).day;
  std::int64_t last_day = clock.at(range->second).day;

  std::set<std::string, std::less<>> wanted;
  for (const auto& [key, count] : true_counts) {
    if (!layout.find_building(key.building))
      fail(ErrorCode::kData, "true counts reference unknown building " + key.building);
    wanted.insert(key.building);
  }
  auto all = sightings(records, layout, clock,
                       [&](const BuildingInfo& b) { return wanted.count(b.id) > 0; });

  // counts[hour][(building, day)]
  std::array<std::map<std::pair<std::uint32_t, std::int64_t>, std::int64_t>, 24> counts;
  for (const auto& s : all) ++counts[static_cast<std::size_t>(s.hour)][{s.building, s.day}];

  HourChoice choice;
  std::size_t pairs = 0;
  for (const auto& [key, truth] : true_counts)
    if (key.day >= first_day && key.day <= last_day) ++pairs;
  if (pairs == 0) fail(ErrorCode::kData, "true counts share no dates with the records");

  double best = std::numeric_limits<double>::infinity();
  for (int h = 0; h < 24; ++h) {
    double sum = 0.0;
    for (const auto& [key, truth] : true_counts) {
      if (key.day < first_day || key.day > last_day) continue;
      auto b = static_cast<std::uint32_t>(*layout.find_building(key.building));
      auto it = counts[static_cast<std::size_t>(h)].find({b, key.day});
      double predicted = it == counts[static_cast<std::size_t>(h)].end() ? 0.0
                                                                         : static_cast<double>(it->second);
      double diff = predicted - static_cast<double>(truth);
      sum += diff * diff;
    }
    double mse = sum / static_cast<double>(pairs);
    choice.mse[static_cast<std::size_t>(h)] = mse;
    if (mse < best) {
      best = mse;
      choice.hour = h;
    }
  }
  return choice;
}

void ResidencyParams::validate() const {
  check_hour(window_hour);
  if (tau_r < 0) fail(ErrorCode::kParameter, fmt::format("tau_r must be >= 0, got {}", tau_r));
}

namespace {

// Per dorm: user -> distinct mornings, indices into the record tables.
struct MorningTable {
  std::vector<std::size_t> dorms;                         // building indices
  std::vector<std::vector<std::pair<UserIndex, int>>> per_dorm;  // sorted by user
};

MorningTable morning_table(const RecordSet& records, const CampusLayout& layout, int hour,
                           const LocalClock& clock) {
  check_hour(hour);
  auto all = sightings(records, layout, clock, is_dorm);
  MorningTable table;
  std::vector<std::size_t> slot(layout.buildings().size(), CampusLayout::npos);
  for (std::size_t b = 0; b < layout.buildings().size(); ++b) {
    if (!is_dorm(layout.buildings()[b])) continue;
    slot[b] = table.dorms.size();
    table.dorms.push_back(b);
  }
  table.per_dorm.resize(table.dorms.size());
  // (building, user, day) unique triples, counted per (building, user).
  std::vector<std::tuple<std::uint32_t, UserIndex, std::int64_t>> mornings;
  for (const auto& s : all)
    if (s.hour == hour) mornings.emplace_back(s.building, s.user, s.day);
  std::sort(mornings.begin(), mornings.end());
  mornings.erase(std::unique(mornings.begin(), mornings.end()), mornings.end());
  for (std::size_t i = 0; i < mornings.size();) {
    auto [b, u, d] = mornings[i];
    std::size_t j = i;
    while (j < mornings.size() && std::get<0>(mornings[j]) == b && std::get<1>(mornings[j]) == u) ++j;
    table.per_dorm[slot[b]].emplace_back(u, static_cast<int>(j - i));
    i = j;
  }
  return table;
}

// Users selected as residents of one dorm.
std::vector<UserIndex> select_residents(const std::vector<std::pair<UserIndex, int>>& counts,
                                        const std::vector<UserIndex>& population,
                                        const BuildingInfo& building,
                                        const ResidencyParams& params, int tau_r) {
  std::vector<UserIndex> out;
  if (params.selection == ResidentSelection::kTopCapacity && building.capacity) {
    auto ranked = counts;
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    auto n = std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(*building.capacity));
    for (std::size_t i = 0; i < n; ++i) out.push_back(ranked[i].first);
    std::sort(out.begin(), out.end());
    return out;
  }
  if (tau_r <= 0) return population;
  for (const auto& [user, mornings] : counts)
    if (mornings >= tau_r) out.push_back(user);
  return out;
}

}  // namespace

MorningCounts morning_counts(const RecordSet& records, const CampusLayout& layout, int window_hour,
                             const LocalClock& clock) {
  auto table = morning_table(records, layout, window_hour, clock);
  MorningCounts out;
  for (std::size_t k = 0; k < table.dorms.size(); ++k)
    for (const auto& [user, mornings] : table.per_dorm[k])
      out[records.users().name(user)][layout.buildings()[table.dorms[k]].id] = mornings;
  return out;
}

std::map<std::string, std::set<std::string>> infer_residents(const RecordSet& records,
                                                             const CampusLayout& layout,
                                                             const ResidencyParams& params,
                                                             const EpochConfig& epochs) {
  params.validate();
  LocalClock clock{epochs, params.utc_offset_minutes};
  auto table = morning_table(records, layout, params.window_hour, clock);
  auto population = records.present_users();
  std::map<std::string, std::set<std::string>> out;
  for (std::size_t k = 0; k < table.dorms.size(); ++k) {
    const auto& building = layout.buildings()[table.dorms[k]];
    for (UserIndex u : select_residents(table.per_dorm[k], population, building, params, params.tau_r))
      out[records.users().name(u)].insert(building.id);
  }
  return out;
}

TauCalibration calibrate_tau_r(const RecordSet& records, const CampusLayout& layout,
                               const ResidencyParams& params, const EpochConfig& epochs) {
  check_hour(params.window_hour);
  LocalClock clock{epochs, params.utc_offset_minutes};
  auto table = morning_table(records, layout, params.window_hour, clock);
  std::size_t population = records.present_users().size();

  std::vector<std::pair<std::size_t, std::int64_t>> candidates;  // (slot, capacity)
  for (std::size_t k = 0; k < table.dorms.size(); ++k) {
    const auto& b = layout.buildings()[table.dorms[k]];
    if (b.role != BuildingRole::kRegularDorm) continue;
    if (!b.capacity) fail(ErrorCode::kData, "regular dorm without capacity: " + b.id);
    candidates.emplace_back(k, *b.capacity);
  }
  if (candidates.empty()) fail(ErrorCode::kData, "no regular dorms to calibrate against");

  TauCalibration out;
  out.mse.assign(kMaxTauR + 1, 0.0);
  double best = std::numeric_limits<double>::infinity();
  for (int tau = 0; tau <= kMaxTauR; ++tau) {
    double sum = 0.0;
    for (auto [k, capacity] : candidates) {
      std::size_t inferred = 0;
      if (tau == 0) {
        inferred = population;
      } else {
        for (const auto& [user, mornings] : table.per_dorm[k])
          if (mornings >= tau) ++inferred;
      }
      double diff = static_cast<double>(inferred) - static_cast<double>(capacity);
      sum += diff * diff;
    }
    double mse = sum / static_cast<double>(candidates.size());
    out.mse[static_cast<std::size_t>(tau)] = mse;
    if (mse < best) {
      best = mse;
      out.tau_r = tau;
    }
  }
  return out;
}

std::size_t TruthSet::positive_count() const {
  std::size_t n = 0;
  for (const auto& [user, label] : labels) n += label.positive ? 1 : 0;
  return n;
}

std::vector<std::pair<std::string, Epoch>> TruthSet::positives() const {
  std::vector<std::pair<std::string, Epoch>> out;
  for (const auto& [user, label] : labels)
    if (label.positive) out.emplace_back(user, label.t_positive);
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return std::tie(a.second, a.first) < std::tie(b.second, b.first);
  });
  return out;
}

TruthSet TruthSet::restrict_to(const std::set<std::string>& users) const {
  TruthSet out;
  out.provenance = provenance;
  for (const auto& [user, label] : labels)
    if (users.count(user)) out.labels.emplace(user, label);
  return out;
}

std::string TruthSet::to_csv() const {
  std::string out = "user_id,label,positive_epoch\n";
  for (const auto& [user, label] : labels) {
    if (label.positive)
      out += fmt::format("{},positive,{}\n", csv::escape(user), label.t_positive);
    else
      out += fmt::format("{},assumed_negative,\n", csv::escape(user));
  }
  return out;
}

TruthSet TruthSet::parse(std::string_view text, std::string_view source) {
  auto table = csv::parse_table(text, source);
  TruthSet truth;
  truth.provenance = Provenance::kInjected;
  if (table.header.empty()) return truth;
  std::size_t user = table.require_column("user_id", source);
  std::size_t label = table.require_column("label", source);
  std::size_t epoch = table.require_column("positive_epoch", source);
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    auto where = fmt::format("{}:{}", source, table.line_numbers[i]);
    if (row[user].empty()) fail(ErrorCode::kFormat, where + ": empty user_id");
    Label parsed;
    if (row[label] == "positive") {
      parsed.positive = true;
      try {
        std::size_t used = 0;
        parsed.t_positive = std::stoll(row[epoch], &used);
        if (used != row[epoch].size()) throw std::invalid_argument("");
      } catch (const std::exception&) {
        fail(ErrorCode::kFormat, where + ": positive label needs an integer positive_epoch");
      }
    } else if (row[label] != "assumed_negative") {
      fail(ErrorCode::kFormat, fmt::format("{}: unknown label '{}'", where, row[label]));
    }
    if (!truth.labels.emplace(row[user], parsed).second)
      fail(ErrorCode::kData, fmt::format("{}: duplicate user {}", where, row[user]));
  }
  return truth;
}

TruthSet TruthSet::load(const std::filesystem::path& path) {
  return parse(csv::read_file(path), path.string());
}

TruthSet infer_positives(const RecordSet& all_records, const CampusLayout& layout,
                         const ResidencyParams& params, const EpochConfig& epochs,
                         EpochRange study) {
  params.validate();
  RecordSet records = all_records.filter_epochs(study.first, study.last);
  LocalClock clock{epochs, params.utc_offset_minutes};
  auto table = morning_table(records, layout, params.window_hour, clock);
  auto population = records.present_users();
  const std::size_t n_users = records.users().size();

  std::vector<bool> resident(n_users, false);
  for (std::size_t k = 0; k < table.dorms.size(); ++k) {
    const auto& building = layout.buildings()[table.dorms[k]];
    if (building.role != BuildingRole::kRegularDorm) continue;
    for (UserIndex u : select_residents(table.per_dorm[k], population, building, params, params.tau_r))
      resident[u] = true;
  }

  // Isolation mornings pooled across all isolation dorms, and the first
  // isolation association at any hour.
  auto ap_building = layout.map_aps(records.aps());
  std::vector<Epoch> first_isolation(n_users, std::numeric_limits<Epoch>::max());
  std::vector<std::pair<UserIndex, std::int64_t>> isolation_mornings;
  for (const auto& r : records.records()) {
    std::size_t b = ap_building[r.ap];
    if (b == CampusLayout::npos || layout.buildings()[b].role != BuildingRole::kIsolationDorm)
      continue;
    first_isolation[r.user] = std::min(first_isolation[r.user], r.epoch);
    LocalTime local = clock.at(r.epoch);
    if (local.hour == params.window_hour) isolation_mornings.emplace_back(r.user, local.day);
  }
  std::sort(isolation_mornings.begin(), isolation_mornings.end());
  isolation_mornings.erase(std::unique(isolation_mornings.begin(), isolation_mornings.end()),
                           isolation_mornings.end());
  std::vector<int> morning_total(n_users, 0);
  for (const auto& [u, day] : isolation_mornings) ++morning_total[u];

  TruthSet truth;
  truth.provenance = Provenance::kInferred;
  for (UserIndex u = 0; u < n_users; ++u) {
    if (!resident[u]) continue;
    Label label;
    if (morning_total[u] >= std::max(params.tau_r, 1)) {
      label.positive = true;
      label.t_positive = first_isolation[u];
    }
    truth.labels.emplace(records.users().name(u), label);
  }
  return truth;
}

Stay isolation_stay(const RecordSet& records, std::string_view user, const CampusLayout& layout,
                    const TruthSet& truth) {
  auto label = truth.labels.find(std::string(user));
  if (label == truth.labels.end() || !label->second.positive)
    fail(ErrorCode::kData, fmt::format("user {} is not labeled positive", user));
  auto index = records.users().find(user);
  if (!index) fail(ErrorCode::kData, fmt::format("user {} has no records", user));

  auto ap_building = layout.map_aps(records.aps());
  // (epoch, is_isolation) for the user's records on known buildings.
  std::vector<std::pair<Epoch, bool>> visits;
  Epoch last = std::numeric_limits<Epoch>::min();
  for (const auto& r : records.records()) {
    if (r.user != *index) continue;
    last = std::max(last, r.epoch);
    std::size_t b = ap_building[r.ap];
    if (b == CampusLayout::npos) continue;
    visits.emplace_back(r.epoch, layout.buildings()[b].role == BuildingRole::kIsolationDorm);
  }
  std::sort(visits.begin(), visits.end());
  auto first = std::find_if(visits.begin(), visits.end(), [](const auto& v) { return v.second; });
  if (first == visits.end())
    fail(ErrorCode::kData, fmt::format("user {} was never seen in an isolation dorm", user));
  for (auto it = first; it != visits.end(); ++it)
    if (!it->second && it->first > first->first) return {first->first, it->first};
  return {first->first, last + 1};
}

}  // namespace colotrace
