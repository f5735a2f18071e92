#include "colotrace/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "colotrace/csv.hpp"
#include "colotrace/error.hpp"
#include "json.hpp"

namespace colotrace::sim {

namespace {

using nlohmann::json;

// Platform-independent draws on top of mt19937_64.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  bool bernoulli(double p) { return uniform() < p; }
  std::uint64_t below(std::uint64_t bound) {
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % bound;
  }

 private:
  std::mt19937_64 engine_;
};

enum class State : std::uint8_t { kSusceptible, kExposed, kInfectious, kRecovered };

constexpr std::uint32_t kAbsent = UINT32_MAX;
constexpr Epoch kNever = std::numeric_limits<Epoch>::max();

struct Course {
  std::uint32_t ap;
  int hour;
  bool mon_wed_fri;
};

struct Person {
  std::string name;
  bool staff = false;
  std::uint32_t building = 0;  // home dorm or workplace
  std::uint32_t home_ap = 0;
  int laptops = 0;
  std::vector<std::uint32_t> courses;
  Epoch test_phase = 0;
  std::vector<DeviceIndex> devices;  // phone first

  State state = State::kSusceptible;
  Epoch pending_exposure = kNever;
  Epoch infectious_at = kNever;
  Epoch recovered_at = kNever;
  bool detected = false;
  Epoch isolation_start = kNever;
  Epoch isolation_end = kNever;
  std::uint32_t isolation_ap = kAbsent;
  int infection = -1;  // index into SimTruth::infections
};

void require(bool ok, const std::string& message) {
  if (!ok) fail(ErrorCode::kParameter, "sim config: " + message);
}

bool probability(double p) { return p >= 0.0 && p <= 1.0; }

}  // namespace

void SimConfig::validate() const {
  require(n_users > 0 && n_buildings > 0 && n_isolation_dorms > 0 && n_regular_dorms > 0 &&
              n_dining_halls > 0 && n_aps_per_building > 0 && study_days > 0,
          "all counts must be positive");
  require(n_regular_dorms + n_isolation_dorms + n_dining_halls < n_buildings,
          "need at least one academic building besides dorms and dining halls");
  require(epoch_minutes > 0 && 60 % epoch_minutes == 0, "epoch_minutes must divide 60");
  require(utc_offset_minutes % epoch_minutes == 0,
          "utc_offset_minutes must be a multiple of epoch_minutes");
  require(parse_date(start_date).has_value(), "start_date must be YYYY-MM-DD");
  require(night_start_hour >= 0 && night_start_hour < night_end_hour && night_end_hour <= 24,
          "night window must satisfy 0 <= start < end <= 24");
  require(probability(night_activity_prob) && probability(day_activity_prob) &&
              probability(laptop_activity_prob) && probability(class_attendance) &&
              probability(dining_prob) && probability(evening_visit_prob) &&
              probability(overnight_visit_prob) && probability(transmission_prob) &&
              probability(community_infection_prob),
          "probabilities must lie in [0, 1]");
  require(max_laptops >= 0 && courses_per_user >= 0 && class_size > 0 && staff_per_building >= 0,
          "mobility counts must be non-negative");
  require(initial_infected >= 0, "initial_infected must be non-negative");
  require(seed_window_days >= 0, "seed_window_days must be non-negative");
  require(initial_infected <= n_users, "more initial infected than users");
  require(incubation_days >= 0 && infectious_days > 0 && test_cadence_days > 0 &&
              isolation_lag_days >= 0 && isolation_days > 0,
          "epidemic durations must be positive");
}

#define COLOTRACE_SIM_FIELDS(X)                                                             \
  X(seed) X(n_users) X(n_buildings) X(n_isolation_dorms) X(n_regular_dorms) X(n_dining_halls) \
  X(n_aps_per_building) X(study_days) X(epoch_minutes) X(start_date) X(utc_offset_minutes)   \
  X(night_start_hour) X(night_end_hour) X(night_activity_prob) X(day_activity_prob)           \
  X(laptop_activity_prob) X(max_laptops) X(courses_per_user) X(class_size)                    \
  X(class_attendance) X(dining_prob) X(evening_visit_prob) X(overnight_visit_prob)            \
  X(staff_per_building) X(initial_infected) X(seed_window_days) X(transmission_prob) X(incubation_days)           \
  X(infectious_days) X(test_cadence_days) X(isolation_lag_days) X(isolation_days)             \
  X(confounded) X(community_infection_prob) X(record_presence)

SimConfig SimConfig::from_json(std::string_view text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) fail(ErrorCode::kFormat, "sim config is not a JSON object");
  SimConfig config;
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    try {
#define COLOTRACE_READ(name)                      \
  if (key == #name) {                             \
    value.get_to(config.name);                    \
    known = true;                                 \
  }
      COLOTRACE_SIM_FIELDS(COLOTRACE_READ)
#undef COLOTRACE_READ
    } catch (const json::exception& e) {
      fail(ErrorCode::kFormat, fmt::format("sim config field {}: {}", key, e.what()));
    }
    if (!known) fail(ErrorCode::kFormat, "unknown sim config field " + key);
  }
  config.validate();
  return config;
}

SimConfig SimConfig::load(const std::filesystem::path& path) {
  return from_json(csv::read_file(path));
}

std::string SimConfig::to_json() const {
  nlohmann::ordered_json j;
#define COLOTRACE_WRITE(name) j[#name] = name;
  COLOTRACE_SIM_FIELDS(COLOTRACE_WRITE)
#undef COLOTRACE_WRITE
  return j.dump(2) + "\n";
}

TruthSet SimTruth::labels() const {
  TruthSet truth;
  truth.provenance = Provenance::kInjected;
  for (const auto& [user, home] : residents) truth.labels.emplace(user, Label{});
  for (const auto& inf : infections) {
    if (!inf.isolation_start || !study.contains(*inf.isolation_start)) continue;
    auto it = truth.labels.find(inf.user);
    if (it != truth.labels.end()) it->second = Label{true, *inf.isolation_start};
  }
  return truth;
}

std::string SimTruth::to_json(const SimConfig& config) const {
  nlohmann::ordered_json j;
  j["config"] = nlohmann::ordered_json::parse(config.to_json());
  j["study"] = {{"first_epoch", study.first}, {"last_epoch", study.last}};
  j["incubation_epochs"] = incubation_epochs;
  j["infectious_epochs"] = infectious_epochs;
  j["residents"] = residents;
  j["staff"] = staff;
  auto optional = [](const auto& v) -> nlohmann::ordered_json {
    if (v) return *v;
    return nullptr;
  };
  auto& list = j["infections"] = nlohmann::ordered_json::array();
  for (const auto& inf : infections) {
    list.push_back({{"user", inf.user},
                    {"infection_epoch", inf.infection_epoch},
                    {"detection_epoch", optional(inf.detection_epoch)},
                    {"isolation_start", optional(inf.isolation_start)},
                    {"isolation_end", optional(inf.isolation_end)},
                    {"isolation_building", optional(inf.isolation_building)},
                    {"source", inf.source},
                    {"infector", optional(inf.infector)},
                    {"ap", optional(inf.ap)},
                    {"colocation_epoch", optional(inf.colocation_epoch)}});
  }
  auto& occ = j["occupancy"] = nlohmann::ordered_json::array();
  for (const auto& [key, count] : occupancy)
    occ.push_back({{"building_id", key.building}, {"date", format_date(key.day)}, {"count", count}});
  return j.dump(2) + "\n";
}

SimOutput generate(const SimConfig& config) {
  config.validate();
  Rng rng(config.seed);
  SimOutput out;
  out.epochs = EpochConfig{config.epoch_minutes, 0};
  const Epoch per_hour = 60 / config.epoch_minutes;
  const Epoch per_day = 24 * per_hour;
  const Epoch total = per_day * config.study_days;
  const std::int64_t start_day = *parse_date(config.start_date);
  const UnixSeconds start_utc =
      start_day * kSecondsPerDay - std::int64_t{config.utc_offset_minutes} * 60;
  const Epoch base = to_epoch(start_utc, out.epochs);
  const std::int64_t width = out.epochs.width_seconds();
  auto days = [&](double d) { return static_cast<Epoch>(std::llround(d * per_day)); };

  // Buildings: regular dorms, isolation dorms, dining halls, academic.
  const int n_aps = config.n_aps_per_building;
  std::vector<BuildingRole> roles(config.n_buildings, BuildingRole::kOther);
  for (int b = 0; b < config.n_regular_dorms; ++b) roles[b] = BuildingRole::kRegularDorm;
  for (int b = 0; b < config.n_isolation_dorms; ++b)
    roles[config.n_regular_dorms + b] = BuildingRole::kIsolationDorm;
  const int first_dining = config.n_regular_dorms + config.n_isolation_dorms;
  const int first_academic = first_dining + config.n_dining_halls;
  auto building_name = [](int b) { return fmt::format("b{:02d}", b); };
  for (int b = 0; b < config.n_buildings; ++b)
    for (int k = 0; k < n_aps; ++k) out.ap_names.push_back(fmt::format("b{:02d}-ap{:02d}", b, k));
  auto random_ap = [&](int building) {
    return static_cast<std::uint32_t>(building * n_aps + static_cast<int>(rng.below(n_aps)));
  };

  // Courses meet weekly in academic buildings.
  int n_courses = std::max(
      1, (config.n_users * config.courses_per_user + config.class_size - 1) / config.class_size);
  std::vector<Course> courses;
  for (int c = 0; c < n_courses; ++c) {
    int building = first_academic + static_cast<int>(rng.below(config.n_buildings - first_academic));
    courses.push_back({random_ap(building), 8 + static_cast<int>(rng.below(9)), c % 2 == 0});
  }

  // People: residents then staff.
  std::vector<Person> people;
  const Epoch cadence = std::max<Epoch>(1, days(config.test_cadence_days));
  std::vector<std::int64_t> capacity(config.n_regular_dorms, 0);
  for (int i = 0; i < config.n_users; ++i) {
    Person p;
    p.name = fmt::format("u{:04d}", i);
    p.building = static_cast<std::uint32_t>(rng.below(config.n_regular_dorms));
    p.home_ap = random_ap(static_cast<int>(p.building));
    p.laptops = static_cast<int>(rng.below(config.max_laptops + 1));
    std::vector<std::uint32_t> pool(courses.size());
    std::iota(pool.begin(), pool.end(), 0u);
    int take = std::min<int>(config.courses_per_user, static_cast<int>(pool.size()));
    for (int k = 0; k < take; ++k) {
      std::size_t j = k + rng.below(pool.size() - k);
      std::swap(pool[k], pool[j]);
      p.courses.push_back(pool[k]);
    }
    p.test_phase = static_cast<Epoch>(rng.below(static_cast<std::uint64_t>(cadence)));
    ++capacity[p.building];
    out.truth.residents.emplace(p.name, building_name(static_cast<int>(p.building)));
    people.push_back(std::move(p));
  }
  for (int b = config.n_regular_dorms; b < config.n_buildings; ++b) {
    for (int s = 0; s < config.staff_per_building; ++s) {
      Person p;
      p.name = fmt::format("s{:02d}{:02d}", b, s);
      p.staff = true;
      p.building = static_cast<std::uint32_t>(b);
      out.truth.staff.push_back(p.name);
      people.push_back(std::move(p));
    }
  }
  for (const auto& p : people) out.people.push_back(p.name);

  // Device identities and the device -> user map.
  for (auto& p : people) {
    p.devices.push_back(out.log.devices.intern(p.name + "-p"));
    out.devices.add(p.name + "-p", p.name);
    for (int k = 1; k <= p.laptops; ++k) {
      auto device = fmt::format("{}-l{}", p.name, k);
      p.devices.push_back(out.log.devices.intern(device));
      out.devices.add(device, p.name);
    }
  }
  for (const auto& ap : out.ap_names) out.log.aps.intern(ap);

  for (int b = 0; b < config.n_buildings; ++b) {
    BuildingInfo info{building_name(b), roles[b], std::nullopt, {}};
    if (roles[b] == BuildingRole::kRegularDorm) info.capacity = capacity[b];
    for (int k = 0; k < n_aps; ++k) info.ap_ids.push_back(out.ap_names[b * n_aps + k]);
    out.layout.add_building(std::move(info));
  }

  const Epoch incubation = days(config.incubation_days);
  const Epoch infectious = std::max<Epoch>(1, days(config.infectious_days));
  const Epoch lag = days(config.isolation_lag_days);
  const Epoch isolation_length = std::max<Epoch>(1, days(config.isolation_days));
  out.truth.incubation_epochs = incubation;
  out.truth.infectious_epochs = infectious;
  out.truth.study = {base, base + total - 1};

  auto& infections = out.truth.infections;
  auto expose = [&](Person& p, Epoch s, std::string source) {
    p.state = State::kExposed;
    p.pending_exposure = kNever;
    p.infectious_at = s + incubation;
    p.recovered_at = s + incubation + infectious;
    p.infection = static_cast<int>(infections.size());
    infections.push_back({p.name, base + s, std::nullopt, std::nullopt, std::nullopt,
                          std::nullopt, std::move(source), std::nullopt, std::nullopt,
                          std::nullopt});
  };

  // Seeds are exposed uniformly during the seed window.
  {
    std::vector<std::uint32_t> order(config.n_users);
    std::iota(order.begin(), order.end(), 0u);
    for (int k = 0; k < config.initial_infected; ++k) {
      std::size_t j = k + rng.below(order.size() - k);
      std::swap(order[k], order[j]);
      people[order[k]].pending_exposure =
          static_cast<Epoch>(rng.below(static_cast<std::uint64_t>(
              std::clamp<Epoch>(days(config.seed_window_days), 1, total))));
    }
  }

  const Epoch night_first = config.night_start_hour * per_hour;
  const Epoch night_last = config.night_end_hour * per_hour;  // exclusive
  const Epoch night_mid = (night_first + night_last) / 2;
  auto asleep = [&](Epoch slot) { return slot >= night_first && slot < night_last; };

  std::vector<std::uint32_t> plan(people.size() * static_cast<std::size_t>(per_day), kAbsent);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> by_ap;  // (ap, person)
  std::vector<std::uint32_t> infectious_here, susceptible_here;
  int next_isolation = 0;

  for (int day = 0; day < config.study_days; ++day) {
    // weekday: 0 = Sunday
    int weekday = static_cast<int>(((start_day + day) % 7 + 11) % 7);
    bool mwf = weekday == 1 || weekday == 3 || weekday == 5;
    bool tth = weekday == 2 || weekday == 4;
    for (std::size_t i = 0; i < people.size(); ++i) {
      const Person& p = people[i];
      std::uint32_t* row = &plan[i * static_cast<std::size_t>(per_day)];
      if (p.staff) {
        for (Epoch slot = 0; slot < per_day; slot += per_hour) {
          std::uint32_t ap = asleep(slot) ? kAbsent : random_ap(static_cast<int>(p.building));
          for (Epoch k = 0; k < per_hour; ++k) row[slot + k] = ap;
        }
        continue;
      }
      std::fill(row, row + per_day, p.home_ap);
      auto other_dorm_ap = [&] {
        int b = static_cast<int>(rng.below(config.n_regular_dorms - 1));
        if (b >= static_cast<int>(p.building)) ++b;
        return config.n_regular_dorms > 1 ? random_ap(b) : p.home_ap;
      };
      if (rng.bernoulli(config.overnight_visit_prob)) {
        std::uint32_t ap = other_dorm_ap();
        for (Epoch slot = night_first; slot < night_last; ++slot) row[slot] = ap;
      }
      if (rng.bernoulli(config.evening_visit_prob)) {
        std::uint32_t ap = other_dorm_ap();
        for (Epoch slot = 19 * per_hour; slot < per_day; ++slot)
          if (!asleep(slot)) row[slot] = ap;
      }
      std::vector<bool> busy(24, false);
      for (std::uint32_t c : p.courses) {
        const Course& course = courses[c];
        if (!(course.mon_wed_fri ? mwf : tth) || !rng.bernoulli(config.class_attendance)) continue;
        busy[course.hour] = true;
        for (Epoch k = 0; k < per_hour; ++k) row[course.hour * per_hour + k] = course.ap;
      }
      for (int meal : {12, 18}) {
        if (busy[meal] || !rng.bernoulli(config.dining_prob)) continue;
        std::uint32_t ap = random_ap(first_dining + static_cast<int>(rng.below(config.n_dining_halls)));
        for (Epoch k = 0; k < per_hour; ++k) row[meal * per_hour + k] = ap;
      }
    }

    for (Epoch slot = 0; slot < per_day; ++slot) {
      const Epoch s = day * per_day + slot;

      for (auto& p : people) {
        if (p.staff) continue;
        if (p.state == State::kSusceptible && p.pending_exposure == s) expose(p, s, "seed");
        if (p.state == State::kExposed && s >= p.infectious_at) p.state = State::kInfectious;
        if (p.state == State::kInfectious && s >= p.recovered_at) p.state = State::kRecovered;
      }

      by_ap.clear();
      for (std::uint32_t i = 0; i < people.size(); ++i) {
        const Person& p = people[i];
        std::uint32_t ap = plan[i * static_cast<std::size_t>(per_day) + slot];
        if (!p.staff && s >= p.isolation_start && s < p.isolation_end) ap = p.isolation_ap;
        if (ap != kAbsent) by_ap.emplace_back(ap, i);
      }
      std::sort(by_ap.begin(), by_ap.end());
      if (config.record_presence)
        for (const auto& [ap, i] : by_ap) out.presence.push_back({base + s, i, ap});

      // Transmission among truly co-present users.
      for (std::size_t a = 0; a < by_ap.size();) {
        std::size_t b = a;
        infectious_here.clear();
        susceptible_here.clear();
        while (b < by_ap.size() && by_ap[b].first == by_ap[a].first) {
          const Person& p = people[by_ap[b].second];
          if (!p.staff) {
            if (p.state == State::kInfectious) infectious_here.push_back(by_ap[b].second);
            if (p.state == State::kSusceptible) susceptible_here.push_back(by_ap[b].second);
          }
          ++b;
        }
        if (!infectious_here.empty() && !susceptible_here.empty()) {
          double p_infect =
              1.0 - std::pow(1.0 - config.transmission_prob, static_cast<double>(infectious_here.size()));
          for (std::uint32_t i : susceptible_here) {
            if (!rng.bernoulli(p_infect)) continue;
            std::uint32_t source = infectious_here[rng.below(infectious_here.size())];
            Person& target = people[i];
            expose(target, s + 1, "network");
            auto& record = infections.back();
            record.infector = people[source].name;
            record.ap = out.ap_names[by_ap[a].first];
            record.colocation_epoch = base + s;
          }
        }
        a = b;
      }

      if (config.confounded && config.community_infection_prob > 0.0) {
        double per_epoch = config.community_infection_prob / static_cast<double>(per_day);
        for (auto& p : people)
          if (!p.staff && p.state == State::kSusceptible && rng.bernoulli(per_epoch))
            expose(p, s + 1, "community");
      }

      // Associations, timestamped uniformly inside the epoch.
      bool night = asleep(slot);
      for (const auto& [ap, i] : by_ap) {
        const Person& p = people[i];
        UnixSeconds epoch_start = start_utc + s * width;
        if (rng.bernoulli(night ? config.night_activity_prob : config.day_activity_prob))
          out.log.events.push_back(
              {p.devices[0], ap, epoch_start + static_cast<std::int64_t>(rng.below(width))});
        if (night) continue;
        for (std::size_t d = 1; d < p.devices.size(); ++d)
          if (rng.bernoulli(config.laptop_activity_prob))
            out.log.events.push_back(
                {p.devices[d], ap, epoch_start + static_cast<std::int64_t>(rng.below(width))});
      }

      // Periodic testing; positives move to isolation after the lag.
      for (auto& p : people) {
        if (p.staff || p.detected || p.state != State::kInfectious) continue;
        if (s < p.test_phase || (s - p.test_phase) % cadence != 0) continue;
        p.detected = true;
        p.isolation_start = s + lag;
        p.isolation_end = p.isolation_start + isolation_length;
        int building = config.n_regular_dorms + next_isolation;
        next_isolation = (next_isolation + 1) % config.n_isolation_dorms;
        p.isolation_ap = random_ap(building);
        auto& record = infections[static_cast<std::size_t>(p.infection)];
        record.detection_epoch = base + s;
        record.isolation_start = base + p.isolation_start;
        record.isolation_end = base + p.isolation_end;
        record.isolation_building = building_name(building);
      }
    }
  }

  // Isolation-dorm occupancy at the middle of each night.
  for (int b = 0; b < config.n_isolation_dorms; ++b) {
    int building = config.n_regular_dorms + b;
    for (int day = 0; day < config.study_days; ++day) {
      Epoch at = day * per_day + night_mid;
      std::int64_t count = 0;
      for (const auto& p : people)
        if (!p.staff && p.detected && p.isolation_ap / n_aps == static_cast<std::uint32_t>(building) &&
            at >= p.isolation_start && at < p.isolation_end)
          ++count;
      out.truth.occupancy[{building_name(building), start_day + day}] = count;
    }
  }
  return out;
}

std::string log_to_csv(const EventLog& log) {
  std::string out = "device_id,ap_id,timestamp\n";
  out.reserve(log.events.size() * 40);
  for (const auto& e : log.events) {
    out += csv::escape(log.device_name(e));
    out += ',';
    out += csv::escape(log.ap_name(e));
    out += ',';
    out += format_rfc3339(e.timestamp);
    out += '\n';
  }
  return out;
}

ExportPaths export_files(const SimOutput& output, const SimConfig& config,
                         const std::filesystem::path& directory) {
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  if (ec) fail(ErrorCode::kIo, "cannot create " + directory.string() + ": " + ec.message());
  ExportPaths paths{directory / "association_log.csv", directory / "device_map.csv",
                    directory / "buildings.csv",       directory / "occupancy.csv",
                    directory / "true_labels.csv",     directory / "sim_truth.json"};
  csv::write_file(paths.log, log_to_csv(output.log));
  csv::write_file(paths.device_map, output.devices.to_csv());
  csv::write_file(paths.buildings, output.layout.to_csv());
  csv::write_file(paths.occupancy, occupancy_to_csv(output.truth.occupancy));
  csv::write_file(paths.labels, output.truth.labels().to_csv());
  csv::write_file(paths.sim_truth, output.truth.to_json(config));
  return paths;
}

}  // namespace colotrace::sim
