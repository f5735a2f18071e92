#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "colotrace/ids.hpp"
#include "colotrace/time.hpp"

namespace colotrace {

// One association line: device seen on an AP at an instant.
struct AssociationEvent {
  DeviceIndex device;
  ApIndex ap;
  UnixSeconds timestamp;

  friend bool operator==(const AssociationEvent&, const AssociationEvent&) = default;
};

// Association events in file order, with identifier strings interned.
struct EventLog {
  IdTable devices;
  IdTable aps;
  std::vector<AssociationEvent> events;

  void add(std::string_view device, std::string_view ap, UnixSeconds timestamp) {
    events.push_back({devices.intern(device), aps.intern(ap), timestamp});
  }
  const std::string& device_name(const AssociationEvent& e) const { return devices.name(e.device); }
  const std::string& ap_name(const AssociationEvent& e) const { return aps.name(e.ap); }

  bool operator==(const EventLog& other) const = default;
};

enum class LogFormat { kCsv, kJsonl };

std::optional<LogFormat> parse_log_format(std::string_view name);
// Guesses from the file extension (.jsonl/.json -> JSONL, otherwise CSV).
LogFormat log_format_for(const std::filesystem::path& path);

struct Reject {
  std::size_t line;  // 1-based
  std::string reason;
};

struct ParseOptions {
  double max_reject_ratio = 0.01;
  unsigned threads = 1;
};

struct ParseResult {
  EventLog log;
  std::vector<Reject> rejects;
  std::size_t data_lines = 0;      // non-empty lines after the header
  std::size_t disassociations = 0; // skipped, not rejected
};

// Throws Error(kFormat) when the header lacks a required column or the
// reject ratio exceeds options.max_reject_ratio.
ParseResult parse_events(std::string_view source, LogFormat format,
                         const ParseOptions& options = {});
ParseResult parse_events_file(const std::filesystem::path& path, LogFormat format,
                              const ParseOptions& options = {});

void enforce_reject_limit(const ParseResult& result, double max_reject_ratio);
std::string rejects_to_jsonl(const std::vector<Reject>& rejects);

struct EpochConfig {
  int epoch_minutes = 15;
  UnixSeconds origin = 0;

  std::int64_t width_seconds() const { return std::int64_t{epoch_minutes} * 60; }
  Epoch epochs_per_day() const { return 24 * 60 / epoch_minutes; }
  UnixSeconds start_of(Epoch e) const { return origin + e * width_seconds(); }
  // Rounds to the nearest whole epoch.
  Epoch days_to_epochs(double days) const;
  // epoch_minutes must be positive and divide 60.
  void validate() const;
};

// floor((t - origin) / width). Throws Error(kData) when t precedes origin.
Epoch to_epoch(UnixSeconds t, const EpochConfig& cfg);

// Many-to-one device -> user mapping.
class DeviceUserMap {
 public:
  // Throws Error(kData) when the device is already mapped to another user.
  void add(std::string_view device, std::string_view user);
  std::optional<std::string_view> user_of(std::string_view device) const;
  std::size_t size() const { return users_.size(); }

  // CSV with header device_id,user_id.
  static DeviceUserMap parse(std::string_view text, std::string_view source = "device map");
  static DeviceUserMap load(const std::filesystem::path& path);
  std::string to_csv() const;
  // Sorted by device id.
  std::vector<std::pair<std::string, std::string>> entries() const;

 private:
  struct Hash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const { return std::hash<std::string_view>{}(s); }
  };
  std::unordered_map<std::string, std::string, Hash, std::equal_to<>> users_;
};

// Deduplicated (user, AP, epoch) observation.
struct ColocationRecord {
  UserIndex user;
  ApIndex ap;
  Epoch epoch;

  friend bool operator==(const ColocationRecord&, const ColocationRecord&) = default;
};

// Canonical order: (ap, epoch, user).
struct RecordOrder {
  bool operator()(const ColocationRecord& a, const ColocationRecord& b) const {
    if (a.ap != b.ap) return a.ap < b.ap;
    if (a.epoch != b.epoch) return a.epoch < b.epoch;
    return a.user < b.user;
  }
};

// Immutable set of colocation records. User and AP tables are sorted
// lexicographically so index order equals name order; records are unique
// and sorted by RecordOrder.
class RecordSet {
 public:
  RecordSet();
  // Sorts and deduplicates; tables must already be lexicographic.
  RecordSet(std::shared_ptr<const IdTable> users, std::shared_ptr<const IdTable> aps,
            std::vector<ColocationRecord> records);

  // Builds from string triples, canonicalizing both tables.
  static RecordSet from_named(
      const std::vector<std::tuple<std::string, std::string, Epoch>>& triples);

  const IdTable& users() const { return *users_; }
  const IdTable& aps() const { return *aps_; }
  const std::shared_ptr<const IdTable>& users_ptr() const { return users_; }
  const std::shared_ptr<const IdTable>& aps_ptr() const { return aps_; }

  const std::vector<ColocationRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  // Records of one AP, sorted by (epoch, user).
  std::span<const ColocationRecord> ap_block(ApIndex ap) const;

  // Users appearing in at least one record, ascending.
  std::vector<UserIndex> present_users() const;

  // Keeps records whose user is flagged in keep (indexed by UserIndex).
  RecordSet filter_users(const std::vector<bool>& keep) const;
  RecordSet filter_epochs(Epoch first, Epoch last) const;

  std::optional<std::pair<Epoch, Epoch>> epoch_range() const;

  // CSV user_id,ap_id,epoch in canonical order.
  std::string to_csv() const;
  static RecordSet parse_csv(std::string_view text, std::string_view source = "records");

 private:
  void index_blocks();

  std::shared_ptr<const IdTable> users_;
  std::shared_ptr<const IdTable> aps_;
  std::vector<ColocationRecord> records_;
  std::vector<std::size_t> ap_offsets_;
};

enum class UnmappedPolicy {
  kPromoteToUser,  // device_id becomes its own user_id
  kDrop,
};

struct DiscretizeSummary {
  std::size_t events = 0;
  std::size_t records = 0;
  std::size_t unmapped_events = 0;
  std::size_t dropped_events = 0;
  std::size_t before_origin_events = 0;
};

struct DiscretizeResult {
  RecordSet records;
  DiscretizeSummary summary;
};

DiscretizeResult discretize(const EventLog& log, const DeviceUserMap& map,
                            const EpochConfig& cfg,
                            UnmappedPolicy policy = UnmappedPolicy::kPromoteToUser);

// Salted one-way digest (HMAC-SHA256, lowercase hex). Throws on empty salt.
std::string anonymize(std::string_view id, std::string_view salt);

EventLog anonymize_devices(const EventLog& log, std::string_view salt);
DeviceUserMap anonymize_map(const DeviceUserMap& map, std::string_view salt);

}  // namespace colotrace
