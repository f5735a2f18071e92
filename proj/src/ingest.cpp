#include "colotrace/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <deque>
#include <thread>

#include <fmt/format.h>
#include <openssl/evp.h>
#include <openssl/hmac.h>

#include "colotrace/csv.hpp"
#include "colotrace/error.hpp"
#include "json.hpp"

namespace colotrace {

namespace {

struct RawEvent {
  std::string_view device;
  std::string_view ap;
  UnixSeconds timestamp;
};

// Parse output of one contiguous slice of the input.
struct ShardResult {
  std::vector<RawEvent> events;
  std::vector<Reject> rejects;
  std::deque<std::string> owned;  // backing storage for unquoted views
  std::size_t data_lines = 0;
  std::size_t disassociations = 0;
};

enum class EventKind { kAssociation, kDisassociation, kUnknown };

EventKind classify_event(std::string_view value) {
  std::string lower(value);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower.empty() || lower == "association" || lower == "assoc" || lower == "associate")
    return EventKind::kAssociation;
  if (lower == "disassociation" || lower == "disassoc" || lower == "disassociate")
    return EventKind::kDisassociation;
  return EventKind::kUnknown;
}

struct CsvColumns {
  std::size_t count = 0;
  std::size_t device = 0;
  std::size_t ap = 0;
  std::size_t timestamp = 0;
  std::optional<std::size_t> event;
};

std::string_view trim_cr(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}

// Calls fn(line_number, line) for each non-empty line in [begin, end).
template <typename Fn>
void for_each_line(std::string_view text, std::size_t first_line, Fn&& fn) {
  std::size_t pos = 0;
  std::size_t line_number = first_line;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = trim_cr(text.substr(pos, end - pos));
    if (!line.empty()) fn(line_number, line);
    pos = end + 1;
    ++line_number;
  }
}

void parse_csv_shard(std::string_view text, std::size_t first_line, const CsvColumns& cols,
                     ShardResult& out) {
  std::vector<std::string_view> fields;
  std::string scratch;
  for_each_line(text, first_line, [&](std::size_t line_number, std::string_view line) {
    ++out.data_lines;
    bool quoted = line.find('"') != std::string_view::npos;
    if (!csv::split(line, fields, scratch)) {
      out.rejects.push_back({line_number, "unterminated quote"});
      return;
    }
    if (fields.size() != cols.count) {
      out.rejects.push_back(
          {line_number, fmt::format("expected {} fields, got {}", cols.count, fields.size())});
      return;
    }
    if (cols.event) {
      EventKind kind = classify_event(fields[*cols.event]);
      if (kind == EventKind::kDisassociation) {
        ++out.disassociations;
        return;
      }
      if (kind == EventKind::kUnknown) {
        out.rejects.push_back({line_number, "unknown event type"});
        return;
      }
    }
    std::string_view device = fields[cols.device];
    std::string_view ap = fields[cols.ap];
    if (device.empty() || ap.empty()) {
      out.rejects.push_back({line_number, "empty device_id or ap_id"});
      return;
    }
    auto ts = parse_timestamp(fields[cols.timestamp]);
    if (!ts) {
      out.rejects.push_back({line_number, "unparseable timestamp"});
      return;
    }
    if (quoted) {
      device = out.owned.emplace_back(device);
      ap = out.owned.emplace_back(ap);
    }
    out.events.push_back({device, ap, *ts});
  });
}

void parse_jsonl_shard(std::string_view text, std::size_t first_line, ShardResult& out) {
  using nlohmann::json;
  for_each_line(text, first_line, [&](std::size_t line_number, std::string_view line) {
    ++out.data_lines;
    json obj = json::parse(line, nullptr, false);
    if (obj.is_discarded() || !obj.is_object()) {
      out.rejects.push_back({line_number, "invalid JSON object"});
      return;
    }
    if (auto it = obj.find("event"); it != obj.end()) {
      if (!it->is_string()) {
        out.rejects.push_back({line_number, "event must be a string"});
        return;
      }
      EventKind kind = classify_event(it->get_ref<const std::string&>());
      if (kind == EventKind::kDisassociation) {
        ++out.disassociations;
        return;
      }
      if (kind == EventKind::kUnknown) {
        out.rejects.push_back({line_number, "unknown event type"});
        return;
      }
    }
    auto device = obj.find("device_id");
    auto ap = obj.find("ap_id");
    auto stamp = obj.find("timestamp");
    if (device == obj.end() || ap == obj.end() || stamp == obj.end()) {
      out.rejects.push_back({line_number, "missing device_id, ap_id, or timestamp"});
      return;
    }
    if (!device->is_string() || !ap->is_string()) {
      out.rejects.push_back({line_number, "device_id and ap_id must be strings"});
      return;
    }
    const auto& device_name = device->get_ref<const std::string&>();
    const auto& ap_name = ap->get_ref<const std::string&>();
    if (device_name.empty() || ap_name.empty()) {
      out.rejects.push_back({line_number, "empty device_id or ap_id"});
      return;
    }
    std::optional<UnixSeconds> ts;
    if (stamp->is_number_integer()) {
      ts = stamp->get<std::int64_t>();
    } else if (stamp->is_string()) {
      ts = parse_timestamp(stamp->get_ref<const std::string&>());
    }
    if (!ts) {
      out.rejects.push_back({line_number, "unparseable timestamp"});
      return;
    }
    out.events.push_back(
        {out.owned.emplace_back(device_name), out.owned.emplace_back(ap_name), *ts});
  });
}

CsvColumns read_csv_header(std::string_view header_line) {
  auto names = csv::split_owned(header_line);
  CsvColumns cols;
  cols.count = names.size();
  auto find = [&](std::string_view key) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == key) return i;
    return std::nullopt;
  };
  auto device = find("device_id");
  auto ap = find("ap_id");
  auto timestamp = find("timestamp");
  if (!device || !ap || !timestamp)
    fail(ErrorCode::kFormat, "association log header must contain device_id, ap_id, timestamp");
  cols.device = *device;
  cols.ap = *ap;
  cols.timestamp = *timestamp;
  cols.event = find("event");
  return cols;
}

// Splits body into up to n slices on line boundaries; returns (offset, first line number).
std::vector<std::pair<std::size_t, std::size_t>> shard_bounds(std::string_view body,
                                                              std::size_t first_line,
                                                              unsigned n) {
  std::vector<std::pair<std::size_t, std::size_t>> bounds;
  bounds.emplace_back(0, first_line);
  if (n <= 1 || body.size() < 1 << 16) return bounds;
  std::size_t target = body.size() / n;
  std::size_t pos = 0;
  std::size_t line = first_line;
  for (unsigned i = 1; i < n; ++i) {
    std::size_t cut = std::max(pos, std::min(body.size(), target * i));
    cut = body.find('\n', cut);
    if (cut == std::string_view::npos) break;
    ++cut;
    line += static_cast<std::size_t>(std::count(body.begin() + static_cast<std::ptrdiff_t>(pos),
                                                body.begin() + static_cast<std::ptrdiff_t>(cut), '\n'));
    pos = cut;
    if (pos >= body.size()) break;
    bounds.emplace_back(pos, line);
  }
  return bounds;
}

}  // namespace

std::optional<LogFormat> parse_log_format(std::string_view name) {
  if (name == "csv") return LogFormat::kCsv;
  if (name == "jsonl") return LogFormat::kJsonl;
  return std::nullopt;
}

LogFormat log_format_for(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  return (ext == ".jsonl" || ext == ".json" || ext == ".ndjson") ? LogFormat::kJsonl
                                                                  : LogFormat::kCsv;
}

ParseResult parse_events(std::string_view source, LogFormat format, const ParseOptions& options) {
  ParseResult result;
  std::string_view body = source;
  std::size_t first_line = 1;
  CsvColumns cols;

  if (format == LogFormat::kCsv) {
    // The first non-empty line is the header.
    std::size_t pos = 0;
    std::string_view header;
    while (pos < source.size()) {
      std::size_t end = source.find('\n', pos);
      if (end == std::string_view::npos) end = source.size();
      std::string_view line = trim_cr(source.substr(pos, end - pos));
      pos = std::min(source.size(), end + 1);
      if (!line.empty()) {
        header = line;
        break;
      }
      ++first_line;
    }
    if (header.empty()) return result;
    cols = read_csv_header(header);
    body = source.substr(pos);
    ++first_line;
  }

  auto bounds = shard_bounds(body, first_line, std::max(1u, options.threads));
  std::vector<ShardResult> shards(bounds.size());
  auto run_shard = [&](std::size_t i) {
    std::size_t begin = bounds[i].first;
    std::size_t end = i + 1 < bounds.size() ? bounds[i + 1].first : body.size();
    std::string_view slice = body.substr(begin, end - begin);
    if (format == LogFormat::kCsv)
      parse_csv_shard(slice, bounds[i].second, cols, shards[i]);
    else
      parse_jsonl_shard(slice, bounds[i].second, shards[i]);
  };
  if (shards.size() == 1) {
    run_shard(0);
  } else {
    std::vector<std::jthread> workers;
    for (std::size_t i = 0; i < shards.size(); ++i) workers.emplace_back(run_shard, i);
  }

  std::size_t total = 0;
  for (const auto& shard : shards) total += shard.events.size();
  result.log.events.reserve(total);
  for (auto& shard : shards) {
    for (const auto& e : shard.events) result.log.add(e.device, e.ap, e.timestamp);
    result.rejects.insert(result.rejects.end(), std::make_move_iterator(shard.rejects.begin()),
                          std::make_move_iterator(shard.rejects.end()));
    result.data_lines += shard.data_lines;
    result.disassociations += shard.disassociations;
  }
  enforce_reject_limit(result, options.max_reject_ratio);
  return result;
}

ParseResult parse_events_file(const std::filesystem::path& path, LogFormat format,
                              const ParseOptions& options) {
  std::string text = csv::read_file(path);
  return parse_events(text, format, options);
}

void enforce_reject_limit(const ParseResult& result, double max_reject_ratio) {
  if (result.data_lines == 0 || result.rejects.empty()) return;
  double ratio = static_cast<double>(result.rejects.size()) / static_cast<double>(result.data_lines);
  if (ratio > max_reject_ratio) {
    const Reject& first = result.rejects.front();
    fail(ErrorCode::kFormat,
         fmt::format("{} of {} lines rejected ({:.3f}% > {:.3f}% limit); first: line {}: {}",
                     result.rejects.size(), result.data_lines, 100.0 * ratio,
                     100.0 * max_reject_ratio, first.line, first.reason));
  }
}

std::string rejects_to_jsonl(const std::vector<Reject>& rejects) {
  std::string out;
  for (const auto& r : rejects) {
    out += nlohmann::json{{"line", r.line}, {"reason", r.reason}}.dump();
    out += '\n';
  }
  return out;
}

Epoch EpochConfig::days_to_epochs(double days) const {
  return static_cast<Epoch>(std::llround(days * static_cast<double>(epochs_per_day())));
}

void EpochConfig::validate() const {
  if (epoch_minutes <= 0 || 60 % epoch_minutes != 0)
    fail(ErrorCode::kParameter,
         fmt::format("epoch_minutes must be a positive divisor of 60, got {}", epoch_minutes));
}

Epoch to_epoch(UnixSeconds t, const EpochConfig& cfg) {
  if (t < cfg.origin)
    fail(ErrorCode::kData, fmt::format("timestamp {} precedes epoch origin {}", t, cfg.origin));
  return (t - cfg.origin) / cfg.width_seconds();
}

void DeviceUserMap::add(std::string_view device, std::string_view user) {
  if (device.empty() || user.empty()) fail(ErrorCode::kData, "empty device_id or user_id");
  auto it = users_.find(device);
  if (it != users_.end()) {
    if (it->second != user)
      fail(ErrorCode::kData, fmt::format("device {} mapped to both {} and {}", device,
                                         it->second, user));
    return;
  }
  users_.emplace(std::string(device), std::string(user));
}

std::optional<std::string_view> DeviceUserMap::user_of(std::string_view device) const {
  if (auto it = users_.find(device); it != users_.end()) return std::string_view(it->second);
  return std::nullopt;
}

DeviceUserMap DeviceUserMap::parse(std::string_view text, std::string_view source) {
  auto table = csv::parse_table(text, source);
  DeviceUserMap map;
  if (table.header.empty()) return map;
  std::size_t device = table.require_column("device_id", source);
  std::size_t user = table.require_column("user_id", source);
  for (const auto& row : table.rows) map.add(row[device], row[user]);
  return map;
}

DeviceUserMap DeviceUserMap::load(const std::filesystem::path& path) {
  return parse(csv::read_file(path), path.string());
}

std::vector<std::pair<std::string, std::string>> DeviceUserMap::entries() const {
  std::vector<std::pair<std::string, std::string>> out(users_.begin(), users_.end());
  std::sort(out.begin(), out.end());
  return out;
}

std::string DeviceUserMap::to_csv() const {
  std::string out = "device_id,user_id\n";
  for (const auto& [device, user] : entries())
    out += csv::escape(device) + "," + csv::escape(user) + "\n";
  return out;
}

RecordSet::RecordSet()
    : users_(std::make_shared<IdTable>()), aps_(std::make_shared<IdTable>()) {
  index_blocks();
}

RecordSet::RecordSet(std::shared_ptr<const IdTable> users, std::shared_ptr<const IdTable> aps,
                     std::vector<ColocationRecord> records)
    : users_(std::move(users)), aps_(std::move(aps)), records_(std::move(records)) {
  if (!std::is_sorted(records_.begin(), records_.end(), RecordOrder{}))
    std::sort(records_.begin(), records_.end(), RecordOrder{});
  records_.erase(std::unique(records_.begin(), records_.end()), records_.end());
  index_blocks();
}

RecordSet RecordSet::from_named(
    const std::vector<std::tuple<std::string, std::string, Epoch>>& triples) {
  IdTable users, aps;
  for (const auto& [user, ap, epoch] : triples) {
    users.intern(user);
    aps.intern(ap);
  }
  users.sort_lexicographic();
  aps.sort_lexicographic();
  std::vector<ColocationRecord> records;
  records.reserve(triples.size());
  for (const auto& [user, ap, epoch] : triples)
    records.push_back({*users.find(user), *aps.find(ap), epoch});
  return RecordSet(std::make_shared<const IdTable>(std::move(users)),
                   std::make_shared<const IdTable>(std::move(aps)), std::move(records));
}

void RecordSet::index_blocks() {
  ap_offsets_.assign(aps_->size() + 1, 0);
  for (const auto& r : records_) ++ap_offsets_[r.ap + 1];
  for (std::size_t i = 1; i < ap_offsets_.size(); ++i) ap_offsets_[i] += ap_offsets_[i - 1];
}

std::span<const ColocationRecord> RecordSet::ap_block(ApIndex ap) const {
  return std::span<const ColocationRecord>(records_).subspan(
      ap_offsets_[ap], ap_offsets_[ap + 1] - ap_offsets_[ap]);
}

std::vector<UserIndex> RecordSet::present_users() const {
  std::vector<bool> seen(users_->size(), false);
  for (const auto& r : records_) seen[r.user] = true;
  std::vector<UserIndex> out;
  for (UserIndex u = 0; u < seen.size(); ++u)
    if (seen[u]) out.push_back(u);
  return out;
}

RecordSet RecordSet::filter_users(const std::vector<bool>& keep) const {
  std::vector<ColocationRecord> kept;
  kept.reserve(records_.size());
  for (const auto& r : records_)
    if (r.user < keep.size() && keep[r.user]) kept.push_back(r);
  return RecordSet(users_, aps_, std::move(kept));
}

RecordSet RecordSet::filter_epochs(Epoch first, Epoch last) const {
  std::vector<ColocationRecord> kept;
  for (const auto& r : records_)
    if (r.epoch >= first && r.epoch <= last) kept.push_back(r);
  return RecordSet(users_, aps_, std::move(kept));
}

std::optional<std::pair<Epoch, Epoch>> RecordSet::epoch_range() const {
  if (records_.empty()) return std::nullopt;
  Epoch lo = records_.front().epoch, hi = lo;
  for (const auto& r : records_) {
    lo = std::min(lo, r.epoch);
    hi = std::max(hi, r.epoch);
  }
  return std::pair{lo, hi};
}

std::string RecordSet::to_csv() const {
  std::string out = "user_id,ap_id,epoch\n";
  out.reserve(records_.size() * 24);
  for (const auto& r : records_) {
    out += csv::escape(users_->name(r.user));
    out += ',';
    out += csv::escape(aps_->name(r.ap));
    out += ',';
    out += std::to_string(r.epoch);
    out += '\n';
  }
  return out;
}

RecordSet RecordSet::parse_csv(std::string_view text, std::string_view source) {
  auto table = csv::parse_table(text, source);
  std::vector<std::tuple<std::string, std::string, Epoch>> triples;
  if (table.header.empty()) return RecordSet();
  std::size_t user = table.require_column("user_id", source);
  std::size_t ap = table.require_column("ap_id", source);
  std::size_t epoch = table.require_column("epoch", source);
  triples.reserve(table.rows.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    Epoch e = 0;
    try {
      std::size_t used = 0;
      e = std::stoll(row[epoch], &used);
      if (used != row[epoch].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      fail(ErrorCode::kFormat,
           fmt::format("{}:{}: bad epoch '{}'", source, table.line_numbers[i], row[epoch]));
    }
    triples.emplace_back(row[user], row[ap], e);
  }
  return from_named(triples);
}

DiscretizeResult discretize(const EventLog& log, const DeviceUserMap& map, const EpochConfig& cfg,
                            UnmappedPolicy policy) {
  cfg.validate();
  DiscretizeResult result;
  auto& summary = result.summary;
  summary.events = log.events.size();

  // Resolve each device once, then canonicalize both tables before any
  // record is materialized.
  constexpr std::uint32_t kNoUser = UINT32_MAX;
  IdTable users;
  std::vector<std::uint32_t> device_user(log.devices.size(), kNoUser);
  std::vector<bool> device_mapped(log.devices.size(), false);
  for (DeviceIndex d = 0; d < log.devices.size(); ++d) {
    const std::string& device = log.devices.name(d);
    if (auto user = map.user_of(device)) {
      device_user[d] = users.intern(*user);
      device_mapped[d] = true;
    } else if (policy == UnmappedPolicy::kPromoteToUser) {
      device_user[d] = users.intern(device);
    }
  }
  auto user_remap = users.sort_lexicographic();
  for (auto& u : device_user)
    if (u != kNoUser) u = user_remap[u];
  IdTable aps = log.aps;
  auto ap_remap = aps.sort_lexicographic();

  std::vector<ColocationRecord> records;
  records.reserve(log.events.size());
  for (const auto& e : log.events) {
    if (!device_mapped[e.device]) ++summary.unmapped_events;
    std::uint32_t user = device_user[e.device];
    if (user == kNoUser) {
      ++summary.dropped_events;
      continue;
    }
    if (e.timestamp < cfg.origin) {
      ++summary.before_origin_events;
      continue;
    }
    records.push_back({user, ap_remap[e.ap], (e.timestamp - cfg.origin) / cfg.width_seconds()});
  }
  std::sort(records.begin(), records.end(), RecordOrder{});
  result.records = RecordSet(std::make_shared<const IdTable>(std::move(users)),
                             std::make_shared<const IdTable>(std::move(aps)), std::move(records));
  summary.records = result.records.size();
  return result;
}

std::string anonymize(std::string_view id, std::string_view salt) {
  if (salt.empty()) fail(ErrorCode::kParameter, "anonymization salt must be non-empty");
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (!HMAC(EVP_sha256(), salt.data(), static_cast<int>(salt.size()),
            reinterpret_cast<const unsigned char*>(id.data()), id.size(), digest, &length))
    fail(ErrorCode::kIo, "HMAC-SHA256 failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(length * 2, '0');
  for (unsigned int i = 0; i < length; ++i) {
    out[2 * i] = kHex[digest[i] >> 4];
    out[2 * i + 1] = kHex[digest[i] & 0xf];
  }
  return out;
}

EventLog anonymize_devices(const EventLog& log, std::string_view salt) {
  std::vector<std::string> hashed;
  hashed.reserve(log.devices.size());
  for (const auto& name : log.devices.names()) hashed.push_back(anonymize(name, salt));
  EventLog out;
  out.aps = log.aps;
  out.events.reserve(log.events.size());
  for (const auto& e : log.events)
    out.events.push_back({out.devices.intern(hashed[e.device]), e.ap, e.timestamp});
  return out;
}

DeviceUserMap anonymize_map(const DeviceUserMap& map, std::string_view salt) {
  DeviceUserMap out;
  for (const auto& [device, user] : map.entries())
    out.add(anonymize(device, salt), anonymize(user, salt));
  return out;
}

}  // namespace colotrace
