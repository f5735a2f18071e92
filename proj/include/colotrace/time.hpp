#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace colotrace {

// Seconds since 1970-01-01T00:00:00Z.
using UnixSeconds = std::int64_t;

inline constexpr std::int64_t kSecondsPerDay = 86400;

// Accepts RFC3339 ("2021-02-01T08:03:10Z", optional fraction, Z or
// +hh:mm offset) or a plain integer count of Unix seconds. Fractional
// seconds are truncated toward the earlier second.
std::optional<UnixSeconds> parse_timestamp(std::string_view text);

std::string format_rfc3339(UnixSeconds t);

// Day index relative to 1970-01-01 <-> "YYYY-MM-DD".
std::int64_t days_from_civil(int year, unsigned month, unsigned day);
std::optional<std::int64_t> parse_date(std::string_view text);
std::string format_date(std::int64_t day_index);

// Floor division that rounds toward negative infinity.
constexpr std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  return (a % b != 0 && ((a < 0) != (b < 0))) ? q - 1 : q;
}

// Local wall-clock view of an instant for a fixed UTC offset.
struct LocalTime {
  std::int64_t day;  // days since 1970-01-01 in local time
  int hour;
  int minute;
};

LocalTime to_local(UnixSeconds t, int utc_offset_minutes);

}  // namespace colotrace
