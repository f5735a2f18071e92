#include "colotrace/time.hpp"

#include <charconv>
#include <chrono>

#include <fmt/format.h>

namespace colotrace {

namespace {

bool read_digits(std::string_view s, std::size_t pos, std::size_t count, int& out) {
  if (pos + count > s.size()) return false;
  int value = 0;
  for (std::size_t i = pos; i < pos + count; ++i) {
    char c = s[i];
    if (c < '0' || c > '9') return false;
    value = value * 10 + (c - '0');
  }
  out = value;
  return true;
}

std::optional<UnixSeconds> parse_integer_seconds(std::string_view s) {
  std::int64_t value = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return value;
}

}  // namespace

std::int64_t days_from_civil(int year, unsigned month, unsigned day) {
  using namespace std::chrono;
  sys_days d{std::chrono::year{year} / std::chrono::month{month} / std::chrono::day{day}};
  return d.time_since_epoch().count();
}

std::optional<UnixSeconds> parse_timestamp(std::string_view s) {
  if (s.empty()) return std::nullopt;
  bool all_digits = true;
  for (std::size_t i = 0; i < s.size(); ++i) {
    char c = s[i];
    if (!(c >= '0' && c <= '9') && !(i == 0 && c == '-' && s.size() > 1)) {
      all_digits = false;
      break;
    }
  }
  if (all_digits) return parse_integer_seconds(s);

  // YYYY-MM-DDTHH:MM:SS
  int year, month, day, hour, minute, second;
  if (s.size() < 20) return std::nullopt;
  if (!read_digits(s, 0, 4, year) || s[4] != '-' || !read_digits(s, 5, 2, month) ||
      s[7] != '-' || !read_digits(s, 8, 2, day))
    return std::nullopt;
  if (s[10] != 'T' && s[10] != 't' && s[10] != ' ') return std::nullopt;
  if (!read_digits(s, 11, 2, hour) || s[13] != ':' || !read_digits(s, 14, 2, minute) ||
      s[16] != ':' || !read_digits(s, 17, 2, second))
    return std::nullopt;
  std::chrono::year_month_day ymd{std::chrono::year{year},
                                  std::chrono::month{static_cast<unsigned>(month)},
                                  std::chrono::day{static_cast<unsigned>(day)}};
  if (!ymd.ok() || hour > 23 || minute > 59 || second > 59) return std::nullopt;

  std::size_t pos = 19;
  if (pos < s.size() && s[pos] == '.') {
    ++pos;
    std::size_t start = pos;
    while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') ++pos;
    if (pos == start) return std::nullopt;
  }
  if (pos >= s.size()) return std::nullopt;

  int offset_minutes = 0;
  if (s[pos] == 'Z' || s[pos] == 'z') {
    ++pos;
  } else if (s[pos] == '+' || s[pos] == '-') {
    int sign = s[pos] == '-' ? -1 : 1;
    int oh, om;
    if (!read_digits(s, pos + 1, 2, oh) || pos + 3 >= s.size() || s[pos + 3] != ':' ||
        !read_digits(s, pos + 4, 2, om) || oh > 23 || om > 59)
      return std::nullopt;
    offset_minutes = sign * (oh * 60 + om);
    pos += 6;
  } else {
    return std::nullopt;
  }
  if (pos != s.size()) return std::nullopt;

  std::int64_t days = days_from_civil(year, static_cast<unsigned>(month),
                                      static_cast<unsigned>(day));
  return days * kSecondsPerDay + hour * 3600 + minute * 60 + second -
         static_cast<std::int64_t>(offset_minutes) * 60;
}

std::string format_rfc3339(UnixSeconds t) {
  std::int64_t day = floor_div(t, kSecondsPerDay);
  std::int64_t rem = t - day * kSecondsPerDay;
  std::chrono::year_month_day ymd{std::chrono::sys_days{std::chrono::days{day}}};
  return fmt::format("{:04d}-{:02d}-{:02d}T{:02d}:{:02d}:{:02d}Z", static_cast<int>(ymd.year()),
                     static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                     rem / 3600, (rem / 60) % 60, rem % 60);
}

std::optional<std::int64_t> parse_date(std::string_view s) {
  int year, month, day;
  if (s.size() != 10 || !read_digits(s, 0, 4, year) || s[4] != '-' ||
      !read_digits(s, 5, 2, month) || s[7] != '-' || !read_digits(s, 8, 2, day))
    return std::nullopt;
  std::chrono::year_month_day ymd{std::chrono::year{year},
                                  std::chrono::month{static_cast<unsigned>(month)},
                                  std::chrono::day{static_cast<unsigned>(day)}};
  if (!ymd.ok()) return std::nullopt;
  return days_from_civil(year, static_cast<unsigned>(month), static_cast<unsigned>(day));
}

std::string format_date(std::int64_t day_index) {
  std::chrono::year_month_day ymd{std::chrono::sys_days{std::chrono::days{day_index}}};
  return fmt::format("{:04d}-{:02d}-{:02d}", static_cast<int>(ymd.year()),
                     static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
}

LocalTime to_local(UnixSeconds t, int utc_offset_minutes) {
  UnixSeconds local = t + static_cast<std::int64_t>(utc_offset_minutes) * 60;
  std::int64_t day = floor_div(local, kSecondsPerDay);
  std::int64_t rem = local - day * kSecondsPerDay;
  return {day, static_cast<int>(rem / 3600), static_cast<int>((rem / 60) % 60)};
}

}  // namespace colotrace
