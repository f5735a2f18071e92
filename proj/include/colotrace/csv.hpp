#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace colotrace::csv {

// Splits one CSV record. Double-quoted fields may contain commas and
// doubled quotes. Returns false on an unterminated quote.
bool split(std::string_view line, std::vector<std::string_view>& fields,
           std::string& scratch);

std::vector<std::string> split_owned(std::string_view line);

// Quotes a field only when it contains a delimiter, quote, or newline.
std::string escape(std::string_view field);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

// Line-oriented table with a header row; column lookup by name.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;  // 1-based source line of each row

  std::optional<std::size_t> column(std::string_view name) const;
  std::size_t require_column(std::string_view name, std::string_view source) const;
};

Table read_table(const std::filesystem::path& path);
Table parse_table(std::string_view text, std::string_view source);

}  // namespace colotrace::csv
