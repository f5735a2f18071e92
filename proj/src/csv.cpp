#include "colotrace/csv.hpp"

#include <fstream>
#include <sstream>

#include "colotrace/error.hpp"

namespace colotrace::csv {

bool split(std::string_view line, std::vector<std::string_view>& fields,
           std::string& scratch) {
  fields.clear();
  if (line.find('"') == std::string_view::npos) {
    std::size_t start = 0;
    while (true) {
      std::size_t comma = line.find(',', start);
      if (comma == std::string_view::npos) {
        fields.push_back(line.substr(start));
        return true;
      }
      fields.push_back(line.substr(start, comma - start));
      start = comma + 1;
    }
  }

  // Quoted fields are unescaped into scratch; views are fixed up afterwards
  // because scratch may reallocate while it grows.
  scratch.clear();
  scratch.reserve(line.size());
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  std::size_t i = 0;
  while (true) {
    std::size_t begin = scratch.size();
    if (i < line.size() && line[i] == '"') {
      ++i;
      bool closed = false;
      while (i < line.size()) {
        if (line[i] == '"') {
          if (i + 1 < line.size() && line[i + 1] == '"') {
            scratch.push_back('"');
            i += 2;
            continue;
          }
          ++i;
          closed = true;
          break;
        }
        scratch.push_back(line[i++]);
      }
      if (!closed) return false;
      if (i < line.size() && line[i] != ',') return false;
    } else {
      while (i < line.size() && line[i] != ',') {
        if (line[i] == '"') return false;
        scratch.push_back(line[i++]);
      }
    }
    spans.emplace_back(begin, scratch.size() - begin);
    if (i >= line.size()) break;
    ++i;  // comma
  }
  for (auto [begin, length] : spans)
    fields.push_back(std::string_view(scratch).substr(begin, length));
  return true;
}

std::vector<std::string> split_owned(std::string_view line) {
  std::vector<std::string_view> views;
  std::string scratch;
  if (!split(line, views, scratch)) return {};
  return {views.begin(), views.end()};
}

std::string escape(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kMissingInput, "cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  if (in.bad()) fail(ErrorCode::kIo, "read failed: " + path.string());
  return std::move(buffer).str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) fail(ErrorCode::kIo, "write failed: " + path.string());
}

std::optional<std::size_t> Table::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  return std::nullopt;
}

std::size_t Table::require_column(std::string_view name, std::string_view source) const {
  auto index = column(name);
  if (!index)
    fail(ErrorCode::kFormat,
         std::string(source) + ": missing column '" + std::string(name) + "'");
  return *index;
}

Table parse_table(std::string_view text, std::string_view source) {
  Table table;
  std::size_t line_number = 0;
  std::size_t pos = 0;
  bool have_header = false;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    auto fields = split_owned(line);
    if (fields.empty())
      fail(ErrorCode::kFormat,
           std::string(source) + ":" + std::to_string(line_number) + ": bad quoting");
    if (!have_header) {
      table.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != table.header.size())
      fail(ErrorCode::kFormat, std::string(source) + ":" + std::to_string(line_number) +
                                   ": expected " + std::to_string(table.header.size()) +
                                   " fields");
    table.rows.push_back(std::move(fields));
    table.line_numbers.push_back(line_number);
  }
  return table;
}

Table read_table(const std::filesystem::path& path) {
  return parse_table(read_file(path), path.string());
}

}  // namespace colotrace::csv
