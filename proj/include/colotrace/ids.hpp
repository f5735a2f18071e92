#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace colotrace {

using Epoch = std::int64_t;
using UserIndex = std::uint32_t;
using ApIndex = std::uint32_t;
using DeviceIndex = std::uint32_t;

// Interns opaque identifier strings into dense indices.
class IdTable {
 public:
  IdTable() = default;

  std::uint32_t intern(std::string_view name);
  std::optional<std::uint32_t> find(std::string_view name) const;

  const std::string& name(std::uint32_t index) const { return names_[index]; }
  std::size_t size() const { return names_.size(); }
  bool empty() const { return names_.empty(); }
  const std::vector<std::string>& names() const { return names_; }

  // Returns old-index -> new-index such that new indices follow
  // lexicographic name order, and applies it to this table.
  std::vector<std::uint32_t> sort_lexicographic();

  bool operator==(const IdTable& other) const { return names_ == other.names_; }

 private:
  struct Hash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const {
      return std::hash<std::string_view>{}(s);
    }
  };

  std::vector<std::string> names_;
  std::unordered_map<std::string, std::uint32_t, Hash, std::equal_to<>> index_;
};

}  // namespace colotrace
