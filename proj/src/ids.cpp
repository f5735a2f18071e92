#include "colotrace/ids.hpp"

#include <algorithm>
#include <numeric>

namespace colotrace {

std::uint32_t IdTable::intern(std::string_view name) {
  if (auto it = index_.find(name); it != index_.end()) return it->second;
  auto index = static_cast<std::uint32_t>(names_.size());
  names_.emplace_back(name);
  index_.emplace(names_.back(), index);
  return index;
}

std::optional<std::uint32_t> IdTable::find(std::string_view name) const {
  if (auto it = index_.find(name); it != index_.end()) return it->second;
  return std::nullopt;
}

std::vector<std::uint32_t> IdTable::sort_lexicographic() {
  std::vector<std::uint32_t> order(names_.size());
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(),
            [&](std::uint32_t a, std::uint32_t b) { return names_[a] < names_[b]; });
  std::vector<std::uint32_t> remap(names_.size());
  std::vector<std::string> sorted;
  sorted.reserve(names_.size());
  for (std::uint32_t rank = 0; rank < order.size(); ++rank) {
    remap[order[rank]] = rank;
    sorted.push_back(std::move(names_[order[rank]]));
  }
  names_ = std::move(sorted);
  index_.clear();
  index_.reserve(names_.size());
  for (std::uint32_t i = 0; i < names_.size(); ++i) index_.emplace(names_[i], i);
  return remap;
}

}  // namespace colotrace
