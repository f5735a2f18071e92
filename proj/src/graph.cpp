#include "colotrace/graph.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "colotrace/csv.hpp"
#include "colotrace/error.hpp"
#include "colotrace/parallel.hpp"
#include "json.hpp"

namespace colotrace {

void GraphParams::validate() const {
  if (tau_g <= 0) fail(ErrorCode::kParameter, fmt::format("tau_g must be > 0, got {}", tau_g));
  if (!(alpha >= 0.0) || !std::isfinite(alpha))
    fail(ErrorCode::kParameter, fmt::format("alpha must be >= 0, got {}", alpha));
}

ContactGraph::ContactGraph() : users_(std::make_shared<IdTable>()), offsets_(1, 0) {}

ContactGraph::ContactGraph(Epoch as_of, GraphParams params, std::shared_ptr<const IdTable> users,
                           std::vector<UserIndex> nodes, std::vector<Edge> edges)
    : as_of_(as_of),
      params_(params),
      users_(std::move(users)),
      nodes_(std::move(nodes)),
      edges_(std::move(edges)) {
  offsets_.assign(users_->size() + 1, 0);
  for (const auto& e : edges_) {
    ++offsets_[e.u + 1];
    ++offsets_[e.v + 1];
  }
  for (std::size_t i = 1; i < offsets_.size(); ++i) offsets_[i] += offsets_[i - 1];
  adjacency_.resize(2 * edges_.size());
  // With edges sorted by (u, v), a single pass fills every list in order.
  std::vector<std::size_t> cursor(offsets_.begin(), offsets_.end() - 1);
  for (const auto& e : edges_) {
    adjacency_[cursor[e.v]++] = {e.u, e.weight};
    adjacency_[cursor[e.u]++] = {e.v, e.weight};
  }
}

bool ContactGraph::has_node(UserIndex user) const {
  return std::binary_search(nodes_.begin(), nodes_.end(), user);
}

std::span<const Neighbor> ContactGraph::neighbors(UserIndex user) const {
  if (user + 1 >= offsets_.size()) return {};
  return std::span<const Neighbor>(adjacency_).subspan(offsets_[user],
                                                       offsets_[user + 1] - offsets_[user]);
}

double ContactGraph::weight(UserIndex a, UserIndex b) const {
  auto list = neighbors(a);
  auto it = std::lower_bound(list.begin(), list.end(), b,
                             [](const Neighbor& n, UserIndex key) { return n.user < key; });
  return (it != list.end() && it->user == b) ? it->weight : 0.0;
}

std::string ContactGraph::edges_csv() const {
  std::string out = "user_i,user_j,weight\n";
  for (const auto& e : edges_) {
    out += csv::escape(users_->name(e.u));
    out += ',';
    out += csv::escape(users_->name(e.v));
    out += ',';
    out += fmt::format("{}", e.weight);
    out += '\n';
  }
  return out;
}

std::string ContactGraph::sidecar_json() const {
  nlohmann::ordered_json j;
  j["as_of"] = as_of_;
  j["tau_g"] = params_.tau_g;
  j["alpha"] = params_.alpha;
  j["node_count"] = nodes_.size();
  j["edge_count"] = edges_.size();
  return j.dump(2) + "\n";
}

namespace {

double pair_contribution(std::size_t n, double alpha) {
  if (alpha == 0.0) return 1.0;
  if (alpha == 1.0) return 1.0 / static_cast<double>(n);
  return 1.0 / std::pow(static_cast<double>(n), alpha);
}

struct Membership {
  std::uint32_t group;
  std::uint32_t position;
};

}  // namespace

ContactGraph build_graph(const RecordSet& records, Epoch t, const GraphParams& params,
                         unsigned threads) {
  params.validate();
  const Epoch lo = t - params.tau_g;
  const Epoch hi = t;
  const std::size_t n_users = records.users().size();

  // Groups of users sharing one (ap, epoch) in the window, canonical order.
  std::vector<std::span<const ColocationRecord>> groups;
  std::vector<double> contribution;
  std::vector<bool> present(n_users, false);
  std::vector<std::uint32_t> membership_count(n_users + 1, 0);
  for (ApIndex ap = 0; ap < records.aps().size(); ++ap) {
    auto block = records.ap_block(ap);
    auto first = std::lower_bound(block.begin(), block.end(), lo,
                                  [](const ColocationRecord& r, Epoch e) { return r.epoch < e; });
    auto it = first;
    while (it != block.end() && it->epoch <= hi) {
      auto end = it;
      while (end != block.end() && end->epoch == it->epoch) ++end;
      auto size = static_cast<std::size_t>(end - it);
      for (auto r = it; r != end; ++r) present[r->user] = true;
      if (size >= 2) {
        groups.emplace_back(&*it, size);
        contribution.push_back(pair_contribution(size, params.alpha));
        for (auto r = it; r != end; ++r) ++membership_count[r->user + 1];
      }
      it = end;
    }
  }

  std::vector<UserIndex> nodes;
  for (UserIndex u = 0; u < n_users; ++u)
    if (present[u]) nodes.push_back(u);

  // Inverted index: for each user, the groups it belongs to in canonical
  // order together with its position inside the group.
  std::vector<std::size_t> offsets(n_users + 1, 0);
  for (std::size_t u = 0; u < n_users; ++u) offsets[u + 1] = offsets[u] + membership_count[u + 1];
  std::vector<Membership> memberships(offsets.back());
  {
    std::vector<std::size_t> cursor(offsets.begin(), offsets.end() - 1);
    for (std::uint32_t g = 0; g < groups.size(); ++g)
      for (std::uint32_t p = 0; p < groups[g].size(); ++p)
        memberships[cursor[groups[g][p].user]++] = {g, p};
  }

  // Each pair (u, v), u < v, is owned by u and summed in group order.
  threads = std::max(1u, threads);
  std::vector<std::vector<Edge>> partial(threads);
  parallel_chunks(nodes.size(), threads, [&](std::size_t begin, std::size_t end, std::size_t chunk) {
    std::vector<double> acc(n_users, 0.0);
    std::vector<char> hit(n_users, 0);
    std::vector<UserIndex> touched;
    auto& out = partial[chunk];
    for (std::size_t k = begin; k < end; ++k) {
      UserIndex u = nodes[k];
      for (std::size_t m = offsets[u]; m < offsets[u + 1]; ++m) {
        const auto& group = groups[memberships[m].group];
        double c = contribution[memberships[m].group];
        for (std::size_t p = memberships[m].position + 1; p < group.size(); ++p) {
          UserIndex v = group[p].user;
          if (!hit[v]) {
            hit[v] = 1;
            touched.push_back(v);
          }
          acc[v] += c;
        }
      }
      std::sort(touched.begin(), touched.end());
      for (UserIndex v : touched) {
        if (acc[v] > 0.0) out.push_back({u, v, acc[v]});
        acc[v] = 0.0;
        hit[v] = 0;
      }
      touched.clear();
    }
  });

  std::size_t total = 0;
  for (const auto& p : partial) total += p.size();
  std::vector<Edge> edges;
  edges.reserve(total);
  for (auto& p : partial) edges.insert(edges.end(), p.begin(), p.end());
  return ContactGraph(t, params, records.users_ptr(), std::move(nodes), std::move(edges));
}

std::vector<Neighbor> neighbors_above(const ContactGraph& graph, UserIndex user, double gamma) {
  std::vector<Neighbor> out;
  for (const auto& n : graph.neighbors(user))
    if (n.weight >= gamma) out.push_back(n);
  return out;
}

namespace {

// Unbiased integer in [0, bound) by rejection, independent of the
// standard library's distribution implementations.
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
  std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % bound;
}

}  // namespace

std::vector<bool> sample_mask(std::size_t n, double keep_fraction, std::uint64_t seed) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0))
    fail(ErrorCode::kParameter,
         fmt::format("keep_fraction must lie in (0, 1], got {}", keep_fraction));
  auto keep = static_cast<std::size_t>(std::floor(keep_fraction * static_cast<double>(n) + 1e-9));
  keep = std::min(keep, n);
  std::vector<bool> mask(n, false);
  if (keep == n) {
    mask.assign(n, true);
    return mask;
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < keep; ++i) {
    std::size_t j = i + static_cast<std::size_t>(uniform_below(rng, n - i));
    std::swap(order[i], order[j]);
    mask[order[i]] = true;
  }
  return mask;
}

RecordSet subsample_users(const RecordSet& records, double keep_fraction, std::uint64_t seed) {
  auto present = records.present_users();
  auto mask = sample_mask(present.size(), keep_fraction, seed);
  std::vector<bool> keep(records.users().size(), false);
  for (std::size_t i = 0; i < present.size(); ++i) keep[present[i]] = mask[i];
  return records.filter_users(keep);
}

}  // namespace colotrace
