#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "colotrace/ingest.hpp"

namespace colotrace {

struct GraphParams {
  Epoch tau_g = 7 * 96;  // look-back, in epochs
  double alpha = 1.0;

  // tau_g > 0 and alpha >= 0 (and finite).
  void validate() const;
};

// Undirected edge with u < v.
struct Edge {
  UserIndex u;
  UserIndex v;
  double weight;

  friend bool operator==(const Edge&, const Edge&) = default;
};

struct Neighbor {
  UserIndex user;
  double weight;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

// Snapshot G(t) of the AP-colocation contact graph. User indices refer to
// the RecordSet's user table, which is shared.
class ContactGraph {
 public:
  ContactGraph();
  ContactGraph(Epoch as_of, GraphParams params, std::shared_ptr<const IdTable> users,
               std::vector<UserIndex> nodes, std::vector<Edge> edges);

  Epoch as_of() const { return as_of_; }
  const GraphParams& params() const { return params_; }
  const IdTable& users() const { return *users_; }

  std::span<const UserIndex> nodes() const { return nodes_; }
  std::span<const Edge> edges() const { return edges_; }
  bool has_node(UserIndex user) const;

  // All neighbors of a user, ascending by index. Empty for non-nodes.
  std::span<const Neighbor> neighbors(UserIndex user) const;
  // 0 when the pair shares no edge.
  double weight(UserIndex a, UserIndex b) const;

  // user_i,user_j,weight with user_i < user_j; weights in shortest
  // round-trip form so equal graphs serialize to equal bytes.
  std::string edges_csv() const;
  std::string sidecar_json() const;

 private:
  Epoch as_of_ = 0;
  GraphParams params_;
  std::shared_ptr<const IdTable> users_;
  std::vector<UserIndex> nodes_;
  std::vector<Edge> edges_;
  std::vector<std::size_t> offsets_;
  std::vector<Neighbor> adjacency_;
};

// Every unordered pair of users sharing AP k in epoch t' in [t - tau_g, t]
// gains 1 / N_{k,t'}^alpha, N being the distinct users on (k, t'). Per-pair
// sums follow canonical (ap, epoch) order, so the result is bitwise
// independent of `threads`.
ContactGraph build_graph(const RecordSet& records, Epoch t, const GraphParams& params,
                         unsigned threads = 1);

// Neighbors j with w_ij >= gamma.
std::vector<Neighbor> neighbors_above(const ContactGraph& graph, UserIndex user, double gamma);

// Chooses floor(keep_fraction * n) of n items uniformly at random;
// returns a membership mask. Deterministic in seed.
std::vector<bool> sample_mask(std::size_t n, double keep_fraction, std::uint64_t seed);

// Keeps a random subset of the users present in records, with all of
// their records. keep_fraction must lie in (0, 1].
RecordSet subsample_users(const RecordSet& records, double keep_fraction, std::uint64_t seed);

}  // namespace colotrace
