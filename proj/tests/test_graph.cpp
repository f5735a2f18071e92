#include <algorithm>
#include <numeric>
#include <random>

#include "colotrace/graph.hpp"
#include "json.hpp"
#include "oracles.hpp"
#include "testing.hpp"

using namespace colotrace;

TEST_CASE("single crowded epoch") {
  auto records = RecordSet::from_named({{"a", "x", 5}, {"b", "x", 5}, {"c", "x", 5}, {"d", "y", 5}});
  auto g = build_graph(records, 5, {10, 1.0});
  CHECK(g.nodes().size() == 4);
  CHECK(g.edges().size() == 3);
  CHECK(g.weight(0, 1) == doctest::Approx(1.0 / 3));
  CHECK(g.weight(1, 0) == g.weight(0, 1));
  CHECK(g.weight(0, 3) == 0.0);
  CHECK(g.has_node(3));
  CHECK(g.neighbors(3).empty());

  auto counts = build_graph(records, 5, {10, 0.0});
  CHECK(counts.weight(0, 2) == 1.0);
  auto squared = build_graph(records, 5, {10, 2.0});
  CHECK(squared.weight(1, 2) == doctest::Approx(1.0 / 9));
}

TEST_CASE("window is inclusive at both ends") {
  auto records = RecordSet::from_named({{"a", "x", 0},
                                        {"b", "x", 0},
                                        {"a", "x", 10},
                                        {"b", "x", 10},
                                        {"a", "x", 11},
                                        {"b", "x", 11}});
  CHECK(build_graph(records, 10, {10, 0.0}).weight(0, 1) == 2.0);
  CHECK(build_graph(records, 10, {9, 0.0}).weight(0, 1) == 1.0);
  CHECK(build_graph(records, 11, {10, 0.0}).weight(0, 1) == 2.0);
  CHECK(build_graph(records, -1, {10, 0.0}).nodes().empty());
}

TEST_CASE("neighbors and thresholds") {
  auto records = RecordSet::from_named(
      {{"a", "x", 1}, {"b", "x", 1}, {"a", "y", 2}, {"c", "y", 2}, {"a", "x", 3}, {"b", "x", 3}});
  auto g = build_graph(records, 3, {5, 0.0});
  auto n = g.neighbors(0);
  REQUIRE(n.size() == 2);
  CHECK(n[0] == Neighbor{1, 2.0});
  CHECK(n[1] == Neighbor{2, 1.0});
  CHECK(neighbors_above(g, 0, 2.0).size() == 1);
  CHECK(neighbors_above(g, 0, 1.0).size() == 2);
  CHECK(neighbors_above(g, 0, 2.5).empty());
}

TEST_CASE("matches the brute-force oracle") {
  std::mt19937_64 rng(11);
  for (int instance = 0; instance < 24; ++instance) {
    int users = 2 + static_cast<int>(rng() % 20);
    int aps = 1 + static_cast<int>(rng() % 4);
    int epochs = 1 + static_cast<int>(rng() % 40);
    auto records = testing::random_records(rng, users, aps, epochs, 0.4);
    oracle::Presence presence(records);
    for (double alpha : {0.0, 0.5, 1.0, 2.0}) {
      GraphParams params{1 + static_cast<Epoch>(rng() % 20), alpha};
      Epoch t = static_cast<Epoch>(rng() % static_cast<std::uint64_t>(epochs + 5)) - 2;
      auto g = build_graph(records, t, params);
      auto expected = oracle::graph(presence, t, params.tau_g, alpha);
      std::set<std::size_t> nodes(g.nodes().begin(), g.nodes().end());
      CHECK(nodes == expected.nodes);
      REQUIRE(g.edges().size() == expected.edges.size());
      for (const auto& e : g.edges()) {
        auto it = expected.edges.find({e.u, e.v});
        REQUIRE(it != expected.edges.end());
        if (alpha == 0.0)
          CHECK(e.weight == it->second);
        else
          CHECK(std::abs(e.weight - it->second) <= 1e-12);
      }
    }
  }
}

TEST_CASE("bitwise identical across thread counts") {
  std::mt19937_64 rng(5);
  auto records = testing::random_records(rng, 60, 6, 200, 0.5);
  GraphParams params{96, 1.0};
  auto reference = build_graph(records, 150, params, 1);
  for (unsigned threads : {2u, 3u, 8u}) {
    auto g = build_graph(records, 150, params, threads);
    CHECK(std::equal(g.edges().begin(), g.edges().end(), reference.edges().begin(),
                     reference.edges().end()));
    CHECK(g.edges_csv() == reference.edges_csv());
  }
}

TEST_CASE("serialization") {
  auto records = RecordSet::from_named({{"b", "x", 1}, {"a", "x", 1}, {"c", "x", 1}});
  auto g = build_graph(records, 1, {4, 1.0});
  CHECK(g.edges_csv() ==
        "user_i,user_j,weight\n"
        "a,b,0.3333333333333333\n"
        "a,c,0.3333333333333333\n"
        "b,c,0.3333333333333333\n");
  auto sidecar = nlohmann::json::parse(g.sidecar_json());
  CHECK(sidecar["as_of"] == 1);
  CHECK(sidecar["tau_g"] == 4);
  CHECK(sidecar["alpha"] == 1.0);
  CHECK(sidecar["node_count"] == 3);
  CHECK(sidecar["edge_count"] == 3);
}

TEST_CASE("graph parameters") {
  RecordSet empty;
  CHECK(testing::error_of([&] { build_graph(empty, 0, {0, 1.0}); }) == ErrorCode::kParameter);
  CHECK(testing::error_of([&] { build_graph(empty, 0, {5, -1.0}); }) == ErrorCode::kParameter);
  CHECK(build_graph(empty, 0, {5, 1.0}).edges().empty());
}

TEST_CASE("participation sampling") {
  auto mask = sample_mask(1000, 0.75, 9);
  CHECK(std::count(mask.begin(), mask.end(), true) == 750);
  CHECK(sample_mask(1000, 0.75, 9) == mask);
  CHECK(sample_mask(1000, 0.75, 10) != mask);
  auto all = sample_mask(7, 1.0, 1);
  CHECK(std::count(all.begin(), all.end(), true) == 7);
  auto some = sample_mask(7, 0.5, 1);
  CHECK(std::count(some.begin(), some.end(), true) == 3);

  // Each item kept with probability close to the fraction.
  std::vector<int> kept(50, 0);
  for (std::uint64_t seed = 0; seed < 2000; ++seed) {
    auto m = sample_mask(50, 0.5, seed);
    for (std::size_t i = 0; i < m.size(); ++i) kept[i] += m[i];
  }
  for (int k : kept) CHECK(std::abs(k - 1000) < 4 * std::sqrt(2000 * 0.25));

  std::mt19937_64 rng(2);
  auto records = testing::random_records(rng, 40, 3, 20, 0.3);
  auto half = subsample_users(records, 0.5, 3);
  CHECK(half.present_users().size() == records.present_users().size() / 2);
  CHECK(subsample_users(records, 1.0, 3).records() == records.records());
  CHECK(testing::error_of([&] { subsample_users(records, 0.0, 3); }) == ErrorCode::kParameter);
}
