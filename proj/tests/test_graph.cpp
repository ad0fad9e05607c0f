// Copyright 2026 The Chimera Authors.
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <set>

#include "chimera/graph.hpp"
#include "support.hpp"

using namespace chimera;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::InvalidConfig;
}

}  // namespace

TEST_CASE("build_graph validation") {
  const Graph g = build_graph(2, true, {{0, 1}});
  CHECK(g.num_edges() == 1);
  CHECK(code_of([] { build_graph(3, true, {{0, 0}}); }) == ErrorCode::SelfLoop);
  CHECK(code_of([] { build_graph(4, false, {{0, 1}, {1, 0}}); }) == ErrorCode::DuplicateEdge);
  CHECK(code_of([] { build_graph(4, true, {{0, 1}, {0, 1}}); }) == ErrorCode::DuplicateEdge);
  CHECK(code_of([] { build_graph(2, true, {{0, 2}}); }) == ErrorCode::IndexOutOfRange);
  CHECK(code_of([] { build_graph(2, true, {{0, 1}}, Matrix(3, 1)); }) ==
        ErrorCode::FeatureShapeMismatch);
  CHECK(code_of([] { build_graph(2, true, {{0, 1}}, std::nullopt, Matrix(2, 1)); }) ==
        ErrorCode::FeatureShapeMismatch);
}

TEST_CASE("undirected graphs store canonical pairs and expand to two arcs") {
  const Graph g = build_graph(3, false, {{2, 0}, {1, 2}});
  for (const Edge& e : g.edges()) CHECK(e.src < e.dst);
  CHECK(g.arcs().size() == 4);
  for (std::size_t k = 1; k < g.arcs().size(); ++k) {
    const Arc& a = g.arcs()[k - 1];
    const Arc& b = g.arcs()[k];
    CHECK((a.dst < b.dst || (a.dst == b.dst && a.src < b.src)));
  }
}

TEST_CASE("plan_dag on a chain and on a cycle") {
  const DagPlan plan = plan_dag(line_graph(5, true));
  CHECK(plan.diameter == 4);
  CHECK(plan.topo_order == std::vector<std::size_t>{0, 1, 2, 3, 4});

  try {
    plan_dag(build_graph(3, true, {{0, 1}, {1, 2}, {2, 0}}));
    FAIL("expected a cycle");
  } catch (const CycleError& e) {
    CHECK(e.code() == ErrorCode::CycleDetected);
    const auto& c = e.cycle();
    REQUIRE(c.size() == 4);
    CHECK(c.front() == c.back());
  }
}

TEST_CASE("plan_dag respects every edge on random DAGs") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const Graph g = gen::random_dag(16, 0.25, seed);
    // Shuffle labels so topo order is not the identity.
    std::vector<std::size_t> perm(16);
    for (std::size_t i = 0; i < 16; ++i) perm[i] = (i * 7 + seed) % 16;
    std::vector<Edge> edges;
    for (const Edge& e : g.edges()) edges.push_back({perm[e.src], perm[e.dst]});
    const Graph h = build_graph(16, true, edges);
    const DagPlan plan = plan_dag(h);
    std::size_t parents = 0;
    for (const Edge& e : h.edges()) CHECK(plan.position[e.src] < plan.position[e.dst]);
    for (const auto& p : plan.parents) parents += p.size();
    CHECK(parents == h.num_edges());
    CHECK(plan.diameter < 16);
    // Permuting A by topo order gives a strictly lower-triangular matrix.
    for (const Edge& e : h.edges()) CHECK(plan.position[e.dst] > plan.position[e.src]);
  }
}

TEST_CASE("decompose_line") {
  const Decomposition d = decompose_line(3);
  REQUIRE(d.parts.size() == 2);
  CHECK(d.parts[0].graph.edges() == std::vector<Edge>{{0, 1}, {1, 2}});
  std::set<std::pair<std::size_t, std::size_t>> rev;
  for (const Edge& e : d.parts[1].graph.edges()) rev.insert({e.src, e.dst});
  CHECK(rev == std::set<std::pair<std::size_t, std::size_t>>{{2, 1}, {1, 0}});

  const Decomposition one = decompose_line(1);
  CHECK(one.parts[0].graph.num_edges() == 0);
  CHECK(one.parts[1].graph.num_edges() == 0);

  const Decomposition big = decompose_line(128);
  std::vector<int> cover(127, 0);
  for (const auto& part : big.parts)
    for (std::size_t k = 0; k < part.graph.num_edges(); ++k) ++cover[part.source_edge[k]];
  for (int c : cover) CHECK(c == 2);
}

TEST_CASE("decompose_grid covers edges and reaches all pairs") {
  const Decomposition d11 = decompose_grid(1, 1);
  REQUIRE(d11.parts.size() == 4);
  for (const auto& p : d11.parts) CHECK(p.graph.num_edges() == 0);

  // Every part orients the full grid, so each grid edge lies in all four.
  const Decomposition d22 = decompose_grid(2, 2);
  for (const auto& p : d22.parts) CHECK(p.graph.num_edges() == 4);

  std::size_t oriented = 0;
  for (const auto& p : decompose_grid(3, 3).parts) oriented += p.graph.num_edges();
  CHECK(oriented == 48);

  for (std::size_t h = 1; h <= 8; ++h) {
    for (std::size_t w = 1; w <= 8; ++w) {
      const Decomposition d = decompose_grid(h, w);
      std::vector<int> cover(d.source.num_edges(), 0);
      for (const auto& part : d.parts) {
        plan_dag(part.graph);
        for (std::size_t k = 0; k < part.graph.num_edges(); ++k) ++cover[part.source_edge[k]];
      }
      for (int c : cover) CHECK(c >= 1);
      const std::size_t n = h * w;
      std::vector<std::vector<bool>> reach(n, std::vector<bool>(n, false));
      for (const auto& part : d.parts)
        for (std::size_t j = 0; j < n; ++j) {
          const auto r = reachable_from(part.graph, j);
          for (std::size_t i = 0; i < n; ++i)
            if (r[i]) reach[j][i] = true;
        }
      bool all = true;
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < n; ++i) all = all && reach[j][i];
      CHECK(all);
    }
  }
}

TEST_CASE("path_sum_oracle") {
  const Graph chain = line_graph(3, true);
  const std::vector<double> w{0.3, 0.6};  // arcs sorted by dst: 0->1, 1->2
  CHECK(path_sum_oracle(chain, w, 2, 0, 2) == doctest::Approx(0.18).epsilon(1e-15));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(path_sum_oracle(chain, w, i, j, 0) == (i == j ? 1.0 : 0.0));

  const Graph diamond = build_graph(4, true, {{0, 1}, {0, 2}, {1, 3}, {2, 3}});
  const std::vector<double> half(4, 0.5);
  CHECK(path_sum_oracle(diamond, half, 3, 0, 2) == 0.5);

  const Graph big = line_graph(13, true);
  const std::vector<double> ones(12, 1.0);
  try {
    path_sum_oracle(big, ones, 1, 0, 1);
    FAIL("expected OracleSizeExceeded");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::OracleSizeExceeded);
  }
}

TEST_CASE("matrix powers equal walk enumeration on small graphs") {
  std::mt19937_64 rng(21);
  for (std::uint64_t seed = 0; seed < 15; ++seed) {
    const Graph g = seed % 2 ? gen::random_graph(8, 0.35, seed) : gen::random_dag(9, 0.4, seed);
    const auto w = chimera::testing::random_weights(g.arcs().size(), rng);
    const Matrix a = dense_adjacency(g, w);
    for (std::size_t k = 0; k <= 5; ++k) {
      const Matrix ak = matrix_power(a, k);
      for (std::size_t i = 0; i < g.num_nodes(); ++i)
        for (std::size_t j = 0; j < g.num_nodes(); ++j)
          CHECK(std::abs(ak(i, j) - path_sum_oracle(g, w, i, j, k)) < 1e-12);
    }
  }
}

TEST_CASE("diameter of disconnected graphs uses reachable pairs") {
  const Graph g = build_graph(5, false, {{0, 1}, {1, 2}, {3, 4}});
  CHECK(graph_diameter(g) == 2);
  CHECK(graph_diameter(build_graph(3, true, {})) == 0);
  CHECK(graph_diameter(line_graph(6, true)) == 5);
}
