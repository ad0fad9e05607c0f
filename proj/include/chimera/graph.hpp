// Copyright 2026 The Chimera Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "chimera/linalg.hpp"

namespace chimera {

struct Edge {
  std::size_t src = 0;
  std::size_t dst = 0;

  friend bool operator==(const Edge&, const Edge&) = default;
};

// One directed influence arc: A(dst, src) is the weight of src -> dst.
// `edge` indexes the graph edge the arc came from.
struct Arc {
  std::size_t dst = 0;
  std::size_t src = 0;
  std::size_t edge = 0;
};

// Immutable, validated topology. Undirected graphs keep each pair once with
// src < dst; arcs() expands them into both directions.
class Graph {
 public:
  std::size_t num_nodes() const noexcept { return num_nodes_; }
  std::size_t num_edges() const noexcept { return edges_.size(); }
  bool directed() const noexcept { return directed_; }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  const std::optional<Matrix>& node_features() const noexcept {
    return node_features_;
  }
  const std::optional<Matrix>& edge_features() const noexcept {
    return edge_features_;
  }

  // Arcs sorted by (dst, src). Directed: one per edge. Undirected: two.
  const std::vector<Arc>& arcs() const noexcept { return arcs_; }

  // Sources of incoming arcs per node, ascending.
  std::vector<std::vector<std::size_t>> in_neighbors() const;

  Graph with_node_features(Matrix features) const;

  // Same edge set, directed=false. Throws DuplicateEdge if the directed graph
  // has both (u,v) and (v,u).
  Graph as_undirected() const;

 private:
  friend Graph build_graph(std::size_t, bool, std::vector<Edge>,
                           std::optional<Matrix>, std::optional<Matrix>);

  std::size_t num_nodes_ = 0;
  bool directed_ = true;
  std::vector<Edge> edges_;
  std::vector<Arc> arcs_;
  std::optional<Matrix> node_features_;
  std::optional<Matrix> edge_features_;
};

Graph build_graph(std::size_t num_nodes, bool directed, std::vector<Edge> edges,
                  std::optional<Matrix> node_features = std::nullopt,
                  std::optional<Matrix> edge_features = std::nullopt);

// Directed chain 0 -> 1 -> ... -> T-1, or its undirected counterpart.
Graph line_graph(std::size_t num_nodes, bool directed);

// Undirected H x W grid, row-major nodes. Edge order: for each node, the
// right neighbour edge then the down neighbour edge.
Graph grid_graph(std::size_t height, std::size_t width);

struct Parent {
  std::size_t node = 0;
  std::size_t edge = 0;
};

// Acyclicity certificate for a directed graph.
struct DagPlan {
  std::vector<std::size_t> topo_order;
  std::vector<std::size_t> position;  // inverse of topo_order
  std::vector<std::vector<Parent>> parents;  // p(i), ascending node index
  std::size_t num_edges = 0;
  std::size_t diameter = 0;  // longest directed path, in edges

  std::size_t num_nodes() const noexcept { return topo_order.size(); }
};

// Kahn's algorithm, lowest index first among ready nodes. Throws CycleError
// with a witness cycle, or InvalidConfig for undirected input.
DagPlan plan_dag(const Graph& graph);

// Longest shortest-path length over reachable ordered pairs (BFS from every
// node). Unreachable pairs are ignored.
std::size_t graph_diameter(const Graph& graph);

struct DecompositionPart {
  std::string label;
  Graph graph;
  DagPlan plan;
  std::vector<std::size_t> source_edge;  // part edge -> source graph edge
};

struct Decomposition {
  Graph source;
  std::vector<DecompositionPart> parts;
};

// Forward chain (i -> i+1) and reverse chain (i+1 -> i) over the undirected
// line on T nodes.
Decomposition decompose_line(std::size_t num_nodes);

// Four orientations of the full H x W grid, in the order
// (right,down), (left,down), (right,up), (left,up).
Decomposition decompose_grid(std::size_t height, std::size_t width);

inline constexpr std::size_t kOracleMaxNodes = 12;
inline constexpr std::size_t kOracleMaxLength = 8;

// Sum over all length-k walks j -> ... -> i of the product of arc weights,
// by explicit enumeration. `arc_weights` is aligned with graph.arcs(). Equals
// (A^k)(i, j) for A(dst, src) = weight. Test oracle: T <= 12, k <= 8.
double path_sum_oracle(const Graph& graph, std::span<const double> arc_weights,
                       std::size_t i, std::size_t j, std::size_t k);

// Dense T x T matrix with A(dst, src) = arc weight.
Matrix dense_adjacency(const Graph& graph, std::span<const double> arc_weights);

// Nodes reachable from `from` along arcs (including `from`).
std::vector<bool> reachable_from(const Graph& graph, std::size_t from);

}  // namespace chimera
