// Copyright 2026 The Chimera Authors.
// SPDX-License-Identifier: Apache-2.0

#include "chimera/graph.hpp"

#include <algorithm>
#include <functional>
#include <queue>
#include <set>
#include <utility>

namespace chimera {

namespace {

std::vector<Arc> expand_arcs(std::size_t num_nodes, bool directed,
                             const std::vector<Edge>& edges) {
  std::vector<Arc> arcs;
  arcs.reserve(directed ? edges.size() : 2 * edges.size());
  for (std::size_t e = 0; e < edges.size(); ++e) {
    arcs.push_back({edges[e].dst, edges[e].src, e});
    if (!directed) arcs.push_back({edges[e].src, edges[e].dst, e});
  }
  (void)num_nodes;
  std::sort(arcs.begin(), arcs.end(), [](const Arc& a, const Arc& b) {
    return a.dst != b.dst ? a.dst < b.dst : a.src < b.src;
  });
  return arcs;
}

}  // namespace

Graph build_graph(std::size_t num_nodes, bool directed, std::vector<Edge> edges,
                  std::optional<Matrix> node_features,
                  std::optional<Matrix> edge_features) {
  if (num_nodes == 0) {
    throw Error(ErrorCode::IndexOutOfRange, "graph needs at least one node");
  }
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (auto& e : edges) {
    if (e.src >= num_nodes || e.dst >= num_nodes) {
      throw Error(ErrorCode::IndexOutOfRange,
                  "edge (" + std::to_string(e.src) + "," + std::to_string(e.dst) +
                      ") out of range for " + std::to_string(num_nodes) +
                      " nodes");
    }
    if (e.src == e.dst) {
      throw Error(ErrorCode::SelfLoop,
                  "self-loop on node " + std::to_string(e.src));
    }
    if (!directed && e.src > e.dst) std::swap(e.src, e.dst);
    if (!seen.insert({e.src, e.dst}).second) {
      throw Error(ErrorCode::DuplicateEdge,
                  "duplicate edge (" + std::to_string(e.src) + "," +
                      std::to_string(e.dst) + ")");
    }
  }
  if (node_features && node_features->rows() != num_nodes) {
    throw Error(ErrorCode::FeatureShapeMismatch,
                "node_features has " + std::to_string(node_features->rows()) +
                    " rows, expected " + std::to_string(num_nodes));
  }
  if (edge_features && edge_features->rows() != edges.size()) {
    throw Error(ErrorCode::FeatureShapeMismatch,
                "edge_features has " + std::to_string(edge_features->rows()) +
                    " rows, expected " + std::to_string(edges.size()));
  }
  Graph g;
  g.num_nodes_ = num_nodes;
  g.directed_ = directed;
  g.arcs_ = expand_arcs(num_nodes, directed, edges);
  g.edges_ = std::move(edges);
  g.node_features_ = std::move(node_features);
  g.edge_features_ = std::move(edge_features);
  return g;
}

std::vector<std::vector<std::size_t>> Graph::in_neighbors() const {
  std::vector<std::vector<std::size_t>> out(num_nodes_);
  for (const Arc& a : arcs_) out[a.dst].push_back(a.src);
  return out;
}

Graph Graph::with_node_features(Matrix features) const {
  return build_graph(num_nodes_, directed_, edges_, std::move(features),
                     edge_features_);
}

Graph Graph::as_undirected() const {
  if (!directed_) return *this;
  return build_graph(num_nodes_, false, edges_, node_features_, edge_features_);
}

Graph line_graph(std::size_t num_nodes, bool directed) {
  std::vector<Edge> edges;
  for (std::size_t i = 0; i + 1 < num_nodes; ++i) edges.push_back({i, i + 1});
  return build_graph(num_nodes, directed, std::move(edges));
}

Graph grid_graph(std::size_t height, std::size_t width) {
  std::vector<Edge> edges;
  for (std::size_t r = 0; r < height; ++r)
    for (std::size_t c = 0; c < width; ++c) {
      const std::size_t v = r * width + c;
      if (c + 1 < width) edges.push_back({v, v + 1});
      if (r + 1 < height) edges.push_back({v, v + width});
    }
  return build_graph(height * width, false, std::move(edges));
}

namespace {

// Follows parents inside the unprocessed set until a node repeats.
std::vector<std::size_t> find_cycle(const Graph& graph,
                                    const std::vector<std::size_t>& indegree) {
  const auto parents = graph.in_neighbors();
  std::size_t start = 0;
  while (indegree[start] == 0) ++start;
  std::vector<std::size_t> visit_index(graph.num_nodes(), SIZE_MAX);
  std::vector<std::size_t> walk;
  std::size_t v = start;
  while (visit_index[v] == SIZE_MAX) {
    visit_index[v] = walk.size();
    walk.push_back(v);
    for (std::size_t p : parents[v]) {
      if (indegree[p] > 0) {
        v = p;
        break;
      }
    }
  }
  // walk[visit_index[v]..] is a cycle traversed against edge direction.
  std::vector<std::size_t> cycle(walk.begin() + static_cast<std::ptrdiff_t>(visit_index[v]),
                                 walk.end());
  std::reverse(cycle.begin(), cycle.end());
  cycle.push_back(cycle.front());
  return cycle;
}

}  // namespace

DagPlan plan_dag(const Graph& graph) {
  if (!graph.directed()) {
    throw Error(ErrorCode::InvalidConfig, "plan_dag needs a directed graph");
  }
  const std::size_t n = graph.num_nodes();
  std::vector<std::vector<std::size_t>> children(n);
  std::vector<std::size_t> indegree(n, 0);
  DagPlan plan;
  plan.parents.resize(n);
  for (const Arc& a : graph.arcs()) {
    children[a.src].push_back(a.dst);
    ++indegree[a.dst];
    plan.parents[a.dst].push_back({a.src, a.edge});
  }
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t v = 0; v < n; ++v)
    if (indegree[v] == 0) ready.push(v);
  plan.topo_order.reserve(n);
  while (!ready.empty()) {
    const std::size_t v = ready.top();
    ready.pop();
    plan.topo_order.push_back(v);
    for (std::size_t c : children[v])
      if (--indegree[c] == 0) ready.push(c);
  }
  if (plan.topo_order.size() != n) throw CycleError(find_cycle(graph, indegree));

  plan.position.assign(n, 0);
  for (std::size_t k = 0; k < n; ++k) plan.position[plan.topo_order[k]] = k;
  plan.num_edges = graph.num_edges();

  std::vector<std::size_t> longest(n, 0);
  for (std::size_t v : plan.topo_order) {
    for (const Parent& p : plan.parents[v])
      longest[v] = std::max(longest[v], longest[p.node] + 1);
    plan.diameter = std::max(plan.diameter, longest[v]);
  }
  return plan;
}

std::vector<bool> reachable_from(const Graph& graph, std::size_t from) {
  const std::size_t n = graph.num_nodes();
  std::vector<std::vector<std::size_t>> out(n);
  for (const Arc& a : graph.arcs()) out[a.src].push_back(a.dst);
  std::vector<bool> seen(n, false);
  std::vector<std::size_t> stack{from};
  seen[from] = true;
  while (!stack.empty()) {
    const std::size_t v = stack.back();
    stack.pop_back();
    for (std::size_t w : out[v])
      if (!seen[w]) {
        seen[w] = true;
        stack.push_back(w);
      }
  }
  return seen;
}

std::size_t graph_diameter(const Graph& graph) {
  const std::size_t n = graph.num_nodes();
  std::vector<std::vector<std::size_t>> out(n);
  for (const Arc& a : graph.arcs()) out[a.src].push_back(a.dst);
  std::size_t best = 0;
  std::vector<std::size_t> dist(n);
  for (std::size_t s = 0; s < n; ++s) {
    std::fill(dist.begin(), dist.end(), SIZE_MAX);
    std::queue<std::size_t> q;
    dist[s] = 0;
    q.push(s);
    while (!q.empty()) {
      const std::size_t v = q.front();
      q.pop();
      best = std::max(best, dist[v]);
      for (std::size_t w : out[v])
        if (dist[w] == SIZE_MAX) {
          dist[w] = dist[v] + 1;
          q.push(w);
        }
    }
  }
  return best;
}

namespace {

DecompositionPart make_part(std::string label, std::size_t num_nodes,
                            std::vector<Edge> edges,
                            std::vector<std::size_t> source_edge) {
  Graph g = build_graph(num_nodes, true, std::move(edges));
  DagPlan plan = plan_dag(g);
  return {std::move(label), std::move(g), std::move(plan),
          std::move(source_edge)};
}

}  // namespace

Decomposition decompose_line(std::size_t num_nodes) {
  Decomposition d{line_graph(num_nodes, false), {}};
  std::vector<Edge> forward, reverse;
  std::vector<std::size_t> map_f, map_r;
  for (std::size_t i = 0; i + 1 < num_nodes; ++i) {
    forward.push_back({i, i + 1});
    map_f.push_back(i);
  }
  for (std::size_t i = num_nodes; i-- > 1;) {
    reverse.push_back({i, i - 1});
    map_r.push_back(i - 1);
  }
  d.parts.push_back(make_part("forward", num_nodes, std::move(forward),
                              std::move(map_f)));
  d.parts.push_back(make_part("reverse", num_nodes, std::move(reverse),
                              std::move(map_r)));
  return d;
}

Decomposition decompose_grid(std::size_t height, std::size_t width) {
  Decomposition d{grid_graph(height, width), {}};
  struct Orientation {
    const char* label;
    bool right;
    bool down;
  };
  constexpr Orientation kOrientations[] = {{"right-down", true, true},
                                           {"left-down", false, true},
                                           {"right-up", true, false},
                                           {"left-up", false, false}};
  const auto& src_edges = d.source.edges();
  for (const Orientation& o : kOrientations) {
    std::vector<Edge> edges;
    std::vector<std::size_t> mapping;
    for (std::size_t e = 0; e < src_edges.size(); ++e) {
      const Edge& se = src_edges[e];  // se.src < se.dst
      const bool horizontal = se.dst == se.src + 1 && se.src / width == se.dst / width;
      const bool forward = horizontal ? o.right : o.down;
      edges.push_back(forward ? se : Edge{se.dst, se.src});
      mapping.push_back(e);
    }
    d.parts.push_back(make_part(o.label, height * width, std::move(edges),
                                std::move(mapping)));
  }
  return d;
}

double path_sum_oracle(const Graph& graph, std::span<const double> arc_weights,
                       std::size_t i, std::size_t j, std::size_t k) {
  const std::size_t n = graph.num_nodes();
  if (n > kOracleMaxNodes || k > kOracleMaxLength) {
    throw Error(ErrorCode::OracleSizeExceeded,
                "path-sum oracle limited to T <= 12 and k <= 8");
  }
  if (i >= n || j >= n) {
    throw Error(ErrorCode::IndexOutOfRange, "path-sum oracle node index");
  }
  if (arc_weights.size() != graph.arcs().size()) {
    throw Error(ErrorCode::ShapeMismatch, "one weight per arc expected");
  }
  std::vector<std::vector<std::pair<std::size_t, double>>> out(n);
  for (std::size_t a = 0; a < graph.arcs().size(); ++a) {
    const Arc& arc = graph.arcs()[a];
    out[arc.src].push_back({arc.dst, arc_weights[a]});
  }
  // Enumerate every walk explicitly; each completed walk contributes its
  // product of weights.
  double total = 0.0;
  std::function<void(std::size_t, std::size_t, double)> walk =
      [&](std::size_t v, std::size_t remaining, double product) {
        if (remaining == 0) {
          if (v == i) total += product;
          return;
        }
        for (const auto& [w, weight] : out[v]) walk(w, remaining - 1, product * weight);
      };
  walk(j, k, 1.0);
  return total;
}

Matrix dense_adjacency(const Graph& graph, std::span<const double> arc_weights) {
  if (arc_weights.size() != graph.arcs().size()) {
    throw Error(ErrorCode::ShapeMismatch, "one weight per arc expected");
  }
  Matrix a(graph.num_nodes(), graph.num_nodes());
  for (std::size_t k = 0; k < arc_weights.size(); ++k) {
    const Arc& arc = graph.arcs()[k];
    a(arc.dst, arc.src) = arc_weights[k];
  }
  return a;
}

}  // namespace chimera
