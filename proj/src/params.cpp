// Copyright 2026 The Chimera Authors.
// SPDX-License-Identifier: Apache-2.0

#include "chimera/params.hpp"

#include <cmath>

namespace chimera {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double swish(double x) { return x * sigmoid(x); }

double softplus(double x) {
  // log1p(exp(x)) without overflow for large x.
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

namespace {

Projection init_projection(std::size_t in, std::size_t out,
                           std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
  Projection p;
  p.weight = Matrix(in, out);
  for (auto& w : p.weight.data()) w = normal(rng);
  p.bias = Matrix(1, out);
  return p;
}

void export_projection(const Projection& p, const std::string& name,
                       ParamStore& out) {
  out[name + ".weight"] = p.weight;
  out[name + ".bias"] = p.bias;
  out[name + ".theta_self"] = Matrix(1, 1, p.theta_self);
  out[name + ".theta_neigh"] = Matrix(1, 1, p.theta_neigh);
}

const Matrix& lookup(const ParamStore& store, const std::string& name) {
  auto it = store.find(name);
  if (it == store.end()) {
    throw Error(ErrorCode::MissingFeatures, "missing parameter '" + name + "'");
  }
  return it->second;
}

Projection import_projection(const ParamStore& store, const std::string& name) {
  Projection p;
  p.weight = lookup(store, name + ".weight");
  p.bias = lookup(store, name + ".bias");
  if (p.bias.rows() != 1 || p.bias.cols() != p.weight.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "bias shape of '" + name + "'");
  }
  p.theta_self = lookup(store, name + ".theta_self")(0, 0);
  p.theta_neigh = lookup(store, name + ".theta_neigh")(0, 0);
  return p;
}

// Projection + convolution, before the activation.
Matrix project_and_convolve(const Projection& p, const Matrix& x,
                            const NeighborMean* conv) {
  Matrix u = matmul(x, p.weight);
  for (std::size_t i = 0; i < u.rows(); ++i)
    for (std::size_t j = 0; j < u.cols(); ++j) u(i, j) += p.bias(0, j);
  if (conv == nullptr) return u;
  const Matrix agg = conv->apply(u);
  Matrix out(u.rows(), u.cols());
  for (std::size_t k = 0; k < u.size(); ++k)
    out.data()[k] = p.theta_self * u.data()[k] + p.theta_neigh * agg.data()[k];
  return out;
}

Matrix activate(Matrix m, Activation act) {
  for (auto& v : m.data()) {
    switch (act) {
      case Activation::Swish: v = swish(v); break;
      case Activation::Softplus: v = softplus(v); break;
      case Activation::Identity: break;
    }
  }
  return m;
}

std::vector<double> column_vector(const Matrix& m) {
  return std::vector<double>(m.data().begin(), m.data().end());
}

}  // namespace

ProjectionWeights init_projection_weights(const ProjectionShape& shape,
                                          std::mt19937_64& rng) {
  const std::size_t d_model = shape.model_dim;
  ProjectionWeights w;
  w.b = init_projection(d_model, shape.state_dim, rng);
  w.c = init_projection(d_model, shape.state_dim, rng);
  w.v = init_projection(d_model, shape.value_dim, rng);
  w.delta = init_projection(d_model, 1, rng);
  w.psi = init_projection(d_model, 1, rng);
  if (shape.directed_variant) w.delta2 = init_projection(d_model, 1, rng);
  if (shape.edge_dim > 0) w.edge_delta = init_projection(shape.edge_dim, 1, rng);
  return w;
}

HeadSet init_heads(std::size_t model_dim, std::size_t state_dim,
                   std::size_t heads, std::size_t edge_dim,
                   bool directed_variant, std::mt19937_64& rng) {
  if (heads == 0 || model_dim % heads != 0) {
    throw Error(ErrorCode::InvalidConfig,
                "heads (" + std::to_string(heads) + ") must divide model dim " +
                    std::to_string(model_dim));
  }
  HeadSet set;
  for (std::size_t h = 0; h < heads; ++h) {
    set.push_back(init_projection_weights(
        {model_dim, state_dim, model_dim / heads, edge_dim, directed_variant},
        rng));
  }
  return set;
}

void export_params(const ProjectionWeights& w, const std::string& prefix,
                   ParamStore& out) {
  export_projection(w.b, prefix + "b", out);
  export_projection(w.c, prefix + "c", out);
  export_projection(w.v, prefix + "v", out);
  export_projection(w.delta, prefix + "delta", out);
  export_projection(w.psi, prefix + "psi", out);
  if (w.delta2) export_projection(*w.delta2, prefix + "delta2", out);
  if (w.edge_delta) export_projection(*w.edge_delta, prefix + "edge_delta", out);
}

ProjectionWeights import_params(const ParamStore& store,
                                const std::string& prefix) {
  ProjectionWeights w;
  w.b = import_projection(store, prefix + "b");
  w.c = import_projection(store, prefix + "c");
  w.v = import_projection(store, prefix + "v");
  w.delta = import_projection(store, prefix + "delta");
  w.psi = import_projection(store, prefix + "psi");
  if (store.count(prefix + "delta2.weight"))
    w.delta2 = import_projection(store, prefix + "delta2");
  if (store.count(prefix + "edge_delta.weight"))
    w.edge_delta = import_projection(store, prefix + "edge_delta");
  if (w.c.weight.rows() != w.b.weight.rows() ||
      w.c.weight.cols() != w.b.weight.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "B and C projections differ in shape");
  }
  return w;
}

std::string head_prefix(std::size_t set, std::size_t head) {
  return "set" + std::to_string(set) + ".head" + std::to_string(head) + ".";
}

void export_heads(const std::vector<HeadSet>& sets, const std::string& prefix,
                  ParamStore& out) {
  for (std::size_t s = 0; s < sets.size(); ++s)
    for (std::size_t h = 0; h < sets[s].size(); ++h)
      export_params(sets[s][h], prefix + head_prefix(s, h), out);
}

std::vector<HeadSet> import_heads(const ParamStore& store,
                                  const std::string& prefix) {
  std::vector<HeadSet> sets;
  for (std::size_t s = 0;; ++s) {
    HeadSet set;
    for (std::size_t h = 0;; ++h) {
      const std::string p = prefix + head_prefix(s, h);
      if (!store.count(p + "b.weight")) break;
      set.push_back(import_params(store, p));
    }
    if (set.empty()) break;
    sets.push_back(std::move(set));
  }
  return sets;
}

NeighborMean NeighborMean::from_graph(const Graph& graph) {
  NeighborMean m;
  m.row_begin.assign(graph.num_nodes() + 1, 0);
  const auto neighbors = graph.in_neighbors();
  for (std::size_t i = 0; i < neighbors.size(); ++i) {
    m.row_begin[i + 1] = m.row_begin[i] + neighbors[i].size();
    m.cols.insert(m.cols.end(), neighbors[i].begin(), neighbors[i].end());
  }
  return m;
}

Matrix NeighborMean::apply(const Matrix& u) const {
  const std::size_t n = row_begin.size() - 1;
  if (u.rows() != n) {
    throw Error(ErrorCode::ShapeMismatch, "neighbour mean: row count");
  }
  Matrix out(n, u.cols());
  for (std::size_t i = 0; i < n; ++i) {
    const double w = weight_of(i);
    for (std::size_t k = row_begin[i]; k < row_begin[i + 1]; ++k) {
      const auto src = u.row(cols[k]);
      auto dst = out.row(i);
      for (std::size_t c = 0; c < u.cols(); ++c) dst[c] += w * src[c];
    }
  }
  return out;
}

SsmParams compute_params(const Graph& graph, const Matrix& x,
                         const ProjectionWeights& weights) {
  if (x.rows() != graph.num_nodes()) {
    throw Error(ErrorCode::ShapeMismatch,
                "features have " + std::to_string(x.rows()) + " rows for " +
                    std::to_string(graph.num_nodes()) + " nodes");
  }
  if (x.cols() != weights.model_dim()) {
    throw Error(ErrorCode::ShapeMismatch,
                "feature width " + std::to_string(x.cols()) +
                    " does not match projection input " +
                    std::to_string(weights.model_dim()));
  }
  const NeighborMean conv = NeighborMean::from_graph(graph);
  SsmParams p;
  p.b = activate(project_and_convolve(weights.b, x, &conv), Activation::Swish);
  p.c = activate(project_and_convolve(weights.c, x, &conv), Activation::Swish);
  p.v = activate(project_and_convolve(weights.v, x, &conv), Activation::Swish);
  p.delta = column_vector(
      activate(project_and_convolve(weights.delta, x, &conv), Activation::Softplus));
  p.psi = column_vector(project_and_convolve(weights.psi, x, &conv));
  if (weights.delta2) {
    p.delta2 = column_vector(activate(
        project_and_convolve(*weights.delta2, x, &conv), Activation::Softplus));
  }
  if (weights.edge_delta) {
    const auto& z = graph.edge_features();
    if (!z) {
      throw Error(ErrorCode::MissingFeatures,
                  "edge selectivity needs edge features");
    }
    if (z->cols() != weights.edge_delta->in_dim()) {
      throw Error(ErrorCode::ShapeMismatch, "edge feature width");
    }
    p.edge_delta = column_vector(activate(
        project_and_convolve(*weights.edge_delta, *z, nullptr), Activation::Softplus));
  }
  return p;
}

SsmParams compute_params(const Graph& graph, const ProjectionWeights& weights) {
  if (!graph.node_features()) {
    throw Error(ErrorCode::MissingFeatures, "graph has no node features");
  }
  return compute_params(graph, *graph.node_features(), weights);
}

std::string_view regime_name(Regime regime) {
  switch (regime) {
    case Regime::General: return "general";
    case Regime::Dag: return "dag";
    case Regime::DagNormalized: return "dag-normalized";
    case Regime::UndirectedLine: return "undirected-line";
  }
  return "unknown";
}

Regime parse_regime(std::string_view token) {
  for (Regime r : {Regime::General, Regime::Dag, Regime::DagNormalized,
                   Regime::UndirectedLine}) {
    if (token == regime_name(r)) return r;
  }
  throw Error(ErrorCode::InvalidConfig,
              "unknown regime '" + std::string(token) +
                  "'; valid: general, dag, dag-normalized, undirected-line");
}

Matrix WeightedAdjacency::dense() const {
  Matrix a(num_nodes, num_nodes);
  for (std::size_t k = 0; k < arcs.size(); ++k) a(arcs[k].dst, arcs[k].src) = weights[k];
  return a;
}

double WeightedAdjacency::max_row_abs_sum() const {
  double best = 0.0;
  for (std::size_t i = 0; i < num_nodes; ++i) {
    double s = 0.0;
    for (std::size_t k = row_begin[i]; k < row_begin[i + 1]; ++k)
      s += std::abs(weights[k]);
    best = std::max(best, s);
  }
  return best;
}

namespace {

std::vector<std::size_t> csr_offsets(std::size_t num_nodes,
                                     const std::vector<Arc>& arcs) {
  std::vector<std::size_t> begin(num_nodes + 1, 0);
  for (const Arc& a : arcs) ++begin[a.dst + 1];
  for (std::size_t i = 0; i < num_nodes; ++i) begin[i + 1] += begin[i];
  return begin;
}

void check_node_params(const SsmParams& params, std::size_t num_nodes) {
  if (params.delta.size() != num_nodes || params.psi.size() != num_nodes ||
      params.b.rows() != num_nodes) {
    throw Error(ErrorCode::ShapeMismatch,
                "parameters do not match the node count " +
                    std::to_string(num_nodes));
  }
}

}  // namespace

double arc_selectivity(const Arc& arc, const SsmParams& params,
                       bool two_deltas) {
  const auto& sender = two_deltas ? params.delta2 : params.delta;
  double sum = params.delta[arc.dst] + sender[arc.src];
  double terms = 2.0;
  if (!params.edge_delta.empty()) {
    sum += params.edge_delta[arc.edge];
    terms = 3.0;
  }
  return sum / terms;
}

WeightedAdjacency build_adjacency_general(const Graph& graph,
                                          const SsmParams& params, double gamma,
                                          bool directed_variant) {
  if (!(gamma > 0.0 && gamma < 1.0)) {
    throw Error(ErrorCode::GammaOutOfRange,
                "gamma must lie in (0, 1), got " + std::to_string(gamma));
  }
  check_node_params(params, graph.num_nodes());
  if (directed_variant && params.delta2.size() != graph.num_nodes()) {
    throw Error(ErrorCode::InvalidConfig,
                "directed variant needs a second selectivity head");
  }
  if (!params.edge_delta.empty() && params.edge_delta.size() != graph.num_edges()) {
    throw Error(ErrorCode::ShapeMismatch, "edge selectivity length");
  }
  WeightedAdjacency adj;
  adj.num_nodes = graph.num_nodes();
  adj.regime = Regime::General;
  adj.gamma = gamma;
  adj.arcs = graph.arcs();
  adj.row_begin = csr_offsets(adj.num_nodes, adj.arcs);
  adj.weights.resize(adj.arcs.size());
  for (std::size_t k = 0; k < adj.arcs.size(); ++k)
    adj.weights[k] = std::exp(-arc_selectivity(adj.arcs[k], params, directed_variant));
  for (std::size_t i = 0; i < adj.num_nodes; ++i) {
    double row_sum = 0.0;
    for (std::size_t k = adj.row_begin[i]; k < adj.row_begin[i + 1]; ++k)
      row_sum += adj.weights[k];
    const double denom = row_sum + std::exp(-params.psi[i]);
    for (std::size_t k = adj.row_begin[i]; k < adj.row_begin[i + 1]; ++k)
      adj.weights[k] = gamma * adj.weights[k] / denom;
  }
  return adj;
}

DagAdjacency build_adjacency_dag(const DagPlan& plan, const SsmParams& params,
                                 bool normalized) {
  const std::size_t n = plan.num_nodes();
  check_node_params(params, n);
  if (!params.edge_delta.empty() && params.edge_delta.size() != plan.num_edges) {
    throw Error(ErrorCode::ShapeMismatch, "edge selectivity length");
  }
  DagAdjacency out;
  WeightedAdjacency& adj = out.adjacency;
  adj.num_nodes = n;
  adj.regime = normalized ? Regime::DagNormalized : Regime::Dag;
  adj.plan = plan;
  adj.row_begin.assign(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    adj.row_begin[i + 1] = adj.row_begin[i] + plan.parents[i].size();
    for (const Parent& p : plan.parents[i]) adj.arcs.push_back({i, p.node, p.edge});
  }
  adj.weights.resize(adj.arcs.size());
  out.b_bar = params.b;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t degree = adj.in_degree(i);
    if (degree == 0) continue;  // root: B~_i = B_i
    const double norm = normalized ? 1.0 / std::sqrt(static_cast<double>(degree)) : 1.0;
    double input_scale = 0.0;
    for (std::size_t k = adj.row_begin[i]; k < adj.row_begin[i + 1]; ++k) {
      const double d_ij = arc_selectivity(adj.arcs[k], params, false);
      adj.weights[k] = std::exp(-d_ij) * norm;
      input_scale += d_ij * norm;
    }
    for (auto& v : out.b_bar.row(i)) v *= input_scale;
  }
  return out;
}

double line_psi_margin(double psi) { return 0.25 * sigmoid(psi); }

bool is_line_graph(const Graph& graph) {
  const auto& edges = graph.edges();
  if (edges.size() + 1 != graph.num_nodes()) return false;
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const Edge& e = edges[i];
    const bool forward = e.src == i && e.dst == i + 1;
    const bool backward = e.src == i + 1 && e.dst == i;
    if (!forward && !backward) return false;
  }
  return true;
}

WeightedAdjacency build_adjacency_undirected_line(const Graph& graph,
                                                  const SsmParams& params) {
  if (!is_line_graph(graph)) {
    throw Error(ErrorCode::NotALine,
                "undirected-line regime needs the chain 0-1-...-(T-1)");
  }
  return build_adjacency_undirected_line(graph.num_nodes(), params);
}

WeightedAdjacency build_adjacency_undirected_line(std::size_t num_nodes,
                                                  const SsmParams& params) {
  check_node_params(params, num_nodes);
  const Graph line = line_graph(num_nodes, false);
  if (!params.edge_delta.empty() && params.edge_delta.size() != line.num_edges()) {
    throw Error(ErrorCode::ShapeMismatch, "edge selectivity length");
  }
  const bool two_deltas = params.delta2.size() == num_nodes;
  WeightedAdjacency adj;
  adj.num_nodes = num_nodes;
  adj.regime = Regime::UndirectedLine;
  adj.arcs = line.arcs();
  adj.row_begin = csr_offsets(num_nodes, adj.arcs);
  adj.weights.resize(adj.arcs.size());
  // Arc k's partner is the opposite direction over the same edge.
  std::vector<std::size_t> arc_of_edge_fwd(line.num_edges()), arc_of_edge_bwd(line.num_edges());
  for (std::size_t k = 0; k < adj.arcs.size(); ++k) {
    const Arc& a = adj.arcs[k];
    adj.weights[k] = std::exp(-arc_selectivity(a, params, two_deltas));
    (a.dst > a.src ? arc_of_edge_fwd : arc_of_edge_bwd)[a.edge] = k;
  }
  for (std::size_t e = 0; e < line.num_edges(); ++e) {
    const std::size_t kf = arc_of_edge_fwd[e];
    const std::size_t kb = arc_of_edge_bwd[e];
    const double margin =
        std::max(line_psi_margin(params.psi[e]), line_psi_margin(params.psi[e + 1]));
    const double product = adj.weights[kf] * adj.weights[kb];
    const double s = std::min(1.0, (0.25 - margin) / std::max(product, kLineRescaleEpsilon));
    const double root = std::sqrt(s);
    adj.weights[kf] *= root;
    adj.weights[kb] *= root;
  }
  return adj;
}

Matrix scaled_input_b(const SsmParams& params) {
  Matrix out = params.b;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (auto& v : out.row(i)) v *= params.delta[i];
  return out;
}

}  // namespace chimera
