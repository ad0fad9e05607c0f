// Copyright 2026 The Chimera Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Input projections (B, C, V, Delta, Psi, edge Delta) and the weighted
// adjacency builders for the general, DAG and undirected-line regimes.

#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "chimera/graph.hpp"
#include "chimera/linalg.hpp"

namespace chimera {

// Named tensors, ordered by name. The unit of checkpointing and of the
// gradient engine's parameter registry.
using ParamStore = std::map<std::string, Matrix>;

enum class Activation { Swish, Softplus, Identity };

double sigmoid(double x);
double swish(double x);
double softplus(double x);

// Linear map followed by a one-hop mean convolution:
//   u_i = x_i W + b,  u~_i = theta_self u_i + theta_neigh mean_{j in N(i)} u_j.
struct Projection {
  Matrix weight;  // in x out
  Matrix bias;    // 1 x out
  double theta_self = 1.0;
  double theta_neigh = 0.5;

  std::size_t in_dim() const { return weight.rows(); }
  std::size_t out_dim() const { return weight.cols(); }
};

// Projection weights of one head.
struct ProjectionWeights {
  Projection b;      // D x d, Swish
  Projection c;      // D x d, Swish
  Projection v;      // D x Dv, Swish
  Projection delta;  // D x 1, softplus
  Projection psi;    // D x 1, identity
  std::optional<Projection> delta2;      // receiver/sender split, softplus
  std::optional<Projection> edge_delta;  // De x 1 on edge features, softplus

  std::size_t model_dim() const { return b.in_dim(); }
  std::size_t state_dim() const { return b.out_dim(); }
  std::size_t value_dim() const { return v.out_dim(); }
};

// Heads share the input; head h produces value columns
// [h*Dv, (h+1)*Dv) of the output.
using HeadSet = std::vector<ProjectionWeights>;

struct ProjectionShape {
  std::size_t model_dim = 4;
  std::size_t state_dim = 4;
  std::size_t value_dim = 4;
  std::size_t edge_dim = 0;  // 0: no edge-feature selectivity
  bool directed_variant = false;
};

// Zero-mean Gaussian weights with std 1/sqrt(in_dim), zero biases,
// theta_self = 1, theta_neigh = 0.5.
ProjectionWeights init_projection_weights(const ProjectionShape& shape,
                                          std::mt19937_64& rng);

// H heads with value_dim = model_dim / heads (must divide).
HeadSet init_heads(std::size_t model_dim, std::size_t state_dim,
                   std::size_t heads, std::size_t edge_dim,
                   bool directed_variant, std::mt19937_64& rng);

// Parameter names: <prefix><proj>.weight|bias|theta_self|theta_neigh with
// proj in {b, c, v, delta, psi, delta2, edge_delta}.
void export_params(const ProjectionWeights& w, const std::string& prefix,
                   ParamStore& out);
ProjectionWeights import_params(const ParamStore& store,
                                const std::string& prefix);
std::string head_prefix(std::size_t set, std::size_t head);
void export_heads(const std::vector<HeadSet>& sets, const std::string& prefix,
                  ParamStore& out);
std::vector<HeadSet> import_heads(const ParamStore& store,
                                  const std::string& prefix);

// Row-normalised neighbour-mean operator used by the projection convolution.
// Directed graphs aggregate over in-neighbours, undirected over all
// neighbours. Rows of parentless nodes are empty.
struct NeighborMean {
  std::vector<std::size_t> row_begin;
  std::vector<std::size_t> cols;
  double weight_of(std::size_t row) const {
    const std::size_t n = row_begin[row + 1] - row_begin[row];
    return n == 0 ? 0.0 : 1.0 / static_cast<double>(n);
  }

  static NeighborMean from_graph(const Graph& graph);
  Matrix apply(const Matrix& u) const;
};

struct SsmParams {
  Matrix b;                       // T x d
  Matrix c;                       // T x d
  Matrix v;                       // T x Dv
  std::vector<double> delta;      // T, >= 0
  std::vector<double> delta2;     // T or empty
  std::vector<double> psi;        // T
  std::vector<double> edge_delta; // |E| or empty
};

// Projection -> convolution -> activation for each of B, C, V, Delta, Psi
// (and Delta2 / edge Delta when present) on node features `x` (T x D).
SsmParams compute_params(const Graph& graph, const Matrix& x,
                         const ProjectionWeights& weights);
// Uses graph.node_features(); throws MissingFeatures when absent.
SsmParams compute_params(const Graph& graph, const ProjectionWeights& weights);

enum class Regime { General, Dag, DagNormalized, UndirectedLine };

std::string_view regime_name(Regime regime);
Regime parse_regime(std::string_view token);

inline constexpr double kDefaultGamma = 0.5;
inline constexpr double kLineRescaleEpsilon = 1e-12;

// Sparse A with arcs sorted by (dst, src); weights aligned with arcs.
struct WeightedAdjacency {
  std::size_t num_nodes = 0;
  Regime regime = Regime::General;
  std::vector<Arc> arcs;
  std::vector<double> weights;
  std::vector<std::size_t> row_begin;  // size T+1, CSR offsets by dst
  double gamma = 0.0;                  // general regime only
  std::optional<DagPlan> plan;         // DAG regimes

  std::size_t in_degree(std::size_t node) const {
    return row_begin[node + 1] - row_begin[node];
  }
  Matrix dense() const;
  double max_row_abs_sum() const;
};

// Exponent (Delta_dst + Delta'_src [+ Delta_edge]) / #terms for one arc;
// Delta' is delta2 when `two_deltas`, else delta.
double arc_selectivity(const Arc& arc, const SsmParams& params,
                       bool two_deltas);

// A_ij = exp(-selectivity), then each row scaled by
// gamma / (sum_j A_ij + exp(-Psi_i)). Requires 0 < gamma < 1.
WeightedAdjacency build_adjacency_general(const Graph& graph,
                                          const SsmParams& params, double gamma,
                                          bool directed_variant);

struct DagAdjacency {
  WeightedAdjacency adjacency;
  Matrix b_bar;  // T x d
};

// A_ij = exp(-Delta_ij), Delta_ij = mean of the node (and edge) selectivities;
// B~_i = (sum_{j in p(i)} Delta_ij) B_i. Normalised: both divided by
// sqrt(|p(i)|). Parentless nodes keep B~_i = B_i.
DagAdjacency build_adjacency_dag(const DagPlan& plan, const SsmParams& params,
                                 bool normalized);

// sigma(Psi) = sigmoid(Psi) / 4, in (0, 1/4).
double line_psi_margin(double psi);

// Undirected chain: per adjacent pair rescale both arcs by sqrt(s),
// s = min(1, (1/4 - max(sigma(Psi_i), sigma(Psi_j))) / max(A_ij A_ji, eps)).
WeightedAdjacency build_adjacency_undirected_line(std::size_t num_nodes,
                                                  const SsmParams& params);
// Validates that `graph` is the chain 0-1-...-(T-1) (either orientation
// flag); throws NotALine otherwise.
WeightedAdjacency build_adjacency_undirected_line(const Graph& graph,
                                                  const SsmParams& params);
bool is_line_graph(const Graph& graph);

// Input scaling used outside the DAG regimes: B~_i = Delta_i B_i.
Matrix scaled_input_b(const SsmParams& params);

}  // namespace chimera
