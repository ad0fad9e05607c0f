// Copyright 2026 The Chimera Authors.
// SPDX-License-Identifier: Apache-2.0

#include "chimera/resolvent.hpp"

#include <charconv>
#include <queue>

namespace chimera {

Algorithm parse_algorithm(std::string_view token) {
  if (token == "dense") return {MaskMethod::DenseInverse, std::nullopt};
  if (token == "recurrence") return {MaskMethod::DagRecurrence, std::nullopt};
  if (token == "squaring") return {MaskMethod::Squaring, std::nullopt};
  if (token == "neumann") return {MaskMethod::Neumann, std::nullopt};
  constexpr std::string_view kPrefix = "neumann:";
  if (token.substr(0, kPrefix.size()) == kPrefix) {
    const std::string_view digits = token.substr(kPrefix.size());
    std::size_t k = 0;
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), k);
    if (ec == std::errc() && ptr == digits.data() + digits.size() && !digits.empty()) {
      return {MaskMethod::Neumann, k};
    }
  }
  throw Error(ErrorCode::InvalidConfig,
              "unknown algorithm '" + std::string(token) +
                  "'; valid: dense, recurrence, squaring, neumann:<k>");
}

std::string algorithm_token(const Algorithm& algorithm) {
  switch (algorithm.method) {
    case MaskMethod::DenseInverse: return "dense";
    case MaskMethod::DagRecurrence: return "recurrence";
    case MaskMethod::Squaring: return "squaring";
    case MaskMethod::Neumann:
      return algorithm.k ? "neumann:" + std::to_string(*algorithm.k) : "neumann";
  }
  return "unknown";
}

std::optional<std::size_t> nilpotency_depth(const WeightedAdjacency& adjacency) {
  if (adjacency.plan) return adjacency.plan->diameter;
  const std::size_t n = adjacency.num_nodes;
  // Kahn over arcs; longest[i] = longest path ending at i.
  std::vector<std::size_t> indegree(n, 0);
  std::vector<std::vector<std::size_t>> children(n);
  for (const Arc& a : adjacency.arcs) {
    ++indegree[a.dst];
    children[a.src].push_back(a.dst);
  }
  std::queue<std::size_t> ready;
  for (std::size_t i = 0; i < n; ++i)
    if (indegree[i] == 0) ready.push(i);
  std::vector<std::size_t> longest(n, 0);
  std::size_t seen = 0;
  std::size_t depth = 0;
  while (!ready.empty()) {
    const std::size_t u = ready.front();
    ready.pop();
    ++seen;
    depth = std::max(depth, longest[u]);
    for (std::size_t w : children[u]) {
      longest[w] = std::max(longest[w], longest[u] + 1);
      if (--indegree[w] == 0) ready.push(w);
    }
  }
  if (seen != n) return std::nullopt;
  return depth;
}

namespace {

void check_cap(std::size_t n, std::size_t cap, const char* what) {
  if (n > cap) {
    throw Error(ErrorCode::DenseCapExceeded,
                std::string(what) + " would materialise a " + std::to_string(n) +
                    "x" + std::to_string(n) + " mask; cap is " +
                    std::to_string(cap) + " nodes");
  }
}

}  // namespace

MaskMatrix mask_dense(const WeightedAdjacency& adjacency, std::size_t dense_cap) {
  check_cap(adjacency.num_nodes, dense_cap, "dense inverse");
  MaskMatrix out;
  out.method = MaskMethod::DenseInverse;
  out.exact = true;
  out.l = inverse(identity_minus(adjacency.dense()));
  return out;
}

MaskMatrix mask_squaring(const WeightedAdjacency& adjacency, std::size_t k_max) {
  if (k_max == 0) {
    throw Error(ErrorCode::InvalidConfig, "squaring needs k_max >= 1");
  }
  MaskMatrix out;
  out.method = MaskMethod::Squaring;
  MatmulCountScope counter;
  out.l = squaring_power_sum(adjacency.dense(), k_max, &out.k);
  out.matmul_count = counter.count();
  const auto depth = nilpotency_depth(adjacency);
  out.exact = depth.has_value() && *depth <= out.k;
  return out;
}

MaskMatrix mask_neumann(const WeightedAdjacency& adjacency, std::size_t k,
                        std::size_t dense_cap) {
  check_cap(adjacency.num_nodes, dense_cap, "truncated power sum");
  MaskMatrix out;
  out.method = MaskMethod::Neumann;
  out.k = k;
  MatmulCountScope counter;
  const Matrix a = adjacency.dense();
  // Horner: S_0 = I, S_{m+1} = I + A S_m.
  Matrix sum = Matrix::identity(adjacency.num_nodes);
  for (std::size_t i = 0; i < k; ++i) sum = identity_plus(matmul(a, sum));
  out.l = std::move(sum);
  out.matmul_count = counter.count();
  const auto depth = nilpotency_depth(adjacency);
  out.exact = depth.has_value() && *depth <= k;
  return out;
}

Matrix mix_output(const Matrix& mask, const Matrix& c, const Matrix& b_bar,
                  const Matrix& v) {
  const std::size_t n = mask.rows();
  if (!mask.is_square() || c.rows() != n || b_bar.rows() != n || v.rows() != n ||
      c.cols() != b_bar.cols()) {
    throw Error(ErrorCode::ShapeMismatch,
                "mix: L " + detail::shape(mask.rows(), mask.cols()) + ", C " +
                    detail::shape(c.rows(), c.cols()) + ", B " +
                    detail::shape(b_bar.rows(), b_bar.cols()) + ", V " +
                    detail::shape(v.rows(), v.cols()));
  }
  const Matrix m = hadamard(mask, matmul(c, transpose(b_bar)));
  return matmul(m, v);
}

MixOutput mix_output(const MaskMatrix& mask, const SsmParams& params,
                     const Matrix& b_bar) {
  return {mix_output(mask.l, params.c, b_bar, params.v), std::nullopt};
}

MixOutput dag_recurrence(const WeightedAdjacency& adjacency, const Matrix& c,
                         const Matrix& b_bar, const Matrix& v,
                         bool keep_hidden) {
  if (!adjacency.plan) {
    throw Error(ErrorCode::NotADag,
                "the recurrence needs an adjacency built from a DAG plan");
  }
  const std::size_t n = adjacency.num_nodes;
  if (c.rows() != n || b_bar.rows() != n || v.rows() != n ||
      c.cols() != b_bar.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "recurrence: parameter shapes");
  }
  const std::size_t block = c.cols() * v.cols();
  Matrix hidden(n, block);
  Matrix y(n, v.cols());
  dag_recurrence_kernel<double>(*adjacency.plan, adjacency.row_begin,
                                adjacency.arcs, adjacency.weights, c, b_bar, v,
                                y, hidden.data());
  detail::debug_check(y, "dag_recurrence");
  MixOutput out{std::move(y), std::nullopt};
  if (keep_hidden) out.hidden = std::move(hidden);
  return out;
}

void validate_config(const ChimeraConfig& config) {
  const bool dag = config.regime == Regime::Dag ||
                   config.regime == Regime::DagNormalized;
  if (config.algorithm.method == MaskMethod::DagRecurrence && !dag) {
    throw Error(ErrorCode::InvalidConfig,
                "the recurrence algorithm needs the dag or dag-normalized regime, got " +
                    std::string(regime_name(config.regime)));
  }
  if (config.regime == Regime::General &&
      !(config.gamma > 0.0 && config.gamma < 1.0)) {
    throw Error(ErrorCode::GammaOutOfRange,
                "gamma must lie in (0, 1), got " + std::to_string(config.gamma));
  }
}

Topology prepare_topology(const Graph& graph, const ChimeraConfig& config) {
  validate_config(config);
  Topology topo;
  topo.graph = &graph;
  switch (config.regime) {
    case Regime::Dag:
    case Regime::DagNormalized:
      if (!graph.directed()) {
        throw Error(ErrorCode::NotADag, "DAG regimes need a directed graph");
      }
      try {
        topo.plan = plan_dag(graph);
      } catch (const CycleError& e) {
        throw Error(ErrorCode::NotADag, e.what());
      }
      topo.diameter = topo.plan->diameter;
      break;
    case Regime::UndirectedLine:
      if (!is_line_graph(graph)) {
        throw Error(ErrorCode::NotALine,
                    "undirected-line regime needs the chain 0-1-...-(T-1)");
      }
      topo.diameter = graph.num_nodes() - 1;
      break;
    case Regime::General:
      topo.diameter = graph_diameter(graph);
      break;
  }
  return topo;
}

std::size_t truncation_depth(const Topology& topology,
                             const ChimeraConfig& config) {
  if (config.algorithm.k) return *config.algorithm.k;
  return std::max<std::size_t>(topology.diameter, 1);
}

HeadMixInputs head_mix_inputs(const Topology& topology, const SsmParams& params,
                              const ChimeraConfig& config) {
  switch (config.regime) {
    case Regime::Dag:
    case Regime::DagNormalized: {
      DagAdjacency dag = build_adjacency_dag(*topology.plan, params,
                                             config.regime == Regime::DagNormalized);
      return {std::move(dag.adjacency), std::move(dag.b_bar)};
    }
    case Regime::UndirectedLine:
      return {build_adjacency_undirected_line(*topology.graph, params),
              scaled_input_b(params)};
    case Regime::General:
      return {build_adjacency_general(*topology.graph, params, config.gamma,
                                      config.directed_variant),
              scaled_input_b(params)};
  }
  throw Error(ErrorCode::InvalidConfig, "unknown regime");
}

namespace {

void place_columns(Matrix& out, const Matrix& part, std::size_t col0) {
  for (std::size_t i = 0; i < part.rows(); ++i)
    for (std::size_t j = 0; j < part.cols(); ++j) out(i, col0 + j) = part(i, j);
}

}  // namespace

ForwardResult chimera_forward(const Graph& graph, const Matrix& x,
                              const HeadSet& heads, const ChimeraConfig& config) {
  if (heads.empty()) throw Error(ErrorCode::InvalidConfig, "no heads");
  const Topology topo = prepare_topology(graph, config);
  std::size_t total_dv = 0;
  for (const auto& h : heads) total_dv += h.value_dim();
  ForwardResult result;
  result.y = Matrix(graph.num_nodes(), total_dv);
  MatmulCountScope counter;
  std::size_t col = 0;
  for (const auto& head : heads) {
    const SsmParams params = compute_params(graph, x, head);
    const HeadMixInputs mix = head_mix_inputs(topo, params, config);
    Matrix y;
    switch (config.algorithm.method) {
      case MaskMethod::DagRecurrence:
        y = dag_recurrence(mix.adjacency, params.c, mix.b_bar, params.v).y;
        break;
      case MaskMethod::DenseInverse:
        result.masks.push_back(mask_dense(mix.adjacency, config.dense_cap));
        break;
      case MaskMethod::Squaring:
        result.masks.push_back(
            mask_squaring(mix.adjacency, truncation_depth(topo, config)));
        break;
      case MaskMethod::Neumann:
        result.masks.push_back(mask_neumann(
            mix.adjacency, truncation_depth(topo, config), config.dense_cap));
        break;
    }
    if (config.algorithm.method != MaskMethod::DagRecurrence) {
      y = mix_output(result.masks.back().l, params.c, mix.b_bar, params.v);
    }
    place_columns(result.y, y, col);
    col += y.cols();
  }
  result.matmul_count = counter.count();
  return result;
}

ForwardResult chimera_forward(const Decomposition& decomposition,
                              const Matrix& x,
                              const std::vector<const HeadSet*>& part_heads,
                              const ChimeraConfig& config) {
  if (part_heads.size() != decomposition.parts.size()) {
    throw Error(ErrorCode::InvalidConfig,
                "got " + std::to_string(part_heads.size()) + " weight views for " +
                    std::to_string(decomposition.parts.size()) + " parts");
  }
  ForwardResult total;
  for (std::size_t p = 0; p < decomposition.parts.size(); ++p) {
    ForwardResult part =
        chimera_forward(decomposition.parts[p].graph, x, *part_heads[p], config);
    if (p == 0) {
      total.y = std::move(part.y);
    } else {
      add_in_place(total.y, part.y);
    }
    total.matmul_count += part.matmul_count;
    for (auto& m : part.masks) total.masks.push_back(std::move(m));
  }
  if (config.combine == Combine::Mean && !decomposition.parts.empty()) {
    total.y = scale(total.y, 1.0 / static_cast<double>(decomposition.parts.size()));
  }
  return total;
}

}  // namespace chimera
