// Copyright 2026 The Chimera Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Mask construction L = (I - A)^-1 (dense, squared product, truncated power
// sum), the masked mix Y = (L o C B~^T) V, the linear-time DAG recurrence,
// and the end-to-end forward pass over graphs and decompositions.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "chimera/graph.hpp"
#include "chimera/linalg.hpp"
#include "chimera/params.hpp"

namespace chimera {

enum class MaskMethod { DenseInverse, DagRecurrence, Squaring, Neumann };

// Selector tokens: dense, recurrence, squaring, neumann:<k>. A bare
// "neumann" truncates at the graph diameter.
struct Algorithm {
  MaskMethod method = MaskMethod::DagRecurrence;
  std::optional<std::size_t> k;

  friend bool operator==(const Algorithm&, const Algorithm&) = default;
};

Algorithm parse_algorithm(std::string_view token);
std::string algorithm_token(const Algorithm& algorithm);

inline constexpr std::size_t kDefaultDenseCap = 4096;

struct MaskMatrix {
  Matrix l;
  MaskMethod method = MaskMethod::DenseInverse;
  std::size_t k = 0;  // truncation depth actually summed (Neumann / squaring)
  bool exact = true;
  std::uint64_t matmul_count = 0;
};

// Longest directed path when the arcs of `adjacency` form a DAG, else nullopt.
std::optional<std::size_t> nilpotency_depth(const WeightedAdjacency& adjacency);

// (I - A)^-1 by LU. Throws DenseCapExceeded above `dense_cap` nodes and
// Singular if I - A is not invertible.
MaskMatrix mask_dense(const WeightedAdjacency& adjacency,
                      std::size_t dense_cap = kDefaultDenseCap);

// (I + A)(I + A^2)...(I + A^p) with p the smallest power of two >= k_max,
// i.e. sum_{i < 2p} A^i, using 2 log2(p) products.
template <typename T>
BasicMatrix<T> squaring_power_sum(const BasicMatrix<T>& a, std::size_t k_max,
                                  std::size_t* terms = nullptr) {
  detail::require(a.is_square(), ErrorCode::ShapeMismatch, "squaring_power_sum");
  std::size_t p = 1;
  while (p < k_max) p *= 2;
  BasicMatrix<T> result = identity_plus(a);
  BasicMatrix<T> power = a;
  for (std::size_t q = 1; q < p; q *= 2) {
    power = matmul(power, power);
    result = matmul(result, identity_plus(power));
  }
  if (terms != nullptr) *terms = 2 * p - 1;
  return result;
}

MaskMatrix mask_squaring(const WeightedAdjacency& adjacency, std::size_t k_max);

// sum_{i=0}^{k} A^i by Horner steps; a slow reference for the squaring path.
MaskMatrix mask_neumann(const WeightedAdjacency& adjacency, std::size_t k,
                        std::size_t dense_cap = kDefaultDenseCap);

struct MixOutput {
  Matrix y;                     // T x Dv
  std::optional<Matrix> hidden;  // T x (d * Dv), row i = h_i row-major
};

// Y = (L o (C B~^T)) V.
Matrix mix_output(const Matrix& mask, const Matrix& c, const Matrix& b_bar,
                  const Matrix& v);
MixOutput mix_output(const MaskMatrix& mask, const SsmParams& params,
                     const Matrix& b_bar);

// h_i = sum_{j in p(i)} A_ij h_j + B~_i v_i^T,  y_i = C_i^T h_i, in
// topological order; never forms L. Works on raw arrays so benchmarks can run
// it in single precision. `hidden` must hold T*d*Dv entries.
template <typename T>
void dag_recurrence_kernel(const DagPlan& plan,
                           std::span<const std::size_t> row_begin,
                           std::span<const Arc> arcs, std::span<const T> weights,
                           const BasicMatrix<T>& c, const BasicMatrix<T>& b_bar,
                           const BasicMatrix<T>& v, BasicMatrix<T>& y,
                           std::span<T> hidden) {
  const std::size_t d = c.cols();
  const std::size_t dv = v.cols();
  const std::size_t block = d * dv;
  for (std::size_t i : plan.topo_order) {
    T* h = hidden.data() + i * block;
    const auto bi = b_bar.row(i);
    const auto vi = v.row(i);
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t s = 0; s < dv; ++s) h[r * dv + s] = bi[r] * vi[s];
    for (std::size_t k = row_begin[i]; k < row_begin[i + 1]; ++k) {
      const T w = weights[k];
      const T* hj = hidden.data() + arcs[k].src * block;
      for (std::size_t q = 0; q < block; ++q) h[q] += w * hj[q];
    }
    auto yi = y.row(i);
    const auto ci = c.row(i);
    for (std::size_t s = 0; s < dv; ++s) yi[s] = T{0};
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t s = 0; s < dv; ++s) yi[s] += ci[r] * h[r * dv + s];
  }
}

// Throws NotADag when `adjacency` carries no DAG plan.
MixOutput dag_recurrence(const WeightedAdjacency& adjacency, const Matrix& c,
                         const Matrix& b_bar, const Matrix& v,
                         bool keep_hidden = false);

enum class Combine { Sum, Mean };

struct ChimeraConfig {
  Regime regime = Regime::Dag;
  Algorithm algorithm;
  double gamma = kDefaultGamma;
  bool directed_variant = false;
  Combine combine = Combine::Sum;
  std::size_t dense_cap = kDefaultDenseCap;
};

// Checks that the algorithm is usable under the regime (the recurrence needs
// a DAG regime); throws InvalidConfig otherwise.
void validate_config(const ChimeraConfig& config);

// Topology facts shared by every head of one forward pass.
struct Topology {
  const Graph* graph = nullptr;
  std::optional<DagPlan> plan;  // DAG regimes
  std::size_t diameter = 0;     // truncation depth for squaring / Neumann
};

// Validates the graph against the regime. DAG regimes need a directed acyclic
// graph (NotADag otherwise); the undirected-line regime needs a chain.
Topology prepare_topology(const Graph& graph, const ChimeraConfig& config);

// Truncation depth: the algorithm's k if given, else max(diameter, 1).
std::size_t truncation_depth(const Topology& topology,
                             const ChimeraConfig& config);

// Adjacency and input scaling for one head.
struct HeadMixInputs {
  WeightedAdjacency adjacency;
  Matrix b_bar;
};
HeadMixInputs head_mix_inputs(const Topology& topology, const SsmParams& params,
                              const ChimeraConfig& config);

struct ForwardResult {
  Matrix y;  // T x sum of head value dims
  std::vector<MaskMatrix> masks;  // one per head; empty on the recurrence path
  std::uint64_t matmul_count = 0;
};

// params -> adjacency -> mask or recurrence -> mix, per head; head outputs
// are concatenated along columns.
ForwardResult chimera_forward(const Graph& graph, const Matrix& x,
                              const HeadSet& heads, const ChimeraConfig& config);

// Runs every part on the shared node features and combines the outputs.
// `part_heads[p]` are the weights used by part p (views may alias).
ForwardResult chimera_forward(const Decomposition& decomposition,
                              const Matrix& x,
                              const std::vector<const HeadSet*>& part_heads,
                              const ChimeraConfig& config);

}  // namespace chimera
