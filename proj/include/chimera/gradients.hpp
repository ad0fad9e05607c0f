// Copyright 2026 The Chimera Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Records the forward pass on a tape with parameters looked up by name,
// plus losses, the finite-difference oracle and gradient comparison.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "chimera/autodiff.hpp"
#include "chimera/graph.hpp"
#include "chimera/params.hpp"
#include "chimera/resolvent.hpp"

namespace chimera {

struct TapeProjection {
  Var weight;
  Var bias;
  Var theta_self;
  Var theta_neigh;
};

struct TapeHead {
  TapeProjection b, c, v, delta, psi;
  std::optional<TapeProjection> delta2;
  std::optional<TapeProjection> edge_delta;
};

// Registers every tensor of `store` as a tape parameter under its own name.
void register_params(Tape& tape, const ParamStore& store);

// Looks up <prefix><proj>.* among the tape's parameters.
TapeHead tape_head(const Tape& tape, const std::string& prefix);
// All heads stored under <prefix>head_prefix(set, h) for h = 0, 1, ...
std::vector<TapeHead> tape_heads(const Tape& tape, const std::string& prefix,
                                 std::size_t set);

// One head's forward pass; intermediates are named <tag>delta, <tag>psi,
// <tag>delta2, <tag>edge_delta, <tag>adjacency (arc weights aligned with the
// adjacency's arcs) and <tag>b_bar.
Var record_head_forward(Tape& tape, const Topology& topology, Var x,
                        const TapeHead& head, const ChimeraConfig& config,
                        const std::string& tag);

Var record_chimera_forward(Tape& tape, const Graph& graph, Var x,
                           const std::vector<TapeHead>& heads,
                           const ChimeraConfig& config,
                           const std::string& tag = "");

// part_heads[p] are the heads used by part p.
Var record_chimera_forward(Tape& tape, const Decomposition& decomposition, Var x,
                           const std::vector<std::vector<TapeHead>>& part_heads,
                           const ChimeraConfig& config,
                           const std::string& tag = "");

// Propagates dL/dY from `output` and returns gradients by name.
GradientMap backward(Tape& tape, Var output, const Matrix& dl_dy);

// Matmuls performed by resolvent nodes in the last backward pass. Throws
// NoInverseNode when the tape holds no resolvent node.
std::uint64_t backward_matmul_count(const Tape& tape);

using ScalarFn = std::function<double(const ParamStore&)>;

// Central differences (f(p + eps) - f(p - eps)) / 2 eps per coordinate.
GradientMap finite_difference_oracle(const ScalarFn& f, const ParamStore& params,
                                     double eps = 1e-5);

// Losses, each as a plain function and as a tape op.
double sum_of_squares(const Matrix& y);
Var sum_of_squares(Var y);
double mean_squared_error(const Matrix& y, const Matrix& target);
Var mean_squared_error(Var y, const Matrix& target);
// Mean cross-entropy of softmax(Y W) against per-node labels.
double readout_cross_entropy(const Matrix& y, const Matrix& readout,
                             const std::vector<std::size_t>& labels);
Var readout_cross_entropy(Var y, Var readout, const std::vector<std::size_t>& labels);

struct GradientComparison {
  double max_relative_error = 0.0;
  std::string worst_name;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t compared = 0;  // coordinates with |analytic| above threshold
  std::size_t total = 0;
};

// Relative error |a - b| / max(|a|, |b|) over coordinates with |a| > threshold,
// for every name present in `numeric`.
GradientComparison compare_gradients(const GradientMap& analytic,
                                     const GradientMap& numeric,
                                     double threshold = 1e-8);

struct GradcheckReport {
  GradientComparison comparison;
  double loss = 0.0;
  double forward_mismatch = 0.0;  // tape output vs the plain forward pass
  bool replay_exact = false;
  std::optional<std::uint64_t> resolvent_backward_matmuls;  // dense path only
};

// Loss 1/2 ||Y - target||^2 of a single-graph forward with the heads stored
// under <prefix>set0.; backward() against the finite-difference oracle.
GradcheckReport gradcheck_heads(const Graph& graph, const Matrix& x,
                                const ParamStore& heads, const std::string& prefix,
                                const ChimeraConfig& config, const Matrix& target,
                                double eps = 1e-5, double threshold = 1e-8);

}  // namespace chimera
