// Copyright 2026 The Chimera Authors.
// SPDX-License-Identifier: Apache-2.0
//
// The gated block around the mixing core, a small stacked model with an
// input embedding and a scalar readout, and weight sharing across the parts
// of a decomposition.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "chimera/autodiff.hpp"
#include "chimera/graph.hpp"
#include "chimera/params.hpp"
#include "chimera/resolvent.hpp"

namespace chimera {

enum class SharingMode { None, Complete, RowWise, Diagonal };

std::string_view sharing_mode_name(SharingMode mode);
SharingMode parse_sharing_mode(std::string_view token);  // InvalidMode

// Weight-set index used by each part. Grid parts are ordered (right,down),
// (left,down), (right,up), (left,up): row-wise pairs the two down-going and
// the two up-going parts, diagonal pairs opposite corners. On two-part lines
// row-wise and diagonal collapse to complete. Single graphs use one set.
std::vector<std::size_t> sharing_groups(std::size_t num_parts, SharingMode mode);
std::size_t weight_set_count(std::size_t num_parts, SharingMode mode);

// Per-part views into `sets` following `sharing_groups`.
std::vector<const HeadSet*> sharing_views(const std::vector<HeadSet>& sets,
                                          std::size_t num_parts, SharingMode mode);

// What a model runs on: a single graph or a decomposition into DAG parts.
using Structure = std::variant<Graph, Decomposition>;

std::size_t structure_nodes(const Structure& s);
std::size_t structure_parts(const Structure& s);  // 1 for a plain graph

struct ModelConfig {
  std::size_t input_dim = 1;
  std::size_t model_dim = 8;
  std::size_t state_dim = 4;
  std::size_t heads = 1;
  std::size_t expansion = 2;
  std::size_t blocks = 1;
  std::size_t edge_dim = 0;
  SharingMode sharing = SharingMode::Complete;
  ChimeraConfig chimera;
};

// Parameter names: embed.{weight,bias}, readout.{weight,bias} and per block
// block<b>.{norm.gain, norm.shift, gate.weight, mlp.w1, mlp.w2, mlp.w3,
// out.weight} plus block<b>.core.set<s>.head<h>.* for the mixing heads.
std::string block_prefix(std::size_t block);

// Gaussian init with std 1/sqrt(fan_in); out.weight is zero so every block
// starts as the identity map.
ParamStore init_model(const ModelConfig& config, std::size_t num_parts,
                      std::uint64_t seed);

// One block on T x D features, evaluated directly (no tape).
Matrix block_forward(const ParamStore& params, const std::string& prefix,
                     const ModelConfig& config, const Structure& structure,
                     const Matrix& x);

// Embedding -> blocks -> readout; returns T x 1 predictions.
Matrix model_forward(const ParamStore& params, const ModelConfig& config,
                     const Structure& structure, const Matrix& x);

// Tape versions; parameters must already be registered on the tape.
Var record_block(Tape& tape, const std::string& prefix, const ModelConfig& config,
                 const Structure& structure, Var x);
Var record_model(Tape& tape, const ModelConfig& config, const Structure& structure,
                 Var x);

}  // namespace chimera
