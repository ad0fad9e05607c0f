// Copyright 2026 The Chimera Authors.
// SPDX-License-Identifier: Apache-2.0

#include "chimera/layer.hpp"

#include <cmath>
#include <random>

#include "chimera/gradients.hpp"

namespace chimera {

std::string_view sharing_mode_name(SharingMode mode) {
  switch (mode) {
    case SharingMode::None: return "none";
    case SharingMode::Complete: return "complete";
    case SharingMode::RowWise: return "row-wise";
    case SharingMode::Diagonal: return "diagonal";
  }
  return "unknown";
}

SharingMode parse_sharing_mode(std::string_view token) {
  for (SharingMode m : {SharingMode::None, SharingMode::Complete,
                        SharingMode::RowWise, SharingMode::Diagonal}) {
    if (token == sharing_mode_name(m)) return m;
  }
  throw Error(ErrorCode::InvalidMode,
              "unknown sharing mode '" + std::string(token) +
                  "'; valid: none, complete, row-wise, diagonal");
}

std::vector<std::size_t> sharing_groups(std::size_t num_parts, SharingMode mode) {
  if (num_parts == 0) throw Error(ErrorCode::InvalidMode, "no parts to share across");
  std::vector<std::size_t> groups(num_parts, 0);
  if (mode == SharingMode::Complete) return groups;
  if (mode == SharingMode::None) {
    for (std::size_t p = 0; p < num_parts; ++p) groups[p] = p;
    return groups;
  }
  if (num_parts == 1 || num_parts == 2) return groups;
  if (num_parts == 4) {
    if (mode == SharingMode::RowWise) return {0, 0, 1, 1};
    return {0, 1, 1, 0};
  }
  throw Error(ErrorCode::InvalidMode,
              std::string(sharing_mode_name(mode)) + " sharing needs 2 or 4 parts, got " +
                  std::to_string(num_parts));
}

std::size_t weight_set_count(std::size_t num_parts, SharingMode mode) {
  const auto groups = sharing_groups(num_parts, mode);
  return *std::max_element(groups.begin(), groups.end()) + 1;
}

std::vector<const HeadSet*> sharing_views(const std::vector<HeadSet>& sets,
                                          std::size_t num_parts, SharingMode mode) {
  const auto groups = sharing_groups(num_parts, mode);
  std::vector<const HeadSet*> views;
  for (std::size_t g : groups) {
    if (g >= sets.size()) {
      throw Error(ErrorCode::InvalidMode,
                  "sharing mode needs " + std::to_string(g + 1) + " weight sets, have " +
                      std::to_string(sets.size()));
    }
    views.push_back(&sets[g]);
  }
  return views;
}

std::size_t structure_nodes(const Structure& s) {
  if (const auto* g = std::get_if<Graph>(&s)) return g->num_nodes();
  return std::get<Decomposition>(s).source.num_nodes();
}

std::size_t structure_parts(const Structure& s) {
  if (std::holds_alternative<Graph>(s)) return 1;
  return std::get<Decomposition>(s).parts.size();
}

std::string block_prefix(std::size_t block) {
  return "block" + std::to_string(block) + ".";
}

namespace {

Matrix gaussian(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(rows)));
  Matrix m(rows, cols);
  for (auto& v : m.data()) v = normal(rng);
  return m;
}

void check_config(const ModelConfig& c) {
  if (c.model_dim == 0 || c.heads == 0 || c.model_dim % c.heads != 0) {
    throw Error(ErrorCode::InvalidConfig, "heads must divide the model dimension");
  }
  if (c.state_dim == 0 || c.expansion == 0 || c.input_dim == 0) {
    throw Error(ErrorCode::InvalidConfig, "dimensions must be positive");
  }
}

const Matrix& get(const ParamStore& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw Error(ErrorCode::InvalidConfig, "missing parameter '" + name + "'");
  return it->second;
}

Matrix layer_norm_rows(const Matrix& x, const Matrix& gain, const Matrix& shift) {
  constexpr double kEps = 1e-5;
  const std::size_t n = x.cols();
  Matrix out(x.rows(), n);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double mu = 0.0;
    for (double v : x.row(i)) mu += v;
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (double v : x.row(i)) var += (v - mu) * (v - mu);
    var /= static_cast<double>(n);
    const double inv_std = 1.0 / std::sqrt(var + kEps);
    for (std::size_t j = 0; j < n; ++j)
      out(i, j) = ((x(i, j) - mu) * inv_std) * gain(0, j) + shift(0, j);
  }
  return out;
}

Matrix swish_all(Matrix m) {
  for (auto& v : m.data()) v = swish(v);
  return m;
}

Matrix add_bias(Matrix m, const Matrix& bias) {
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) m(i, j) += bias(0, j);
  return m;
}

Matrix core_forward(const ParamStore& params, const std::string& prefix,
                    const ModelConfig& config, const Structure& structure,
                    const Matrix& u) {
  const std::vector<HeadSet> sets = import_heads(params, prefix + "core.");
  if (const auto* g = std::get_if<Graph>(&structure)) {
    return chimera_forward(*g, u, sets.at(0), config.chimera).y;
  }
  const auto& dec = std::get<Decomposition>(structure);
  return chimera_forward(dec, u, sharing_views(sets, dec.parts.size(), config.sharing),
                         config.chimera)
      .y;
}

Var record_core(Tape& tape, const std::string& prefix, const ModelConfig& config,
                const Structure& structure, Var u) {
  if (const auto* g = std::get_if<Graph>(&structure)) {
    return record_chimera_forward(tape, *g, u, tape_heads(tape, prefix + "core.", 0),
                                  config.chimera, prefix);
  }
  const auto& dec = std::get<Decomposition>(structure);
  const auto groups = sharing_groups(dec.parts.size(), config.sharing);
  std::vector<std::vector<TapeHead>> part_heads;
  for (std::size_t g : groups) part_heads.push_back(tape_heads(tape, prefix + "core.", g));
  return record_chimera_forward(tape, dec, u, part_heads, config.chimera, prefix);
}

}  // namespace

ParamStore init_model(const ModelConfig& config, std::size_t num_parts,
                      std::uint64_t seed) {
  check_config(config);
  std::mt19937_64 rng(seed);
  const std::size_t d = config.model_dim;
  const std::size_t e = config.expansion * d;
  ParamStore p;
  p["embed.weight"] = gaussian(config.input_dim, d, rng);
  p["embed.bias"] = Matrix(1, d);
  const std::size_t sets = weight_set_count(num_parts, config.sharing);
  for (std::size_t b = 0; b < config.blocks; ++b) {
    const std::string pre = block_prefix(b);
    p[pre + "norm.gain"] = Matrix(1, d, 1.0);
    p[pre + "norm.shift"] = Matrix(1, d);
    p[pre + "gate.weight"] = gaussian(d, d, rng);
    p[pre + "mlp.w1"] = gaussian(d, e, rng);
    p[pre + "mlp.w2"] = gaussian(d, e, rng);
    p[pre + "mlp.w3"] = gaussian(e, d, rng);
    p[pre + "out.weight"] = Matrix(d, d);
    std::vector<HeadSet> head_sets;
    for (std::size_t s = 0; s < sets; ++s) {
      head_sets.push_back(init_heads(d, config.state_dim, config.heads, config.edge_dim,
                                     config.chimera.directed_variant, rng));
    }
    export_heads(head_sets, pre + "core.", p);
  }
  p["readout.weight"] = gaussian(d, 1, rng);
  p["readout.bias"] = Matrix(1, 1);
  return p;
}

Matrix block_forward(const ParamStore& params, const std::string& prefix,
                     const ModelConfig& config, const Structure& structure,
                     const Matrix& x) {
  if (x.rows() != structure_nodes(structure) || x.cols() != config.model_dim) {
    throw Error(ErrorCode::ShapeMismatch,
                "block input " + detail::shape(x.rows(), x.cols()) + " for " +
                    std::to_string(structure_nodes(structure)) + " nodes, width " +
                    std::to_string(config.model_dim));
  }
  const Matrix u = layer_norm_rows(x, get(params, prefix + "norm.gain"),
                                   get(params, prefix + "norm.shift"));
  const Matrix core = core_forward(params, prefix, config, structure, u);
  const Matrix gated =
      hadamard(core, swish_all(matmul(u, get(params, prefix + "gate.weight"))));
  const Matrix hidden = hadamard(swish_all(matmul(gated, get(params, prefix + "mlp.w1"))),
                                 matmul(gated, get(params, prefix + "mlp.w2")));
  const Matrix mlp = matmul(hidden, get(params, prefix + "mlp.w3"));
  return add(x, matmul(mlp, get(params, prefix + "out.weight")));
}

Matrix model_forward(const ParamStore& params, const ModelConfig& config,
                     const Structure& structure, const Matrix& x) {
  check_config(config);
  if (x.rows() != structure_nodes(structure) || x.cols() != config.input_dim) {
    throw Error(ErrorCode::ShapeMismatch, "model input shape");
  }
  Matrix h = add_bias(matmul(x, get(params, "embed.weight")), get(params, "embed.bias"));
  for (std::size_t b = 0; b < config.blocks; ++b)
    h = block_forward(params, block_prefix(b), config, structure, h);
  return add_bias(matmul(h, get(params, "readout.weight")), get(params, "readout.bias"));
}

Var record_block(Tape& tape, const std::string& prefix, const ModelConfig& config,
                 const Structure& structure, Var x) {
  if (x.rows() != structure_nodes(structure) || x.cols() != config.model_dim) {
    throw Error(ErrorCode::ShapeMismatch, "block input shape");
  }
  auto p = [&](const std::string& name) { return tape.parameter(prefix + name); };
  Var u = ad::layer_norm(x, p("norm.gain"), p("norm.shift"));
  Var core = record_core(tape, prefix, config, structure, u);
  Var gated = ad::mul(core, ad::swish(ad::matmul(u, p("gate.weight"))));
  Var hidden = ad::mul(ad::swish(ad::matmul(gated, p("mlp.w1"))),
                       ad::matmul(gated, p("mlp.w2")));
  Var mlp = ad::matmul(hidden, p("mlp.w3"));
  return ad::add(x, ad::matmul(mlp, p("out.weight")));
}

Var record_model(Tape& tape, const ModelConfig& config, const Structure& structure,
                 Var x) {
  check_config(config);
  if (x.rows() != structure_nodes(structure) || x.cols() != config.input_dim) {
    throw Error(ErrorCode::ShapeMismatch, "model input shape");
  }
  Var h = ad::add_row(ad::matmul(x, tape.parameter("embed.weight")),
                      tape.parameter("embed.bias"));
  for (std::size_t b = 0; b < config.blocks; ++b)
    h = record_block(tape, block_prefix(b), config, structure, h);
  return ad::add_row(ad::matmul(h, tape.parameter("readout.weight")),
                     tape.parameter("readout.bias"));
}

}  // namespace chimera
