// Copyright 2026 The Chimera Authors.
// SPDX-License-Identifier: Apache-2.0

#include "chimera/error.hpp"

#include <sstream>

namespace chimera {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::IndexOutOfRange: return "index_out_of_range";
    case ErrorCode::SelfLoop: return "self_loop";
    case ErrorCode::DuplicateEdge: return "duplicate_edge";
    case ErrorCode::FeatureShapeMismatch: return "feature_shape_mismatch";
    case ErrorCode::CycleDetected: return "cycle_detected";
    case ErrorCode::OracleSizeExceeded: return "oracle_size_exceeded";
    case ErrorCode::ShapeMismatch: return "shape_mismatch";
    case ErrorCode::Singular: return "singular";
    case ErrorCode::ZeroDiagonal: return "zero_diagonal";
    case ErrorCode::NonFinite: return "non_finite";
    case ErrorCode::MissingFeatures: return "missing_features";
    case ErrorCode::GammaOutOfRange: return "gamma_out_of_range";
    case ErrorCode::NotADag: return "not_a_dag";
    case ErrorCode::NotALine: return "not_a_line";
    case ErrorCode::DenseCapExceeded: return "dense_cap_exceeded";
    case ErrorCode::TapeEmpty: return "tape_empty";
    case ErrorCode::NoInverseNode: return "no_inverse_node";
    case ErrorCode::InvalidMode: return "invalid_mode";
    case ErrorCode::InvalidConfig: return "invalid_config";
    case ErrorCode::DivergenceDetected: return "divergence_detected";
    case ErrorCode::IoError: return "io_error";
    case ErrorCode::ParseError: return "parse_error";
  }
  return "unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(message), code_(code) {}

namespace {

std::string describe_cycle(const std::vector<std::size_t>& cycle) {
  std::ostringstream out;
  out << "graph contains a cycle:";
  for (std::size_t i = 0; i < cycle.size(); ++i) {
    out << (i == 0 ? " " : " -> ") << cycle[i];
  }
  return out.str();
}

}  // namespace

CycleError::CycleError(std::vector<std::size_t> cycle)
    : Error(ErrorCode::CycleDetected, describe_cycle(cycle)),
      cycle_(std::move(cycle)) {}

DivergenceError::DivergenceError(std::size_t step, double loss)
    : Error(ErrorCode::DivergenceDetected,
            "loss became non-finite (" + std::to_string(loss) + ") at step " +
                std::to_string(step)),
      step_(step) {}

}  // namespace chimera
