// Copyright 2026 The Chimera Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace chimera {

enum class ErrorCode {
  IndexOutOfRange,
  SelfLoop,
  DuplicateEdge,
  FeatureShapeMismatch,
  CycleDetected,
  OracleSizeExceeded,
  ShapeMismatch,
  Singular,
  ZeroDiagonal,
  NonFinite,
  MissingFeatures,
  GammaOutOfRange,
  NotADag,
  NotALine,
  DenseCapExceeded,
  TapeEmpty,
  NoInverseNode,
  InvalidMode,
  InvalidConfig,
  DivergenceDetected,
  IoError,
  ParseError,
};

// Stable machine-readable token for an error code, e.g. "cycle_detected".
std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Raised by plan_dag; carries one witness cycle as a closed node sequence
// (first node repeated at the end).
class CycleError : public Error {
 public:
  explicit CycleError(std::vector<std::size_t> cycle);

  const std::vector<std::size_t>& cycle() const noexcept { return cycle_; }

 private:
  std::vector<std::size_t> cycle_;
};

// Raised by the trainer when the loss stops being finite.
class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t step, double loss);

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace chimera
