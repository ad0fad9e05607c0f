// Copyright 2026 The Chimera Authors.
// SPDX-License-Identifier: Apache-2.0
//
// The chimera command-line tool: run configuration, JSON reports and the
// verify / bench / gradcheck / train / decompose / forward commands.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "chimera/params.hpp"

namespace chimera::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitUsage = 2;

inline constexpr const char* kReportSchema = "chimera.report";
inline constexpr int kReportVersion = 1;

struct RunConfig {
  std::string command;
  std::string graph = "chain:16";
  std::string regime = "dag";
  std::string algo;  // empty: recurrence for DAG regimes, dense otherwise
  double gamma = kDefaultGamma;
  bool directed_variant = false;
  std::size_t heads = 1;
  std::size_t dstate = 4;
  std::size_t dim = 8;
  std::uint64_t seed = 0;
  std::string dtype = "f64";
  std::optional<double> tol;
  std::string out;

  // train
  std::string task = "path-sum";
  std::size_t steps = 2000;
  double lr = 1e-2;
  std::string optimizer = "adam";
  std::string sharing = "complete";
  std::string grid_structure = "grid-4dag";
  std::size_t train_size = 16;
  std::size_t val_size = 8;
  std::size_t blocks = 1;
  std::size_t threads = 1;
  double bar = 0.1;  // val MSE must stay below bar * target variance
  std::string weights;
  std::string save_weights;

  // bench
  std::vector<std::size_t> sizes;
  std::size_t reps = 5;
  std::size_t nodes = 512;  // fixed graph size of the depth sweep
  std::string csv;
};

// Validates `config`, runs the command and writes its report. Returns the
// process exit status; library errors propagate as exceptions.
int run(const RunConfig& config);

// Exit status for an uncaught library error: 2 for configuration and input
// problems, 1 for failures found while computing.
int exit_code_for(ErrorCode code);

}  // namespace chimera::cli
