// Copyright 2026 The Chimera Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic regression tasks with exactly computable targets and a
// full-batch trainer (Adam or SGD with momentum).

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "chimera/autodiff.hpp"
#include "chimera/layer.hpp"

namespace chimera {

enum class TaskKind { PathSum, AncestorCount, GridNeighborhoodAverage };

std::string_view task_name(TaskKind kind);
TaskKind parse_task(std::string_view token);

// How the grid task presents the grid to the model.
enum class GridStructure { FourDag, BidirectionalChain, ForwardChain };

std::string_view grid_structure_name(GridStructure s);
GridStructure parse_grid_structure(std::string_view token);

// Draws one graph of the task's family from a seed.
using GraphSampler = std::function<Graph(std::uint64_t seed)>;

struct TaskConfig {
  TaskKind kind = TaskKind::PathSum;
  std::size_t train_size = 8;
  std::size_t val_size = 8;
  std::uint64_t seed = 0;
  double decay = 0.7;  // path-sum weight per edge
  GridStructure grid_structure = GridStructure::FourDag;
  std::size_t grid_height = 6;
  std::size_t grid_width = 6;
};

struct Example {
  Structure structure;
  Matrix x;  // T x 1
  Matrix y;  // T x 1
};

struct Dataset {
  std::vector<Example> train;
  std::vector<Example> val;
  std::vector<std::uint64_t> train_seeds;
  std::vector<std::uint64_t> val_seeds;  // disjoint from train_seeds
};

// y_i = sum over directed paths j ~> i (including the empty one) of
// decay^length * x_j, by dynamic programming in topological order.
Matrix path_sum_targets(const Graph& dag, const Matrix& x, double decay);
// Number of proper ancestors of each node divided by T.
Matrix ancestor_fraction_targets(const Graph& dag);
// Mean of x over each node and its 4-neighbours on a row-major H x W grid.
Matrix neighborhood_average_targets(std::size_t height, std::size_t width,
                                    const Matrix& x);

// Example seeds: train uses base + 2i, validation base + 2i + 1 with
// base = 2^20 * seed. `sampler` is ignored by the grid task.
Dataset make_dataset(const TaskConfig& config, const GraphSampler& sampler);

enum class OptimizerKind { Adam, Sgd };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 1e-2;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t steps = 2000;
  std::size_t threads = 1;  // capped by CHIMERA_THREADS
};

struct TrainReport {
  std::vector<double> loss_curve;  // training loss before each step
  double train_mse = 0.0;
  double val_mse = 0.0;
  double val_baseline_mse = 0.0;  // predicting the mean training target
  double target_variance = 0.0;   // of the validation targets
  double wall_ms = 0.0;
  std::size_t steps = 0;
};

// Worker count after applying the CHIMERA_THREADS cap (at least 1).
std::size_t effective_threads(std::size_t requested);

// Mean over examples of the per-example MSE.
double dataset_mse(const ParamStore& params, const ModelConfig& config,
                   const std::vector<Example>& examples);

// Full-batch loss and its gradient. Examples may be evaluated on several
// threads; gradients are summed in example order.
double loss_and_gradient(const ParamStore& params, const ModelConfig& config,
                         const std::vector<Example>& examples, std::size_t threads,
                         GradientMap& grad);

// Throws DivergenceError when the loss stops being finite.
TrainReport train(ParamStore& params, const ModelConfig& config,
                  const Dataset& data, const OptimizerConfig& optimizer);

nlohmann::json report_to_json(const TrainReport& report);

}  // namespace chimera
