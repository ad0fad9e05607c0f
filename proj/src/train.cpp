// Copyright 2026 The Chimera Authors.
// SPDX-License-Identifier: Apache-2.0

#include "chimera/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <random>
#include <thread>

#include "chimera/gradients.hpp"

namespace chimera {

std::string_view task_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::PathSum: return "path-sum";
    case TaskKind::AncestorCount: return "ancestor-count";
    case TaskKind::GridNeighborhoodAverage: return "grid-neighborhood-average";
  }
  return "unknown";
}

TaskKind parse_task(std::string_view token) {
  for (TaskKind k : {TaskKind::PathSum, TaskKind::AncestorCount,
                     TaskKind::GridNeighborhoodAverage}) {
    if (token == task_name(k)) return k;
  }
  throw Error(ErrorCode::InvalidConfig,
              "unknown task '" + std::string(token) +
                  "'; valid: path-sum, ancestor-count, grid-neighborhood-average");
}

std::string_view grid_structure_name(GridStructure s) {
  switch (s) {
    case GridStructure::FourDag: return "grid-4dag";
    case GridStructure::BidirectionalChain: return "chain-bidirectional";
    case GridStructure::ForwardChain: return "chain-forward";
  }
  return "unknown";
}

GridStructure parse_grid_structure(std::string_view token) {
  for (GridStructure s : {GridStructure::FourDag, GridStructure::BidirectionalChain,
                          GridStructure::ForwardChain}) {
    if (token == grid_structure_name(s)) return s;
  }
  throw Error(ErrorCode::InvalidConfig,
              "unknown grid structure '" + std::string(token) +
                  "'; valid: grid-4dag, chain-bidirectional, chain-forward");
}

Matrix path_sum_targets(const Graph& dag, const Matrix& x, double decay) {
  if (x.rows() != dag.num_nodes() || x.cols() != 1) {
    throw Error(ErrorCode::ShapeMismatch, "path-sum inputs must be T x 1");
  }
  const DagPlan plan = plan_dag(dag);
  Matrix y(dag.num_nodes(), 1);
  for (std::size_t i : plan.topo_order) {
    double acc = x(i, 0);
    for (const Parent& p : plan.parents[i]) acc += decay * y(p.node, 0);
    y(i, 0) = acc;
  }
  return y;
}

Matrix ancestor_fraction_targets(const Graph& dag) {
  const DagPlan plan = plan_dag(dag);
  const std::size_t n = dag.num_nodes();
  std::vector<std::vector<bool>> anc(n, std::vector<bool>(n, false));
  Matrix y(n, 1);
  for (std::size_t i : plan.topo_order) {
    for (const Parent& p : plan.parents[i]) {
      anc[i][p.node] = true;
      for (std::size_t k = 0; k < n; ++k)
        if (anc[p.node][k]) anc[i][k] = true;
    }
    std::size_t count = 0;
    for (bool b : anc[i]) count += b ? 1 : 0;
    y(i, 0) = static_cast<double>(count) / static_cast<double>(n);
  }
  return y;
}

Matrix neighborhood_average_targets(std::size_t height, std::size_t width,
                                    const Matrix& x) {
  if (x.rows() != height * width || x.cols() != 1) {
    throw Error(ErrorCode::ShapeMismatch, "grid inputs must be (H*W) x 1");
  }
  Matrix y(height * width, 1);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      double acc = x(r * width + c, 0);
      double count = 1.0;
      auto take = [&](std::size_t rr, std::size_t cc) {
        acc += x(rr * width + cc, 0);
        count += 1.0;
      };
      if (r > 0) take(r - 1, c);
      if (r + 1 < height) take(r + 1, c);
      if (c > 0) take(r, c - 1);
      if (c + 1 < width) take(r, c + 1);
      y(r * width + c, 0) = acc / count;
    }
  }
  return y;
}

namespace {

Matrix gaussian_column(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix x(n, 1);
  for (auto& v : x.data()) v = normal(rng);
  return x;
}

Example make_example(const TaskConfig& config, const GraphSampler& sampler,
                     std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  switch (config.kind) {
    case TaskKind::PathSum: {
      Graph g = sampler(seed);
      Matrix x = gaussian_column(g.num_nodes(), rng);
      Matrix y = path_sum_targets(g, x, config.decay);
      return {std::move(g), std::move(x), std::move(y)};
    }
    case TaskKind::AncestorCount: {
      Graph g = sampler(seed);
      Matrix x(g.num_nodes(), 1, 1.0);
      Matrix y = ancestor_fraction_targets(g);
      return {std::move(g), std::move(x), std::move(y)};
    }
    case TaskKind::GridNeighborhoodAverage: {
      const std::size_t h = config.grid_height;
      const std::size_t w = config.grid_width;
      Matrix x = gaussian_column(h * w, rng);
      Matrix y = neighborhood_average_targets(h, w, x);
      Structure s = line_graph(h * w, true);
      if (config.grid_structure == GridStructure::FourDag) s = decompose_grid(h, w);
      if (config.grid_structure == GridStructure::BidirectionalChain)
        s = decompose_line(h * w);
      return {std::move(s), std::move(x), std::move(y)};
    }
  }
  throw Error(ErrorCode::InvalidConfig, "unknown task");
}

}  // namespace

Dataset make_dataset(const TaskConfig& config, const GraphSampler& sampler) {
  if (config.train_size == 0 || config.val_size == 0) {
    throw Error(ErrorCode::InvalidConfig, "train and validation sets must be non-empty");
  }
  if (config.kind != TaskKind::GridNeighborhoodAverage && !sampler) {
    throw Error(ErrorCode::InvalidConfig, "task needs a graph sampler");
  }
  Dataset data;
  const std::uint64_t base = config.seed << 20;
  for (std::size_t i = 0; i < config.train_size; ++i) {
    data.train_seeds.push_back(base + 2 * i);
    data.train.push_back(make_example(config, sampler, data.train_seeds.back()));
  }
  for (std::size_t i = 0; i < config.val_size; ++i) {
    data.val_seeds.push_back(base + 2 * i + 1);
    data.val.push_back(make_example(config, sampler, data.val_seeds.back()));
  }
  return data;
}

std::size_t effective_threads(std::size_t requested) {
  std::size_t n = std::max<std::size_t>(requested, 1);
  if (const char* cap = std::getenv("CHIMERA_THREADS")) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(cap, &end, 10);
    if (end != cap && v > 0) n = std::min<std::size_t>(n, v);
  }
  return n;
}

double dataset_mse(const ParamStore& params, const ModelConfig& config,
                   const std::vector<Example>& examples) {
  double total = 0.0;
  for (const Example& ex : examples)
    total += mean_squared_error(model_forward(params, config, ex.structure, ex.x), ex.y);
  return total / static_cast<double>(examples.size());
}

namespace {

double example_loss_and_grad(const ParamStore& params, const ModelConfig& config,
                             const Example& ex, double weight, GradientMap& grad) {
  Tape tape;
  register_params(tape, params);
  Var x = tape.constant(ex.x);
  Var loss = mean_squared_error(record_model(tape, config, ex.structure, x), ex.y);
  GradientMap g = tape.backward(loss, Matrix(1, 1, weight));
  for (auto it = g.begin(); it != g.end();) {
    if (params.count(it->first) == 0) {
      it = g.erase(it);  // named intermediates
    } else {
      ++it;
    }
  }
  grad = std::move(g);
  return loss.value()(0, 0);
}

}  // namespace

double loss_and_gradient(const ParamStore& params, const ModelConfig& config,
                         const std::vector<Example>& examples, std::size_t threads,
                         GradientMap& grad) {
  const std::size_t n = examples.size();
  const double weight = 1.0 / static_cast<double>(n);
  std::vector<GradientMap> grads(n);
  std::vector<double> losses(n, 0.0);
  const std::size_t workers = std::min(effective_threads(threads), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i)
      losses[i] = example_loss_and_grad(params, config, examples[i], weight, grads[i]);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < n; i += workers)
            losses[i] = example_loss_and_grad(params, config, examples[i], weight, grads[i]);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  grad = std::move(grads[0]);
  for (std::size_t i = 1; i < n; ++i)
    for (auto& [name, g] : grad) add_in_place(g, grads[i].at(name));
  double total = 0.0;
  for (double l : losses) total += l;
  return total * weight;
}

TrainReport train(ParamStore& params, const ModelConfig& config, const Dataset& data,
                  const OptimizerConfig& opt) {
  if (data.train.empty() || data.val.empty()) {
    throw Error(ErrorCode::InvalidConfig, "empty dataset");
  }
  if (!(opt.lr >= 0.0) || !std::isfinite(opt.lr)) {
    throw Error(ErrorCode::InvalidConfig, "learning rate must be finite and >= 0");
  }
  const auto start = std::chrono::steady_clock::now();
  TrainReport report;
  report.steps = opt.steps;
  ParamStore first, second;
  for (const auto& [name, p] : params) {
    first[name] = Matrix(p.rows(), p.cols());
    second[name] = Matrix(p.rows(), p.cols());
  }
  for (std::size_t step = 0; step < opt.steps; ++step) {
    GradientMap grad;
    const double loss = loss_and_gradient(params, config, data.train, opt.threads, grad);
    if (!std::isfinite(loss)) throw DivergenceError(step, loss);
    report.loss_curve.push_back(loss);
    const double t = static_cast<double>(step + 1);
    for (auto& [name, p] : params) {
      const Matrix& g = grad.at(name);
      auto m = first[name].data();
      auto v = second[name].data();
      auto pd = p.data();
      for (std::size_t i = 0; i < pd.size(); ++i) {
        const double gi = g.data()[i];
        if (opt.kind == OptimizerKind::Adam) {
          m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * gi;
          v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * gi * gi;
          const double mhat = m[i] / (1.0 - std::pow(opt.beta1, t));
          const double vhat = v[i] / (1.0 - std::pow(opt.beta2, t));
          pd[i] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
        } else {
          m[i] = opt.momentum * m[i] + gi;
          pd[i] -= opt.lr * m[i];
        }
      }
    }
  }
  report.train_mse = dataset_mse(params, config, data.train);
  report.val_mse = dataset_mse(params, config, data.val);
  if (!std::isfinite(report.train_mse) || !std::isfinite(report.val_mse)) {
    throw DivergenceError(opt.steps, report.train_mse);
  }
  double mean = 0.0;
  std::size_t count = 0;
  for (const Example& ex : data.train)
    for (double v : ex.y.data()) {
      mean += v;
      ++count;
    }
  mean /= static_cast<double>(count);
  double val_mean = 0.0;
  std::size_t val_count = 0;
  for (const Example& ex : data.val)
    for (double v : ex.y.data()) {
      val_mean += v;
      ++val_count;
    }
  val_mean /= static_cast<double>(val_count);
  double baseline = 0.0;
  double variance = 0.0;
  for (const Example& ex : data.val) {
    double se = 0.0;
    for (double v : ex.y.data()) {
      se += (v - mean) * (v - mean);
      variance += (v - val_mean) * (v - val_mean);
    }
    baseline += se / static_cast<double>(ex.y.size());
  }
  report.val_baseline_mse = baseline / static_cast<double>(data.val.size());
  report.target_variance = variance / static_cast<double>(val_count);
  report.wall_ms = std::chrono::duration<double, std::milli>(
                       std::chrono::steady_clock::now() - start)
                       .count();
  return report;
}

nlohmann::json report_to_json(const TrainReport& r) {
  return {{"steps", r.steps},
          {"loss_curve", r.loss_curve},
          {"train_mse", r.train_mse},
          {"val_mse", r.val_mse},
          {"val_baseline_mse", r.val_baseline_mse},
          {"target_variance", r.target_variance},
          {"wall_ms", r.wall_ms}};
}

}  // namespace chimera
