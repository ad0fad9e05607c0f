// Copyright 2026 The Chimera Authors.
// SPDX-License-Identifier: Apache-2.0

#include <exception>
#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"

namespace {

using chimera::cli::RunConfig;

void add_common(CLI::App& cmd, RunConfig& rc) {
  cmd.add_option("--graph", rc.graph,
                 "chain:<T> | grid:<H>x<W> | randdag:<T>:<p>:<seed> | "
                 "randgraph:<T>:<p>:<seed> | path to a graph JSON file")
      ->capture_default_str();
  cmd.add_option("--regime", rc.regime, "general | dag | dag-normalized | undirected-line")
      ->capture_default_str();
  cmd.add_option("--algo", rc.algo,
                 "dense | recurrence | squaring | neumann[:<k>] "
                 "(default: recurrence for dag regimes, dense otherwise)");
  cmd.add_option("--gamma", rc.gamma, "row-sum bound of the general regime, in (0, 1)")
      ->capture_default_str();
  cmd.add_flag("--directed-variant", rc.directed_variant,
               "separate sender selectivity for directed graphs");
  cmd.add_option("--heads", rc.heads, "number of heads; must divide --dim")
      ->capture_default_str();
  cmd.add_option("--dstate", rc.dstate, "state size d per head")->capture_default_str();
  cmd.add_option("--dim", rc.dim, "model width D")->capture_default_str();
  cmd.add_option("--seed", rc.seed, "seed for weights, features and datasets")
      ->capture_default_str();
  cmd.add_option("--dtype", rc.dtype, "f64 | f32 (f32 only for bench)")->capture_default_str();
  cmd.add_option("--tol", rc.tol,
                 "check tolerance (verify 1e-9 cross-algorithm, gradcheck 1e-5)");
  cmd.add_option("--out", rc.out, "report path (decompose: output directory)");
  cmd.add_option("--weights", rc.weights, "load weights from a checkpoint");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Resolvent-mask state space models over graphs", "chimera"};
  app.require_subcommand(1);
  RunConfig rc;

  CLI::App* verify = app.add_subcommand("verify", "run the invariant checks on one instance");
  CLI::App* bench = app.add_subcommand("bench", "time one algorithm over a size sweep");
  CLI::App* grad = app.add_subcommand("gradcheck", "compare backward with finite differences");
  CLI::App* train = app.add_subcommand("train", "train a small model on a synthetic task");
  CLI::App* decompose = app.add_subcommand("decompose", "write the DAG parts of a chain or grid");
  CLI::App* forward = app.add_subcommand("forward", "run one forward pass");
  for (CLI::App* cmd : {verify, bench, grad, train, forward}) add_common(*cmd, rc);
  decompose->add_option("--graph", rc.graph, "chain:<T> | grid:<H>x<W> | graph JSON file")
      ->capture_default_str();
  decompose->add_option("--out", rc.out, "output directory (default: decomposition)");

  bench->add_option("--sizes", rc.sizes,
                    "chain lengths, or depths for squaring/neumann "
                    "(defaults: 2^10..2^16, dense 64..512, depth 4,16,64,256)")
      ->delimiter(',');
  bench->add_option("--reps", rc.reps, "timed repetitions per size, at least 5")
      ->capture_default_str();
  bench->add_option("--nodes", rc.nodes, "graph size of the depth sweep")->capture_default_str();
  bench->add_option("--csv", rc.csv, "CSV path (default: <out>.csv, or stderr)");

  train->add_option("--task", rc.task, "path-sum | ancestor-count | grid-neighborhood-average")
      ->capture_default_str();
  train->add_option("--steps", rc.steps, "optimizer steps, at most 5000")->capture_default_str();
  train->add_option("--lr", rc.lr, "learning rate")->capture_default_str();
  train->add_option("--optimizer", rc.optimizer, "adam | sgd")->capture_default_str();
  train->add_option("--sharing", rc.sharing, "none | complete | row-wise | diagonal")
      ->capture_default_str();
  train->add_option("--grid-structure", rc.grid_structure,
                    "grid-4dag | chain-bidirectional | chain-forward")
      ->capture_default_str();
  train->add_option("--train-size", rc.train_size, "training graphs")->capture_default_str();
  train->add_option("--val-size", rc.val_size, "validation graphs")->capture_default_str();
  train->add_option("--blocks", rc.blocks, "stacked blocks")->capture_default_str();
  train->add_option("--threads", rc.threads, "example-level threads (capped by CHIMERA_THREADS)")
      ->capture_default_str();
  train->add_option("--bar", rc.bar, "pass if val MSE < bar * target variance")
      ->capture_default_str();
  for (CLI::App* cmd : {train, forward})
    cmd->add_option("--save-weights", rc.save_weights, "write the final weights");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error[usage]: " << e.what() << "\n";
    return chimera::cli::kExitUsage;
  }
  rc.command = app.get_subcommands().front()->get_name();

  try {
    return chimera::cli::run(rc);
  } catch (const chimera::Error& e) {
    std::cerr << "error[" << chimera::error_code_name(e.code()) << "]: " << e.what() << "\n";
    return chimera::cli::exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << "\n";
    return chimera::cli::kExitCheckFailed;
  }
}
