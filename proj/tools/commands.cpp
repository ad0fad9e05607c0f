// Copyright 2026 The Chimera Authors.
// SPDX-License-Identifier: Apache-2.0

#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <random>
#include <sstream>
#include <thread>

#include "chimera/gradients.hpp"
#include "chimera/io.hpp"
#include "chimera/layer.hpp"
#include "chimera/resolvent.hpp"
#include "chimera/train.hpp"
#include "generators.hpp"

namespace chimera::cli {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

[[noreturn]] void usage(const std::string& what) {
  throw Error(ErrorCode::InvalidConfig, what);
}

json environment_stamp() {
  json env;
  env["compiler"] = __VERSION__;
#ifdef NDEBUG
  env["build"] = "release";
#else
  env["build"] = "debug";
#endif
  env["hardware_threads"] = std::thread::hardware_concurrency();
  const char* cap = std::getenv("CHIMERA_THREADS");
  env["chimera_threads"] = cap != nullptr ? json(cap) : json(nullptr);
  const std::time_t now = std::time(nullptr);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  env["timestamp_utc"] = stamp;
  return env;
}

class Report {
 public:
  Report(std::string command, json config)
      : command_(std::move(command)), config_(std::move(config)) {}

  void check(const std::string& name, bool pass, json measured, json tolerance) {
    checks_.push_back({{"name", name},
                       {"status", pass ? "pass" : "fail"},
                       {"measured", std::move(measured)},
                       {"tolerance", std::move(tolerance)}});
    passed_ = passed_ && pass;
  }
  void skip(const std::string& name, const std::string& reason) {
    checks_.push_back({{"name", name},
                       {"status", "skipped"},
                       {"measured", nullptr},
                       {"tolerance", nullptr},
                       {"reason", reason}});
  }

  json& results() { return results_; }
  void set_timing(double wall_ms, std::uint64_t matmuls) {
    wall_ms_ = wall_ms;
    matmul_count_ = matmuls;
  }
  bool passed() const { return passed_; }

  json to_json() const {
    json j;
    j["schema"] = kReportSchema;
    j["schema_version"] = kReportVersion;
    j["command"] = command_;
    j["config"] = config_;
    j["status"] = passed_ ? "pass" : "fail";
    j["checks"] = checks_.empty() ? json::array() : json(checks_);
    if (!results_.is_null()) j["results"] = results_;
    j["timings"] = {{"wall_ms", wall_ms_}, {"matmul_count", matmul_count_}};
    j["environment"] = environment_stamp();
    return j;
  }

  // One line per check for the terminal when the report goes to a file.
  std::string summary() const {
    std::ostringstream s;
    for (const json& c : checks_) {
      s << c["status"].get<std::string>() << "  " << c["name"].get<std::string>();
      if (!c["measured"].is_null()) s << "  measured=" << c["measured"].dump();
      if (!c["tolerance"].is_null()) s << "  tolerance=" << c["tolerance"].dump();
      s << '\n';
    }
    s << "status: " << (passed_ ? "pass" : "fail") << '\n';
    return s.str();
  }

 private:
  std::string command_;
  json config_;
  std::vector<json> checks_;
  json results_;
  double wall_ms_ = 0.0;
  std::uint64_t matmul_count_ = 0;
  bool passed_ = true;
};

int emit(const Report& report, const std::string& out) {
  const json j = report.to_json();
  if (out.empty()) {
    std::cout << j.dump(2) << '\n';
  } else {
    write_json_file(out, j);
    std::cout << report.summary();
  }
  return report.passed() ? kExitOk : kExitCheckFailed;
}

// Everything derived from a RunConfig before any work starts.
struct Resolved {
  gen::GraphSpec spec;
  ChimeraConfig chimera;
  double tol = 0.0;
};

Resolved resolve(const RunConfig& rc, double default_tol) {
  Resolved r;
  r.spec = gen::parse_graph_spec(rc.graph);
  r.chimera.regime = parse_regime(rc.regime);
  const bool dag_regime =
      r.chimera.regime == Regime::Dag || r.chimera.regime == Regime::DagNormalized;
  r.chimera.algorithm =
      parse_algorithm(rc.algo.empty() ? (dag_regime ? "recurrence" : "dense") : rc.algo);
  r.chimera.gamma = rc.gamma;
  r.chimera.directed_variant = rc.directed_variant;
  validate_config(r.chimera);
  if (r.chimera.regime == Regime::General && !(rc.gamma > 0.0 && rc.gamma < 1.0)) {
    throw Error(ErrorCode::GammaOutOfRange, "--gamma must lie in (0, 1)");
  }
  if (rc.dtype != "f64" && rc.dtype != "f32") usage("--dtype must be f64 or f32");
  if (rc.dtype == "f32" && rc.command != "bench") {
    usage("--dtype f32 is only supported by bench");
  }
  if (rc.heads == 0 || rc.dim == 0 || rc.dstate == 0 || rc.dim % rc.heads != 0) {
    usage("--heads must divide --dim and all dimensions must be positive");
  }
  r.tol = rc.tol.value_or(default_tol);
  if (!(r.tol > 0.0)) usage("--tol must be positive");
  return r;
}

json config_echo(const RunConfig& rc, const Resolved& r) {
  json j;
  j["graph"] = gen::format_graph_spec(r.spec);
  j["regime"] = regime_name(r.chimera.regime);
  j["algo"] = algorithm_token(r.chimera.algorithm);
  j["gamma"] = r.chimera.gamma;
  j["directed_variant"] = r.chimera.directed_variant;
  j["heads"] = rc.heads;
  j["dstate"] = rc.dstate;
  j["dim"] = rc.dim;
  j["seed"] = rc.seed;
  j["dtype"] = rc.dtype;
  j["tol"] = r.tol;
  return j;
}

Matrix gaussian(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (auto& v : m.data()) v = normal(rng);
  return m;
}

struct Instance {
  Graph graph;
  Matrix x;
  HeadSet heads;
};

Instance make_instance(const RunConfig& rc, const Resolved& r) {
  std::mt19937_64 rng(rc.seed);
  Graph g = gen::make_graph(r.spec);
  Matrix x = g.node_features() && g.node_features()->cols() == rc.dim
                 ? *g.node_features()
                 : gaussian(g.num_nodes(), rc.dim, rng);
  HeadSet heads = init_heads(rc.dim, rc.dstate, rc.heads, 0, rc.directed_variant, rng);
  if (!rc.weights.empty()) heads = import_heads(load_params(rc.weights), "").at(0);
  return {std::move(g), std::move(x), std::move(heads)};
}

std::size_t ceil_log2(std::size_t n) {
  std::size_t k = 0;
  while ((std::size_t{1} << k) < n) ++k;
  return k;
}

double log_log_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
  const double n = static_cast<double>(xs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double lx = std::log(xs[i]);
    const double ly = std::log(ys[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

bool is_directed_chain(const Graph& g) {
  if (!g.directed() || g.num_edges() + 1 != g.num_nodes()) return false;
  for (const Edge& e : g.edges())
    if (e.dst != e.src + 1) return false;
  return true;
}

// ---------------------------------------------------------------- verify

void verify_head(Report& report, const Topology& topo, const Instance& inst,
                 const HeadMixInputs& mix, const SsmParams& params, const Resolved& r,
                 const std::string& tag) {
  const Graph& g = inst.graph;
  const std::size_t n = g.num_nodes();
  const WeightedAdjacency& adj = mix.adjacency;
  const ChimeraConfig& cfg = r.chimera;
  const bool dense_ok = n <= cfg.dense_cap;

  bool finite = params.b.all_finite() && params.c.all_finite() && params.v.all_finite();
  double min_delta = 0.0;
  if (!params.delta.empty()) {
    min_delta = *std::min_element(params.delta.begin(), params.delta.end());
  }
  for (double v : params.delta) finite = finite && std::isfinite(v);
  for (double v : params.psi) finite = finite && std::isfinite(v);
  report.check(tag + "params_finite", finite, finite, true);
  report.check(tag + "selectivity_nonnegative", min_delta >= 0.0, min_delta, 0.0);

  std::optional<Matrix> dense_mask;
  if (dense_ok) {
    const MaskMatrix m = mask_dense(adj, cfg.dense_cap);
    const double residual =
        max_abs(subtract(matmul(identity_minus(adj.dense()), m.l), Matrix::identity(n)));
    report.check(tag + "mask_residual", residual < 1e-8, residual, 1e-8);
    dense_mask = m.l;
  } else {
    report.skip(tag + "mask_residual", "graph exceeds the dense cap");
  }

  switch (cfg.regime) {
    case Regime::General: {
      const double row = adj.max_row_abs_sum();
      report.check(tag + "banach_row_sum", row < cfg.gamma, row, cfg.gamma);
      if (dense_mask) {
        const double norm = max_row_abs_sum(*dense_mask);
        const double bound = 1.0 / (1.0 - cfg.gamma) + 1e-9;
        report.check(tag + "resolvent_norm", norm <= bound, norm, bound);
        double worst = 0.0;  // truncation error over its bound
        for (std::size_t k = 0; k <= 16; ++k) {
          const double err = max_row_abs_sum(subtract(*dense_mask, mask_neumann(adj, k).l));
          const double b = std::pow(cfg.gamma, static_cast<double>(k + 1)) / (1.0 - cfg.gamma);
          worst = std::max(worst, err / b);
        }
        report.check(tag + "truncation_bound", worst <= 1.0 + 1e-9, worst, 1.0);
      }
      break;
    }
    case Regime::Dag:
    case Regime::DagNormalized: {
      double lo = 1.0, hi = 0.0;
      for (double w : adj.weights) {
        lo = std::min(lo, w);
        hi = std::max(hi, w);
      }
      const bool in_unit = adj.weights.empty() || (lo > 0.0 && hi <= 1.0);
      report.check(tag + "dag_weights_in_unit_interval", in_unit, json{lo, hi},
                   json{0.0, 1.0});
      const std::size_t dia = topo.plan->diameter;
      if (dense_ok) {
        const double nil = max_abs(matrix_power(adj.dense(), dia + 1));
        report.check(tag + "nilpotence", nil == 0.0, nil, 0.0);
        const double trunc = relative_error(mask_neumann(adj, dia).l, *dense_mask);
        report.check(tag + "neumann_at_diameter", trunc < 1e-10, trunc, 1e-10);
      }
      const MaskMatrix sq = mask_squaring(adj, std::max<std::size_t>(dia, 1));
      const std::size_t limit = 2 * ceil_log2(std::max<std::size_t>(dia, 1)) + 2;
      report.check(tag + "squaring_matmul_count", sq.matmul_count <= limit,
                   sq.matmul_count, limit);
      if (dense_mask) {
        const Matrix ref = mix_output(*dense_mask, params.c, mix.b_bar, params.v);
        const double rec = relative_error(
            dag_recurrence(adj, params.c, mix.b_bar, params.v).y, ref);
        const double sqe = relative_error(mix_output(sq.l, params.c, mix.b_bar, params.v), ref);
        const double worst = std::max(rec, sqe);
        report.check(tag + "cross_algorithm", worst < r.tol, worst, r.tol);
      }
      if (is_directed_chain(g) && dense_mask) {
        double err = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          double prod = 1.0;
          for (std::size_t j = i + 1; j-- > 0;) {
            err = std::max(err, std::abs((*dense_mask)(i, j) - prod));
            if (j > 0) prod *= adj.weights[j - 1];  // arc j-1 -> j sits at index j-1
          }
        }
        report.check(tag + "line_closed_form", err < 1e-12, err, 1e-12);
      }
      break;
    }
    case Regime::UndirectedLine: {
      const Matrix a = adj.dense();
      double worst = 0.0, q = 0.0;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        const double prod = a(i, i + 1) * a(i + 1, i);
        q = std::max(q, std::sqrt(prod));
        worst = std::max({worst, prod + line_psi_margin(params.psi[i]),
                          prod + line_psi_margin(params.psi[i + 1])});
      }
      report.check(tag + "line_pair_constraint", worst <= 0.25 + 1e-15, worst, 0.25);
      if (dense_mask) {
        const double bound = 1.0 / (1.0 - 2.0 * q) + 1e-12;
        const double lmax = max_abs(*dense_mask);
        report.check(tag + "line_resolvent_bound",
                     dense_mask->all_finite() && lmax <= bound, lmax, bound);
      }
      break;
    }
  }

  if (n <= kOracleMaxNodes && dense_ok) {
    const Matrix a = adj.dense();
    std::vector<double> weights(g.arcs().size());
    // Oracle weights follow the graph's arc order; take them from the dense matrix.
    for (std::size_t k = 0; k < g.arcs().size(); ++k)
      weights[k] = a(g.arcs()[k].dst, g.arcs()[k].src);
    double err = 0.0;
    const std::size_t kmax = std::min<std::size_t>(6, kOracleMaxLength);
    for (std::size_t k = 0; k <= kmax; ++k) {
      const Matrix power = matrix_power(a, k);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          err = std::max(err, std::abs(power(i, j) - path_sum_oracle(g, weights, i, j, k)));
    }
    report.check(tag + "path_sum_oracle", err < 1e-12, err, 1e-12);
  }
}

int cmd_verify(const RunConfig& rc) {
  const Resolved r = resolve(rc, 1e-9);
  Report report("verify", config_echo(rc, r));
  const Instance inst = make_instance(rc, r);
  const Topology topo = prepare_topology(inst.graph, r.chimera);
  json& res = report.results();
  res["nodes"] = inst.graph.num_nodes();
  res["edges"] = inst.graph.num_edges();
  res["diameter"] = topo.diameter;

  if (topo.plan) {
    std::size_t bad = 0;
    for (const Arc& a : inst.graph.arcs())
      if (topo.plan->position[a.src] >= topo.plan->position[a.dst]) ++bad;
    report.check("topological_order", bad == 0, bad, 0);
  }
  for (std::size_t h = 0; h < inst.heads.size(); ++h) {
    const SsmParams params = compute_params(inst.graph, inst.x, inst.heads[h]);
    const HeadMixInputs mix = head_mix_inputs(topo, params, r.chimera);
    verify_head(report, topo, inst, mix, params, r, "head" + std::to_string(h) + ".");
  }

  constexpr std::size_t kGradcheckMaxNodes = 128;
  if (inst.graph.num_nodes() <= kGradcheckMaxNodes) {
    ParamStore store;
    export_heads({inst.heads}, "", store);
    std::mt19937_64 rng(rc.seed + 1);
    const Matrix target = gaussian(inst.graph.num_nodes(), rc.dim, rng);
    const GradcheckReport g =
        gradcheck_heads(inst.graph, inst.x, store, "", r.chimera, target);
    report.check("gradient_check", g.comparison.max_relative_error < 1e-5,
                 g.comparison.max_relative_error, 1e-5);
    report.check("tape_replay", g.replay_exact, g.replay_exact, true);
    if (g.resolvent_backward_matmuls) {
      report.check("backward_matmul_count", *g.resolvent_backward_matmuls == 2 * rc.heads,
                   *g.resolvent_backward_matmuls, 2 * rc.heads);
    }
  } else {
    report.skip("gradient_check", "more than 128 nodes");
  }

  const auto start = Clock::now();
  const ForwardResult fwd = chimera_forward(inst.graph, inst.x, inst.heads, r.chimera);
  report.set_timing(elapsed_ms(start), fwd.matmul_count);
  report.check("output_finite", fwd.y.all_finite(), fwd.y.all_finite(), true);
  return emit(report, rc.out);
}

// ------------------------------------------------------------- gradcheck

int cmd_gradcheck(const RunConfig& rc) {
  const Resolved r = resolve(rc, 1e-5);
  Report report("gradcheck", config_echo(rc, r));
  const Instance inst = make_instance(rc, r);
  ParamStore store;
  export_heads({inst.heads}, "", store);
  std::mt19937_64 rng(rc.seed + 1);
  const Matrix target = gaussian(inst.graph.num_nodes(), rc.dim, rng);
  const auto start = Clock::now();
  const GradcheckReport g = gradcheck_heads(inst.graph, inst.x, store, "", r.chimera, target);
  report.set_timing(elapsed_ms(start), 0);
  report.check("max_relative_error", g.comparison.max_relative_error < r.tol,
               g.comparison.max_relative_error, r.tol);
  report.check("forward_agreement", g.forward_mismatch < 1e-12, g.forward_mismatch, 1e-12);
  report.check("tape_replay", g.replay_exact, g.replay_exact, true);
  if (g.resolvent_backward_matmuls) {
    report.check("backward_matmul_count", *g.resolvent_backward_matmuls == 2 * rc.heads,
                 *g.resolvent_backward_matmuls, 2 * rc.heads);
  }
  json& res = report.results();
  res["loss"] = g.loss;
  res["worst_parameter"] = g.comparison.worst_name;
  res["worst_index"] = g.comparison.worst_index;
  res["compared_coordinates"] = g.comparison.compared;
  res["total_coordinates"] = g.comparison.total;
  return emit(report, rc.out);
}

// ----------------------------------------------------------------- bench

template <typename T>
struct BenchInputs {
  BasicMatrix<T> c, b_bar, v;
  std::vector<T> weights;
  BasicMatrix<T> dense;
};

template <typename T>
BasicMatrix<T> mix_typed(const BasicMatrix<T>& mask, const BenchInputs<T>& in) {
  return matmul(hadamard(mask, matmul(in.c, transpose(in.b_bar))), in.v);
}

// One forward of the mixing stage; returns the products spent on the mask.
template <typename T>
std::uint64_t bench_once(const WeightedAdjacency& adj, const BenchInputs<T>& in,
                         const Algorithm& algo, std::size_t depth, BasicMatrix<T>& y,
                         std::vector<T>& hidden) {
  MatmulCountScope count;
  switch (algo.method) {
    case MaskMethod::DagRecurrence:
      dag_recurrence_kernel<T>(*adj.plan, adj.row_begin, adj.arcs, in.weights, in.c,
                               in.b_bar, in.v, y, hidden);
      return count.count();
    case MaskMethod::DenseInverse:
      y = mix_typed(inverse(identity_minus(in.dense)), in);
      return 0;
    case MaskMethod::Squaring: {
      const BasicMatrix<T> mask = squaring_power_sum(in.dense, depth);
      const std::uint64_t used = count.count();
      y = mix_typed(mask, in);
      return used;
    }
    case MaskMethod::Neumann: {
      const BasicMatrix<T> eye = BasicMatrix<T>::identity(in.dense.rows());
      BasicMatrix<T> mask = eye;
      for (std::size_t i = 0; i < depth; ++i) mask = add(eye, matmul(in.dense, mask));
      const std::uint64_t used = count.count();
      y = mix_typed(mask, in);
      return used;
    }
  }
  return 0;
}

// Disjoint directed chains of dia + 1 nodes: longest path exactly `dia`.
Graph depth_family(std::size_t nodes, std::size_t dia) {
  std::vector<Edge> edges;
  for (std::size_t i = 1; i < nodes; ++i)
    if (i % (dia + 1) != 0) edges.push_back({i - 1, i});
  return build_graph(nodes, true, std::move(edges));
}

struct BenchRow {
  std::size_t size;
  double wall_ms;
  std::uint64_t matmuls;
  double work;  // x value of the scaling fit
};

template <typename T>
BenchRow bench_size(const Graph& g, const RunConfig& rc, const Resolved& r,
                    std::size_t size) {
  std::mt19937_64 rng(rc.seed);
  const Matrix x = gaussian(g.num_nodes(), rc.dim, rng);
  const HeadSet heads = init_heads(rc.dim, rc.dstate, 1, 0, rc.directed_variant, rng);
  const Topology topo = prepare_topology(g, r.chimera);
  const SsmParams params = compute_params(g, x, heads[0]);
  const HeadMixInputs mix = head_mix_inputs(topo, params, r.chimera);
  const Algorithm& algo = r.chimera.algorithm;
  const bool needs_dense = algo.method != MaskMethod::DagRecurrence;
  if (needs_dense && g.num_nodes() > r.chimera.dense_cap) {
    throw Error(ErrorCode::DenseCapExceeded,
                "bench size " + std::to_string(g.num_nodes()) + " exceeds the dense cap");
  }
  BenchInputs<T> in{params.c.cast<T>(), mix.b_bar.cast<T>(), params.v.cast<T>(), {}, {}};
  for (double w : mix.adjacency.weights) in.weights.push_back(static_cast<T>(w));
  if (needs_dense) in.dense = mix.adjacency.dense().cast<T>();
  const std::size_t depth = truncation_depth(topo, r.chimera);

  BasicMatrix<T> y(g.num_nodes(), in.v.cols());
  std::vector<T> hidden(algo.method == MaskMethod::DagRecurrence
                            ? g.num_nodes() * rc.dstate * in.v.cols()
                            : 0);
  // Warmup, then size the inner loop so one repetition lasts about 2 ms.
  auto t0 = Clock::now();
  const std::uint64_t matmuls = bench_once(mix.adjacency, in, algo, depth, y, hidden);
  const double first = std::max(elapsed_ms(t0), 1e-4);
  const std::size_t inner = std::max<std::size_t>(1, static_cast<std::size_t>(2.0 / first));
  std::vector<double> samples;
  for (std::size_t rep = 0; rep < rc.reps; ++rep) {
    t0 = Clock::now();
    for (std::size_t i = 0; i < inner; ++i) bench_once(mix.adjacency, in, algo, depth, y, hidden);
    samples.push_back(elapsed_ms(t0) / static_cast<double>(inner));
  }
  std::nth_element(samples.begin(), samples.begin() + samples.size() / 2, samples.end());
  const double work = algo.method == MaskMethod::DagRecurrence
                          ? static_cast<double>(g.num_nodes() + g.num_edges())
                          : static_cast<double>(size);
  return {size, samples[samples.size() / 2], matmuls, work};
}

int cmd_bench(const RunConfig& rc) {
  const Resolved r = resolve(rc, 1e-9);
  if (rc.reps < 5) usage("--reps must be at least 5");
  json echo = config_echo(rc, r);
  const MaskMethod method = r.chimera.algorithm.method;
  const bool depth_sweep = method == MaskMethod::Squaring || method == MaskMethod::Neumann;
  std::vector<std::size_t> sizes = rc.sizes;
  if (sizes.empty()) {
    if (method == MaskMethod::DagRecurrence) {
      for (std::size_t e = 10; e <= 16; ++e) sizes.push_back(std::size_t{1} << e);
    } else if (method == MaskMethod::DenseInverse) {
      sizes = {64, 128, 256, 512};
    } else {
      sizes = {4, 16, 64, 256};
    }
  }
  echo["sizes"] = sizes;
  echo["sweep"] = depth_sweep ? "depth" : "chain_length";
  echo["reps"] = rc.reps;
  if (depth_sweep) echo["nodes"] = rc.nodes;
  Report report("bench", echo);

  std::vector<BenchRow> rows;
  const auto start = Clock::now();
  for (std::size_t size : sizes) {
    if (depth_sweep && size + 1 > rc.nodes) usage("depth sweep needs --nodes > depth");
    if (size == 0) usage("bench sizes must be positive");
    const bool dag_regime =
        r.chimera.regime == Regime::Dag || r.chimera.regime == Regime::DagNormalized;
    const Graph g = depth_sweep ? depth_family(rc.nodes, size) : line_graph(size, dag_regime);
    rows.push_back(rc.dtype == "f32" ? bench_size<float>(g, rc, r, size)
                                     : bench_size<double>(g, rc, r, size));
  }
  std::uint64_t total_matmuls = 0;
  for (const BenchRow& row : rows) total_matmuls += row.matmuls;
  report.set_timing(elapsed_ms(start), total_matmuls);

  const std::string token = algorithm_token(r.chimera.algorithm);
  std::ostringstream csv;
  csv << "size,algo,wall_ms,matmul_count\n";
  json table = json::array();
  std::vector<double> xs, ys;
  for (const BenchRow& row : rows) {
    csv << row.size << ',' << token << ',' << row.wall_ms << ',' << row.matmuls << '\n';
    table.push_back({{"size", row.size},
                     {"algo", token},
                     {"wall_ms", row.wall_ms},
                     {"matmul_count", row.matmuls}});
    xs.push_back(row.work);
    ys.push_back(row.wall_ms);
  }
  json& res = report.results();
  res["rows"] = table;
  if (rows.size() >= 2) {
    const double slope = log_log_slope(xs, ys);
    res["loglog_slope"] = slope;
    res["slope_against"] = method == MaskMethod::DagRecurrence ? "nodes_plus_edges"
                           : depth_sweep                       ? "depth"
                                                               : "nodes";
    if (method == MaskMethod::DagRecurrence) {
      report.check("recurrence_linear_scaling", slope >= 0.9 && slope <= 1.15, slope,
                   json{0.9, 1.15});
    }
  }
  if (method == MaskMethod::Squaring) {
    bool ok = true;
    json limits = json::array();
    for (const BenchRow& row : rows) {
      const std::size_t limit = 2 * ceil_log2(row.size) + 2;
      limits.push_back(limit);
      ok = ok && row.matmuls <= limit;
    }
    json counts = json::array();
    for (const BenchRow& row : rows) counts.push_back(row.matmuls);
    report.check("squaring_matmul_count", ok, counts, limits);
  }
  const std::string csv_path =
      !rc.csv.empty() ? rc.csv : (!rc.out.empty() ? rc.out + ".csv" : std::string());
  if (!csv_path.empty()) write_text_file(csv_path, csv.str());
  if (rc.out.empty()) std::cerr << csv.str();
  return emit(report, rc.out);
}

// ----------------------------------------------------------------- train

int cmd_train(const RunConfig& rc) {
  const Resolved r = resolve(rc, 1e-9);
  TaskConfig task;
  task.kind = parse_task(rc.task);
  task.seed = rc.seed;
  task.train_size = rc.train_size;
  task.val_size = rc.val_size;
  task.grid_structure = parse_grid_structure(rc.grid_structure);
  ModelConfig model;
  model.model_dim = rc.dim;
  model.state_dim = rc.dstate;
  model.heads = rc.heads;
  model.blocks = rc.blocks;
  model.sharing = parse_sharing_mode(rc.sharing);
  model.chimera = r.chimera;
  OptimizerConfig opt;
  if (rc.optimizer == "adam") {
    opt.kind = OptimizerKind::Adam;
  } else if (rc.optimizer == "sgd") {
    opt.kind = OptimizerKind::Sgd;
  } else {
    usage("--optimizer must be adam or sgd");
  }
  opt.lr = rc.lr;
  opt.steps = rc.steps;
  opt.threads = rc.threads;
  if (rc.steps > 5000) usage("--steps is limited to 5000");

  GraphSampler sampler;
  if (task.kind == TaskKind::GridNeighborhoodAverage) {
    if (r.spec.family != gen::Family::Grid) usage("the grid task needs --graph grid:<H>x<W>");
    task.grid_height = r.spec.height;
    task.grid_width = r.spec.width;
  } else {
    const gen::GraphSpec spec = r.spec;
    sampler = [spec](std::uint64_t seed) { return gen::make_graph(spec, seed); };
  }
  const Dataset data = make_dataset(task, sampler);
  std::size_t max_nodes = 0;
  for (const Example& e : data.train) max_nodes = std::max(max_nodes, structure_nodes(e.structure));
  if (max_nodes > 256) usage("training graphs are limited to 256 nodes");

  json echo = config_echo(rc, r);
  echo["task"] = task_name(task.kind);
  echo["steps"] = rc.steps;
  echo["lr"] = rc.lr;
  echo["optimizer"] = rc.optimizer;
  echo["sharing"] = sharing_mode_name(model.sharing);
  echo["blocks"] = rc.blocks;
  echo["train_size"] = rc.train_size;
  echo["val_size"] = rc.val_size;
  echo["bar"] = rc.bar;
  if (task.kind == TaskKind::GridNeighborhoodAverage) {
    echo["grid_structure"] = grid_structure_name(task.grid_structure);
  }
  Report report("train", echo);

  const std::size_t parts = structure_parts(data.train.front().structure);
  ParamStore params = rc.weights.empty() ? init_model(model, parts, rc.seed)
                                         : load_params(rc.weights);
  const TrainReport tr = train(params, model, data, opt);
  report.set_timing(tr.wall_ms, 0);
  report.results() = report_to_json(tr);
  report.results().erase("wall_ms");
  const double ratio = tr.target_variance > 0.0 ? tr.val_mse / tr.target_variance : 0.0;
  report.results()["val_mse_over_variance"] = ratio;
  report.check("val_mse_below_bar", ratio < rc.bar, ratio, rc.bar);
  if (!rc.save_weights.empty()) save_params(rc.save_weights, params);
  return emit(report, rc.out);
}

// ------------------------------------------------------------- decompose

int cmd_decompose(const RunConfig& rc) {
  const gen::GraphSpec spec = gen::parse_graph_spec(rc.graph);
  Decomposition dec;
  const Graph g = gen::make_graph(spec);
  if (spec.family == gen::Family::Grid) {
    dec = decompose_grid(spec.height, spec.width);
  } else if (is_line_graph(g)) {
    dec = decompose_line(g.num_nodes());
  } else {
    throw Error(ErrorCode::InvalidConfig,
                "decompose handles chains and grids; got " + gen::format_graph_spec(spec));
  }
  json echo;
  echo["graph"] = gen::format_graph_spec(spec);
  const std::string dir = rc.out.empty() ? "decomposition" : rc.out;
  echo["out"] = dir;
  Report report("decompose", echo);
  std::filesystem::create_directories(dir);

  std::vector<std::size_t> cover(dec.source.num_edges(), 0);
  std::size_t oriented = 0;
  json files = json::array();
  for (std::size_t p = 0; p < dec.parts.size(); ++p) {
    const DecompositionPart& part = dec.parts[p];
    json j = graph_to_json(part.graph);
    j["label"] = part.label;
    j["source_edge"] = part.source_edge;
    const std::string name = "part" + std::to_string(p) + "-" + part.label + ".json";
    write_json_file((std::filesystem::path(dir) / name).string(), j);
    files.push_back(name);
    oriented += part.graph.num_edges();
    for (std::size_t e : part.source_edge) ++cover[e];
  }
  json& res = report.results();
  res["parts"] = dec.parts.size();
  res["files"] = files;
  res["source_edges"] = dec.source.num_edges();
  res["oriented_edges"] = oriented;
  const std::size_t uncovered =
      static_cast<std::size_t>(std::count(cover.begin(), cover.end(), 0));
  report.check("edge_coverage", uncovered == 0, uncovered, 0);

  // Every ordered pair must be joined by a path inside one part.
  const std::size_t n = dec.source.num_nodes();
  std::size_t unreached = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<bool> any(n, false);
    for (const DecompositionPart& part : dec.parts) {
      const auto reach = reachable_from(part.graph, i);
      for (std::size_t j = 0; j < n; ++j) any[j] = any[j] || reach[j];
    }
    unreached += static_cast<std::size_t>(std::count(any.begin(), any.end(), false));
  }
  report.check("all_pairs_reachable", unreached == 0, unreached, 0);
  json manifest = {{"source", graph_to_json(dec.source)}, {"parts", files}};
  write_json_file((std::filesystem::path(dir) / "manifest.json").string(), manifest);
  write_json_file((std::filesystem::path(dir) / "report.json").string(), report.to_json());
  std::cout << report.summary() << "parts: " << dec.parts.size()
            << "  oriented edges: " << oriented << "  directory: " << dir << '\n';
  return report.passed() ? kExitOk : kExitCheckFailed;
}

// --------------------------------------------------------------- forward

int cmd_forward(const RunConfig& rc) {
  const Resolved r = resolve(rc, 1e-9);
  Report report("forward", config_echo(rc, r));
  const Instance inst = make_instance(rc, r);
  const auto start = Clock::now();
  const ForwardResult fwd = chimera_forward(inst.graph, inst.x, inst.heads, r.chimera);
  report.set_timing(elapsed_ms(start), fwd.matmul_count);
  report.check("output_finite", fwd.y.all_finite(), fwd.y.all_finite(), true);
  report.results()["y"] = matrix_to_json(fwd.y);
  if (!rc.save_weights.empty()) {
    ParamStore store;
    export_heads({inst.heads}, "", store);
    save_params(rc.save_weights, store);
  }
  return emit(report, rc.out);
}

}  // namespace

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::Singular:
    case ErrorCode::ZeroDiagonal:
    case ErrorCode::NonFinite:
    case ErrorCode::DivergenceDetected:
    case ErrorCode::TapeEmpty:
    case ErrorCode::NoInverseNode:
      return kExitCheckFailed;
    default:
      return kExitUsage;
  }
}

int run(const RunConfig& config) {
  if (config.command == "verify") return cmd_verify(config);
  if (config.command == "gradcheck") return cmd_gradcheck(config);
  if (config.command == "bench") return cmd_bench(config);
  if (config.command == "train") return cmd_train(config);
  if (config.command == "decompose") return cmd_decompose(config);
  if (config.command == "forward") return cmd_forward(config);
  usage("unknown command '" + config.command + "'");
}

}  // namespace chimera::cli
