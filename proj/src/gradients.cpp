// Copyright 2026 The Chimera Authors.
// SPDX-License-Identifier: Apache-2.0

#include "chimera/gradients.hpp"

#include <cmath>
#include <memory>

namespace chimera {

void register_params(Tape& tape, const ParamStore& store) {
  for (const auto& [name, value] : store) tape.parameter(name, value);
}

namespace {

TapeProjection tape_projection(const Tape& tape, const std::string& name) {
  return {tape.parameter(name + ".weight"), tape.parameter(name + ".bias"),
          tape.parameter(name + ".theta_self"), tape.parameter(name + ".theta_neigh")};
}

Var record_projection(Var x, const TapeProjection& p,
                      const std::shared_ptr<const NeighborMean>& conv,
                      Activation act) {
  Var u = ad::add_row(ad::matmul(x, p.weight), p.bias);
  if (conv) {
    u = ad::add(ad::mul_scalar(u, p.theta_self),
                ad::mul_scalar(ad::neighbor_mean(u, conv), p.theta_neigh));
  }
  return ad::activate(u, act);
}

struct TapeSsm {
  Var b, c, v, delta, psi;
  std::optional<Var> delta2, edge_delta;
};

TapeSsm record_params(const Graph& graph, Var x, const TapeHead& head) {
  if (x.rows() != graph.num_nodes()) {
    throw Error(ErrorCode::ShapeMismatch, "features do not match the node count");
  }
  auto conv = std::make_shared<const NeighborMean>(NeighborMean::from_graph(graph));
  TapeSsm s;
  s.b = record_projection(x, head.b, conv, Activation::Swish);
  s.c = record_projection(x, head.c, conv, Activation::Swish);
  s.v = record_projection(x, head.v, conv, Activation::Swish);
  s.delta = record_projection(x, head.delta, conv, Activation::Softplus);
  s.psi = record_projection(x, head.psi, conv, Activation::Identity);
  if (head.delta2) s.delta2 = record_projection(x, *head.delta2, conv, Activation::Softplus);
  if (head.edge_delta) {
    const auto& z = graph.edge_features();
    if (!z) throw Error(ErrorCode::MissingFeatures, "edge selectivity needs edge features");
    Var zv = x.tape().constant(*z);
    s.edge_delta = record_projection(zv, *head.edge_delta, nullptr, Activation::Softplus);
  }
  return s;
}

// Per-arc exponent (Delta_dst + Delta'_src [+ Delta_edge]) / #terms.
Var record_selectivity(const std::vector<Arc>& arcs, const TapeSsm& s, bool two_deltas) {
  std::vector<std::size_t> dst, src, edge;
  for (const Arc& a : arcs) {
    dst.push_back(a.dst);
    src.push_back(a.src);
    edge.push_back(a.edge);
  }
  const Var sender = two_deltas ? *s.delta2 : s.delta;
  Var sel = ad::add(ad::gather_rows(s.delta, dst), ad::gather_rows(sender, src));
  double terms = 2.0;
  if (s.edge_delta) {
    sel = ad::add(sel, ad::gather_rows(*s.edge_delta, edge));
    terms = 3.0;
  }
  return terms == 2.0 ? ad::scale(sel, 0.5) : ad::scale(sel, 1.0 / terms);
}

std::vector<std::size_t> arc_dst(const std::vector<Arc>& arcs) {
  std::vector<std::size_t> out;
  for (const Arc& a : arcs) out.push_back(a.dst);
  return out;
}

struct TapeMix {
  std::shared_ptr<WeightedAdjacency> structure;  // weights unused
  Var weights;
  Var b_bar;
};

std::vector<std::size_t> csr_offsets(std::size_t n, const std::vector<Arc>& arcs) {
  std::vector<std::size_t> begin(n + 1, 0);
  for (const Arc& a : arcs) ++begin[a.dst + 1];
  for (std::size_t i = 0; i < n; ++i) begin[i + 1] += begin[i];
  return begin;
}

TapeMix record_mix_inputs(Tape& tape, const Topology& topo, const TapeSsm& s,
                          const ChimeraConfig& config) {
  const std::size_t n = topo.graph->num_nodes();
  TapeMix mix;
  mix.structure = std::make_shared<WeightedAdjacency>();
  WeightedAdjacency& st = *mix.structure;
  st.num_nodes = n;
  st.regime = config.regime;
  switch (config.regime) {
    case Regime::Dag:
    case Regime::DagNormalized: {
      const DagPlan& plan = *topo.plan;
      const bool normalized = config.regime == Regime::DagNormalized;
      st.plan = plan;
      std::vector<double> norm;
      std::vector<double> root(n, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        const double deg = static_cast<double>(plan.parents[i].size());
        if (plan.parents[i].empty()) root[i] = 1.0;
        for (const Parent& p : plan.parents[i]) {
          st.arcs.push_back({i, p.node, p.edge});
          norm.push_back(normalized ? 1.0 / std::sqrt(deg) : 1.0);
        }
      }
      st.row_begin = csr_offsets(n, st.arcs);
      if (st.arcs.empty()) {
        mix.weights = tape.constant(Matrix(0, 1));
        mix.b_bar = s.b;
        return mix;
      }
      Var sel = record_selectivity(st.arcs, s, false);
      Var w = ad::exp(ad::scale(sel, -1.0));
      Var scaled_sel = sel;
      if (normalized) {
        Var normv = tape.constant(Matrix(norm.size(), 1, norm));
        w = ad::mul(w, normv);
        scaled_sel = ad::mul(sel, normv);
      }
      Var input_scale = ad::add(ad::scatter_add_rows(scaled_sel, arc_dst(st.arcs), n),
                                tape.constant(Matrix(n, 1, root)));
      mix.weights = w;
      mix.b_bar = ad::scale_rows(s.b, input_scale);
      return mix;
    }
    case Regime::General: {
      if (config.directed_variant && !s.delta2) {
        throw Error(ErrorCode::InvalidConfig,
                    "directed variant needs a second selectivity head");
      }
      st.arcs = topo.graph->arcs();
      st.row_begin = csr_offsets(n, st.arcs);
      st.gamma = config.gamma;
      mix.b_bar = ad::scale_rows(s.b, s.delta);
      if (st.arcs.empty()) {
        mix.weights = tape.constant(Matrix(0, 1));
        return mix;
      }
      Var raw = ad::exp(ad::scale(record_selectivity(st.arcs, s, config.directed_variant), -1.0));
      const auto dst = arc_dst(st.arcs);
      Var denom = ad::add(ad::scatter_add_rows(raw, dst, n), ad::exp(ad::scale(s.psi, -1.0)));
      mix.weights = ad::div(ad::scale(raw, config.gamma), ad::gather_rows(denom, dst));
      return mix;
    }
    case Regime::UndirectedLine: {
      const Graph line = line_graph(n, false);
      st.arcs = line.arcs();
      st.row_begin = csr_offsets(n, st.arcs);
      mix.b_bar = ad::scale_rows(s.b, s.delta);
      if (st.arcs.empty()) {
        mix.weights = tape.constant(Matrix(0, 1));
        return mix;
      }
      const bool two_deltas = s.delta2.has_value();
      Var raw = ad::exp(ad::scale(record_selectivity(st.arcs, s, two_deltas), -1.0));
      const std::size_t num_edges = line.num_edges();
      std::vector<std::size_t> fwd(num_edges), bwd(num_edges), lo(num_edges), hi(num_edges);
      std::vector<std::size_t> arc_edge;
      for (std::size_t k = 0; k < st.arcs.size(); ++k) {
        const Arc& a = st.arcs[k];
        (a.dst > a.src ? fwd : bwd)[a.edge] = k;
        arc_edge.push_back(a.edge);
      }
      for (std::size_t e = 0; e < num_edges; ++e) {
        lo[e] = e;
        hi[e] = e + 1;
      }
      Var product = ad::mul(ad::gather_rows(raw, fwd), ad::gather_rows(raw, bwd));
      Var margin_node = ad::scale(ad::sigmoid(s.psi), 0.25);
      Var margin = ad::maximum(ad::gather_rows(margin_node, lo), ad::gather_rows(margin_node, hi));
      Var room = ad::add_scalar(ad::scale(margin, -1.0), 0.25);
      Var ratio = ad::min_const(ad::div(room, ad::max_const(product, kLineRescaleEpsilon)), 1.0);
      mix.weights = ad::mul(raw, ad::gather_rows(ad::sqrt(ratio), arc_edge));
      return mix;
    }
  }
  throw Error(ErrorCode::InvalidConfig, "unknown regime");
}

}  // namespace

TapeHead tape_head(const Tape& tape, const std::string& prefix) {
  TapeHead h;
  h.b = tape_projection(tape, prefix + "b");
  h.c = tape_projection(tape, prefix + "c");
  h.v = tape_projection(tape, prefix + "v");
  h.delta = tape_projection(tape, prefix + "delta");
  h.psi = tape_projection(tape, prefix + "psi");
  if (tape.has_parameter(prefix + "delta2.weight"))
    h.delta2 = tape_projection(tape, prefix + "delta2");
  if (tape.has_parameter(prefix + "edge_delta.weight"))
    h.edge_delta = tape_projection(tape, prefix + "edge_delta");
  return h;
}

std::vector<TapeHead> tape_heads(const Tape& tape, const std::string& prefix,
                                 std::size_t set) {
  std::vector<TapeHead> heads;
  for (std::size_t h = 0;; ++h) {
    const std::string p = prefix + head_prefix(set, h);
    if (!tape.has_parameter(p + "b.weight")) break;
    heads.push_back(tape_head(tape, p));
  }
  if (heads.empty()) {
    throw Error(ErrorCode::InvalidConfig,
                "no heads registered under '" + prefix + head_prefix(set, 0) + "'");
  }
  return heads;
}

Var record_head_forward(Tape& tape, const Topology& topology, Var x,
                        const TapeHead& head, const ChimeraConfig& config,
                        const std::string& tag) {
  const TapeSsm s = record_params(*topology.graph, x, head);
  tape.name(s.delta, tag + "delta");
  tape.name(s.psi, tag + "psi");
  if (s.delta2) tape.name(*s.delta2, tag + "delta2");
  if (s.edge_delta) tape.name(*s.edge_delta, tag + "edge_delta");
  const TapeMix mix = record_mix_inputs(tape, topology, s, config);
  tape.name(mix.weights, tag + "adjacency");
  tape.name(mix.b_bar, tag + "b_bar");
  const std::size_t n = topology.graph->num_nodes();

  if (config.algorithm.method == MaskMethod::DagRecurrence) {
    return ad::dag_recurrence(mix.structure, mix.weights, s.c, mix.b_bar, s.v);
  }
  if (config.algorithm.method != MaskMethod::Squaring && n > config.dense_cap) {
    throw Error(ErrorCode::DenseCapExceeded,
                "mask would have " + std::to_string(n) + " rows; cap is " +
                    std::to_string(config.dense_cap));
  }
  auto arcs = std::make_shared<const std::vector<Arc>>(mix.structure->arcs);
  Var a = ad::arcs_to_dense(mix.weights, arcs, n);
  Var mask;
  switch (config.algorithm.method) {
    case MaskMethod::DenseInverse:
      mask = ad::resolvent(a);
      break;
    case MaskMethod::Squaring: {
      std::size_t p = 1;
      while (p < truncation_depth(topology, config)) p *= 2;
      Var eye = tape.constant(Matrix::identity(n));
      mask = ad::add(eye, a);
      Var power = a;
      for (std::size_t q = 1; q < p; q *= 2) {
        power = ad::matmul(power, power);
        mask = ad::matmul(mask, ad::add(eye, power));
      }
      break;
    }
    case MaskMethod::Neumann: {
      Var eye = tape.constant(Matrix::identity(n));
      mask = eye;
      const std::size_t k = truncation_depth(topology, config);
      for (std::size_t i = 0; i < k; ++i) mask = ad::add(eye, ad::matmul(a, mask));
      break;
    }
    case MaskMethod::DagRecurrence:
      break;
  }
  Var scores = ad::mul(mask, ad::matmul(s.c, ad::transpose(mix.b_bar)));
  return ad::matmul(scores, s.v);
}

Var record_chimera_forward(Tape& tape, const Graph& graph, Var x,
                           const std::vector<TapeHead>& heads,
                           const ChimeraConfig& config, const std::string& tag) {
  if (heads.empty()) throw Error(ErrorCode::InvalidConfig, "no heads");
  const Topology topo = prepare_topology(graph, config);
  std::vector<Var> outs;
  for (std::size_t h = 0; h < heads.size(); ++h) {
    outs.push_back(record_head_forward(tape, topo, x, heads[h], config,
                                       tag + "head" + std::to_string(h) + "."));
  }
  return ad::concat_cols(outs);
}

Var record_chimera_forward(Tape& tape, const Decomposition& decomposition, Var x,
                           const std::vector<std::vector<TapeHead>>& part_heads,
                           const ChimeraConfig& config, const std::string& tag) {
  if (part_heads.size() != decomposition.parts.size()) {
    throw Error(ErrorCode::InvalidConfig, "one head list per part is required");
  }
  if (decomposition.parts.empty()) {
    throw Error(ErrorCode::InvalidConfig, "empty decomposition");
  }
  Var total;
  for (std::size_t p = 0; p < decomposition.parts.size(); ++p) {
    Var y = record_chimera_forward(tape, decomposition.parts[p].graph, x,
                                   part_heads[p], config,
                                   tag + "part" + std::to_string(p) + ".");
    total = p == 0 ? y : ad::add(total, y);
  }
  if (config.combine == Combine::Mean) {
    total = ad::scale(total, 1.0 / static_cast<double>(decomposition.parts.size()));
  }
  return total;
}

GradientMap backward(Tape& tape, Var output, const Matrix& dl_dy) {
  return tape.backward(output, dl_dy);
}

std::uint64_t backward_matmul_count(const Tape& tape) {
  if (tape.count_ops("resolvent") == 0) {
    throw Error(ErrorCode::NoInverseNode, "the tape holds no resolvent node");
  }
  return tape.resolvent_backward_matmuls();
}

GradientMap finite_difference_oracle(const ScalarFn& f, const ParamStore& params,
                                     double eps) {
  ParamStore work = params;
  GradientMap out;
  for (auto& [name, value] : work) {
    Matrix g(value.rows(), value.cols());
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value.data()[i];
      value.data()[i] = saved + eps;
      const double plus = f(work);
      value.data()[i] = saved - eps;
      const double minus = f(work);
      value.data()[i] = saved;
      g.data()[i] = (plus - minus) / (2.0 * eps);
    }
    out[name] = std::move(g);
  }
  return out;
}

double sum_of_squares(const Matrix& y) {
  double s = 0.0;
  for (double v : y.data()) s += v * v;
  return s;
}

Var sum_of_squares(Var y) { return ad::sum_squares(y); }

double mean_squared_error(const Matrix& y, const Matrix& target) {
  return sum_of_squares(subtract(y, target)) * (1.0 / static_cast<double>(y.size()));
}

Var mean_squared_error(Var y, const Matrix& target) {
  Var diff = ad::sub(y, y.tape().constant(target));
  return ad::scale(ad::sum_squares(diff), 1.0 / static_cast<double>(target.size()));
}

double readout_cross_entropy(const Matrix& y, const Matrix& readout,
                             const std::vector<std::size_t>& labels) {
  const Matrix logits = matmul(y, readout);
  if (labels.size() != logits.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "cross entropy: one label per row");
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto z = logits.row(i);
    if (labels[i] >= z.size()) throw Error(ErrorCode::IndexOutOfRange, "label out of range");
    const double zmax = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    for (double v : z) total += std::exp(v - zmax);
    loss += zmax + std::log(total) - z[labels[i]];
  }
  return loss / static_cast<double>(logits.rows());
}

Var readout_cross_entropy(Var y, Var readout, const std::vector<std::size_t>& labels) {
  return ad::softmax_cross_entropy(ad::matmul(y, readout), labels);
}

GradientComparison compare_gradients(const GradientMap& analytic,
                                     const GradientMap& numeric, double threshold) {
  GradientComparison cmp;
  for (const auto& [name, num] : numeric) {
    auto it = analytic.find(name);
    if (it == analytic.end()) {
      throw Error(ErrorCode::InvalidConfig, "no analytic gradient for '" + name + "'");
    }
    const Matrix& an = it->second;
    if (an.rows() != num.rows() || an.cols() != num.cols()) {
      throw Error(ErrorCode::ShapeMismatch, "gradient shape for '" + name + "'");
    }
    for (std::size_t i = 0; i < an.size(); ++i) {
      ++cmp.total;
      const double a = an.data()[i];
      const double b = num.data()[i];
      if (!(std::abs(a) > threshold)) continue;
      ++cmp.compared;
      const double rel = std::abs(a - b) / std::max(std::abs(a), std::abs(b));
      if (!(rel <= cmp.max_relative_error)) {
        cmp.max_relative_error = rel;
        cmp.worst_name = name;
        cmp.worst_index = i;
        cmp.worst_analytic = a;
        cmp.worst_numeric = b;
      }
    }
  }
  return cmp;
}

GradcheckReport gradcheck_heads(const Graph& graph, const Matrix& x,
                                const ParamStore& heads, const std::string& prefix,
                                const ChimeraConfig& config, const Matrix& target,
                                double eps, double threshold) {
  auto loss_of = [&](const Matrix& y) { return 0.5 * sum_of_squares(subtract(y, target)); };
  const ScalarFn f = [&](const ParamStore& store) {
    return loss_of(chimera_forward(graph, x, import_heads(store, prefix).at(0), config).y);
  };

  GradcheckReport report;
  Tape tape;
  register_params(tape, heads);
  Var y = record_chimera_forward(tape, graph, tape.constant(x), tape_heads(tape, prefix, 0),
                                 config);
  Var loss = ad::scale(ad::sum_squares(ad::sub(y, tape.constant(target))), 0.5);
  const GradientMap analytic = tape.backward(loss, Matrix(1, 1, 1.0));
  report.loss = loss.value()(0, 0);
  report.forward_mismatch =
      max_abs_diff(y.value(), chimera_forward(graph, x, import_heads(heads, prefix).at(0),
                                              config).y);
  report.replay_exact = tape.replay();
  if (tape.count_ops("resolvent") > 0) {
    report.resolvent_backward_matmuls = backward_matmul_count(tape);
  }
  report.comparison =
      compare_gradients(analytic, finite_difference_oracle(f, heads, eps), threshold);
  return report;
}

}  // namespace chimera
