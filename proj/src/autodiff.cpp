// Copyright 2026 The Chimera Authors.
// SPDX-License-Identifier: Apache-2.0

#include "chimera/autodiff.hpp"

#include <cmath>

#include "chimera/resolvent.hpp"

namespace chimera {

Tape& Var::tape() const {
  if (tape_ == nullptr) throw Error(ErrorCode::TapeEmpty, "unbound variable");
  return *tape_;
}

const Matrix& Var::value() const { return tape().value(id_); }

Var Tape::push(Node node) {
  detail::debug_check(node.value, node.op.c_str());
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Matrix value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::input(Matrix value, bool requires_grad) {
  Node n;
  n.op = "input";
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

Var Tape::parameter(const std::string& name, Matrix value) {
  if (auto it = params_.find(name); it != params_.end()) {
    return Var(this, it->second);
  }
  Node n;
  n.op = "parameter";
  n.value = std::move(value);
  n.requires_grad = true;
  Var v = push(std::move(n));
  params_[name] = v.id();
  return v;
}

bool Tape::has_parameter(const std::string& name) const {
  return params_.count(name) != 0;
}

Var Tape::parameter(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) {
    throw Error(ErrorCode::InvalidConfig, "no parameter named '" + name + "'");
  }
  return Var(const_cast<Tape*>(this), it->second);
}

Var Tape::record(std::string op, std::vector<Var> inputs, ForwardFn forward,
                 BackwardFn backward) {
  Node n;
  n.op = std::move(op);
  std::vector<const Matrix*> values;
  for (const Var& v : inputs) {
    if (&v.tape() != this) {
      throw Error(ErrorCode::InvalidConfig, "variable from another tape");
    }
    n.inputs.push_back(v.id());
    n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
    values.push_back(&nodes_[v.id()].value);
  }
  n.value = forward(values);
  n.forward = std::move(forward);
  n.backward = std::move(backward);
  return push(std::move(n));
}

void Tape::name(Var v, const std::string& name) { named_[name] = v.id(); }

std::size_t Tape::count_ops(const std::string& op) const {
  std::size_t n = 0;
  for (const auto& node : nodes_) n += node.op == op ? 1 : 0;
  return n;
}

GradientMap Tape::backward(Var output, const Matrix& seed) {
  if (nodes_.empty()) throw Error(ErrorCode::TapeEmpty, "nothing recorded");
  if (&output.tape() != this) {
    throw Error(ErrorCode::InvalidConfig, "output from another tape");
  }
  const Matrix& out_value = nodes_[output.id()].value;
  if (seed.rows() != out_value.rows() || seed.cols() != out_value.cols()) {
    throw Error(ErrorCode::ShapeMismatch,
                "seed " + detail::shape(seed.rows(), seed.cols()) + " for output " +
                    detail::shape(out_value.rows(), out_value.cols()));
  }
  for (auto& node : nodes_) node.grad = Matrix();
  resolvent_matmuls_ = 0;
  nodes_[output.id()].grad = seed;
  for (std::size_t id = output.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (node.grad.empty() || !node.backward || !node.requires_grad) continue;
    std::vector<const Matrix*> values;
    std::vector<Matrix*> grads;
    for (std::size_t in : node.inputs) {
      Node& src = nodes_[in];
      values.push_back(&src.value);
      if (src.requires_grad) {
        if (src.grad.empty()) src.grad = Matrix(src.value.rows(), src.value.cols());
        grads.push_back(&src.grad);
      } else {
        grads.push_back(nullptr);
      }
    }
    node.backward(node.grad, node.value, values, grads);
  }
  GradientMap out;
  auto grad_or_zero = [&](std::size_t id) {
    const Node& n = nodes_[id];
    return n.grad.empty() ? Matrix(n.value.rows(), n.value.cols()) : n.grad;
  };
  for (const auto& [name, id] : params_) out[name] = grad_or_zero(id);
  for (const auto& [name, id] : named_) out[name] = grad_or_zero(id);
  return out;
}

bool Tape::replay() const {
  std::vector<Matrix> values(nodes_.size());
  bool same = true;
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const Node& node = nodes_[id];
    if (!node.forward) {
      values[id] = node.value;
      continue;
    }
    std::vector<const Matrix*> inputs;
    for (std::size_t in : node.inputs) inputs.push_back(&values[in]);
    values[id] = node.forward(inputs);
    same = same && values[id] == node.value;
  }
  return same;
}

namespace ad {
namespace {

Matrix& acc(Matrix* g) { return *g; }

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorCode::ShapeMismatch,
                std::string(op) + ": " + detail::shape(a.rows(), a.cols()) +
                    " vs " + detail::shape(b.rows(), b.cols()));
  }
}

template <typename F, typename DF>
Var unary(Var a, const char* op, F f, DF df) {
  return a.tape().record(
      op, {a},
      [f](std::span<const Matrix* const> in) {
        Matrix out(in[0]->rows(), in[0]->cols());
        for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = f(in[0]->data()[i]);
        return out;
      },
      [df](const Matrix& g, const Matrix& y, std::span<const Matrix* const> in,
           std::span<Matrix* const> grads) {
        if (!grads[0]) return;
        auto gx = grads[0]->data();
        for (std::size_t i = 0; i < g.size(); ++i)
          gx[i] += g.data()[i] * df(in[0]->data()[i], y.data()[i]);
      });
}

}  // namespace

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) {
    throw Error(ErrorCode::ShapeMismatch,
                "matmul: " + detail::shape(a.rows(), a.cols()) + " * " +
                    detail::shape(b.rows(), b.cols()));
  }
  return a.tape().record(
      "matmul", {a, b},
      [](std::span<const Matrix* const> in) { return chimera::matmul(*in[0], *in[1]); },
      [](const Matrix& g, const Matrix&, std::span<const Matrix* const> in,
         std::span<Matrix* const> grads) {
        if (grads[0]) add_in_place(acc(grads[0]), chimera::matmul(g, chimera::transpose(*in[1])));
        if (grads[1]) add_in_place(acc(grads[1]), chimera::matmul(chimera::transpose(*in[0]), g));
      });
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  return a.tape().record(
      "add", {a, b},
      [](std::span<const Matrix* const> in) { return chimera::add(*in[0], *in[1]); },
      [](const Matrix& g, const Matrix&, std::span<const Matrix* const>,
         std::span<Matrix* const> grads) {
        for (Matrix* gx : grads)
          if (gx) add_in_place(*gx, g);
      });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  return a.tape().record(
      "sub", {a, b},
      [](std::span<const Matrix* const> in) { return subtract(*in[0], *in[1]); },
      [](const Matrix& g, const Matrix&, std::span<const Matrix* const>,
         std::span<Matrix* const> grads) {
        if (grads[0]) add_in_place(*grads[0], g);
        if (grads[1]) add_in_place(*grads[1], chimera::scale(g, -1.0));
      });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  return a.tape().record(
      "mul", {a, b},
      [](std::span<const Matrix* const> in) { return hadamard(*in[0], *in[1]); },
      [](const Matrix& g, const Matrix&, std::span<const Matrix* const> in,
         std::span<Matrix* const> grads) {
        if (grads[0]) add_in_place(*grads[0], hadamard(g, *in[1]));
        if (grads[1]) add_in_place(*grads[1], hadamard(g, *in[0]));
      });
}

Var div(Var a, Var b) {
  require_same_shape(a, b, "div");
  return a.tape().record(
      "div", {a, b},
      [](std::span<const Matrix* const> in) {
        return zip_with(*in[0], *in[1], [](double x, double y) { return x / y; }, "div");
      },
      [](const Matrix& g, const Matrix& out, std::span<const Matrix* const> in,
         std::span<Matrix* const> grads) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double inv = 1.0 / in[1]->data()[i];
          if (grads[0]) grads[0]->data()[i] += g.data()[i] * inv;
          if (grads[1]) grads[1]->data()[i] -= g.data()[i] * out.data()[i] * inv;
        }
      });
}

Var scale(Var a, double factor) {
  return a.tape().record(
      "scale", {a},
      [factor](std::span<const Matrix* const> in) { return chimera::scale(*in[0], factor); },
      [factor](const Matrix& g, const Matrix&, std::span<const Matrix* const>,
               std::span<Matrix* const> grads) {
        if (!grads[0]) return;
        for (std::size_t i = 0; i < g.size(); ++i) grads[0]->data()[i] += factor * g.data()[i];
      });
}

Var add_scalar(Var a, double offset) {
  return unary(a, "add_scalar", [offset](double x) { return x + offset; },
               [](double, double) { return 1.0; });
}

Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "add_row: row shape");
  }
  return a.tape().record(
      "add_row", {a, row},
      [](std::span<const Matrix* const> in) {
        Matrix out = *in[0];
        for (std::size_t i = 0; i < out.rows(); ++i)
          for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += (*in[1])(0, j);
        return out;
      },
      [](const Matrix& g, const Matrix&, std::span<const Matrix* const>,
         std::span<Matrix* const> grads) {
        if (grads[0]) add_in_place(*grads[0], g);
        if (grads[1])
          for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) (*grads[1])(0, j) += g(i, j);
      });
}

Var scale_rows(Var a, Var column) {
  if (column.cols() != 1 || column.rows() != a.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "scale_rows: column shape");
  }
  return a.tape().record(
      "scale_rows", {a, column},
      [](std::span<const Matrix* const> in) {
        Matrix out = *in[0];
        for (std::size_t i = 0; i < out.rows(); ++i)
          for (auto& v : out.row(i)) v *= (*in[1])(i, 0);
        return out;
      },
      [](const Matrix& g, const Matrix&, std::span<const Matrix* const> in,
         std::span<Matrix* const> grads) {
        for (std::size_t i = 0; i < g.rows(); ++i) {
          const double s = (*in[1])(i, 0);
          double dot = 0.0;
          for (std::size_t j = 0; j < g.cols(); ++j) {
            if (grads[0]) (*grads[0])(i, j) += g(i, j) * s;
            dot += g(i, j) * (*in[0])(i, j);
          }
          if (grads[1]) (*grads[1])(i, 0) += dot;
        }
      });
}

Var mul_scalar(Var a, Var scalar) {
  if (scalar.rows() != 1 || scalar.cols() != 1) {
    throw Error(ErrorCode::ShapeMismatch, "mul_scalar: scalar must be 1x1");
  }
  return a.tape().record(
      "mul_scalar", {a, scalar},
      [](std::span<const Matrix* const> in) {
        return chimera::scale(*in[0], (*in[1])(0, 0));
      },
      [](const Matrix& g, const Matrix&, std::span<const Matrix* const> in,
         std::span<Matrix* const> grads) {
        const double s = (*in[1])(0, 0);
        double dot = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (grads[0]) grads[0]->data()[i] += g.data()[i] * s;
          dot += g.data()[i] * in[0]->data()[i];
        }
        if (grads[1]) (*grads[1])(0, 0) += dot;
      });
}

Var exp(Var a) {
  return unary(a, "exp", [](double x) { return std::exp(x); },
               [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(a, "log", [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Var sqrt(Var a) {
  return unary(a, "sqrt", [](double x) { return std::sqrt(x); },
               [](double, double y) { return 0.5 / y; });
}

Var sigmoid(Var a) {
  return unary(a, "sigmoid", [](double x) { return chimera::sigmoid(x); },
               [](double, double y) { return y * (1.0 - y); });
}

Var swish(Var a) {
  return unary(a, "swish", [](double x) { return chimera::swish(x); },
               [](double x, double) {
                 const double s = chimera::sigmoid(x);
                 return s + x * s * (1.0 - s);
               });
}

Var softplus(Var a) {
  return unary(a, "softplus", [](double x) { return chimera::softplus(x); },
               [](double x, double) { return chimera::sigmoid(x); });
}

Var activate(Var a, Activation act) {
  switch (act) {
    case Activation::Swish: return swish(a);
    case Activation::Softplus: return softplus(a);
    case Activation::Identity: return a;
  }
  return a;
}

Var min_const(Var a, double bound) {
  return unary(a, "min_const", [bound](double x) { return std::min(x, bound); },
               [bound](double x, double) { return x < bound ? 1.0 : 0.0; });
}

Var max_const(Var a, double bound) {
  return unary(a, "max_const", [bound](double x) { return std::max(x, bound); },
               [bound](double x, double) { return x > bound ? 1.0 : 0.0; });
}

Var maximum(Var a, Var b) {
  require_same_shape(a, b, "maximum");
  return a.tape().record(
      "maximum", {a, b},
      [](std::span<const Matrix* const> in) {
        return zip_with(*in[0], *in[1], [](double x, double y) { return std::max(x, y); },
                        "maximum");
      },
      [](const Matrix& g, const Matrix&, std::span<const Matrix* const> in,
         std::span<Matrix* const> grads) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          // Ties go to the first argument, matching std::max.
          const bool first = !(in[0]->data()[i] < in[1]->data()[i]);
          Matrix* target = first ? grads[0] : grads[1];
          if (target) target->data()[i] += g.data()[i];
        }
      });
}

Var transpose(Var a) {
  return a.tape().record(
      "transpose", {a},
      [](std::span<const Matrix* const> in) { return chimera::transpose(*in[0]); },
      [](const Matrix& g, const Matrix&, std::span<const Matrix* const>,
         std::span<Matrix* const> grads) {
        if (grads[0]) add_in_place(*grads[0], chimera::transpose(g));
      });
}

Var gather_rows(Var a, std::vector<std::size_t> index) {
  for (std::size_t r : index)
    if (r >= a.rows()) throw Error(ErrorCode::IndexOutOfRange, "gather_rows index");
  auto idx = std::make_shared<const std::vector<std::size_t>>(std::move(index));
  return a.tape().record(
      "gather_rows", {a},
      [idx](std::span<const Matrix* const> in) {
        Matrix out(idx->size(), in[0]->cols());
        for (std::size_t k = 0; k < idx->size(); ++k) {
          const auto src = in[0]->row((*idx)[k]);
          std::copy(src.begin(), src.end(), out.row(k).begin());
        }
        return out;
      },
      [idx](const Matrix& g, const Matrix&, std::span<const Matrix* const>,
            std::span<Matrix* const> grads) {
        if (!grads[0]) return;
        for (std::size_t k = 0; k < idx->size(); ++k) {
          auto dst = grads[0]->row((*idx)[k]);
          const auto src = g.row(k);
          for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
        }
      });
}

Var scatter_add_rows(Var a, std::vector<std::size_t> index, std::size_t rows) {
  if (index.size() != a.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "scatter_add_rows: index length");
  }
  for (std::size_t r : index)
    if (r >= rows) throw Error(ErrorCode::IndexOutOfRange, "scatter_add_rows index");
  auto idx = std::make_shared<const std::vector<std::size_t>>(std::move(index));
  return a.tape().record(
      "scatter_add_rows", {a},
      [idx, rows](std::span<const Matrix* const> in) {
        Matrix out(rows, in[0]->cols());
        for (std::size_t k = 0; k < idx->size(); ++k) {
          auto dst = out.row((*idx)[k]);
          const auto src = in[0]->row(k);
          for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
        }
        return out;
      },
      [idx](const Matrix& g, const Matrix&, std::span<const Matrix* const>,
            std::span<Matrix* const> grads) {
        if (!grads[0]) return;
        for (std::size_t k = 0; k < idx->size(); ++k) {
          auto dst = grads[0]->row(k);
          const auto src = g.row((*idx)[k]);
          for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
        }
      });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.cols()) {
    throw Error(ErrorCode::IndexOutOfRange, "slice_cols range");
  }
  return a.tape().record(
      "slice_cols", {a},
      [begin, end](std::span<const Matrix* const> in) {
        Matrix out(in[0]->rows(), end - begin);
        for (std::size_t i = 0; i < out.rows(); ++i)
          for (std::size_t j = begin; j < end; ++j) out(i, j - begin) = (*in[0])(i, j);
        return out;
      },
      [begin](const Matrix& g, const Matrix&, std::span<const Matrix* const>,
              std::span<Matrix* const> grads) {
        if (!grads[0]) return;
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < g.cols(); ++j) (*grads[0])(i, begin + j) += g(i, j);
      });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "concat of nothing");
  for (const Var& p : parts)
    if (p.rows() != parts[0].rows())
      throw Error(ErrorCode::ShapeMismatch, "concat_cols: row counts differ");
  if (parts.size() == 1) return parts[0];
  return parts[0].tape().record(
      "concat_cols", parts,
      [](std::span<const Matrix* const> in) {
        std::size_t cols = 0;
        for (const Matrix* m : in) cols += m->cols();
        Matrix out(in[0]->rows(), cols);
        std::size_t c0 = 0;
        for (const Matrix* m : in) {
          for (std::size_t i = 0; i < m->rows(); ++i)
            for (std::size_t j = 0; j < m->cols(); ++j) out(i, c0 + j) = (*m)(i, j);
          c0 += m->cols();
        }
        return out;
      },
      [](const Matrix& g, const Matrix&, std::span<const Matrix* const> in,
         std::span<Matrix* const> grads) {
        std::size_t c0 = 0;
        for (std::size_t k = 0; k < in.size(); ++k) {
          if (grads[k])
            for (std::size_t i = 0; i < g.rows(); ++i)
              for (std::size_t j = 0; j < in[k]->cols(); ++j)
                (*grads[k])(i, j) += g(i, c0 + j);
          c0 += in[k]->cols();
        }
      });
}

Var neighbor_mean(Var a, std::shared_ptr<const NeighborMean> op) {
  return a.tape().record(
      "neighbor_mean", {a},
      [op](std::span<const Matrix* const> in) { return op->apply(*in[0]); },
      [op](const Matrix& g, const Matrix&, std::span<const Matrix* const>,
           std::span<Matrix* const> grads) {
        if (!grads[0]) return;
        for (std::size_t i = 0; i + 1 < op->row_begin.size(); ++i) {
          const double w = op->weight_of(i);
          const auto gi = g.row(i);
          for (std::size_t k = op->row_begin[i]; k < op->row_begin[i + 1]; ++k) {
            auto dst = grads[0]->row(op->cols[k]);
            for (std::size_t j = 0; j < gi.size(); ++j) dst[j] += w * gi[j];
          }
        }
      });
}

Var arcs_to_dense(Var weights, std::shared_ptr<const std::vector<Arc>> arcs,
                  std::size_t num_nodes) {
  if (weights.cols() != 1 || weights.rows() != arcs->size()) {
    throw Error(ErrorCode::ShapeMismatch, "arcs_to_dense: one weight per arc");
  }
  return weights.tape().record(
      "arcs_to_dense", {weights},
      [arcs, num_nodes](std::span<const Matrix* const> in) {
        Matrix a(num_nodes, num_nodes);
        for (std::size_t k = 0; k < arcs->size(); ++k)
          a((*arcs)[k].dst, (*arcs)[k].src) = (*in[0])(k, 0);
        return a;
      },
      [arcs](const Matrix& g, const Matrix&, std::span<const Matrix* const>,
             std::span<Matrix* const> grads) {
        if (!grads[0]) return;
        for (std::size_t k = 0; k < arcs->size(); ++k)
          (*grads[0])(k, 0) += g((*arcs)[k].dst, (*arcs)[k].src);
      });
}

Var resolvent(Var a) {
  if (a.rows() != a.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "resolvent of a non-square matrix");
  }
  Tape* tape = &a.tape();
  return tape->record(
      "resolvent", {a},
      [](std::span<const Matrix* const> in) { return inverse(identity_minus(*in[0])); },
      [tape](const Matrix& g, const Matrix& l, std::span<const Matrix* const>,
             std::span<Matrix* const> grads) {
        if (!grads[0]) return;
        MatmulCountScope counter;
        const Matrix lt = chimera::transpose(l);
        add_in_place(*grads[0], chimera::matmul(chimera::matmul(lt, g), lt));
        tape->add_resolvent_matmuls(counter.count());
      });
}

Var dag_recurrence(std::shared_ptr<const WeightedAdjacency> structure,
                   Var weights, Var c, Var b_bar, Var v) {
  if (!structure->plan) {
    throw Error(ErrorCode::NotADag, "recurrence needs a DAG plan");
  }
  const std::size_t n = structure->num_nodes;
  if (weights.cols() != 1 || weights.rows() != structure->arcs.size() ||
      c.rows() != n || b_bar.rows() != n || v.rows() != n ||
      c.cols() != b_bar.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "recurrence: input shapes");
  }
  // Hidden states of the latest forward evaluation, reused by backward.
  auto hidden = std::make_shared<Matrix>();
  return weights.tape().record(
      "dag_recurrence", {weights, c, b_bar, v},
      [structure, hidden](std::span<const Matrix* const> in) {
        const Matrix& c = *in[1];
        const Matrix& v = *in[3];
        *hidden = Matrix(c.rows(), c.cols() * v.cols());
        Matrix y(c.rows(), v.cols());
        dag_recurrence_kernel<double>(*structure->plan, structure->row_begin,
                                      structure->arcs, in[0]->data(), c, *in[2], v,
                                      y, hidden->data());
        return y;
      },
      [structure, hidden](const Matrix& gy, const Matrix&,
                          std::span<const Matrix* const> in,
                          std::span<Matrix* const> grads) {
        const Matrix& w = *in[0];
        const Matrix& c = *in[1];
        const Matrix& bb = *in[2];
        const Matrix& v = *in[3];
        const std::size_t d = c.cols();
        const std::size_t dv = v.cols();
        const std::size_t block = d * dv;
        const auto& arcs = structure->arcs;
        const auto& rb = structure->row_begin;
        Matrix gh(c.rows(), block);
        const auto& order = structure->plan->topo_order;
        for (std::size_t pos = order.size(); pos-- > 0;) {
          const std::size_t i = order[pos];
          const double* h = &(*hidden)(i, 0);
          double* ghi = &gh(i, 0);
          const auto gyi = gy.row(i);
          const auto ci = c.row(i);
          for (std::size_t r = 0; r < d; ++r) {
            double dc = 0.0;
            for (std::size_t s = 0; s < dv; ++s) {
              ghi[r * dv + s] += ci[r] * gyi[s];
              dc += h[r * dv + s] * gyi[s];
            }
            if (grads[1]) (*grads[1])(i, r) += dc;
          }
          for (std::size_t k = rb[i]; k < rb[i + 1]; ++k) {
            const std::size_t j = arcs[k].src;
            const double* hj = &(*hidden)(j, 0);
            double* ghj = &gh(j, 0);
            double dw = 0.0;
            for (std::size_t q = 0; q < block; ++q) {
              dw += ghi[q] * hj[q];
              ghj[q] += w(k, 0) * ghi[q];
            }
            if (grads[0]) (*grads[0])(k, 0) += dw;
          }
          const auto bi = bb.row(i);
          const auto vi = v.row(i);
          for (std::size_t r = 0; r < d; ++r) {
            for (std::size_t s = 0; s < dv; ++s) {
              const double g = ghi[r * dv + s];
              if (grads[2]) (*grads[2])(i, r) += g * vi[s];
              if (grads[3]) (*grads[3])(i, s) += g * bi[r];
            }
          }
        }
      });
}

Var layer_norm(Var x, Var gain, Var shift, double eps) {
  if (gain.rows() != 1 || gain.cols() != x.cols() || shift.rows() != 1 ||
      shift.cols() != x.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "layer_norm: gain/shift shape");
  }
  auto normalise = [eps](const Matrix& in, Matrix& xhat, std::vector<double>& inv_std) {
    const std::size_t n = in.cols();
    xhat = Matrix(in.rows(), n);
    inv_std.assign(in.rows(), 0.0);
    for (std::size_t i = 0; i < in.rows(); ++i) {
      double mu = 0.0;
      for (double v : in.row(i)) mu += v;
      mu /= static_cast<double>(n);
      double var = 0.0;
      for (double v : in.row(i)) var += (v - mu) * (v - mu);
      var /= static_cast<double>(n);
      inv_std[i] = 1.0 / std::sqrt(var + eps);
      for (std::size_t j = 0; j < n; ++j) xhat(i, j) = (in(i, j) - mu) * inv_std[i];
    }
  };
  return x.tape().record(
      "layer_norm", {x, gain, shift},
      [normalise](std::span<const Matrix* const> in) {
        Matrix xhat;
        std::vector<double> inv_std;
        normalise(*in[0], xhat, inv_std);
        for (std::size_t i = 0; i < xhat.rows(); ++i)
          for (std::size_t j = 0; j < xhat.cols(); ++j)
            xhat(i, j) = xhat(i, j) * (*in[1])(0, j) + (*in[2])(0, j);
        return xhat;
      },
      [normalise](const Matrix& g, const Matrix&, std::span<const Matrix* const> in,
                  std::span<Matrix* const> grads) {
        Matrix xhat;
        std::vector<double> inv_std;
        normalise(*in[0], xhat, inv_std);
        const std::size_t n = xhat.cols();
        for (std::size_t i = 0; i < xhat.rows(); ++i) {
          double mean_g = 0.0;
          double mean_gx = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double gh = g(i, j) * (*in[1])(0, j);
            mean_g += gh;
            mean_gx += gh * xhat(i, j);
            if (grads[1]) (*grads[1])(0, j) += g(i, j) * xhat(i, j);
            if (grads[2]) (*grads[2])(0, j) += g(i, j);
          }
          mean_g /= static_cast<double>(n);
          mean_gx /= static_cast<double>(n);
          if (grads[0])
            for (std::size_t j = 0; j < n; ++j) {
              const double gh = g(i, j) * (*in[1])(0, j);
              (*grads[0])(i, j) += inv_std[i] * (gh - mean_g - xhat(i, j) * mean_gx);
            }
        }
      });
}

Var sum(Var a) {
  return a.tape().record(
      "sum", {a},
      [](std::span<const Matrix* const> in) {
        double s = 0.0;
        for (double v : in[0]->data()) s += v;
        return Matrix(1, 1, s);
      },
      [](const Matrix& g, const Matrix&, std::span<const Matrix* const>,
         std::span<Matrix* const> grads) {
        if (!grads[0]) return;
        for (auto& v : grads[0]->data()) v += g(0, 0);
      });
}

Var sum_squares(Var a) {
  return a.tape().record(
      "sum_squares", {a},
      [](std::span<const Matrix* const> in) {
        double s = 0.0;
        for (double v : in[0]->data()) s += v * v;
        return Matrix(1, 1, s);
      },
      [](const Matrix& g, const Matrix&, std::span<const Matrix* const> in,
         std::span<Matrix* const> grads) {
        if (!grads[0]) return;
        for (std::size_t i = 0; i < in[0]->size(); ++i)
          grads[0]->data()[i] += 2.0 * g(0, 0) * in[0]->data()[i];
      });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var softmax_cross_entropy(Var logits, std::vector<std::size_t> labels) {
  if (labels.size() != logits.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "cross entropy: one label per row");
  }
  for (std::size_t l : labels)
    if (l >= logits.cols()) throw Error(ErrorCode::IndexOutOfRange, "label out of range");
  auto lab = std::make_shared<const std::vector<std::size_t>>(std::move(labels));
  auto softmax_row = [](std::span<const double> z, std::vector<double>& p) {
    const double zmax = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    p.resize(z.size());
    for (std::size_t j = 0; j < z.size(); ++j) {
      p[j] = std::exp(z[j] - zmax);
      total += p[j];
    }
    for (double& v : p) v /= total;
    return zmax + std::log(total);
  };
  return logits.tape().record(
      "softmax_cross_entropy", {logits},
      [lab, softmax_row](std::span<const Matrix* const> in) {
        double loss = 0.0;
        std::vector<double> p;
        for (std::size_t i = 0; i < in[0]->rows(); ++i) {
          const double lse = softmax_row(in[0]->row(i), p);
          loss += lse - (*in[0])(i, (*lab)[i]);
        }
        return Matrix(1, 1, loss / static_cast<double>(in[0]->rows()));
      },
      [lab, softmax_row](const Matrix& g, const Matrix&,
                         std::span<const Matrix* const> in,
                         std::span<Matrix* const> grads) {
        if (!grads[0]) return;
        const double w = g(0, 0) / static_cast<double>(in[0]->rows());
        std::vector<double> p;
        for (std::size_t i = 0; i < in[0]->rows(); ++i) {
          softmax_row(in[0]->row(i), p);
          for (std::size_t j = 0; j < p.size(); ++j)
            (*grads[0])(i, j) += w * (p[j] - (j == (*lab)[i] ? 1.0 : 0.0));
        }
      });
}

}  // namespace ad
}  // namespace chimera
