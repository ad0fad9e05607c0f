// Copyright 2026 The Chimera Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over matrix-valued operations. Every node
// keeps its forward rule so the whole tape can be re-evaluated and compared
// against the recorded values.

#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "chimera/linalg.hpp"
#include "chimera/params.hpp"

namespace chimera {

class Tape;

// Handle to a tape node. Cheap to copy; valid while its tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const;
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }
  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

using ForwardFn = std::function<Matrix(std::span<const Matrix* const> inputs)>;
// Accumulates into input_grads[k] (nullptr when input k needs no gradient).
using BackwardFn = std::function<void(const Matrix& grad_out, const Matrix& value,
                                      std::span<const Matrix* const> inputs,
                                      std::span<Matrix* const> input_grads)>;

using GradientMap = std::map<std::string, Matrix>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  Var constant(Matrix value);
  Var input(Matrix value, bool requires_grad);
  // Registers a named parameter; a second call with the same name returns the
  // existing node, which is how shared weights are expressed.
  Var parameter(const std::string& name, Matrix value);
  bool has_parameter(const std::string& name) const;
  Var parameter(const std::string& name) const;

  Var record(std::string op, std::vector<Var> inputs, ForwardFn forward,
             BackwardFn backward);

  // Exposes an intermediate in the gradient map under `name`.
  void name(Var v, const std::string& name);

  // Seeds d(output) = seed and propagates to every node. Gradients of the
  // previous pass are discarded first. Returns the gradients of all
  // parameters (zero when unused) and of all named intermediates.
  GradientMap backward(Var output, const Matrix& seed);

  // Re-runs every recorded forward rule from the leaves and reports whether
  // each value is reproduced bit for bit. Recorded values are left as is.
  bool replay() const;

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  // Gradient from the last backward pass; empty if it never reached the node.
  const Matrix& grad(Var v) const { return nodes_[v.id()].grad; }
  const std::string& op(std::size_t id) const { return nodes_[id].op; }
  std::size_t size() const noexcept { return nodes_.size(); }
  std::size_t count_ops(const std::string& op) const;
  const std::map<std::string, std::size_t>& parameters() const { return params_; }

  // Matmuls executed inside resolvent-node backward rules in the last pass.
  std::uint64_t resolvent_backward_matmuls() const { return resolvent_matmuls_; }
  void add_resolvent_matmuls(std::uint64_t n) { resolvent_matmuls_ += n; }

 private:
  struct Node {
    std::string op;
    std::vector<std::size_t> inputs;
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    ForwardFn forward;
    BackwardFn backward;
  };

  Var push(Node node);

  // deque: references to values stay valid while nodes are appended.
  std::deque<Node> nodes_;
  std::map<std::string, std::size_t> params_;
  std::map<std::string, std::size_t> named_;
  std::uint64_t resolvent_matmuls_ = 0;
};

namespace ad {

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // Hadamard
Var div(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
Var add_row(Var a, Var row);        // a + 1 row^T, row is 1 x cols
Var scale_rows(Var a, Var column);  // row i of a times column(i, 0)
Var mul_scalar(Var a, Var scalar);  // scalar is 1 x 1
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var sigmoid(Var a);
Var swish(Var a);
Var softplus(Var a);
Var activate(Var a, Activation act);
// Clamps; at the kink the derivative of the interior side is used.
Var min_const(Var a, double bound);
Var max_const(Var a, double bound);
Var maximum(Var a, Var b);
Var transpose(Var a);
Var gather_rows(Var a, std::vector<std::size_t> index);
Var scatter_add_rows(Var a, std::vector<std::size_t> index, std::size_t rows);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var concat_cols(const std::vector<Var>& parts);
Var neighbor_mean(Var a, std::shared_ptr<const NeighborMean> op);
// Dense T x T matrix with A(dst, src) = weights(k) for arc k.
Var arcs_to_dense(Var weights, std::shared_ptr<const std::vector<Arc>> arcs,
                  std::size_t num_nodes);
// (I - A)^-1; backward uses the cached inverse: grad_A = L^T grad_L L^T.
Var resolvent(Var a);
// Linear-time recurrence over the DAG of `structure` with arc weights given
// by `weights` (|arcs| x 1).
Var dag_recurrence(std::shared_ptr<const WeightedAdjacency> structure,
                   Var weights, Var c, Var b_bar, Var v);
Var layer_norm(Var x, Var gain, Var shift, double eps = 1e-5);
Var sum(Var a);          // 1 x 1
Var sum_squares(Var a);  // 1 x 1
Var mean(Var a);         // 1 x 1
// Mean over rows of -log softmax(logits_i)[labels_i].
Var softmax_cross_entropy(Var logits, std::vector<std::size_t> labels);

}  // namespace ad

}  // namespace chimera
