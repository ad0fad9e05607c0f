// Copyright 2026 The Chimera Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Helpers shared by the test binaries: seeded random instances and slow
// reference implementations.

#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "chimera/graph.hpp"
#include "chimera/linalg.hpp"
#include "chimera/params.hpp"
#include "generators.hpp"

namespace chimera::testing {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                            double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, cols);
  for (auto& v : m.data()) v = u(rng);
  return m;
}

inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

// Gauss-Jordan without pivoting shortcuts: an inverse independent of the LU
// code path, for well-conditioned inputs.
inline Matrix gauss_jordan_inverse(Matrix a) {
  const std::size_t n = a.rows();
  Matrix inv = Matrix::identity(n);
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a(r, c)) > std::abs(a(p, c))) p = r;
    for (std::size_t j = 0; j < n; ++j) {
      std::swap(a(c, j), a(p, j));
      std::swap(inv(c, j), inv(p, j));
    }
    const double d = a(c, c);
    for (std::size_t j = 0; j < n; ++j) {
      a(c, j) /= d;
      inv(c, j) /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = a(r, c);
      for (std::size_t j = 0; j < n; ++j) {
        a(r, j) -= f * a(c, j);
        inv(r, j) -= f * inv(c, j);
      }
    }
  }
  return inv;
}

// Plain running sum of powers, no Horner and no squaring.
inline Matrix power_sum(const Matrix& a, std::size_t k) {
  Matrix sum = Matrix::identity(a.rows());
  Matrix p = Matrix::identity(a.rows());
  for (std::size_t i = 1; i <= k; ++i) {
    p = naive_matmul(p, a);
    sum = add(sum, p);
  }
  return sum;
}

inline std::vector<double> random_weights(std::size_t n, std::mt19937_64& rng,
                                          double lo = 0.05, double hi = 0.95) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> w(n);
  for (auto& v : w) v = u(rng);
  return w;
}

// Adjacency wrapper around explicit arc weights (regime tag only).
inline WeightedAdjacency adjacency_from_weights(const Graph& g, std::vector<double> w,
                                                Regime regime = Regime::General) {
  WeightedAdjacency adj;
  adj.num_nodes = g.num_nodes();
  adj.regime = regime;
  adj.arcs = g.arcs();
  adj.weights = std::move(w);
  adj.row_begin.assign(g.num_nodes() + 1, 0);
  for (const Arc& a : adj.arcs) ++adj.row_begin[a.dst + 1];
  for (std::size_t i = 0; i < g.num_nodes(); ++i) adj.row_begin[i + 1] += adj.row_begin[i];
  if (g.directed()) {
    try {
      adj.plan = plan_dag(g);
    } catch (const CycleError&) {
    }
  }
  return adj;
}

inline SsmParams random_ssm(std::size_t t, std::size_t d, std::size_t dv,
                            std::size_t edges, std::mt19937_64& rng) {
  SsmParams p;
  p.b = random_matrix(t, d, rng);
  p.c = random_matrix(t, d, rng);
  p.v = random_matrix(t, dv, rng);
  std::uniform_real_distribution<double> pos(0.05, 2.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < t; ++i) {
    p.delta.push_back(pos(rng));
    p.psi.push_back(normal(rng));
  }
  for (std::size_t e = 0; e < edges; ++e) p.edge_delta.push_back(pos(rng));
  return p;
}

}  // namespace chimera::testing
