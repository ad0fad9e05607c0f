// Copyright 2026 The Chimera Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Small dense linear algebra: row-major matrices, a cache-blocked product with
// a fixed summation order, LU inversion with partial pivoting, and forward
// substitution for (optionally sparse) lower-triangular systems.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "chimera/error.hpp"

namespace chimera {

template <typename T>
class BasicMatrix {
 public:
  using value_type = T;

  BasicMatrix() = default;

  BasicMatrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  // Takes ownership of row-major data; rejects NaN/Inf.
  BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw Error(ErrorCode::ShapeMismatch,
                  "matrix data length " + std::to_string(data_.size()) +
                      " does not match " + std::to_string(rows_) + "x" +
                      std::to_string(cols_));
    }
    require_finite("construction");
  }

  BasicMatrix(std::initializer_list<std::initializer_list<T>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& row : rows) {
      if (row.size() != cols_) {
        throw Error(ErrorCode::ShapeMismatch, "ragged matrix literal");
      }
      data_.insert(data_.end(), row.begin(), row.end());
    }
    require_finite("construction");
  }

  static BasicMatrix identity(std::size_t n) {
    BasicMatrix out(n, n);
    for (std::size_t i = 0; i < n; ++i) out(i, i) = T{1};
    return out;
  }

  static BasicMatrix column(std::span<const T> values) {
    return BasicMatrix(values.size(), 1,
                       std::vector<T>(values.begin(), values.end()));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  bool is_square() const noexcept { return rows_ == cols_; }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](T v) { return std::isfinite(v); });
  }

  void require_finite(const char* where) const {
    if (!all_finite()) {
      throw Error(ErrorCode::NonFinite,
                  std::string("non-finite matrix entry after ") + where);
    }
  }

  template <typename U>
  BasicMatrix<U> cast() const {
    BasicMatrix<U> out(rows_, cols_);
    for (std::size_t i = 0; i < data_.size(); ++i) {
      out.data()[i] = static_cast<U>(data_[i]);
    }
    return out;
  }

  friend bool operator==(const BasicMatrix& a, const BasicMatrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = BasicMatrix<double>;
using MatrixF = BasicMatrix<float>;

// Per-thread count of matmul() calls. Benchmarks and the squaring path read
// deltas of this counter; it is never reset implicitly.
inline std::uint64_t& matmul_counter() {
  thread_local std::uint64_t count = 0;
  return count;
}

// Counts matmul() calls made on this thread while the scope is alive.
class MatmulCountScope {
 public:
  MatmulCountScope() : start_(matmul_counter()) {}
  std::uint64_t count() const { return matmul_counter() - start_; }

 private:
  std::uint64_t start_;
};

namespace detail {

template <typename T>
inline void debug_check(const BasicMatrix<T>& m, const char* where) {
#ifndef NDEBUG
  m.require_finite(where);
#else
  (void)m;
  (void)where;
#endif
}

inline void require(bool ok, ErrorCode code, const std::string& what) {
  if (!ok) throw Error(code, what);
}

inline std::string shape(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace detail

template <typename T>
BasicMatrix<T> matmul(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  detail::require(a.cols() == b.rows(), ErrorCode::ShapeMismatch,
                  "matmul: " + detail::shape(a.rows(), a.cols()) + " * " +
                      detail::shape(b.rows(), b.cols()));
  ++matmul_counter();
  const std::size_t n = a.rows();
  const std::size_t m = a.cols();
  const std::size_t p = b.cols();
  BasicMatrix<T> c(n, p);
  // i-k-j order inside k-blocks taken in ascending order: every output entry
  // accumulates its k terms in increasing k.
  constexpr std::size_t kBlock = 64;
  for (std::size_t k0 = 0; k0 < m; k0 += kBlock) {
    const std::size_t k1 = std::min(m, k0 + kBlock);
    for (std::size_t i = 0; i < n; ++i) {
      T* crow = c.row(i).data();
      const T* arow = a.row(i).data();
      for (std::size_t k = k0; k < k1; ++k) {
        const T aik = arow[k];
        if (aik == T{0}) continue;
        const T* brow = b.row(k).data();
        for (std::size_t j = 0; j < p; ++j) crow[j] += aik * brow[j];
      }
    }
  }
  detail::debug_check(c, "matmul");
  return c;
}

template <typename T>
BasicMatrix<T> transpose(const BasicMatrix<T>& a) {
  BasicMatrix<T> out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

template <typename T, typename Op>
BasicMatrix<T> zip_with(const BasicMatrix<T>& a, const BasicMatrix<T>& b,
                        Op op, const char* name) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(),
                  ErrorCode::ShapeMismatch,
                  std::string(name) + ": " + detail::shape(a.rows(), a.cols()) +
                      " vs " + detail::shape(b.rows(), b.cols()));
  BasicMatrix<T> out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i)
    out.data()[i] = op(a.data()[i], b.data()[i]);
  detail::debug_check(out, name);
  return out;
}

template <typename T>
BasicMatrix<T> add(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  return zip_with(a, b, [](T x, T y) { return x + y; }, "add");
}

template <typename T>
BasicMatrix<T> subtract(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  return zip_with(a, b, [](T x, T y) { return x - y; }, "subtract");
}

template <typename T>
BasicMatrix<T> hadamard(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  return zip_with(a, b, [](T x, T y) { return x * y; }, "hadamard");
}

template <typename T>
BasicMatrix<T> scale(const BasicMatrix<T>& a, T factor) {
  BasicMatrix<T> out = a;
  for (auto& v : out.data()) v *= factor;
  return out;
}

template <typename T>
void add_in_place(BasicMatrix<T>& acc, const BasicMatrix<T>& b) {
  detail::require(acc.rows() == b.rows() && acc.cols() == b.cols(),
                  ErrorCode::ShapeMismatch, "add_in_place");
  for (std::size_t i = 0; i < acc.size(); ++i) acc.data()[i] += b.data()[i];
}

// (I + A) without touching A.
template <typename T>
BasicMatrix<T> identity_plus(const BasicMatrix<T>& a) {
  detail::require(a.is_square(), ErrorCode::ShapeMismatch, "identity_plus");
  BasicMatrix<T> out = a;
  for (std::size_t i = 0; i < a.rows(); ++i) out(i, i) += T{1};
  return out;
}

// (I - A).
template <typename T>
BasicMatrix<T> identity_minus(const BasicMatrix<T>& a) {
  detail::require(a.is_square(), ErrorCode::ShapeMismatch, "identity_minus");
  BasicMatrix<T> out = scale(a, T{-1});
  for (std::size_t i = 0; i < a.rows(); ++i) out(i, i) += T{1};
  return out;
}

// A^k by repeated squaring; A^0 = I.
template <typename T>
BasicMatrix<T> matrix_power(const BasicMatrix<T>& a, std::size_t k) {
  detail::require(a.is_square(), ErrorCode::ShapeMismatch,
                  "matrix_power needs a square matrix");
  BasicMatrix<T> result = BasicMatrix<T>::identity(a.rows());
  BasicMatrix<T> base = a;
  bool result_is_identity = true;
  while (k > 0) {
    if (k & 1U) {
      result = result_is_identity ? base : matmul(result, base);
      result_is_identity = false;
    }
    k >>= 1U;
    if (k > 0) base = matmul(base, base);
  }
  return result;
}

// Induced infinity norm: max_i sum_j |a_ij|.
template <typename T>
T max_row_abs_sum(const BasicMatrix<T>& a) {
  T best{0};
  for (std::size_t i = 0; i < a.rows(); ++i) {
    T s{0};
    for (T v : a.row(i)) s += std::abs(v);
    best = std::max(best, s);
  }
  return best;
}

template <typename T>
T max_abs(const BasicMatrix<T>& a) {
  T best{0};
  for (T v : a.data()) best = std::max(best, std::abs(v));
  return best;
}

template <typename T>
T max_abs_diff(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(),
                  ErrorCode::ShapeMismatch, "max_abs_diff");
  T best{0};
  for (std::size_t i = 0; i < a.size(); ++i)
    best = std::max(best, std::abs(a.data()[i] - b.data()[i]));
  return best;
}

// max|a-b| / max(max|b|, tiny); the relative error used by the cross-checks.
template <typename T>
T relative_error(const BasicMatrix<T>& a, const BasicMatrix<T>& reference) {
  const T scale_ref = std::max(max_abs(reference), T{1e-300});
  return max_abs_diff(a, reference) / scale_ref;
}

inline constexpr double kSingularPivot = 1e-12;

// LU factorization with partial pivoting, PA = LU, stored compactly.
template <typename T>
class LuDecomposition {
 public:
  explicit LuDecomposition(BasicMatrix<T> a) : lu_(std::move(a)) {
    detail::require(lu_.is_square(), ErrorCode::ShapeMismatch,
                    "LU needs a square matrix, got " +
                        detail::shape(lu_.rows(), lu_.cols()));
    const std::size_t n = lu_.rows();
    perm_.resize(n);
    for (std::size_t i = 0; i < n; ++i) perm_[i] = i;
    for (std::size_t k = 0; k < n; ++k) {
      std::size_t pivot = k;
      T best = std::abs(lu_(k, k));
      for (std::size_t i = k + 1; i < n; ++i) {
        if (std::abs(lu_(i, k)) > best) {
          best = std::abs(lu_(i, k));
          pivot = i;
        }
      }
      if (!(static_cast<double>(best) >= kSingularPivot)) {
        throw Error(ErrorCode::Singular,
                    "matrix is singular: pivot " + std::to_string(best) +
                        " at column " + std::to_string(k));
      }
      if (pivot != k) {
        std::swap_ranges(lu_.row(k).begin(), lu_.row(k).end(),
                         lu_.row(pivot).begin());
        std::swap(perm_[k], perm_[pivot]);
      }
      const T inv_pivot = T{1} / lu_(k, k);
      for (std::size_t i = k + 1; i < n; ++i) {
        const T factor = lu_(i, k) * inv_pivot;
        lu_(i, k) = factor;
        if (factor == T{0}) continue;
        for (std::size_t j = k + 1; j < n; ++j) lu_(i, j) -= factor * lu_(k, j);
      }
    }
  }

  // Solves A X = B.
  BasicMatrix<T> solve(const BasicMatrix<T>& b) const {
    const std::size_t n = lu_.rows();
    detail::require(b.rows() == n, ErrorCode::ShapeMismatch, "LU solve");
    BasicMatrix<T> x(n, b.cols());
    for (std::size_t i = 0; i < n; ++i) {
      std::copy(b.row(perm_[i]).begin(), b.row(perm_[i]).end(),
                x.row(i).begin());
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < i; ++k) {
        const T f = lu_(i, k);
        if (f == T{0}) continue;
        for (std::size_t j = 0; j < x.cols(); ++j) x(i, j) -= f * x(k, j);
      }
    for (std::size_t i = n; i-- > 0;) {
      for (std::size_t k = i + 1; k < n; ++k) {
        const T f = lu_(i, k);
        if (f == T{0}) continue;
        for (std::size_t j = 0; j < x.cols(); ++j) x(i, j) -= f * x(k, j);
      }
      const T inv = T{1} / lu_(i, i);
      for (std::size_t j = 0; j < x.cols(); ++j) x(i, j) *= inv;
    }
    return x;
  }

 private:
  BasicMatrix<T> lu_;
  std::vector<std::size_t> perm_;
};

template <typename T>
BasicMatrix<T> inverse(const BasicMatrix<T>& a) {
  LuDecomposition<T> lu(a);
  auto out = lu.solve(BasicMatrix<T>::identity(a.rows()));
  detail::debug_check(out, "inverse");
  return out;
}

// Column-compressed strictly-lower pattern of a lower-triangular matrix:
// below[j] lists the rows i > j with L(i, j) != 0.
struct LowerSparsity {
  std::vector<std::vector<std::size_t>> below;

  template <typename T>
  static LowerSparsity from_matrix(const BasicMatrix<T>& l) {
    LowerSparsity s;
    s.below.resize(l.cols());
    for (std::size_t j = 0; j < l.cols(); ++j)
      for (std::size_t i = j + 1; i < l.rows(); ++i)
        if (l(i, j) != T{0}) s.below[j].push_back(i);
    return s;
  }
};

// Solves L X = B by column-oriented forward substitution. With a sparsity
// descriptor each right-hand side costs O(nnz(L)); without one, O(n^2).
template <typename T>
BasicMatrix<T> solve_lower_triangular(const BasicMatrix<T>& l,
                                      const BasicMatrix<T>& b,
                                      const LowerSparsity* sparsity = nullptr) {
  detail::require(l.is_square() && b.rows() == l.rows(),
                  ErrorCode::ShapeMismatch,
                  "solve_lower_triangular: L " + detail::shape(l.rows(), l.cols()) +
                      ", B " + detail::shape(b.rows(), b.cols()));
  const std::size_t n = l.rows();
  if (sparsity != nullptr && sparsity->below.size() != n) {
    throw Error(ErrorCode::ShapeMismatch, "sparsity descriptor size");
  }
  BasicMatrix<T> x = b;
  const std::size_t m = b.cols();
  for (std::size_t j = 0; j < n; ++j) {
    const T diag = l(j, j);
    if (diag == T{0}) {
      throw Error(ErrorCode::ZeroDiagonal,
                  "zero diagonal at row " + std::to_string(j));
    }
    auto xj = x.row(j);
    for (std::size_t c = 0; c < m; ++c) xj[c] /= diag;
    auto eliminate = [&](std::size_t i) {
      const T lij = l(i, j);
      auto xi = x.row(i);
      for (std::size_t c = 0; c < m; ++c) xi[c] -= lij * xj[c];
    };
    if (sparsity != nullptr) {
      for (std::size_t i : sparsity->below[j]) eliminate(i);
    } else {
      for (std::size_t i = j + 1; i < n; ++i)
        if (l(i, j) != T{0}) eliminate(i);
    }
  }
  detail::debug_check(x, "solve_lower_triangular");
  return x;
}

}  // namespace chimera
