// Copyright 2026 The Chimera Authors.
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "chimera/linalg.hpp"
#include "support.hpp"

using namespace chimera;
using chimera::testing::naive_matmul;
using chimera::testing::random_matrix;

TEST_CASE("matmul basics") {
  Matrix x{{1, 2, 3}, {4, 5, 6}, {7, 8, 9}};
  CHECK(matmul(Matrix::identity(3), x) == x);
  CHECK(matmul(Matrix{{2.0}}, Matrix{{3.0}})(0, 0) == 6.0);
  CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), Error);
}

TEST_CASE("matmul matches the naive triple loop") {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    const Matrix a = random_matrix(5, 5, rng);
    const Matrix b = random_matrix(5, 5, rng);
    CHECK(max_abs_diff(matmul(a, b), naive_matmul(a, b)) < 1e-13);
  }
  // Shapes crossing the 64-wide k block.
  const Matrix a = random_matrix(7, 150, rng);
  const Matrix b = random_matrix(150, 9, rng);
  CHECK(max_abs_diff(matmul(a, b), naive_matmul(a, b)) < 1e-12);
}

TEST_CASE("matmul is associative on random triples") {
  std::mt19937_64 rng(12);
  for (int rep = 0; rep < 20; ++rep) {
    const Matrix a = random_matrix(6, 4, rng);
    const Matrix b = random_matrix(4, 7, rng);
    const Matrix c = random_matrix(7, 3, rng);
    CHECK(relative_error(matmul(matmul(a, b), c), matmul(a, matmul(b, c))) < 1e-10);
  }
}

TEST_CASE("matmul counter") {
  MatmulCountScope scope;
  matmul(Matrix::identity(2), Matrix::identity(2));
  matmul(Matrix::identity(2), Matrix::identity(2));
  CHECK(scope.count() == 2);
}

TEST_CASE("construction rejects non-finite values and bad lengths") {
  CHECK_THROWS_AS(Matrix(1, 1, std::vector<double>{std::nan("")}), Error);
  CHECK_THROWS_AS(Matrix(2, 2, std::vector<double>{1.0}), Error);
  try {
    Matrix(1, 1, std::vector<double>{INFINITY});
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonFinite);
  }
}

TEST_CASE("inverse") {
  CHECK(inverse(Matrix::identity(4)) == Matrix::identity(4));
  const Matrix d = inverse(Matrix{{2, 0}, {0, 4}});
  CHECK(d(0, 0) == 0.5);
  CHECK(d(1, 1) == 0.25);
  CHECK(d(0, 1) == 0.0);

  std::mt19937_64 rng(13);
  for (int rep = 0; rep < 10; ++rep) {
    Matrix a = random_matrix(8, 8, rng);
    for (std::size_t i = 0; i < 8; ++i) a(i, i) += 8.0;  // diagonally dominant
    const Matrix x = inverse(a);
    CHECK(max_abs_diff(matmul(a, x), Matrix::identity(8)) < 1e-10);
    CHECK(relative_error(inverse(x), a) < 1e-8);
    CHECK(max_abs_diff(x, chimera::testing::gauss_jordan_inverse(a)) < 1e-12);
  }
}

TEST_CASE("inverse needs pivoting and reports singular matrices") {
  const Matrix swap{{0, 1}, {1, 0}};
  CHECK(inverse(swap) == swap);
  try {
    inverse(Matrix{{1, 2}, {2, 4}});
    FAIL("expected Singular");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Singular);
  }
  CHECK_THROWS_AS(inverse(Matrix(2, 3)), Error);
}

TEST_CASE("lower triangular solve") {
  const Matrix b{{1, 2}, {3, 4}};
  CHECK(solve_lower_triangular(Matrix::identity(2), b) == b);

  const double a = 0.3;
  const Matrix x = solve_lower_triangular(Matrix{{1, 0}, {-a, 1}}, Matrix{{1}, {0}});
  CHECK(x(0, 0) == 1.0);
  CHECK(x(1, 0) == doctest::Approx(a).epsilon(1e-15));

  try {
    solve_lower_triangular(Matrix{{1, 0}, {1, 0}}, b);
    FAIL("expected ZeroDiagonal");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ZeroDiagonal);
  }
}

TEST_CASE("lower triangular solve matches the dense inverse, with and without sparsity") {
  std::mt19937_64 rng(14);
  std::bernoulli_distribution keep(0.3);
  for (int rep = 0; rep < 20; ++rep) {
    Matrix l = Matrix::identity(10);
    for (std::size_t i = 0; i < 10; ++i)
      for (std::size_t j = 0; j < i; ++j)
        if (keep(rng)) l(i, j) = random_matrix(1, 1, rng)(0, 0);
    const Matrix b = random_matrix(10, 3, rng);
    const Matrix dense = matmul(inverse(l), b);
    CHECK(max_abs_diff(solve_lower_triangular(l, b), dense) < 1e-12);
    const LowerSparsity s = LowerSparsity::from_matrix(l);
    CHECK(max_abs_diff(solve_lower_triangular(l, b, &s), dense) < 1e-12);
  }
}

TEST_CASE("hadamard, power and norms") {
  std::mt19937_64 rng(15);
  const Matrix a = random_matrix(4, 4, rng);
  CHECK(hadamard(a, Matrix(4, 4, 1.0)) == a);
  CHECK(matrix_power(a, 0) == Matrix::identity(4));
  CHECK(matrix_power(a, 1) == a);
  CHECK(max_abs_diff(matrix_power(a, 5),
                     naive_matmul(naive_matmul(naive_matmul(naive_matmul(a, a), a), a), a)) <
        1e-13);

  Matrix strict(6, 6);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < i; ++j) strict(i, j) = 0.5 + 0.1 * static_cast<double>(i + j);
  CHECK(matrix_power(strict, 6) == Matrix(6, 6));

  CHECK(max_row_abs_sum(Matrix{{1, -2}, {0.5, 0.25}}) == 3.0);
  CHECK_THROWS_AS(hadamard(Matrix(2, 2), Matrix(2, 3)), Error);
}
