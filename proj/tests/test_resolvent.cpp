// Copyright 2026 The Chimera Authors.
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "chimera/resolvent.hpp"
#include "support.hpp"

using namespace chimera;
using chimera::testing::adjacency_from_weights;
using chimera::testing::gauss_jordan_inverse;
using chimera::testing::power_sum;
using chimera::testing::random_matrix;
using chimera::testing::random_ssm;
using chimera::testing::random_weights;

namespace {

Matrix naive_mix(const Matrix& l, const Matrix& c, const Matrix& b, const Matrix& v) {
  const std::size_t t = l.rows();
  Matrix y(t, v.cols());
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < t; ++j) {
      double cb = 0.0;
      for (std::size_t r = 0; r < c.cols(); ++r) cb += c(i, r) * b(j, r);
      for (std::size_t s = 0; s < v.cols(); ++s) y(i, s) += l(i, j) * cb * v(j, s);
    }
  return y;
}

std::size_t ceil_log2(std::size_t n) {
  std::size_t k = 0;
  while ((std::size_t{1} << k) < n) ++k;
  return k;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::InvalidConfig;
}

}  // namespace

TEST_CASE("zero adjacency gives the identity mask on every path") {
  const Graph g = build_graph(4, true, {});
  const WeightedAdjacency a = adjacency_from_weights(g, {});
  CHECK(mask_dense(a).l == Matrix::identity(4));
  for (std::size_t k : {1u, 3u, 9u}) CHECK(mask_squaring(a, k).l == Matrix::identity(4));
  CHECK(mask_neumann(a, 0).l == Matrix::identity(4));
  CHECK(mask_neumann(a, 5).l == Matrix::identity(4));
}

TEST_CASE("three-node chain: closed-form mask entries") {
  const Graph g = line_graph(3, true);
  // Arcs sorted by (dst, src): 0->1 carries a1, 1->2 carries a2.
  const MaskMatrix m = mask_dense(adjacency_from_weights(g, {0.5, 0.25}));
  CHECK(m.exact);
  CHECK(m.l(1, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(m.l(2, 1) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(m.l(2, 0) == doctest::Approx(0.125).epsilon(1e-15));
  for (std::size_t i = 0; i < 3; ++i) CHECK(m.l(i, i) == doctest::Approx(1.0));
  CHECK(m.l(0, 1) == 0.0);
  CHECK(m.l(0, 2) == 0.0);
  CHECK(m.l(1, 2) == 0.0);
}

TEST_CASE("two-cycle analytic inverse") {
  const Graph g = build_graph(2, true, {{0, 1}, {1, 0}});
  const MaskMatrix m = mask_dense(adjacency_from_weights(g, {0.4, 0.4}));
  CHECK(m.l(0, 0) == doctest::Approx(1.0 / 0.84).epsilon(1e-14));
  CHECK(m.l(1, 0) == doctest::Approx(0.4 / 0.84).epsilon(1e-14));
  CHECK(code_of([&] { mask_dense(adjacency_from_weights(g, {1.0, 1.0})); }) ==
        ErrorCode::Singular);
}

TEST_CASE("line-graph closed form on random chains") {
  std::mt19937_64 rng(11);
  for (std::size_t n : {2u, 7u, 40u}) {
    const auto w = random_weights(n - 1, rng);
    const Matrix l = mask_dense(adjacency_from_weights(line_graph(n, true), w)).l;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double expect = 0.0;
        if (i >= j) {
          expect = 1.0;
          for (std::size_t k = j + 1; k <= i; ++k) expect *= w[k - 1];
        }
        CHECK(std::abs(l(i, j) - expect) < 1e-12);
      }
  }
}

TEST_CASE("dense mask satisfies its exactness residual and sign invariants") {
  std::mt19937_64 rng(12);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Graph g = gen::random_graph(15, 0.3, seed);
    const SsmParams p = random_ssm(15, 2, 2, 0, rng);
    const WeightedAdjacency a = build_adjacency_general(g, p, 0.5, false);
    const MaskMatrix m = mask_dense(a);
    const Matrix residual = subtract(matmul(identity_minus(a.dense()), m.l),
                                     Matrix::identity(15));
    CHECK(max_abs(residual) < 1e-8);
    CHECK(max_abs_diff(m.l, gauss_jordan_inverse(identity_minus(a.dense()))) < 1e-12);
    for (double v : m.l.data()) CHECK(v >= 0.0);
  }
}

TEST_CASE("dense cap") {
  const Graph g = line_graph(6, true);
  const WeightedAdjacency a = adjacency_from_weights(g, std::vector<double>(5, 0.5));
  CHECK(code_of([&] { mask_dense(a, 5); }) == ErrorCode::DenseCapExceeded);
  CHECK(code_of([&] { mask_neumann(a, 3, 5); }) == ErrorCode::DenseCapExceeded);
  CHECK_NOTHROW(mask_dense(a, 6));
}

TEST_CASE("squaring on a DAG of depth three matches the dense mask") {
  // 0 -> 1 -> 2 -> 3 plus shortcuts 0 -> 2 and 1 -> 3.
  const Graph g = build_graph(4, true, {{0, 1}, {1, 2}, {2, 3}, {0, 2}, {1, 3}});
  std::mt19937_64 rng(13);
  const WeightedAdjacency a = adjacency_from_weights(g, random_weights(5, rng));
  REQUIRE(nilpotency_depth(a) == 3u);
  const MaskMatrix sq = mask_squaring(a, 3);
  CHECK(sq.exact);
  CHECK(max_abs_diff(sq.l, mask_dense(a).l) < 1e-10);
  CHECK(sq.matmul_count <= 2 * ceil_log2(3) + 2);
}

TEST_CASE("squaring on a four-cycle equals the explicit power sum") {
  const Graph g = build_graph(4, true, {{0, 1}, {1, 2}, {2, 3}, {3, 0}});
  const WeightedAdjacency a = adjacency_from_weights(g, std::vector<double>(4, 0.2));
  const MaskMatrix sq = mask_squaring(a, 4);
  CHECK_FALSE(sq.exact);
  CHECK(sq.k == 7);
  const Matrix oracle = power_sum(a.dense(), 7);
  CHECK(max_abs_diff(sq.l, oracle) < 1e-14);
  const Matrix dense = mask_dense(a).l;
  for (std::size_t i = 0; i < 16; ++i) {
    CHECK(sq.l.data()[i] <= dense.data()[i] + 1e-15);
    CHECK((sq.l.data()[i] > 0.0) == (dense.data()[i] > 0.0));
  }
}

TEST_CASE("squaring term count and product count") {
  std::mt19937_64 rng(14);
  const Matrix a = random_matrix(5, 5, rng, 0.0, 0.1);
  for (std::size_t k : {1u, 2u, 3u, 4u, 5u, 8u, 9u, 16u, 100u}) {
    std::size_t terms = 0;
    MatmulCountScope scope;
    const Matrix s = squaring_power_sum(a, k, &terms);
    std::size_t p = 1;
    while (p < k) p *= 2;
    CHECK(terms == 2 * p - 1);
    CHECK(scope.count() == 2 * ceil_log2(k));
    CHECK(max_abs_diff(s, power_sum(a, terms)) < 1e-13);
  }
  CHECK_THROWS_AS(mask_squaring(adjacency_from_weights(line_graph(3, true), {0.1, 0.1}), 0),
                  Error);
}

TEST_CASE("squaring product count is logarithmic in the diameter on random DAGs") {
  std::mt19937_64 rng(15);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Graph g = gen::random_dag(30, 0.1, seed);
    const DagPlan plan = plan_dag(g);
    const WeightedAdjacency a =
        adjacency_from_weights(g, random_weights(g.num_edges(), rng));
    const std::size_t dia = std::max<std::size_t>(plan.diameter, 1);
    const MaskMatrix sq = mask_squaring(a, dia);
    CHECK(sq.exact);
    CHECK(sq.matmul_count <= 2 * ceil_log2(dia) + 2);
    CHECK(relative_error(sq.l, mask_dense(a).l) < 1e-9);
  }
}

TEST_CASE("neumann truncation") {
  std::mt19937_64 rng(16);
  const Graph dag = gen::random_dag(12, 0.4, 3);
  const WeightedAdjacency a = adjacency_from_weights(dag, random_weights(dag.num_edges(), rng));
  CHECK(mask_neumann(a, 0).l == Matrix::identity(12));
  const MaskMatrix full = mask_neumann(a, 11);
  CHECK(full.exact);
  CHECK(max_abs_diff(full.l, mask_dense(a).l) < 1e-13);
  CHECK(max_abs_diff(mask_neumann(a, 4).l, power_sum(a.dense(), 4)) < 1e-13);

  // Geometric tail on a general graph with row sums below gamma.
  const double gamma = 0.6;
  const Graph g = gen::random_graph(14, 0.5, 4);
  const WeightedAdjacency ga =
      build_adjacency_general(g, random_ssm(14, 2, 2, 0, rng), gamma, false);
  const Matrix exact = mask_dense(ga).l;
  for (std::size_t k = 0; k <= 12; ++k) {
    const MaskMatrix m = mask_neumann(ga, k);
    CHECK_FALSE(m.exact);
    CHECK(max_row_abs_sum(subtract(exact, m.l)) <=
          std::pow(gamma, static_cast<double>(k + 1)) / (1.0 - gamma) + 1e-12);
  }
}

TEST_CASE("nilpotence and support preservation on random DAGs") {
  std::mt19937_64 rng(17);
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const Graph g = gen::random_dag(16, 0.25, seed);
    const DagPlan plan = plan_dag(g);
    const WeightedAdjacency a = adjacency_from_weights(g, random_weights(g.num_edges(), rng));
    CHECK(max_abs(matrix_power(a.dense(), plan.diameter + 1)) == 0.0);
    const Matrix dense = mask_dense(a).l;
    const Matrix trunc = mask_neumann(a, plan.diameter).l;
    for (std::size_t i = 0; i < dense.data().size(); ++i)
      CHECK((dense.data()[i] > 0.0) == (trunc.data()[i] > 0.0));
  }
}

TEST_CASE("mix output examples") {
  std::mt19937_64 rng(18);
  const Matrix c = random_matrix(5, 3, rng);
  const Matrix b = random_matrix(5, 3, rng);
  const Matrix v = random_matrix(5, 2, rng);
  const Matrix local = mix_output(Matrix::identity(5), c, b, v);
  for (std::size_t i = 0; i < 5; ++i) {
    double cb = 0.0;
    for (std::size_t r = 0; r < 3; ++r) cb += c(i, r) * b(i, r);
    for (std::size_t s = 0; s < 2; ++s)
      CHECK(local(i, s) == doctest::Approx(cb * v(i, s)).epsilon(1e-14));
  }
  const Matrix l = mask_dense(adjacency_from_weights(line_graph(5, true),
                                                     {0.9, 0.3, 0.7, 0.5}))
                       .l;
  const Matrix ones(5, 1, 1.0);
  const Matrix y = mix_output(l, ones, ones, v);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t s = 0; s < 2; ++s) {
      double expect = 0.0;
      for (std::size_t j = 0; j <= i; ++j) expect += l(i, j) * v(j, s);
      CHECK(y(i, s) == doctest::Approx(expect).epsilon(1e-14));
    }
  CHECK(max_abs_diff(mix_output(l, c, b, v), naive_mix(l, c, b, v)) < 1e-13);
  CHECK_THROWS_AS(mix_output(l, c, random_matrix(4, 3, rng), v), Error);
}

TEST_CASE("recurrence reproduces the scalar chain recurrence") {
  const std::size_t n = 9;
  std::mt19937_64 rng(19);
  SsmParams p = random_ssm(n, 1, 1, 0, rng);
  const DagAdjacency d = build_adjacency_dag(plan_dag(line_graph(n, true)), p, false);
  const MixOutput out = dag_recurrence(d.adjacency, p.c, d.b_bar, p.v);
  double h = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const double a = t == 0 ? 0.0 : std::exp(-(p.delta[t] + p.delta[t - 1]) / 2.0);
    const double b = t == 0 ? 1.0 : (p.delta[t] + p.delta[t - 1]) / 2.0;
    h = a * h + b * p.b(t, 0) * p.v(t, 0);
    CHECK(out.y(t, 0) == doctest::Approx(p.c(t, 0) * h).epsilon(1e-13));
  }
}

TEST_CASE("recurrence on a single node") {
  std::mt19937_64 rng(20);
  const SsmParams p = random_ssm(1, 3, 2, 0, rng);
  const DagAdjacency d = build_adjacency_dag(plan_dag(build_graph(1, true, {})), p, false);
  const MixOutput out = dag_recurrence(d.adjacency, p.c, d.b_bar, p.v, true);
  double cb = 0.0;
  for (std::size_t r = 0; r < 3; ++r) cb += p.c(0, r) * p.b(0, r);
  CHECK(out.y(0, 1) == doctest::Approx(cb * p.v(0, 1)).epsilon(1e-14));
  REQUIRE(out.hidden.has_value());
  CHECK(out.hidden->cols() == 6);
}

TEST_CASE("recurrence needs a DAG plan") {
  const Graph g = build_graph(2, true, {{0, 1}, {1, 0}});
  const WeightedAdjacency a = adjacency_from_weights(g, {0.1, 0.1});
  CHECK(code_of([&] { dag_recurrence(a, Matrix(2, 1), Matrix(2, 1), Matrix(2, 1)); }) ==
        ErrorCode::NotADag);
}

TEST_CASE("cross-algorithm equivalence on random DAGs") {
  std::mt19937_64 rng(21);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const std::size_t t = 8 + (seed * 7) % 121;  // up to 128
    const Graph g = gen::random_dag(t, std::min(1.0, 3.0 / static_cast<double>(t)), seed);
    const DagPlan plan = plan_dag(g);
    const SsmParams p = random_ssm(t, 3, 2, 0, rng);
    for (bool normalized : {false, true}) {
      const DagAdjacency d = build_adjacency_dag(plan, p, normalized);
      const Matrix rec = dag_recurrence(d.adjacency, p.c, d.b_bar, p.v).y;
      const Matrix dense = mix_output(mask_dense(d.adjacency).l, p.c, d.b_bar, p.v);
      const Matrix sq = mix_output(
          mask_squaring(d.adjacency, std::max<std::size_t>(plan.diameter, 1)).l, p.c,
          d.b_bar, p.v);
      CHECK(relative_error(rec, dense) < 1e-9);
      CHECK(relative_error(sq, dense) < 1e-9);
      CHECK(relative_error(rec, sq) < 1e-9);
      CHECK(max_abs_diff(rec, dense) < 1e-10);
    }
  }
}

TEST_CASE("algorithm tokens") {
  CHECK(parse_algorithm("dense").method == MaskMethod::DenseInverse);
  CHECK(parse_algorithm("recurrence").method == MaskMethod::DagRecurrence);
  CHECK(parse_algorithm("squaring").method == MaskMethod::Squaring);
  const Algorithm n = parse_algorithm("neumann:12");
  CHECK(n.method == MaskMethod::Neumann);
  CHECK(n.k == 12u);
  CHECK_FALSE(parse_algorithm("neumann").k.has_value());
  for (const char* token : {"dense", "recurrence", "squaring", "neumann:3"})
    CHECK(algorithm_token(parse_algorithm(token)) == token);
  for (const char* bad : {"", "inverse", "neumann:", "neumann:x", "neumann:-1", "Dense"}) {
    try {
      parse_algorithm(bad);
      FAIL("accepted " << bad);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::InvalidConfig);
      CHECK(std::string(e.what()).find("valid: dense, recurrence, squaring, neumann:<k>") !=
            std::string::npos);
    }
  }
}

TEST_CASE("config validation and topology preparation") {
  ChimeraConfig config;
  config.regime = Regime::General;
  config.algorithm = parse_algorithm("recurrence");
  CHECK(code_of([&] { validate_config(config); }) == ErrorCode::InvalidConfig);
  config.algorithm = parse_algorithm("dense");
  CHECK_NOTHROW(validate_config(config));

  ChimeraConfig dag;
  const Graph cyc = build_graph(3, true, {{0, 1}, {1, 2}, {2, 0}});
  CHECK(code_of([&] { prepare_topology(cyc, dag); }) == ErrorCode::NotADag);
  CHECK(code_of([&] { prepare_topology(line_graph(3, false), dag); }) == ErrorCode::NotADag);
  ChimeraConfig line;
  line.regime = Regime::UndirectedLine;
  line.algorithm = parse_algorithm("dense");
  CHECK(code_of([&] { prepare_topology(grid_graph(2, 2), line); }) ==
        ErrorCode::NotALine);
  const Topology topo = prepare_topology(line_graph(5, true), dag);
  CHECK(topo.diameter == 4);
  CHECK(truncation_depth(topo, dag) == 4);
}

namespace {

ChimeraConfig config_for(Regime regime, const char* algo) {
  ChimeraConfig c;
  c.regime = regime;
  c.algorithm = parse_algorithm(algo);
  return c;
}

}  // namespace

TEST_CASE("forward agrees across algorithms for every regime") {
  std::mt19937_64 rng(22);
  const Graph dag = gen::random_dag(10, 0.3, 5).with_node_features(random_matrix(10, 4, rng));
  const HeadSet heads = init_heads(4, 3, 2, 0, false, rng);
  for (Regime r : {Regime::Dag, Regime::DagNormalized}) {
    const Matrix ref = chimera_forward(dag, dag.node_features().value(), heads,
                                       config_for(r, "dense")).y;
    CHECK(ref.cols() == 4);
    for (const char* algo : {"recurrence", "squaring", "neumann", "neumann:9"}) {
      const ForwardResult out =
          chimera_forward(dag, dag.node_features().value(), heads, config_for(r, algo));
      CHECK(relative_error(out.y, ref) < 1e-9);
    }
    CHECK(chimera_forward(dag, *dag.node_features(), heads, config_for(r, "recurrence"))
              .masks.empty());
  }
  const Graph g = gen::random_graph(6, 0.5, 6);
  const Matrix x = random_matrix(6, 4, rng);
  const Matrix ref = chimera_forward(g, x, heads, config_for(Regime::General, "dense")).y;
  const Matrix trunc =
      chimera_forward(g, x, heads, config_for(Regime::General, "neumann:200")).y;
  CHECK(max_abs_diff(ref, trunc) < 1e-9);
  const Graph chain = line_graph(7, false);
  const Matrix xl = random_matrix(7, 4, rng);
  const Matrix lref =
      chimera_forward(chain, xl, heads, config_for(Regime::UndirectedLine, "dense")).y;
  const Matrix lsq =
      chimera_forward(chain, xl, heads, config_for(Regime::UndirectedLine, "neumann:300")).y;
  CHECK(max_abs_diff(lref, lsq) < 1e-9);
}

TEST_CASE("line decomposition is symmetric under reversal") {
  std::mt19937_64 rng(23);
  const std::size_t n = 9;
  const Decomposition dec = decompose_line(n);
  const HeadSet heads = init_heads(4, 2, 1, 0, false, rng);
  const Matrix x = random_matrix(n, 4, rng);
  Matrix xr(n, 4);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 4; ++c) xr(i, c) = x(n - 1 - i, c);
  const ChimeraConfig config = config_for(Regime::Dag, "recurrence");
  const std::vector<const HeadSet*> views{&heads, &heads};
  const Matrix y = chimera_forward(dec, x, views, config).y;
  const Matrix yr = chimera_forward(dec, xr, views, config).y;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 4; ++c)
      CHECK(yr(i, c) == doctest::Approx(y(n - 1 - i, c)).epsilon(1e-12));
}

TEST_CASE("2x2 grid decomposition couples every pair of nodes") {
  std::mt19937_64 rng(24);
  const Decomposition dec = decompose_grid(2, 2);
  const HeadSet heads = init_heads(2, 2, 1, 0, false, rng);
  const Matrix x = random_matrix(4, 2, rng);
  const ForwardResult out =
      chimera_forward(dec, x, {&heads, &heads, &heads, &heads},
                      config_for(Regime::Dag, "dense"));
  REQUIRE(out.masks.size() == 4);
  Matrix support(4, 4);
  for (const MaskMatrix& m : out.masks) support = add(support, m.l);
  for (double v : support.data()) CHECK(v > 0.0);
  // Mean combine divides by the part count.
  ChimeraConfig mean = config_for(Regime::Dag, "dense");
  mean.combine = Combine::Mean;
  const Matrix ym = chimera_forward(dec, x, {&heads, &heads, &heads, &heads}, mean).y;
  CHECK(max_abs_diff(scale(out.y, 0.25), ym) < 1e-15);
}

TEST_CASE("2x2 grid sensitivity of every output to every input") {
  // Finite-difference Jacobian of Y with respect to x: all pairs nonzero.
  std::mt19937_64 rng(25);
  const Decomposition dec = decompose_grid(2, 2);
  const HeadSet heads = init_heads(2, 2, 1, 0, false, rng);
  const Matrix x = random_matrix(4, 2, rng);
  const ChimeraConfig config = config_for(Regime::Dag, "recurrence");
  const std::vector<const HeadSet*> views{&heads, &heads, &heads, &heads};
  const Matrix y = chimera_forward(dec, x, views, config).y;
  for (std::size_t j = 0; j < 4; ++j) {
    Matrix xp = x;
    xp(j, 0) += 1e-4;
    const Matrix yp = chimera_forward(dec, xp, views, config).y;
    for (std::size_t i = 0; i < 4; ++i)
      CHECK(std::abs(yp(i, 0) - y(i, 0)) + std::abs(yp(i, 1) - y(i, 1)) > 1e-12);
  }
}
