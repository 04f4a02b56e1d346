#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include "oracles.hpp"

using namespace mixgraph;
using oracle::Mat;
using oracle::Vec;

namespace {

SparseMatrix merge_dag_laplacian() {
  return assemble_random_walk_digraph(Digraph{3, {{0, 2, 1.0}, {1, 2, 1.0}}}).laplacian;
}

SparseMatrix split_dag_laplacian() {
  return assemble_random_walk_digraph(Digraph{3, {{2, 0, 1.0}, {2, 1, 1.0}}}).laplacian;
}

SparseMatrix two_node(double w) {
  return SparseMatrix::from_triplets(2, 2, {{0, 0, w}, {0, 1, -w}, {1, 0, -w}, {1, 1, w}});
}

}  // namespace

TEST(Glr, Examples) {
  EXPECT_EQ(glr(Vector{4.0, 4.0}, two_node(2.5)), 0.0);
  EXPECT_DOUBLE_EQ(glr(Vector{0.0, 1.0}, two_node(1.0)), 1.0);
}

TEST(Glr, PairwiseSumOracle) {
  std::mt19937_64 rng(2);
  const auto g = oracle::random_mixed(rng, 10, 1, 1, 1, 3);
  const Vec x = oracle::random_vec(rng, 10);
  const Mat w = oracle::dense(g.adjacency_u);
  double s = 0;
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = i + 1; j < 10; ++j) s += w[i][j] * (x[i] - x[j]) * (x[i] - x[j]);
  EXPECT_NEAR(glr(x, g.laplacian_u), s, 1e-12);
}

TEST(Dglr, DirectionalityExamples) {
  const Vector x{2.0, 0.0, 1.0};
  EXPECT_DOUBLE_EQ(dglr(Vector(3, 1.0), merge_dag_laplacian()), 0.0);
  EXPECT_DOUBLE_EQ(dglr(x, merge_dag_laplacian()), 0.0);
  EXPECT_DOUBLE_EQ(dglr(x, split_dag_laplacian()), 2.0);
}

TEST(Dgtv, Examples) {
  const auto chain = assemble_random_walk_digraph(Digraph{2, {{0, 1, 1.0}}}).laplacian;
  EXPECT_EQ(dgtv(Vector{1.0, 1.0}, chain), 0.0);
  EXPECT_DOUBLE_EQ(dgtv(Vector{0.0, 3.0}, chain), 3.0);
}

TEST(Dgtv, PerChildOracle) {
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = 6;
    Digraph d{n, {}};
    std::uniform_real_distribution<double> w(0.1, 2.0);
    for (std::size_t j = 1; j < n; ++j)
      for (std::size_t i = 0; i < j; ++i)
        if (rng() % 2) d.edges.push_back({i, j, w(rng)});
    const auto ops = assemble_random_walk_digraph(d);
    const Vec x = oracle::random_vec(rng, n);
    double s = 0;
    for (std::size_t j = 0; j < n; ++j) {
      double tot = 0, avg = 0;
      for (const auto& e : d.edges)
        if (e.to == j) tot += e.weight;
      if (tot == 0) continue;  // source: self-loop only
      for (const auto& e : d.edges)
        if (e.to == j) avg += e.weight / tot * x[e.from];
      s += std::abs(x[j] - avg);
    }
    EXPECT_NEAR(dgtv(x, ops.laplacian), s, 1e-12);
  }
}

TEST(Priors, QuadraticFormScaleAndConstantLaws) {
  std::mt19937_64 rng(6);
  for (int rep = 0; rep < 30; ++rep) {
    const auto g = oracle::random_mixed(rng, 2 + rng() % 4, 2 + rng() % 5, 1 + rng() % 3, 1);
    const Vec x = oracle::random_vec(rng, g.node_count());
    const double a = std::uniform_real_distribution<double>(-3, 3)(rng);
    Vec ax = x;
    for (double& v : ax) v *= a;
    const double d = dglr(x, g.walk_laplacian);
    EXPECT_NEAR(d, oracle::dotv(x, oracle::matvec(oracle::dense(g.dglr_matrix), x)), 1e-10);
    EXPECT_GE(d, 0.0);
    EXPECT_GE(dgtv(x, g.walk_laplacian), 0.0);
    EXPECT_NEAR(dglr(ax, g.walk_laplacian), a * a * d, 1e-10 * std::max(1.0, a * a * d));
    EXPECT_NEAR(dgtv(ax, g.walk_laplacian), std::abs(a) * dgtv(x, g.walk_laplacian), 1e-10);
    const Vector c(g.node_count(), -1.7);
    EXPECT_EQ(dglr(Vector(g.node_count(), 1.0), g.walk_laplacian), 0.0);
    EXPECT_NEAR(dgtv(c, g.walk_laplacian), 0.0, 1e-15);
    EXPECT_NEAR(dglr(c, g.walk_laplacian), 0.0, 1e-15);
  }
}

TEST(Objective, Examples) {
  std::mt19937_64 rng(9);
  const auto g = oracle::random_mixed(rng, 3, 4, 2, 2);
  Vec x = oracle::random_vec(rng, g.node_count());
  const Vec y(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(g.observed_count()));
  EXPECT_EQ(objective(x, y, g, PriorWeights{}), 0.0);
  Vec y2 = y;
  for (double& v : y2) v += 0.5;
  EXPECT_DOUBLE_EQ(objective(x, y2, g, PriorWeights{}), 0.25 * static_cast<double>(y.size()));
  const PriorWeights w{0.7, 1.3, 0.4};
  EXPECT_NEAR(objective(x, y2, g, w), oracle::objective(g, x, y2, 0.7, 1.3, 0.4), 1e-12);
}

TEST(Spectrum, Examples) {
  const auto id = spectrum_dense(SparseMatrix::identity(4));
  for (double v : id.eigenvalues) EXPECT_NEAR(v, 1.0, 1e-14);
  const auto two = spectrum_dense(two_node(1.0));
  EXPECT_NEAR(two.eigenvalues[0], 0.0, 1e-14);
  EXPECT_NEAR(two.eigenvalues[1], 2.0, 1e-14);
  const auto s = build_spatial_skeleton(PhysicalGraph{4, {{0, 1, 1}, {1, 2, 1}, {2, 3, 1}}}, 2);
  const auto p4 = spectrum_dense(assemble_undirected_laplacian(s, UndirectedWeights{{{1, 1, 1}}}));
  for (std::size_t k = 0; k < 4; ++k)
    EXPECT_NEAR(p4.eigenvalues[k], 2.0 - 2.0 * std::cos(static_cast<double>(k) * std::numbers::pi / 4.0), 1e-12);
}

TEST(Spectrum, ReconstructsMatrix) {
  std::mt19937_64 rng(12);
  const auto g = oracle::random_mixed(rng, 4, 4, 2, 2);
  const auto sp = spectrum_dense(g.dglr_matrix);
  const Mat a = oracle::dense(g.dglr_matrix);
  const std::size_t n = a.size();
  Mat r = oracle::zeros(n, n);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        r[i][j] += sp.eigenvalues[k] * sp.eigenvectors(i, k) * sp.eigenvectors(j, k);
  EXPECT_LE(oracle::max_abs(r, a), 1e-10);
}

TEST(Lowpass, Examples) {
  EXPECT_EQ(lowpass_response(0.0, 5.0), 1.0);
  EXPECT_EQ(lowpass_response(3.0, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(lowpass_response(1.0, 2.0 * 1.0 / 2.0), 0.5);
}
