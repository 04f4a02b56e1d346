#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"

using namespace mixgraph;
using oracle::Mat;

namespace {

PhysicalGraph path3() { return {3, {{0, 1, 1.0}, {1, 2, 1.0}}}; }

Digraph line(std::size_t n) {
  Digraph g{n, {}};
  for (std::size_t i = 0; i + 1 < n; ++i) g.edges.push_back({i, i + 1, 1.0});
  return g;
}

Mat line_laplacian(std::size_t n) {
  Mat m = oracle::zeros(n, n);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    m[i][i] += 1;
    m[i + 1][i + 1] += 1;
    m[i][i + 1] -= 1;
    m[i + 1][i] -= 1;
  }
  return m;
}

}  // namespace

TEST(SpaceTimeIndex, TimeMajorBijection) {
  const std::size_t n = 7;
  for (std::size_t f = 0; f < n * 5; ++f) {
    const auto idx = SpaceTimeIndex::from_flat(f, n);
    EXPECT_EQ(idx.flat(n), f);
    EXPECT_EQ(idx.instant, f / n);
    EXPECT_EQ(idx.station, f % n);
  }
}

TEST(SparseMatrix, RejectsDuplicatesUnlessSummed) {
  std::vector<SparseMatrix::Triplet> t{{0, 1, 1.0}, {0, 1, 2.0}};
  EXPECT_THROW(SparseMatrix::from_triplets(2, 2, t), InvalidArgument);
  const auto m = SparseMatrix::from_triplets(2, 2, t, SparseMatrix::Duplicates::kSum);
  EXPECT_EQ(m.at(0, 1), 3.0);
  EXPECT_EQ(m.nnz(), 1u);
}

TEST(SparseMatrix, ProductsMatchDense) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<SparseMatrix::Triplet> t;
  for (std::size_t r = 0; r < 30; ++r)
    for (std::size_t c = 0; c < 20; ++c)
      if (u(rng) > 0.6) t.push_back({r, c, u(rng)});
  const auto s = SparseMatrix::from_triplets(30, 20, t);
  const Mat d = oracle::dense(s);
  const auto x = oracle::random_vec(rng, 20);
  const auto z = oracle::random_vec(rng, 30);
  EXPECT_LE(oracle::max_abs(s.multiply(x), oracle::matvec(d, x)), 1e-14);
  EXPECT_LE(oracle::max_abs(s.multiply_transpose(z), oracle::matvec(oracle::transpose(d), z)), 1e-14);
  EXPECT_EQ(oracle::dense(s.transpose()), oracle::transpose(d));
}

TEST(PhysicalGraph, ValidatesEdges) {
  EXPECT_THROW((PhysicalGraph{2, {{0, 0, 1.0}}}.validate()), InvalidArgument);
  EXPECT_THROW((PhysicalGraph{2, {{0, 1, -1.0}}}.validate()), InvalidArgument);
  EXPECT_THROW((PhysicalGraph{2, {{0, 2, 1.0}}}.validate()), InvalidArgument);
  EXPECT_THROW((PhysicalGraph{2, {{0, 1, 1.0}, {1, 0, 2.0}}}.validate()), InvalidArgument);
  EXPECT_NO_THROW((PhysicalGraph{2, {{0, 1, 0.0}}}.validate()));
}

TEST(SpatialSkeleton, PathK1) {
  const auto s = build_spatial_skeleton(path3(), 1);
  // b ties between a and c; lower id wins, c still picks b
  const std::vector<std::pair<std::size_t, std::size_t>> expect{{0, 1}, {1, 2}};
  EXPECT_EQ(s.edges, expect);
  EXPECT_EQ(s.neighbors[1], (std::vector<std::size_t>{0, 2}));
}

TEST(SpatialSkeleton, CompleteGraphSaturates) {
  PhysicalGraph g{4, {}};
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = i + 1; j < 4; ++j) g.edges.push_back({i, j, 1.0 + static_cast<double>(i + j)});
  const auto s = build_spatial_skeleton(g, 3);
  EXPECT_EQ(s.edges.size(), 6u);
}

TEST(SpatialSkeleton, StarUnionRestoresLeaves) {
  PhysicalGraph g{5, {{0, 1, 4.0}, {0, 2, 1.0}, {0, 3, 3.0}, {0, 4, 2.0}}};
  const auto s = build_spatial_skeleton(g, 2);
  // Centre alone would keep leaves 2 and 4; each leaf keeps the centre.
  EXPECT_EQ(s.edges.size(), 4u);
  EXPECT_EQ(s.neighbors[0], (std::vector<std::size_t>{1, 2, 3, 4}));
  const auto s1 = build_spatial_skeleton(PhysicalGraph{5, {{0, 1, 4.0}, {0, 2, 1.0}, {1, 2, 0.5}}}, 1);
  EXPECT_EQ(s1.neighbors[0], (std::vector<std::size_t>{2}));
}

TEST(SpatialSkeleton, SymmetricAndDegreeBoundedByK) {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    const auto pg = oracle::random_physical(rng, 12, 4.0);
    for (std::size_t k = 1; k <= 4; ++k) {
      const auto s = build_spatial_skeleton(pg, k);
      for (std::size_t i = 0; i < 12; ++i)
        for (std::size_t j : s.neighbors[i]) {
          const auto& back = s.neighbors[j];
          EXPECT_TRUE(std::find(back.begin(), back.end(), i) != back.end());
        }
      // independent kNN selection: sort (cost, id) per station, take k, union
      std::set<std::pair<std::size_t, std::size_t>> expect;
      for (std::size_t i = 0; i < 12; ++i) {
        std::vector<std::pair<double, std::size_t>> c;
        for (const auto& e : pg.edges) {
          if (e.from == i) c.push_back({e.cost, e.to});
          if (e.to == i) c.push_back({e.cost, e.from});
        }
        std::sort(c.begin(), c.end());
        for (std::size_t m = 0; m < std::min(k, c.size()); ++m)
          expect.insert({std::min(i, c[m].second), std::max(i, c[m].second)});
      }
      const std::set<std::pair<std::size_t, std::size_t>> got(s.edges.begin(), s.edges.end());
      EXPECT_EQ(got, expect);
    }
  }
}

TEST(TemporalSkeleton, SmallestWindow) {
  const auto t = build_temporal_skeleton(1, 3, 2);
  ASSERT_EQ(t.edges.size(), 3u);
  std::set<std::pair<std::size_t, std::size_t>> e;
  for (const auto& x : t.edges) e.insert({x.from, x.to});
  EXPECT_EQ(e, (std::set<std::pair<std::size_t, std::size_t>>{{0, 1}, {0, 2}, {1, 2}}));
  EXPECT_TRUE(t.is_source(0));
  EXPECT_FALSE(t.is_source(1));
  EXPECT_FALSE(t.is_source(2));
}

TEST(TemporalSkeleton, ChainCount) {
  const auto t = build_temporal_skeleton(2, 4, 1);
  EXPECT_EQ(t.edges.size(), 2u * 3u);
  for (const auto& e : t.edges) {
    EXPECT_EQ(e.to, e.from + 2);
    EXPECT_EQ(e.lag, 1u);
  }
}

TEST(TemporalSkeleton, InDegrees) {
  const auto t = build_temporal_skeleton(1, 4, 2);
  std::vector<std::size_t> deg;
  for (std::size_t j = 0; j < 4; ++j) deg.push_back(t.incoming(j).size());
  EXPECT_EQ(deg, (std::vector<std::size_t>{0, 1, 2, 2}));
}

TEST(TemporalSkeleton, AcyclicSameStationSourcesAtInstantZero) {
  for (std::size_t n : {1u, 3u, 5u})
    for (std::size_t inst : {2u, 5u, 9u})
      for (std::size_t w = 1; w < inst; ++w) {
        const auto t = build_temporal_skeleton(n, inst, w);
        for (const auto& e : t.edges) {
          EXPECT_LT(e.from / n, e.to / n);  // strictly later instant => topological order by instant
          EXPECT_EQ(e.from % n, e.to % n);
          EXPECT_EQ(e.to / n - e.from / n, e.lag);
        }
        for (std::size_t j = 0; j < t.node_count(); ++j) {
          const std::size_t tau = j / n;
          EXPECT_EQ(t.is_source(j), tau == 0);
          EXPECT_EQ(t.incoming(j).size(), std::min(tau, w));
        }
      }
}

TEST(UndirectedLaplacian, TwoNodes) {
  const auto s = build_spatial_skeleton(PhysicalGraph{2, {{0, 1, 1.0}}}, 1);
  const auto l = assemble_undirected_laplacian(s, UndirectedWeights{{{1.0}}});
  EXPECT_EQ(oracle::dense(l), (Mat{{1, -1}, {-1, 1}}));
  const auto z = assemble_undirected_laplacian(s, UndirectedWeights{{{0.0}}});
  EXPECT_EQ(oracle::dense(z), oracle::zeros(2, 2));
}

TEST(UndirectedLaplacian, Path4) {
  const auto s = build_spatial_skeleton(PhysicalGraph{4, {{0, 1, 1}, {1, 2, 1}, {2, 3, 1}}}, 2);
  ASSERT_EQ(s.edges.size(), 3u);
  const auto l = assemble_undirected_laplacian(s, UndirectedWeights{{{1.0, 1.0, 1.0}}});
  EXPECT_EQ(oracle::dense(l), line_laplacian(4));
}

TEST(RandomWalk, FourNodeLine) {
  const auto ops = assemble_random_walk_digraph(line(4));
  const Mat w{{1, 0, 0, 0}, {1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}};
  const Mat l{{0, 0, 0, 0}, {-1, 1, 0, 0}, {0, -1, 1, 0}, {0, 0, -1, 1}};
  EXPECT_EQ(oracle::dense(ops.adjacency), w);
  EXPECT_EQ(oracle::dense(ops.laplacian), l);
  EXPECT_EQ(oracle::dense(symmetrized_dglr_matrix(ops.laplacian)), line_laplacian(4));
}

TEST(RandomWalk, SingleNode) {
  const auto ops = assemble_random_walk_digraph(Digraph{1, {}});
  EXPECT_EQ(oracle::dense(ops.adjacency), (Mat{{1}}));
  EXPECT_EQ(oracle::dense(ops.laplacian), (Mat{{0}}));
  EXPECT_EQ(ops.laplacian.nnz(), 0u);
}

TEST(RandomWalk, InDegreeNormalization) {
  const auto ops = assemble_random_walk_digraph(Digraph{3, {{0, 2, 1.0}, {1, 2, 3.0}}});
  EXPECT_DOUBLE_EQ(ops.adjacency.at(2, 0), 0.25);
  EXPECT_DOUBLE_EQ(ops.adjacency.at(2, 1), 0.75);
}

TEST(Dglr, ZeroLaplacian) {
  EXPECT_EQ(symmetrized_dglr_matrix(SparseMatrix(3, 3)).nnz(), 0u);
}

TEST(Dglr, MergingDagIsRankOne) {
  const auto ops = assemble_random_walk_digraph(Digraph{3, {{0, 2, 1.0}, {1, 2, 1.0}}});
  const Mat m = oracle::dense(symmetrized_dglr_matrix(ops.laplacian));
  const oracle::Vec v{-0.5, -0.5, 1.0};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(m[i][j], v[i] * v[j]);
}

TEST(LineGraph, DglrEqualsUndirectedLaplacianExactly) {
  for (std::size_t n = 2; n <= 32; ++n) {
    const auto ops = assemble_random_walk_digraph(line(n));
    EXPECT_EQ(oracle::max_abs(oracle::dense(symmetrized_dglr_matrix(ops.laplacian)), line_laplacian(n)), 0.0) << n;
  }
}

TEST(ApplyOperator, AnnihilatesConstants) {
  std::mt19937_64 rng(3);
  const auto g = oracle::random_mixed(rng, 5, 4, 2, 2);
  const Vector one(g.node_count(), 1.0);
  for (auto op : {Operator::kUndirectedLaplacian, Operator::kWalkLaplacian, Operator::kDglr}) {
    for (double v : apply_operator(g, op, one)) EXPECT_NEAR(v, 0.0, 1e-14);
  }
}

TEST(ApplyOperator, MatchesDenseOnRandomGraphs) {
  std::mt19937_64 rng(21);
  for (int rep = 0; rep < 30; ++rep) {
    const std::size_t n = 1 + rng() % 8, inst = 2 + rng() % 6;
    if (n * inst > 200) continue;
    const auto g = oracle::random_mixed(rng, std::max<std::size_t>(n, 2), inst, 1 + rng() % 3, 1 + rng() % inst);
    const auto x = oracle::random_vec(rng, g.node_count());
    const Mat lu = oracle::dense(g.laplacian_u), lr = oracle::dense(g.walk_laplacian);
    const Mat cl = oracle::matmul(oracle::transpose(lr), lr);
    EXPECT_LE(oracle::max_abs(apply_operator(g, Operator::kUndirectedLaplacian, x), oracle::matvec(lu, x)), 1e-12);
    EXPECT_LE(oracle::max_abs(apply_operator(g, Operator::kWalkLaplacian, x), oracle::matvec(lr, x)), 1e-12);
    EXPECT_LE(oracle::max_abs(apply_operator(g, Operator::kWalkLaplacianTranspose, x),
                              oracle::matvec(oracle::transpose(lr), x)),
              1e-12);
    EXPECT_LE(oracle::max_abs(apply_operator(g, Operator::kDglr, x), oracle::matvec(cl, x)), 1e-12);
  }
}

TEST(MixedGraph, Invariants) {
  std::mt19937_64 rng(8);
  for (int rep = 0; rep < 25; ++rep) {
    const std::size_t n = 2 + rng() % 5, inst = 2 + rng() % 6;
    const auto g = oracle::random_mixed(rng, n, inst, 1 + rng() % 4, 1 + rng() % inst);
    const Mat w = oracle::dense(g.walk_adjacency);
    for (const auto& row : w) {
      double s = 0;
      for (double a : row) s += a;
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
    const Mat lu = oracle::dense(g.laplacian_u), cl = oracle::dense(g.dglr_matrix);
    EXPECT_EQ(oracle::max_abs(lu, oracle::transpose(lu)), 0.0);
    EXPECT_EQ(oracle::max_abs(cl, oracle::transpose(cl)), 0.0);
    EXPECT_TRUE(oracle::cholesky_ok(lu, 1e-10));
    EXPECT_TRUE(oracle::cholesky_ok(cl, 1e-10));
    for (const auto& row : lu) {
      double s = 0;
      for (double a : row) s += a;
      EXPECT_NEAR(s, 0.0, 1e-12);
    }
    for (double v : oracle::matvec(cl, oracle::Vec(g.node_count(), 1.0))) EXPECT_NEAR(v, 0.0, 1e-12);
    for (std::size_t i = 0; i < g.node_count(); ++i)
      EXPECT_EQ(g.observed_mask[i] != 0, i / n < g.observed_instants);
  }
}
