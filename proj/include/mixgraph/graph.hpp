#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mixgraph/error.hpp"
#include "mixgraph/sparse.hpp"

namespace mixgraph {

/// (station, instant) coordinates of a node in the product graph. The flat
/// index is time-major: all N stations of instant 0, then instant 1, ...
struct SpaceTimeIndex {
  std::size_t station = 0;
  std::size_t instant = 0;

  std::size_t flat(std::size_t station_count) const { return instant * station_count + station; }

  static SpaceTimeIndex from_flat(std::size_t flat, std::size_t station_count) {
    return {flat % station_count, flat / station_count};
  }

  friend bool operator==(const SpaceTimeIndex&, const SpaceTimeIndex&) = default;
};

struct PhysicalEdge {
  std::size_t from = 0;
  std::size_t to = 0;
  double cost = 0.0;
};

/// Road network: undirected edges between stations with nonnegative travel cost.
struct PhysicalGraph {
  std::size_t station_count = 0;
  std::vector<PhysicalEdge> edges;

  /// Rejects self-edges, out-of-range ids, negative or non-finite costs and
  /// duplicate edges (in either orientation).
  void validate() const {
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (std::size_t e = 0; e < edges.size(); ++e) {
      const auto& edge = edges[e];
      const std::string where = "physical edge " + std::to_string(e);
      if (edge.from >= station_count || edge.to >= station_count)
        throw InvalidArgument(where + ": station id out of range");
      if (edge.from == edge.to) throw InvalidArgument(where + ": self-edge");
      if (!(edge.cost >= 0.0) || !std::isfinite(edge.cost))
        throw InvalidArgument(where + ": cost must be finite and nonnegative");
      auto key = std::minmax(edge.from, edge.to);
      if (!seen.insert({key.first, key.second}).second) throw InvalidArgument(where + ": duplicate edge");
    }
  }

  bool connected() const {
    if (station_count == 0) return true;
    std::vector<std::vector<std::size_t>> adj(station_count);
    for (const auto& e : edges) {
      adj[e.from].push_back(e.to);
      adj[e.to].push_back(e.from);
    }
    std::vector<bool> seen(station_count, false);
    std::vector<std::size_t> stack{0};
    seen[0] = true;
    std::size_t count = 1;
    while (!stack.empty()) {
      const std::size_t u = stack.back();
      stack.pop_back();
      for (std::size_t v : adj[u]) {
        if (!seen[v]) {
          seen[v] = true;
          ++count;
          stack.push_back(v);
        }
      }
    }
    return count == station_count;
  }
};

/// Per-instant spatial edge set, identical across instants.
struct SpatialSkeleton {
  std::size_t station_count = 0;
  std::vector<std::vector<std::size_t>> neighbors;           // sorted, symmetric
  std::vector<std::pair<std::size_t, std::size_t>> edges;    // first < second, sorted

  std::size_t edge_index(std::size_t a, std::size_t b) const {
    auto key = std::minmax(a, b);
    auto it = std::lower_bound(edges.begin(), edges.end(), std::pair{key.first, key.second});
    if (it == edges.end() || *it != std::pair{key.first, key.second})
      throw InvalidArgument("no skeleton edge between " + std::to_string(a) + " and " + std::to_string(b));
    return static_cast<std::size_t>(it - edges.begin());
  }
};

/// Each station keeps its k cheapest physical neighbours (ties to the lower
/// id); the result is the union of those directed selections.
inline SpatialSkeleton build_spatial_skeleton(const PhysicalGraph& pg, std::size_t k) {
  detail::require(k >= 1, "build_spatial_skeleton: k must be >= 1");
  detail::require(pg.station_count >= 1, "build_spatial_skeleton: graph has no stations");
  pg.validate();

  const std::size_t n = pg.station_count;
  std::vector<std::vector<std::pair<double, std::size_t>>> candidates(n);
  for (const auto& e : pg.edges) {
    candidates[e.from].push_back({e.cost, e.to});
    candidates[e.to].push_back({e.cost, e.from});
  }
  std::set<std::pair<std::size_t, std::size_t>> chosen;
  for (std::size_t i = 0; i < n; ++i) {
    auto& c = candidates[i];
    std::sort(c.begin(), c.end());
    for (std::size_t m = 0; m < std::min(k, c.size()); ++m) {
      auto key = std::minmax(i, c[m].second);
      chosen.insert({key.first, key.second});
    }
  }

  SpatialSkeleton s;
  s.station_count = n;
  s.neighbors.resize(n);
  s.edges.assign(chosen.begin(), chosen.end());
  for (const auto& [a, b] : s.edges) {
    s.neighbors[a].push_back(b);
    s.neighbors[b].push_back(a);
  }
  for (auto& nb : s.neighbors) std::sort(nb.begin(), nb.end());
  return s;
}

struct TemporalEdge {
  std::size_t from = 0;  // flat index, earlier instant
  std::size_t to = 0;    // flat index, later instant
  std::size_t lag = 0;   // instant difference, 1..W
};

/// Windowed directed temporal DAG: station s at instant t feeds station s at
/// instants t+1..t+W. Edges are grouped by child in ascending flat order.
struct TemporalSkeleton {
  std::size_t station_count = 0;
  std::size_t instant_count = 0;
  std::size_t window = 0;
  std::vector<TemporalEdge> edges;
  std::vector<std::size_t> child_offsets;  // edges of child j: [child_offsets[j], child_offsets[j+1])

  std::size_t node_count() const { return station_count * instant_count; }

  std::span<const TemporalEdge> incoming(std::size_t child) const {
    return {edges.data() + child_offsets[child], child_offsets[child + 1] - child_offsets[child]};
  }

  bool is_source(std::size_t node) const { return child_offsets[node] == child_offsets[node + 1]; }

  /// A skeleton with nodes but no temporal edges; every node is a source.
  static TemporalSkeleton without_edges(std::size_t stations, std::size_t instants) {
    TemporalSkeleton t;
    t.station_count = stations;
    t.instant_count = instants;
    t.child_offsets.assign(stations * instants + 1, 0);
    return t;
  }
};

inline TemporalSkeleton build_temporal_skeleton(std::size_t stations, std::size_t instants, std::size_t window) {
  detail::require(stations >= 1, "build_temporal_skeleton: need at least one station");
  detail::require(instants >= 2, "build_temporal_skeleton: need at least two instants");
  detail::require(window >= 1 && window < instants,
                  "build_temporal_skeleton: window must satisfy 1 <= W < instants");
  TemporalSkeleton t;
  t.station_count = stations;
  t.instant_count = instants;
  t.window = window;
  t.child_offsets.assign(stations * instants + 1, 0);
  for (std::size_t tau = 0; tau < instants; ++tau) {
    for (std::size_t s = 0; s < stations; ++s) {
      const std::size_t child = tau * stations + s;
      // nearest lag first
      for (std::size_t lag = 1; lag <= std::min(tau, window); ++lag) {
        t.edges.push_back({(tau - lag) * stations + s, child, lag});
      }
      t.child_offsets[child + 1] = t.edges.size();
    }
  }
  return t;
}

/// Nonnegative weights on the spatial skeleton, indexed [instant][edge].
struct UndirectedWeights {
  std::vector<Vector> per_instant;
};

/// Block-diagonal (over instants) weighted adjacency of the spatial graph.
inline SparseMatrix assemble_undirected_adjacency(const SpatialSkeleton& skel, const UndirectedWeights& w) {
  const std::size_t n = skel.station_count;
  const std::size_t instants = w.per_instant.size();
  std::vector<SparseMatrix::Triplet> t;
  t.reserve(2 * skel.edges.size() * instants);
  for (std::size_t tau = 0; tau < instants; ++tau) {
    const Vector& wt = w.per_instant[tau];
    detail::require_same_size(wt.size(), skel.edges.size(), "undirected weights per instant");
    for (std::size_t e = 0; e < skel.edges.size(); ++e) {
      const double v = wt[e];
      if (!(v >= 0.0) || !std::isfinite(v))
        throw InvalidArgument("undirected weight at instant " + std::to_string(tau) + ", edge " +
                              std::to_string(e) + " must be finite and nonnegative");
      if (v == 0.0) continue;
      const auto [a, b] = skel.edges[e];
      t.push_back({tau * n + a, tau * n + b, v});
      t.push_back({tau * n + b, tau * n + a, v});
    }
  }
  return SparseMatrix::from_triplets(n * instants, n * instants, std::move(t));
}

/// Block-diagonal combinatorial Laplacian D - W; one block per instant.
inline SparseMatrix assemble_undirected_laplacian(const SpatialSkeleton& skel, const UndirectedWeights& w) {
  const SparseMatrix adj = assemble_undirected_adjacency(skel, w);
  std::vector<SparseMatrix::Triplet> t;
  t.reserve(adj.nnz() + adj.rows());
  for (std::size_t r = 0; r < adj.rows(); ++r) {
    double degree = 0.0;
    auto cols = adj.row_cols(r);
    auto vals = adj.row_values(r);
    for (std::size_t k = 0; k < cols.size(); ++k) {
      degree += vals[k];
      t.push_back({r, cols[k], -vals[k]});
    }
    if (degree != 0.0) t.push_back({r, r, degree});
  }
  return SparseMatrix::from_triplets(adj.rows(), adj.cols(), std::move(t));
}

struct DirectedEdge {
  std::size_t from = 0;
  std::size_t to = 0;
  double weight = 0.0;
};

/// General weighted digraph; sources are the nodes without incoming edges.
struct Digraph {
  std::size_t node_count = 0;
  std::vector<DirectedEdge> edges;
};

/// Row-stochastic random-walk adjacency and its Laplacian I - W_rd.
struct RandomWalkOperators {
  SparseMatrix adjacency;   // W_rd
  SparseMatrix laplacian;   // L_rd, exact zeros pruned
};

/// Adds a unit self-loop to every source, normalizes each row by its
/// in-degree and returns (W_rd, L_rd). Row j of W holds the weights of
/// edges i -> j, so (W x)_j averages the parents of j.
inline RandomWalkOperators assemble_random_walk_digraph(const Digraph& g) {
  const std::size_t n = g.node_count;
  std::vector<double> in_degree(n, 0.0);
  std::vector<bool> has_parent(n, false);
  for (const auto& e : g.edges) {
    if (e.from >= n || e.to >= n) throw InvalidArgument("directed edge node id out of range");
    if (!(e.weight >= 0.0) || !std::isfinite(e.weight))
      throw InvalidArgument("directed edge weight must be finite and nonnegative");
    has_parent[e.to] = true;
    in_degree[e.to] += e.weight;
  }
  std::vector<SparseMatrix::Triplet> w;
  w.reserve(g.edges.size() + n);
  for (std::size_t j = 0; j < n; ++j) {
    if (!has_parent[j]) {
      w.push_back({j, j, 1.0});
    } else if (in_degree[j] <= 0.0) {
      throw DegenerateDegree(j);
    }
  }
  for (const auto& e : g.edges) {
    if (e.weight == 0.0) continue;
    w.push_back({e.to, e.from, e.weight / in_degree[e.to]});
  }
  RandomWalkOperators ops;
  ops.adjacency = SparseMatrix::from_triplets(n, n, std::move(w), SparseMatrix::Duplicates::kSum);

  std::vector<SparseMatrix::Triplet> l;
  l.reserve(ops.adjacency.nnz() + n);
  for (std::size_t r = 0; r < n; ++r) l.push_back({r, r, 1.0});
  ops.adjacency.for_each([&](std::size_t r, std::size_t c, double v) { l.push_back({r, c, -v}); });
  ops.laplacian = SparseMatrix::from_triplets(n, n, std::move(l), SparseMatrix::Duplicates::kSum).pruned();
  return ops;
}

/// Overload for the windowed temporal DAG; `weights` is indexed like skel.edges.
inline RandomWalkOperators assemble_random_walk_digraph(const TemporalSkeleton& skel, std::span<const double> weights) {
  detail::require_same_size(weights.size(), skel.edges.size(), "directed weights");
  Digraph g;
  g.node_count = skel.node_count();
  g.edges.reserve(skel.edges.size());
  for (std::size_t e = 0; e < skel.edges.size(); ++e) {
    g.edges.push_back({skel.edges[e].from, skel.edges[e].to, weights[e]});
  }
  return assemble_random_walk_digraph(g);
}

/// (L_rd)^T L_rd
inline SparseMatrix symmetrized_dglr_matrix(const SparseMatrix& l_rd) {
  detail::require(l_rd.square(), "symmetrized_dglr_matrix: L_rd must be square");
  return l_rd.gram();
}

/// Symmetric normalized Laplacian I - D^{-1/2} W D^{-1/2} of a weighted
/// undirected graph given by its (symmetric) adjacency. Isolated nodes get a
/// zero row.
inline SparseMatrix normalized_laplacian(const SparseMatrix& adjacency) {
  const std::size_t n = adjacency.rows();
  Vector inv_sqrt(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const double d = adjacency.row_sum(r);
    if (d > 0.0) inv_sqrt[r] = 1.0 / std::sqrt(d);
  }
  std::vector<SparseMatrix::Triplet> t;
  t.reserve(adjacency.nnz() + n);
  for (std::size_t r = 0; r < n; ++r)
    if (inv_sqrt[r] > 0.0) t.push_back({r, r, 1.0});
  adjacency.for_each([&](std::size_t r, std::size_t c, double v) {
    t.push_back({r, c, -v * inv_sqrt[r] * inv_sqrt[c]});
  });
  return SparseMatrix::from_triplets(n, n, std::move(t), SparseMatrix::Duplicates::kSum);
}

/// Undirected copy of the temporal skeleton; each edge keeps the average of
/// its two orientations, (w_ij + w_ji) / 2, where the reverse orientation is 0.
inline SparseMatrix symmetrized_temporal_adjacency(const TemporalSkeleton& skel, std::span<const double> weights) {
  detail::require_same_size(weights.size(), skel.edges.size(), "directed weights");
  std::vector<SparseMatrix::Triplet> t;
  t.reserve(2 * skel.edges.size());
  for (std::size_t e = 0; e < skel.edges.size(); ++e) {
    const double w = 0.5 * weights[e];
    t.push_back({skel.edges[e].from, skel.edges[e].to, w});
    t.push_back({skel.edges[e].to, skel.edges[e].from, w});
  }
  const std::size_t n = skel.node_count();
  return SparseMatrix::from_triplets(n, n, std::move(t), SparseMatrix::Duplicates::kSum);
}

/// The assembled operators of one mixed spatial/temporal graph. Immutable
/// after assembly and safe to share between threads.
struct MixedGraph {
  std::size_t station_count = 0;
  std::size_t instant_count = 0;
  std::size_t observed_instants = 0;  // instants 0..T are observed

  SparseMatrix adjacency_u;       // W_u, block diagonal
  SparseMatrix laplacian_u;       // L_u
  SparseMatrix walk_adjacency;    // W_rd
  SparseMatrix walk_laplacian;    // L_rd
  SparseMatrix walk_laplacian_t;  // L_rd^T
  SparseMatrix dglr_matrix;       // L_rd^T L_rd
  SparseMatrix temporal_normalized_laplacian;  // L_n of the undirected temporal graph
  std::vector<std::uint8_t> observed_mask;    // H^T H diagonal

  std::size_t node_count() const { return station_count * instant_count; }
  std::size_t observed_count() const { return station_count * observed_instants; }
};

/// Assembles every operator of the mixed graph from skeleton weights.
inline MixedGraph assemble_mixed_graph(const SpatialSkeleton& spatial, const TemporalSkeleton& temporal,
                                       const UndirectedWeights& weights_u, std::span<const double> weights_d,
                                       std::size_t observed_instants) {
  detail::require_same_size(spatial.station_count, temporal.station_count, "skeleton station counts");
  detail::require_same_size(weights_u.per_instant.size(), temporal.instant_count, "undirected weight instants");
  detail::require(observed_instants >= 1 && observed_instants <= temporal.instant_count,
                  "observed instants must be in [1, instant count]");
  MixedGraph g;
  g.station_count = spatial.station_count;
  g.instant_count = temporal.instant_count;
  g.observed_instants = observed_instants;
  g.adjacency_u = assemble_undirected_adjacency(spatial, weights_u);
  g.laplacian_u = assemble_undirected_laplacian(spatial, weights_u);
  auto walk = assemble_random_walk_digraph(temporal, weights_d);
  g.walk_adjacency = std::move(walk.adjacency);
  g.walk_laplacian = std::move(walk.laplacian);
  g.walk_laplacian_t = g.walk_laplacian.transpose();
  g.dglr_matrix = symmetrized_dglr_matrix(g.walk_laplacian);
  g.temporal_normalized_laplacian = normalized_laplacian(symmetrized_temporal_adjacency(temporal, weights_d));
  g.observed_mask.assign(g.node_count(), 0);
  std::fill(g.observed_mask.begin(), g.observed_mask.begin() + static_cast<std::ptrdiff_t>(g.observed_count()), 1);
  return g;
}

enum class Operator { kUndirectedLaplacian, kWalkLaplacian, kWalkLaplacianTranspose, kDglr, kTemporalNormalized };

/// Sparse local product of one graph operator; the DGLR matrix is applied as
/// L_rd^T (L_rd x).
inline void apply_operator(const MixedGraph& g, Operator op, std::span<const double> x, std::span<double> out) {
  detail::require_same_size(x.size(), g.node_count(), "apply_operator input");
  detail::require_same_size(out.size(), g.node_count(), "apply_operator output");
  switch (op) {
    case Operator::kUndirectedLaplacian:
      g.laplacian_u.multiply(x, out);
      return;
    case Operator::kWalkLaplacian:
      g.walk_laplacian.multiply(x, out);
      return;
    case Operator::kWalkLaplacianTranspose:
      g.walk_laplacian_t.multiply(x, out);
      return;
    case Operator::kDglr: {
      Vector tmp(x.size());
      g.walk_laplacian.multiply(x, tmp);
      g.walk_laplacian_t.multiply(tmp, out);
      return;
    }
    case Operator::kTemporalNormalized:
      g.temporal_normalized_laplacian.multiply(x, out);
      return;
  }
}

inline Vector apply_operator(const MixedGraph& g, Operator op, std::span<const double> x) {
  Vector out(x.size());
  apply_operator(g, op, x, out);
  return out;
}

}  // namespace mixgraph
