#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mixgraph/dense.hpp"
#include "mixgraph/error.hpp"
#include "mixgraph/graph.hpp"
#include "mixgraph/sparse.hpp"

namespace mixgraph {

constexpr std::size_t kTemporalEmbeddingDim = 10;

/// Fixed sine-cosine position embedding: e[2i] = sin(t / 10000^i),
/// e[2i+1] = cos(t / 10000^i), i = 0..4.
inline std::array<double, kTemporalEmbeddingDim> temporal_embedding(double t) {
  std::array<double, kTemporalEmbeddingDim> e{};
  for (std::size_t i = 0; i < kTemporalEmbeddingDim / 2; ++i) {
    const double arg = t / std::pow(10000.0, static_cast<double>(i));
    e[2 * i] = std::sin(arg);
    e[2 * i + 1] = std::cos(arg);
  }
  return e;
}

/// Laplacian eigenmap of the unit-weight physical graph: the eigenvectors
/// after the first (smallest) one, each with its first nonzero component
/// made positive. Columns beyond N-1 are zero.
struct SpatialEigenmap {
  static constexpr std::size_t kMaxStations = 1024;

  DenseMatrix coords;  // stations x dim
  bool connected = true;

  std::size_t dim() const { return coords.cols(); }

  static SpatialEigenmap compute(const PhysicalGraph& pg, std::size_t dim) {
    pg.validate();
    const std::size_t n = pg.station_count;
    detail::require(n >= 1 && n <= kMaxStations, "spatial eigenmap: station count out of range");
    DenseMatrix lap(n, n);
    for (const auto& e : pg.edges) {
      lap(e.from, e.to) -= 1.0;
      lap(e.to, e.from) -= 1.0;
      lap(e.from, e.from) += 1.0;
      lap(e.to, e.to) += 1.0;
    }
    const Spectrum s = jacobi_eigen(lap);
    SpatialEigenmap map;
    map.connected = pg.connected();
    map.coords = DenseMatrix(n, dim);
    for (std::size_t c = 0; c < dim && c + 1 < n; ++c) {
      Vector v = s.eigenvectors.column(c + 1);
      for (double a : v) {
        if (std::abs(a) > 1e-12) {
          if (a < 0) for (double& b : v) b = -b;
          break;
        }
      }
      for (std::size_t r = 0; r < n; ++r) map.coords(r, c) = v[r];
    }
    return map;
  }
};

/// Per-node embedding rows [x; spatial eigenmap; temporal embedding] in flat
/// (time-major) node order. `time_stamps` holds one position per instant.
inline DenseMatrix embed(std::span<const double> x, const SpatialEigenmap& map, std::span<const double> time_stamps) {
  const std::size_t n = map.coords.rows();
  const std::size_t instants = time_stamps.size();
  detail::require_same_size(x.size(), n * instants, "embed signal");
  const std::size_t e_dim = 1 + map.dim() + kTemporalEmbeddingDim;
  DenseMatrix out(n * instants, e_dim);
  for (std::size_t t = 0; t < instants; ++t) {
    const auto te = temporal_embedding(time_stamps[t]);
    for (std::size_t s = 0; s < n; ++s) {
      auto row = out.row(t * n + s);
      row[0] = x[t * n + s];
      for (std::size_t c = 0; c < map.dim(); ++c) row[1 + c] = map.coords(s, c);
      std::copy(te.begin(), te.end(), row.begin() + static_cast<std::ptrdiff_t>(1 + map.dim()));
    }
  }
  return out;
}

/// Fixed feature function: optional one-hop spatial neighbour averaging of
/// the embedding, a linear projection E -> K, then optional Swish.
struct FeatureMap {
  static constexpr double kSwishBeta = 0.8;

  DenseMatrix projection;  // K x E
  bool neighbor_mean = false;
  bool swish = false;

  /// Projection keeping the leading K embedding coordinates.
  static FeatureMap leading(std::size_t embedding_dim, std::size_t k) {
    detail::require(k >= 1, "feature dimension must be >= 1");
    FeatureMap f;
    f.projection = DenseMatrix(k, embedding_dim);
    for (std::size_t i = 0; i < std::min(k, embedding_dim); ++i) f.projection(i, i) = 1.0;
    return f;
  }

  std::size_t output_dim() const { return projection.rows(); }

  DenseMatrix apply(const DenseMatrix& embedding, const SpatialSkeleton& skel) const {
    detail::require_same_size(embedding.cols(), projection.cols(), "feature map input dimension");
    for (double v : projection.data()) detail::require(std::isfinite(v), "feature projection must be finite");
    const std::size_t n = skel.station_count;
    const std::size_t nodes = embedding.rows();
    const std::size_t k = projection.rows();
    DenseMatrix out(nodes, k);
    Vector e(embedding.cols());
    for (std::size_t node = 0; node < nodes; ++node) {
      auto src = embedding.row(node);
      std::copy(src.begin(), src.end(), e.begin());
      if (neighbor_mean) {
        const std::size_t s = node % n, base = node - s;
        const auto& nb = skel.neighbors[s];
        if (!nb.empty()) {
          for (std::size_t c = 0; c < e.size(); ++c) {
            double m = 0.0;
            for (std::size_t j : nb) m += embedding(base + j, c);
            e[c] = 0.5 * (e[c] + m / static_cast<double>(nb.size()));
          }
        }
      }
      for (std::size_t r = 0; r < k; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < e.size(); ++c) acc += projection(r, c) * e[c];
        if (swish) acc = acc / (1.0 + std::exp(-kSwishBeta * acc));
        out(node, r) = acc;
      }
    }
    return out;
  }
};

/// PSD metric M = M0^T M0 held through its factor M0.
struct MetricMatrix {
  DenseMatrix factor;

  static MetricMatrix scaled_identity(std::size_t k, double diag) { return {DenseMatrix::identity(k, diag)}; }

  DenseMatrix metric() const { return factor.transpose() * factor; }

  /// (a - b)^T M (a - b) = ||M0 (a - b)||^2
  double distance(std::span<const double> a, std::span<const double> b) const {
    detail::require_same_size(a.size(), b.size(), "mahalanobis operands");
    detail::require_same_size(a.size(), factor.cols(), "mahalanobis metric");
    double total = 0.0;
    for (std::size_t r = 0; r < factor.rows(); ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < factor.cols(); ++c) acc += factor(r, c) * (a[c] - b[c]);
      total += acc * acc;
    }
    return total;
  }
};

inline double mahalanobis(std::span<const double> a, std::span<const double> b, const MetricMatrix& m) {
  return m.distance(a, b);
}

/// Metrics of every head: one per instant for spatial edges, one per lag for
/// temporal edges.
struct MetricBank {
  static constexpr double kUndirectedDiag = 1.5;

  std::vector<std::vector<MetricMatrix>> undirected;  // [head][instant]
  std::vector<std::vector<MetricMatrix>> directed;    // [head][lag - 1]

  std::size_t heads() const { return undirected.size(); }

  /// M0 = 1.5 I per instant, P0 = (1 + 0.2 w / W) I per lag w.
  static MetricBank initial(std::size_t k, std::size_t instants, std::size_t window, std::size_t heads) {
    detail::require(heads >= 1, "metric bank needs at least one head");
    MetricBank b;
    b.undirected.assign(heads, std::vector<MetricMatrix>(instants, MetricMatrix::scaled_identity(k, kUndirectedDiag)));
    b.directed.resize(heads);
    for (auto& lags : b.directed) {
      for (std::size_t w = 1; w <= window; ++w) {
        lags.push_back(MetricMatrix::scaled_identity(
            k, 1.0 + 0.2 * static_cast<double>(w) / static_cast<double>(window)));
      }
    }
    return b;
  }

  void validate(std::size_t k, std::size_t instants, std::size_t window) const {
    detail::require(heads() >= 1 && directed.size() == heads(), "metric bank head counts disagree");
    for (std::size_t h = 0; h < heads(); ++h) {
      detail::require(undirected[h].size() == instants,
                      "metric bank head " + std::to_string(h) + ": need one undirected metric per instant");
      detail::require(directed[h].size() == window,
                      "metric bank head " + std::to_string(h) + ": need one directed metric per lag");
      for (const auto* set : {&undirected[h], &directed[h]}) {
        for (const auto& m : *set) {
          detail::require(m.factor.cols() == k && m.factor.rows() >= 1, "metric factor must have K columns");
          for (double v : m.factor.data()) detail::require(std::isfinite(v), "metric factor must be finite");
        }
      }
    }
  }
};

namespace detail {
inline double log_sum_exp_neg(std::span<const double> d) {
  double lo = std::numeric_limits<double>::infinity();
  for (double v : d) lo = std::min(lo, v);
  if (!std::isfinite(lo)) throw InvalidArgument("all attention distances are infinite (degenerate)");
  double s = 0.0;
  for (double v : d) s += std::exp(-(v - lo));
  return -lo + std::log(s);
}
}  // namespace detail

/// Spatial edge weights per instant:
///   w_ij = exp(-d_ij) / (sqrt(sum_{l in N_i} exp(-d_il)) sqrt(sum_{k in N_j} exp(-d_kj)))
/// evaluated in log space. Each unordered pair is computed once.
inline UndirectedWeights undirected_weights(const DenseMatrix& features, const SpatialSkeleton& skel,
                                            std::span<const MetricMatrix> per_instant) {
  const std::size_t n = skel.station_count;
  const std::size_t instants = per_instant.size();
  detail::require_same_size(features.rows(), n * instants, "undirected_weights features");
  UndirectedWeights w;
  w.per_instant.assign(instants, Vector(skel.edges.size(), 0.0));
  std::vector<Vector> incident(n);
  for (std::size_t t = 0; t < instants; ++t) {
    const std::size_t base = t * n;
    Vector dist(skel.edges.size());
    for (auto& v : incident) v.clear();
    for (std::size_t e = 0; e < skel.edges.size(); ++e) {
      const auto [a, b] = skel.edges[e];
      dist[e] = per_instant[t].distance(features.row(base + a), features.row(base + b));
      if (std::isnan(dist[e])) throw InvalidArgument("non-finite attention distance");
      incident[a].push_back(dist[e]);
      incident[b].push_back(dist[e]);
    }
    Vector lse(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      if (!incident[i].empty()) lse[i] = detail::log_sum_exp_neg(incident[i]);
    for (std::size_t e = 0; e < skel.edges.size(); ++e) {
      const auto [a, b] = skel.edges[e];
      w.per_instant[t][e] = std::exp(-dist[e] - 0.5 * lse[a] - 0.5 * lse[b]);
    }
  }
  return w;
}

/// Temporal edge weights: softmax of -d over the predecessors of each child,
/// so the incoming weights of every non-source node sum to one. The metric
/// is chosen by the edge lag.
inline Vector directed_weights(const DenseMatrix& features, const TemporalSkeleton& skel,
                               std::span<const MetricMatrix> per_lag) {
  detail::require_same_size(features.rows(), skel.node_count(), "directed_weights features");
  Vector w(skel.edges.size(), 0.0);
  Vector dist;
  for (std::size_t child = 0; child < skel.node_count(); ++child) {
    const auto in = skel.incoming(child);
    if (in.empty()) continue;
    dist.assign(in.size(), 0.0);
    for (std::size_t k = 0; k < in.size(); ++k) {
      detail::require(in[k].lag >= 1 && in[k].lag <= per_lag.size(), "no metric for temporal lag");
      dist[k] = per_lag[in[k].lag - 1].distance(features.row(child), features.row(in[k].from));
      if (std::isnan(dist[k])) throw InvalidArgument("non-finite attention distance");
    }
    const double lse = detail::log_sum_exp_neg(dist);
    const std::size_t offset = skel.child_offsets[child];
    for (std::size_t k = 0; k < in.size(); ++k) w[offset + k] = std::exp(-dist[k] - lse);
  }
  return w;
}

inline MixedGraph build_mixed_graph(const UndirectedWeights& weights_u, std::span<const double> weights_d,
                                    const SpatialSkeleton& spatial, const TemporalSkeleton& temporal,
                                    std::size_t observed_instants) {
  return assemble_mixed_graph(spatial, temporal, weights_u, weights_d, observed_instants);
}

/// One mixed graph per head of `bank`, each from its own metrics.
inline std::vector<MixedGraph> multi_head_graphs(const DenseMatrix& features, const MetricBank& bank,
                                                 const SpatialSkeleton& spatial, const TemporalSkeleton& temporal,
                                                 std::size_t observed_instants) {
  std::vector<MixedGraph> graphs;
  graphs.reserve(bank.heads());
  for (std::size_t h = 0; h < bank.heads(); ++h) {
    const auto wu = undirected_weights(features, spatial, bank.undirected[h]);
    const auto wd = directed_weights(features, temporal, bank.directed[h]);
    graphs.push_back(build_mixed_graph(wu, wd, spatial, temporal, observed_instants));
  }
  return graphs;
}

}  // namespace mixgraph
