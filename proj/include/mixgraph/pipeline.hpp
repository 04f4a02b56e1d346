#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mixgraph/admm.hpp"
#include "mixgraph/cg.hpp"
#include "mixgraph/dense.hpp"
#include "mixgraph/error.hpp"
#include "mixgraph/graph.hpp"
#include "mixgraph/graph_learn.hpp"
#include "mixgraph/sparse.hpp"

namespace mixgraph {

/// Per-station affine normalization fitted on training rows.
struct Standardizer {
  Vector mean;
  Vector stddev;
  std::vector<std::uint8_t> constant;  // station had zero spread; stddev forced to 1

  std::size_t stations() const { return mean.size(); }

  static Standardizer identity(std::size_t stations) {
    return {Vector(stations, 0.0), Vector(stations, 1.0), std::vector<std::uint8_t>(stations, 0)};
  }

  /// `values` is time x station.
  static Standardizer fit(const DenseMatrix& values) {
    detail::require(values.rows() >= 1 && values.cols() >= 1, "standardizer: no training rows");
    const std::size_t n = values.cols(), rows = values.rows();
    Standardizer s = identity(n);
    for (std::size_t c = 0; c < n; ++c) {
      double m = 0.0;
      for (std::size_t r = 0; r < rows; ++r) m += values(r, c);
      m /= static_cast<double>(rows);
      double v = 0.0;
      for (std::size_t r = 0; r < rows; ++r) v += (values(r, c) - m) * (values(r, c) - m);
      const double sd = std::sqrt(v / static_cast<double>(rows));
      s.mean[c] = m;
      if (sd > 0.0 && std::isfinite(sd)) {
        s.stddev[c] = sd;
      } else {
        s.constant[c] = 1;
      }
    }
    return s;
  }

  double forward(std::size_t station, double v) const { return (v - mean[station]) / stddev[station]; }
  double inverse(std::size_t station, double v) const { return v * stddev[station] + mean[station]; }

  /// Applies to a station x time matrix.
  DenseMatrix forward(const DenseMatrix& m) const {
    detail::require_same_size(m.rows(), stations(), "standardizer stations");
    DenseMatrix out = m;
    for (std::size_t s = 0; s < m.rows(); ++s)
      for (std::size_t t = 0; t < m.cols(); ++t) out(s, t) = forward(s, m(s, t));
    return out;
  }

  DenseMatrix inverse(const DenseMatrix& m) const {
    detail::require_same_size(m.rows(), stations(), "standardizer stations");
    DenseMatrix out = m;
    for (std::size_t s = 0; s < m.rows(); ++s)
      for (std::size_t t = 0; t < m.cols(); ++t) out(s, t) = inverse(s, m(s, t));
    return out;
  }
};

/// One forecasting window: T+1 observed instants followed by S target
/// instants. `steps` holds the absolute series index of every instant.
struct Sample {
  DenseMatrix observed;  // stations x (T+1)
  DenseMatrix target;    // stations x S
  std::vector<double> steps;

  std::size_t stations() const { return observed.rows(); }
  std::size_t history() const { return observed.cols(); }
  std::size_t horizon() const { return target.cols(); }
  std::size_t instants() const { return history() + horizon(); }

  void validate() const {
    detail::require(history() >= 1, "sample needs at least one observed instant");
    detail::require(target.rows() == 0 || target.rows() == stations(), "sample target station count");
    detail::require_same_size(steps.size(), instants(), "sample time steps");
  }

  /// Observed then target, stations x (T+1+S).
  DenseMatrix full() const {
    DenseMatrix out(stations(), instants());
    for (std::size_t s = 0; s < stations(); ++s) {
      for (std::size_t t = 0; t < history(); ++t) out(s, t) = observed(s, t);
      for (std::size_t t = 0; t < horizon(); ++t) out(s, history() + t) = target(s, t);
    }
    return out;
  }
};

/// Station x time matrix to time-major flat signal.
inline Vector flatten(const DenseMatrix& m) {
  Vector x(m.rows() * m.cols());
  for (std::size_t s = 0; s < m.rows(); ++s)
    for (std::size_t t = 0; t < m.cols(); ++t) x[t * m.rows() + s] = m(s, t);
  return x;
}

inline DenseMatrix unflatten(std::span<const double> x, std::size_t stations) {
  detail::require(stations >= 1 && x.size() % stations == 0, "signal length is not a multiple of the station count");
  const std::size_t instants = x.size() / stations;
  DenseMatrix m(stations, instants);
  for (std::size_t t = 0; t < instants; ++t)
    for (std::size_t s = 0; s < stations; ++s) m(s, t) = x[t * stations + s];
  return m;
}

enum class Extrapolation { kHoldLast, kLinearTrend, kSeasonalNaive };

inline std::string_view to_string(Extrapolation e) {
  switch (e) {
    case Extrapolation::kHoldLast: return "hold_last";
    case Extrapolation::kLinearTrend: return "linear_trend";
    case Extrapolation::kSeasonalNaive: return "seasonal_naive";
  }
  return "?";
}

inline Extrapolation parse_extrapolation(std::string_view name) {
  if (name == "hold_last") return Extrapolation::kHoldLast;
  if (name == "linear_trend") return Extrapolation::kLinearTrend;
  if (name == "seasonal_naive") return Extrapolation::kSeasonalNaive;
  throw InvalidArgument("unknown extrapolation method '" + std::string(name) + "'");
}

constexpr std::size_t kTrendPoints = 6;

/// Extends a stations x (T+1) history by `horizon` instants. The result is
/// stations x (T+1+horizon) with the history copied verbatim. `season` is
/// the repeat period of kSeasonalNaive (0 means T+1).
inline DenseMatrix initial_extrapolation(const DenseMatrix& observed, std::size_t horizon, Extrapolation method,
                                         std::size_t season = 0) {
  const std::size_t n = observed.rows(), hist = observed.cols();
  detail::require(hist >= 1, "extrapolation needs at least one observed instant");
  for (double v : observed.data()) detail::require(std::isfinite(v), "extrapolation: observed history has a gap");
  DenseMatrix out(n, hist + horizon);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t t = 0; t < hist; ++t) out(s, t) = observed(s, t);
  for (std::size_t s = 0; s < n; ++s) {
    switch (method) {
      case Extrapolation::kHoldLast:
        for (std::size_t h = 0; h < horizon; ++h) out(s, hist + h) = observed(s, hist - 1);
        break;
      case Extrapolation::kLinearTrend: {
        const std::size_t m = std::min(kTrendPoints, hist);
        const std::size_t first = hist - m;
        double tm = 0.0, vm = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          tm += static_cast<double>(i);
          vm += observed(s, first + i);
        }
        tm /= static_cast<double>(m);
        vm /= static_cast<double>(m);
        double sxy = 0.0, sxx = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          const double dt = static_cast<double>(i) - tm;
          sxy += dt * (observed(s, first + i) - vm);
          sxx += dt * dt;
        }
        const double slope = sxx > 0.0 ? sxy / sxx : 0.0;
        for (std::size_t h = 0; h < horizon; ++h) {
          const double t = static_cast<double>(m - 1 + h + 1);
          out(s, hist + h) = vm + slope * (t - tm);
        }
        break;
      }
      case Extrapolation::kSeasonalNaive: {
        const std::size_t p = season == 0 ? hist : season;
        detail::require(p >= 1 && p <= hist, "seasonal period must be in [1, T+1]");
        for (std::size_t h = 0; h < horizon; ++h) out(s, hist + h) = out(s, hist + h - p);
        break;
      }
    }
  }
  return out;
}

/// Everything run_forecast needs besides the data. Empty tables are filled
/// with defaults by `resolve`.
struct PipelineConfig {
  std::size_t history = 12;  // T+1
  std::size_t horizon = 12;  // S
  std::size_t blocks = 5;
  std::size_t layers = 25;
  std::size_t heads = 4;
  std::size_t k = 4;       // spatial kNN
  std::size_t window = 6;  // temporal window W
  std::size_t feature_dim = 6;
  std::size_t spatial_dim = 5;
  bool neighbor_mean = false;
  bool swish = false;
  std::optional<DenseMatrix> projection;  // feature_dim x embedding_dim
  std::optional<MetricBank> metrics;
  std::vector<std::vector<LayerParams>> layer_params;  // [block][layer]
  Vector head_weights;                                 // a_h
  Vector residual;                                     // p_b
  CgSchedule cg = CgSchedule::exact(8, CgSchedule::kDefaultTolerance);
  SolverVariant variant = SolverVariant::kFull;
  Extrapolation extrapolation = Extrapolation::kHoldLast;
  std::size_t season = 0;
  double mape_floor = 1.0;

  std::size_t instants() const { return history + horizon; }
  std::size_t embedding_dim() const { return 1 + spatial_dim + kTemporalEmbeddingDim; }

  /// Fills defaults for `stations` and validates every field.
  void resolve(std::size_t stations) {
    detail::require(stations >= 2, "pipeline needs at least two stations");
    detail::require(history >= 2, "history (T+1) must be >= 2");
    detail::require(horizon >= 1, "horizon must be >= 1");
    detail::require(window >= 1 && window < instants(), "window must be in [1, T+S]");
    detail::require(heads >= 1, "heads must be >= 1");
    detail::require(k >= 1, "k must be >= 1");
    detail::require(feature_dim >= 1, "feature_dim must be >= 1");
    if (layer_params.empty()) {
      layer_params.assign(blocks, std::vector<LayerParams>(layers, LayerParams::initial(stations, instants())));
    }
    detail::require(layer_params.size() == blocks, "layers table needs one row per block");
    for (const auto& row : layer_params) {
      detail::require(row.size() == layers, "layers table needs one entry per layer");
      for (const auto& p : row) p.validate();
    }
    if (head_weights.empty()) head_weights.assign(heads, 1.0 / static_cast<double>(heads));
    detail::require(head_weights.size() == heads, "head_weights needs one entry per head");
    for (double a : head_weights) detail::require(std::isfinite(a), "head weights must be finite");
    if (residual.empty()) residual.assign(blocks, 1.0);
    detail::require(residual.size() == blocks, "residual needs one entry per block");
    for (double p : residual) detail::require(p >= 0.0 && p <= 1.0, "residual coefficients must be in [0, 1]");
    if (!projection) projection = FeatureMap::leading(embedding_dim(), feature_dim).projection;
    detail::require(projection->rows() == feature_dim && projection->cols() == embedding_dim(),
                    "projection must be feature_dim x embedding_dim");
    if (!metrics) metrics = MetricBank::initial(feature_dim, instants(), window, heads);
    detail::require(metrics->heads() == heads, "metric bank head count must equal heads");
    metrics->validate(feature_dim, instants(), window);
    cg.validate();
    if (extrapolation == Extrapolation::kSeasonalNaive)
      detail::require(season <= history, "seasonal period must be <= history");
    detail::require(mape_floor >= 0.0, "mape_floor must be nonnegative");
  }
};

/// Runs the block pipeline on samples of one dataset. Construction resolves
/// the config and computes the graph skeletons and spatial eigenmap once;
/// afterwards the object is immutable and safe to share between threads.
class Forecaster {
 public:
  Forecaster(PipelineConfig config, PhysicalGraph physical, Standardizer standardizer)
      : config_(std::move(config)), physical_(std::move(physical)), standardizer_(std::move(standardizer)) {
    physical_.validate();
    config_.resolve(physical_.station_count);
    detail::require_same_size(standardizer_.stations(), physical_.station_count, "standardizer stations");
    spatial_ = build_spatial_skeleton(physical_, config_.k);
    temporal_ = build_temporal_skeleton(physical_.station_count, config_.instants(), config_.window);
    eigenmap_ = SpatialEigenmap::compute(physical_, config_.spatial_dim);
    features_.projection = *config_.projection;
    features_.neighbor_mean = config_.neighbor_mean;
    features_.swish = config_.swish;
  }

  const PipelineConfig& config() const { return config_; }
  const PhysicalGraph& physical() const { return physical_; }
  const Standardizer& standardizer() const { return standardizer_; }
  const SpatialSkeleton& spatial() const { return spatial_; }
  const TemporalSkeleton& temporal() const { return temporal_; }
  bool eigenmap_connected() const { return eigenmap_.connected; }

  /// Standardized initial signal x = [y; extrapolation], time-major.
  Vector initial_signal(const Sample& s) const {
    check(s);
    const DenseMatrix z = standardizer_.forward(s.observed);
    return flatten(initial_extrapolation(z, config_.horizon, config_.extrapolation, config_.season));
  }

  /// The H mixed graphs learned from signal `x` (standardized).
  std::vector<MixedGraph> graphs(std::span<const double> x, const Sample& s) const {
    const DenseMatrix emb = embed(x, eigenmap_, s.steps);
    const DenseMatrix f = features_.apply(emb, spatial_);
    return multi_head_graphs(f, *config_.metrics, spatial_, temporal_, config_.history);
  }

  /// Standardized full reconstruction after all blocks, time-major.
  Vector reconstruct_standardized(const Sample& s) const {
    Vector x = initial_signal(s);
    const std::size_t obs = physical_.station_count * config_.history;
    const Vector y(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(obs));
    Vector merged(x.size());
    for (std::size_t b = 0; b < config_.blocks; ++b) {
      const auto gs = graphs(x, s);
      std::fill(merged.begin(), merged.end(), 0.0);
      for (std::size_t h = 0; h < gs.size(); ++h) {
        Vector xh;
        try {
          xh = admm_block(x, y, gs[h], config_.layer_params[b], config_.cg, config_.variant);
        } catch (const NumericFailure& e) {
          throw NumericFailure("block " + std::to_string(b) + " head " + std::to_string(h) + ": " + e.where(),
                               e.iteration());
        }
        const double a = config_.head_weights[h];
        for (std::size_t i = 0; i < x.size(); ++i) merged[i] += a * xh[i];
      }
      const double p = config_.residual[b];
      for (std::size_t i = 0; i < x.size(); ++i) x[i] = p * merged[i] + (1.0 - p) * x[i];
    }
    return x;
  }

  /// Stations x (T+1+S) reconstruction in raw units.
  DenseMatrix reconstruct(const Sample& s) const {
    return standardizer_.inverse(unflatten(reconstruct_standardized(s), physical_.station_count));
  }

  /// Stations x S forecast in raw units.
  DenseMatrix forecast(const Sample& s) const { return future_block(reconstruct(s)); }

  DenseMatrix future_block(const DenseMatrix& full) const {
    DenseMatrix out(full.rows(), config_.horizon);
    for (std::size_t r = 0; r < full.rows(); ++r)
      for (std::size_t t = 0; t < config_.horizon; ++t) out(r, t) = full(r, config_.history + t);
    return out;
  }

 private:
  void check(const Sample& s) const {
    s.validate();
    detail::require_same_size(s.stations(), physical_.station_count, "sample stations");
    detail::require_same_size(s.history(), config_.history, "sample history length");
  }

  PipelineConfig config_;
  PhysicalGraph physical_;
  Standardizer standardizer_;
  SpatialSkeleton spatial_;
  TemporalSkeleton temporal_;
  SpatialEigenmap eigenmap_;
  FeatureMap features_;
};

/// Hold-last persistence forecast, stations x S.
inline DenseMatrix persistence_forecast(const Sample& s) {
  DenseMatrix out(s.stations(), s.horizon());
  for (std::size_t r = 0; r < s.stations(); ++r)
    for (std::size_t t = 0; t < s.horizon(); ++t) out(r, t) = s.observed(r, s.history() - 1);
  return out;
}

struct ForecastMetrics {
  double rmse = 0.0;
  double mae = 0.0;
  double mape = 0.0;  // percent; NaN when no target exceeds the floor
};

inline ForecastMetrics metrics(std::span<const double> pred, std::span<const double> target,
                               double mape_floor = 1.0) {
  detail::require_same_size(pred.size(), target.size(), "metrics");
  detail::require(!pred.empty(), "metrics of an empty forecast");
  double se = 0.0, ae = 0.0, pe = 0.0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - target[i];
    se += e * e;
    ae += std::abs(e);
    if (std::abs(target[i]) > mape_floor) {
      pe += std::abs(e) / std::abs(target[i]);
      ++counted;
    }
  }
  const double n = static_cast<double>(pred.size());
  return {std::sqrt(se / n), ae / n,
          counted ? 100.0 * pe / static_cast<double>(counted) : std::numeric_limits<double>::quiet_NaN()};
}

/// Mean Huber penalty of pred - target.
inline double huber_loss(std::span<const double> pred, std::span<const double> target, double delta = 1.0) {
  detail::require_same_size(pred.size(), target.size(), "huber_loss");
  detail::require(delta > 0.0, "huber delta must be positive");
  if (pred.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = std::abs(pred[i] - target[i]);
    s += e <= delta ? 0.5 * e * e : delta * (e - 0.5 * delta);
  }
  return s / static_cast<double>(pred.size());
}

/// The spatial adjacency of one instant, stations x stations.
inline SparseMatrix spatial_slice(const MixedGraph& g, std::size_t instant) {
  detail::require(instant < g.instant_count, "instant out of range");
  const std::size_t n = g.station_count, base = instant * n;
  std::vector<SparseMatrix::Triplet> t;
  for (std::size_t r = 0; r < n; ++r) {
    const auto cols = g.adjacency_u.row_cols(base + r);
    const auto vals = g.adjacency_u.row_values(base + r);
    for (std::size_t k = 0; k < cols.size(); ++k) t.push_back({r, cols[k] - base, vals[k]});
  }
  return SparseMatrix::from_triplets(n, n, t);
}

struct PerronResult {
  Vector vector;  // unit 1-norm, positive
  double eigenvalue = 0.0;
  std::size_t iterations = 0;
};

/// Dominant eigenvector of a connected nonnegative symmetric adjacency by
/// power iteration on W + I (the shift keeps bipartite graphs from
/// oscillating without moving the eigenvector).
inline PerronResult perron_centrality(const SparseMatrix& w, double tolerance = 1e-10,
                                      std::size_t max_iterations = 1000000) {
  detail::require(w.square() && w.rows() >= 1, "perron_centrality: adjacency must be square");
  const std::size_t n = w.rows();
  std::vector<std::vector<std::size_t>> adj(n);
  w.for_each([&](std::size_t r, std::size_t c, double v) {
    detail::require(v >= 0.0 && std::isfinite(v), "perron_centrality: adjacency must be nonnegative");
    if (v > 0.0 && r != c) {
      adj[r].push_back(c);
      adj[c].push_back(r);
    }
  });
  std::vector<std::uint8_t> seen(n, 0);
  std::vector<std::size_t> stack{0};
  seen[0] = 1;
  std::size_t reached = 1;
  while (!stack.empty()) {
    const std::size_t u = stack.back();
    stack.pop_back();
    for (std::size_t v : adj[u])
      if (!seen[v]) {
        seen[v] = 1;
        ++reached;
        stack.push_back(v);
      }
  }
  if (reached != n) throw InvalidArgument("perron_centrality: graph is disconnected");

  PerronResult res;
  Vector v(n, 1.0 / static_cast<double>(n)), next(n);
  double change = 0.0;
  for (std::size_t it = 1; it <= max_iterations; ++it) {
    w.multiply(v, next);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      next[i] += v[i];
      sum += next[i];
    }
    change = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      next[i] /= sum;
      change += std::abs(next[i] - v[i]);
    }
    v.swap(next);
    if (change <= tolerance) {
      res.iterations = it;
      res.eigenvalue = sum - 1.0;
      res.vector = std::move(v);
      return res;
    }
  }
  throw NumericFailure("perron_centrality: no convergence, last 1-norm change " + std::to_string(change),
                       max_iterations);
}

}  // namespace mixgraph
