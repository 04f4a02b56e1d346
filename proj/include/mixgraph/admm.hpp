#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mixgraph/cg.hpp"
#include "mixgraph/error.hpp"
#include "mixgraph/graph.hpp"
#include "mixgraph/priors.hpp"
#include "mixgraph/sparse.hpp"

namespace mixgraph {

/// Per-layer scalars of one unrolled ADMM iteration.
struct LayerParams {
  double mu_u = 3.0;
  double mu_d2 = 3.0;
  double mu_d1 = 3.0;
  double rho = 1.0;
  double rho_u = 1.0;
  double rho_d = 1.0;

  /// mu's at 3, rho's at sqrt(N / (T+S+1)).
  static LayerParams initial(std::size_t stations, std::size_t instants) {
    LayerParams p;
    p.rho = p.rho_u = p.rho_d =
        std::sqrt(static_cast<double>(stations) / static_cast<double>(instants));
    return p;
  }

  void validate() const {
    detail::require(mu_u >= 0.0 && mu_d2 >= 0.0 && mu_d1 >= 0.0, "layer mu's must be nonnegative");
    detail::require(rho > 0.0 && rho_u > 0.0 && rho_d > 0.0, "layer rho's must be positive");
    detail::require(std::isfinite(mu_u + mu_d2 + mu_d1 + rho + rho_u + rho_d), "layer params must be finite");
  }

  PriorWeights priors() const { return {mu_u, mu_d2, mu_d1}; }
};

/// Which optimization the block runs. The ablation variants drop or replace
/// terms of the full objective; kDirectUnsplit solves the unsplit x-system
/// each layer instead of the three split systems.
enum class SolverVariant { kFull, kNoDgtv, kNoDglr, kUndirectedTemporal, kDirectUnsplit };

inline std::string_view to_string(SolverVariant v) {
  switch (v) {
    case SolverVariant::kFull: return "full";
    case SolverVariant::kNoDgtv: return "no_dgtv";
    case SolverVariant::kNoDglr: return "no_dglr";
    case SolverVariant::kUndirectedTemporal: return "undirected_temporal";
    case SolverVariant::kDirectUnsplit: return "direct_unsplit";
  }
  return "unknown";
}

inline SolverVariant parse_solver_variant(std::string_view name) {
  for (auto v : {SolverVariant::kFull, SolverVariant::kNoDgtv, SolverVariant::kNoDglr,
                 SolverVariant::kUndirectedTemporal, SolverVariant::kDirectUnsplit}) {
    if (to_string(v) == name) return v;
  }
  throw InvalidArgument("unknown solver variant '" + std::string(name) + "'");
}

namespace detail {
inline bool uses_phi(SolverVariant v) { return v != SolverVariant::kNoDgtv && v != SolverVariant::kUndirectedTemporal; }
inline bool uses_zu(SolverVariant v) { return v != SolverVariant::kDirectUnsplit; }
inline bool uses_zd(SolverVariant v) {
  return v == SolverVariant::kFull || v == SolverVariant::kNoDgtv || v == SolverVariant::kUndirectedTemporal;
}
}  // namespace detail

/// Solver iterate. Variables a variant does not use stay at their initial value.
struct AdmmState {
  Vector x, z_u, z_d, phi, gamma, gamma_u, gamma_d;

  /// phi = L_rd x0, z_u = z_d = x0, multipliers zero.
  static AdmmState initialize(const MixedGraph& g, std::span<const double> x0) {
    detail::require_same_size(x0.size(), g.node_count(), "AdmmState::initialize");
    AdmmState s;
    s.x.assign(x0.begin(), x0.end());
    s.z_u = s.x;
    s.z_d = s.x;
    s.phi = g.walk_laplacian.multiply(x0);
    s.gamma.assign(x0.size(), 0.0);
    s.gamma_u.assign(x0.size(), 0.0);
    s.gamma_d.assign(x0.size(), 0.0);
    return s;
  }
};

namespace detail {

// out = diag * in + a_u L_u in + a_d (L_rd^T L_rd) in + a_n L_n in + c in,
// where diag is the observation mask. Zero coefficients skip their product.
struct SystemOperator {
  explicit SystemOperator(const MixedGraph& graph) : g(graph) {}

  const MixedGraph& g;
  double identity = 0.0;
  double coef_u = 0.0;
  double coef_dglr = 0.0;
  double coef_n = 0.0;
  bool with_mask = true;
  mutable Vector scratch1, scratch2;

  void operator()(std::span<const double> in, std::span<double> out) const {
    const std::size_t n = in.size();
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = identity * in[i] + (with_mask && g.observed_mask[i] ? in[i] : 0.0);
    }
    if (coef_u != 0.0) accumulate(g.laplacian_u, coef_u, in, out);
    if (coef_n != 0.0) accumulate(g.temporal_normalized_laplacian, coef_n, in, out);
    if (coef_dglr != 0.0) {
      scratch1.resize(n);
      scratch2.resize(n);
      g.walk_laplacian.multiply(in, scratch1);
      g.walk_laplacian_t.multiply(scratch1, scratch2);
      for (std::size_t i = 0; i < n; ++i) out[i] += coef_dglr * scratch2[i];
    }
  }

 private:
  void accumulate(const SparseMatrix& m, double c, std::span<const double> in, std::span<double> out) const {
    scratch1.resize(in.size());
    m.multiply(in, scratch1);
    for (std::size_t i = 0; i < in.size(); ++i) out[i] += c * scratch1[i];
  }
};

inline void check_finite(std::span<const double> v, const std::string& where, std::size_t layer) {
  for (double a : v) {
    if (!std::isfinite(a)) throw NumericFailure(where, layer);
  }
}

template <class Op>
Vector solve_or_throw(const Op& op, const Vector& rhs, const Vector& warm, const CgSchedule& sched,
                      const std::string& where, std::size_t layer) {
  try {
    return cg_solve(op, rhs, warm, sched);
  } catch (const NumericFailure& e) {
    throw NumericFailure(where + " (" + e.what() + ")", layer);
  }
}

}  // namespace detail

/// x-update. For the full and no_dglr variants this is the split system
///   (H^T H + rho/2 calL_rd + (rho_u + rho_d)/2 I) x
///     = L_rd^T (gamma/2 + rho/2 phi) - gamma_u/2 + rho_u/2 z_u - gamma_d/2 + rho_d/2 z_d + H^T y
/// with the terms of absent variables dropped; kDirectUnsplit solves
///   (H^T H + mu_u L_u + (mu_d2 + rho/2) calL_rd) x = L_rd^T (rho/2 phi + gamma/2) + H^T y.
/// Warm-started from state.x.
inline Vector update_x(const AdmmState& s, const MixedGraph& g, const LayerParams& p, std::span<const double> y,
                       const CgSchedule& sched, SolverVariant variant = SolverVariant::kFull,
                       std::size_t layer = 0) {
  detail::require_same_size(y.size(), g.observed_count(), "update_x observations");
  const std::size_t n = g.node_count();
  Vector rhs(n, 0.0);
  for (std::size_t i = 0; i < y.size(); ++i) rhs[i] = y[i];

  detail::SystemOperator op{g};
  if (detail::uses_phi(variant)) {
    Vector v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = 0.5 * s.gamma[i] + 0.5 * p.rho * s.phi[i];
    const Vector lt = g.walk_laplacian_t.multiply(v);
    for (std::size_t i = 0; i < n; ++i) rhs[i] += lt[i];
    op.coef_dglr = 0.5 * p.rho;
  }
  if (variant == SolverVariant::kDirectUnsplit) {
    op.coef_u = p.mu_u;
    op.coef_dglr += p.mu_d2;
  }
  if (detail::uses_zu(variant)) {
    for (std::size_t i = 0; i < n; ++i) rhs[i] += -0.5 * s.gamma_u[i] + 0.5 * p.rho_u * s.z_u[i];
    op.identity += 0.5 * p.rho_u;
  }
  if (detail::uses_zd(variant)) {
    for (std::size_t i = 0; i < n; ++i) rhs[i] += -0.5 * s.gamma_d[i] + 0.5 * p.rho_d * s.z_d[i];
    op.identity += 0.5 * p.rho_d;
  }
  return detail::solve_or_throw(op, rhs, s.x, sched, "x-update", layer);
}

/// (mu_u L_u + rho_u/2 I) z_u = gamma_u/2 + rho_u/2 x, warm-started from z_u.
inline Vector update_zu(const AdmmState& s, const MixedGraph& g, const LayerParams& p, const CgSchedule& sched,
                        std::size_t layer = 0) {
  const std::size_t n = g.node_count();
  Vector rhs(n);
  for (std::size_t i = 0; i < n; ++i) rhs[i] = 0.5 * s.gamma_u[i] + 0.5 * p.rho_u * s.x[i];
  detail::SystemOperator op{g};
  op.with_mask = false;
  op.identity = 0.5 * p.rho_u;
  op.coef_u = p.mu_u;
  return detail::solve_or_throw(op, rhs, s.z_u, sched, "z_u-update", layer);
}

/// (mu_d2 calL_rd + rho_d/2 I) z_d = gamma_d/2 + rho_d/2 x. In the
/// undirected-temporal variant calL_rd is replaced by L_n, with mu_d2 and
/// rho_d playing the roles of mu_n and rho_n.
inline Vector update_zd(const AdmmState& s, const MixedGraph& g, const LayerParams& p, const CgSchedule& sched,
                        SolverVariant variant = SolverVariant::kFull, std::size_t layer = 0) {
  const std::size_t n = g.node_count();
  Vector rhs(n);
  for (std::size_t i = 0; i < n; ++i) rhs[i] = 0.5 * s.gamma_d[i] + 0.5 * p.rho_d * s.x[i];
  detail::SystemOperator op{g};
  op.with_mask = false;
  op.identity = 0.5 * p.rho_d;
  if (variant == SolverVariant::kUndirectedTemporal) {
    op.coef_n = p.mu_d2;
  } else {
    op.coef_dglr = p.mu_d2;
  }
  return detail::solve_or_throw(op, rhs, s.z_d, sched, "z_d-update", layer);
}

inline double soft_threshold(double v, double threshold) {
  const double mag = std::abs(v) - threshold;
  if (mag <= 0.0) return 0.0;
  return v > 0.0 ? mag : -mag;
}

/// phi_i = soft(delta_i, mu_d1 / rho) with delta = L_rd x - gamma / rho.
inline Vector update_phi(std::span<const double> x, std::span<const double> gamma, const SparseMatrix& walk_laplacian,
                         const LayerParams& p) {
  detail::require(p.rho > 0.0, "update_phi: rho must be positive");
  detail::require_same_size(x.size(), gamma.size(), "update_phi");
  Vector phi = walk_laplacian.multiply(x);
  const double t = p.mu_d1 / p.rho;
  for (std::size_t i = 0; i < phi.size(); ++i) phi[i] = soft_threshold(phi[i] - gamma[i] / p.rho, t);
  return phi;
}

struct Multipliers {
  Vector gamma, gamma_u, gamma_d;
};

/// gamma += rho (phi - L_rd x); gamma_u += rho_u (x - z_u); gamma_d += rho_d (x - z_d),
/// evaluated at the already-updated primal variables of `s`.
inline Multipliers update_multipliers(const AdmmState& s, const MixedGraph& g, const LayerParams& p,
                                      SolverVariant variant = SolverVariant::kFull) {
  const std::size_t n = g.node_count();
  Multipliers m{s.gamma, s.gamma_u, s.gamma_d};
  if (detail::uses_phi(variant)) {
    const Vector lx = g.walk_laplacian.multiply(s.x);
    for (std::size_t i = 0; i < n; ++i) m.gamma[i] += p.rho * (s.phi[i] - lx[i]);
  }
  if (detail::uses_zu(variant)) {
    for (std::size_t i = 0; i < n; ++i) m.gamma_u[i] += p.rho_u * (s.x[i] - s.z_u[i]);
  }
  if (detail::uses_zd(variant)) {
    for (std::size_t i = 0; i < n; ++i) m.gamma_d[i] += p.rho_d * (s.x[i] - s.z_d[i]);
  }
  return m;
}

/// Objective minimized by `variant`: the full objective with the dropped
/// terms removed, or GLR on the undirected temporal graph for
/// kUndirectedTemporal (weight mu_d2).
inline double variant_objective(std::span<const double> x, std::span<const double> y, const MixedGraph& g,
                                 const LayerParams& p, SolverVariant variant) {
  PriorWeights w = p.priors();
  switch (variant) {
    case SolverVariant::kFull:
    case SolverVariant::kDirectUnsplit:
      return objective(x, y, g, w);
    case SolverVariant::kNoDgtv:
      w.mu_d1 = 0.0;
      return objective(x, y, g, w);
    case SolverVariant::kNoDglr:
      w.mu_d2 = 0.0;
      return objective(x, y, g, w);
    case SolverVariant::kUndirectedTemporal: {
      const Vector ln = g.temporal_normalized_laplacian.multiply(x);
      return fidelity(x, y, g) + p.mu_u * glr(x, g.laplacian_u) + p.mu_d2 * dot(x, ln);
    }
  }
  return 0.0;
}

struct TraceRow {
  std::size_t layer = 0;
  double objective = 0.0;
  double res_phi = 0.0;  // ||phi - L_rd x||
  double res_zu = 0.0;   // ||x - z_u||
  double res_zd = 0.0;   // ||x - z_d||
};

using AdmmTrace = std::vector<TraceRow>;

/// Runs one ADMM layer in place: x, z_u, z_d, phi, then the multipliers.
inline void admm_layer(AdmmState& s, const MixedGraph& g, const LayerParams& p, std::span<const double> y,
                       const CgSchedule& sched, SolverVariant variant, std::size_t layer) {
  p.validate();
  s.x = update_x(s, g, p, y, sched, variant, layer);
  detail::check_finite(s.x, "x-update", layer);
  if (detail::uses_zu(variant)) {
    s.z_u = update_zu(s, g, p, sched, layer);
    detail::check_finite(s.z_u, "z_u-update", layer);
  }
  if (detail::uses_zd(variant)) {
    s.z_d = update_zd(s, g, p, sched, variant, layer);
    detail::check_finite(s.z_d, "z_d-update", layer);
  }
  if (detail::uses_phi(variant)) {
    s.phi = update_phi(s.x, s.gamma, g.walk_laplacian, p);
    detail::check_finite(s.phi, "phi-update", layer);
  }
  Multipliers m = update_multipliers(s, g, p, variant);
  s.gamma = std::move(m.gamma);
  s.gamma_u = std::move(m.gamma_u);
  s.gamma_d = std::move(m.gamma_d);
  detail::check_finite(s.gamma, "multiplier-update", layer);
  detail::check_finite(s.gamma_u, "multiplier-update", layer);
  detail::check_finite(s.gamma_d, "multiplier-update", layer);
}

inline TraceRow trace_row(const AdmmState& s, const MixedGraph& g, const LayerParams& p, std::span<const double> y,
                          SolverVariant variant, std::size_t layer) {
  TraceRow row;
  row.layer = layer;
  row.objective = variant_objective(s.x, y, g, p, variant);
  const std::size_t n = s.x.size();
  if (detail::uses_phi(variant)) {
    const Vector lx = g.walk_laplacian.multiply(s.x);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += (s.phi[i] - lx[i]) * (s.phi[i] - lx[i]);
    row.res_phi = std::sqrt(acc);
  }
  double au = 0.0, ad = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (detail::uses_zu(variant)) au += (s.x[i] - s.z_u[i]) * (s.x[i] - s.z_u[i]);
    if (detail::uses_zd(variant)) ad += (s.x[i] - s.z_d[i]) * (s.x[i] - s.z_d[i]);
  }
  row.res_zu = std::sqrt(au);
  row.res_zd = std::sqrt(ad);
  return row;
}

/// One unrolled ADMM block: initialize from x0, run one layer per entry of
/// `layers`, return the full final state. phi and the multipliers carry
/// across layers; phi is derived from x0 only at block entry.
inline AdmmState admm_run(std::span<const double> x0, std::span<const double> y, const MixedGraph& g,
                          std::span<const LayerParams> layers, const CgSchedule& sched,
                          SolverVariant variant = SolverVariant::kFull, AdmmTrace* trace = nullptr) {
  detail::require(!layers.empty(), "admm_block: need at least one layer");
  AdmmState s = AdmmState::initialize(g, x0);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    admm_layer(s, g, layers[l], y, sched, variant, l);
    if (trace) trace->push_back(trace_row(s, g, layers[l], y, variant, l));
  }
  return s;
}

inline Vector admm_block(std::span<const double> x0, std::span<const double> y, const MixedGraph& g,
                         std::span<const LayerParams> layers, const CgSchedule& sched,
                         SolverVariant variant = SolverVariant::kFull, AdmmTrace* trace = nullptr) {
  return admm_run(x0, y, g, layers, sched, variant, trace).x;
}

}  // namespace mixgraph
