#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mixgraph/admm.hpp"
#include "mixgraph/cg.hpp"
#include "mixgraph/dense.hpp"
#include "mixgraph/graph.hpp"
#include "mixgraph/priors.hpp"
#include "mixgraph/sparse.hpp"

namespace mixgraph {

/// A small random mixed graph with observations, for oracle comparisons.
struct TinyInstance {
  MixedGraph graph;
  Vector y;
};

/// N in [2, max_stations], instants in [2, max_instants], random window,
/// observed prefix, physical graph (a path plus random chords) and weights.
inline TinyInstance random_tiny_instance(std::mt19937_64& rng, std::size_t max_stations = 4,
                                         std::size_t max_instants = 5) {
  detail::require(max_stations >= 2 && max_instants >= 2, "tiny instance bounds too small");
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  std::uniform_real_distribution<double> weight(0.2, 1.5);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t n = pick(2, max_stations);
  const std::size_t instants = pick(2, max_instants);
  const std::size_t window = pick(1, instants - 1);
  const std::size_t observed = pick(1, instants);
  PhysicalGraph pg;
  pg.station_count = n;
  for (std::size_t i = 0; i + 1 < n; ++i) pg.edges.push_back({i, i + 1, weight(rng)});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 2; j < n; ++j)
      if (rng() & 1u) pg.edges.push_back({i, j, weight(rng)});
  const SpatialSkeleton spatial = build_spatial_skeleton(pg, pick(1, n - 1));
  const TemporalSkeleton temporal = build_temporal_skeleton(n, instants, window);
  UndirectedWeights wu;
  wu.per_instant.assign(instants, Vector(spatial.edges.size()));
  for (auto& row : wu.per_instant)
    for (double& w : row) w = weight(rng);
  Vector wd(temporal.edges.size());
  for (double& w : wd) w = weight(rng);
  TinyInstance inst;
  inst.graph = assemble_mixed_graph(spatial, temporal, wu, wd, observed);
  inst.y.resize(inst.graph.observed_count());
  for (double& v : inst.y) v = gauss(rng);
  return inst;
}

namespace detail {

inline DenseMatrix dense_sum(const MixedGraph& g, double mask, double identity,
                             std::initializer_list<std::pair<const SparseMatrix*, double>> terms) {
  const std::size_t n = g.node_count();
  DenseMatrix a(n, n);
  for (std::size_t i = 0; i < n; ++i) a(i, i) = identity + (g.observed_mask[i] ? mask : 0.0);
  for (const auto& [m, c] : terms) {
    if (c == 0.0) continue;
    m->for_each([&](std::size_t r, std::size_t col, double v) { a(r, col) += c * v; });
  }
  return a;
}

inline Vector observed_rhs(const MixedGraph& g, std::span<const double> y) {
  Vector b(g.node_count(), 0.0);
  std::copy(y.begin(), y.end(), b.begin());
  return b;
}

}  // namespace detail

/// Dense minimizer of ||y - Hx||^2 + mu_u x^T L_u x + mu_d2 ||L_rd x||^2.
inline Vector dense_smooth_solution(const MixedGraph& g, std::span<const double> y, const PriorWeights& w) {
  const DenseMatrix q = detail::dense_sum(g, 1.0, 0.0, {{&g.laplacian_u, w.mu_u}, {&g.dglr_matrix, w.mu_d2}});
  return dense_solve(q, detail::observed_rhs(g, y));
}

/// Dense minimizer of ||y - Hx||^2 + mu_u x^T L_u x + mu_n x^T L_n x.
inline Vector dense_undirected_temporal_solution(const MixedGraph& g, std::span<const double> y, double mu_u,
                                                 double mu_n) {
  const DenseMatrix q =
      detail::dense_sum(g, 1.0, 0.0, {{&g.laplacian_u, mu_u}, {&g.temporal_normalized_laplacian, mu_n}});
  return dense_solve(q, detail::observed_rhs(g, y));
}

struct L1OracleResult {
  Vector x;
  double objective = 0.0;
  double gap = 0.0;  // primal - dual at the last iterate
};

/// Minimizes the full objective with mu_d1 > 0 through its box-constrained
/// dual: u in [-mu_d1, mu_d1]^n, x(u) = Q^-1 (b - L^T u / 2) with
/// Q = H^T H + mu_u L_u + mu_d2 L^T L, by accelerated projected gradient.
/// Dense; intended for graphs of a few dozen nodes.
inline L1OracleResult l1_dual_oracle(const MixedGraph& g, std::span<const double> y, const PriorWeights& w,
                                     std::size_t max_iterations = 200000, double gap_tolerance = 1e-11) {
  const std::size_t n = g.node_count();
  const DenseMatrix q = detail::dense_sum(g, 1.0, 0.0, {{&g.laplacian_u, w.mu_u}, {&g.dglr_matrix, w.mu_d2}});
  const DenseMatrix l = DenseMatrix::from_sparse(g.walk_laplacian);
  const Vector b = detail::observed_rhs(g, y);
  // Q^-1 columns, so each iteration is a dense product.
  DenseMatrix qinv(n, n);
  for (std::size_t c = 0; c < n; ++c) {
    Vector e(n, 0.0);
    e[c] = 1.0;
    const Vector col = dense_solve(q, e);
    for (std::size_t r = 0; r < n; ++r) qinv(r, c) = col[r];
  }
  const DenseMatrix lt = l.transpose();
  auto x_of = [&](const Vector& u) {
    Vector v = b;
    const Vector ltu = lt.multiply(u);
    for (std::size_t i = 0; i < n; ++i) v[i] -= 0.5 * ltu[i];
    return qinv.multiply(v);
  };
  // Lipschitz constant of the dual gradient: 0.5 ||L Q^-1 L^T||_2, bounded by Frobenius.
  const double lip = std::max(0.5 * (l * qinv * lt).frobenius(), 1e-12);
  const double yy = dot(y, y);
  auto dual_value = [&](const Vector& u, const Vector& x) {
    // min_x x^T Q x - 2 b^T x + y^T y + u^T L x at x = x(u)
    const Vector qx = q.multiply(x);
    const Vector lx = l.multiply(x);
    return dot(x, qx) - 2.0 * dot(b, x) + yy + dot(u, lx);
  };
  auto primal_value = [&](const Vector& x) { return objective(x, y, g, w); };

  Vector u(n, 0.0), u_prev(n, 0.0), v(n, 0.0);
  double t = 1.0;
  L1OracleResult res;
  Vector best_x = x_of(u);
  double best_primal = primal_value(best_x), best_dual = dual_value(u, best_x);
  for (std::size_t it = 0; it < max_iterations; ++it) {
    const Vector xv = x_of(v);
    const Vector grad = l.multiply(xv);  // ascent direction of the dual
    u_prev = u;
    for (std::size_t i = 0; i < n; ++i) u[i] = std::clamp(v[i] + grad[i] / lip, -w.mu_d1, w.mu_d1);
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    for (std::size_t i = 0; i < n; ++i) v[i] = u[i] + (t - 1.0) / t_next * (u[i] - u_prev[i]);
    t = t_next;
    if (it % 50 == 0 || it + 1 == max_iterations) {
      const Vector xu = x_of(u);
      const double p = primal_value(xu), d = dual_value(u, xu);
      if (p < best_primal) {
        best_primal = p;
        best_x = xu;
      }
      best_dual = std::max(best_dual, d);
      if (best_primal - best_dual <= gap_tolerance * std::max(1.0, std::abs(best_primal))) break;
    }
  }
  res.x = std::move(best_x);
  res.objective = best_primal;
  res.gap = best_primal - best_dual;
  return res;
}

/// Runs `layers` identical ADMM layers with exact CG.
inline AdmmState admm_converge(const MixedGraph& g, std::span<const double> y, const LayerParams& p,
                               std::size_t layers, SolverVariant variant = SolverVariant::kFull) {
  const std::vector<LayerParams> table(layers, p);
  const Vector x0(g.node_count(), 0.0);
  return admm_run(x0, y, g, table, CgSchedule::exact(10 * g.node_count() + 100, 1e-14), variant);
}

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

namespace detail {

template <class Fn>
CheckResult timed_check(const std::string& name, Fn&& fn) {
  CheckResult r;
  r.name = name;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    std::ostringstream os;
    r.passed = fn(os);
    r.detail = os.str();
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline Digraph line_digraph(std::size_t n) {
  Digraph d;
  d.node_count = n;
  for (std::size_t i = 0; i + 1 < n; ++i) d.edges.push_back({i, i + 1, 1.0});
  return d;
}

inline double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

/// Row-stochastic W_rd, symmetric PSD L_u and calL_rd, constants in the
/// null space of L_u and L_rd.
inline bool graph_invariants_hold(const MixedGraph& g, std::ostream& os) {
  const std::size_t n = g.node_count();
  for (std::size_t r = 0; r < n; ++r) {
    if (std::abs(g.walk_adjacency.row_sum(r) - 1.0) > 1e-12) {
      os << "W_rd row " << r << " sums to " << g.walk_adjacency.row_sum(r);
      return false;
    }
  }
  if (g.laplacian_u.asymmetry() != 0.0 || g.dglr_matrix.asymmetry() > 1e-12) {
    os << "asymmetric Laplacian";
    return false;
  }
  const Vector ones(n, 1.0);
  const Vector lu1 = g.laplacian_u.multiply(ones), ld1 = g.walk_laplacian.multiply(ones);
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(lu1[i]) > 1e-12 || std::abs(ld1[i]) > 1e-12) {
      os << "constant not annihilated at node " << i;
      return false;
    }
  }
  if (n <= kDefaultDenseLimit) {
    for (const SparseMatrix* m : {&g.laplacian_u, &g.dglr_matrix}) {
      const Spectrum s = spectrum_dense(*m);
      if (s.eigenvalues.front() < -1e-10) {
        os << "negative eigenvalue " << s.eigenvalues.front();
        return false;
      }
    }
  }
  return true;
}

}  // namespace detail

/// Runs every built-in diagnostic. Deterministic in `seed`.
inline std::vector<CheckResult> run_verification(std::uint64_t seed = 1) {
  std::vector<CheckResult> out;

  out.push_back(detail::timed_check("line digraph DGLR equals line GLR (N = 2..32)", [](std::ostream& os) {
    for (std::size_t n = 2; n <= 32; ++n) {
      const auto ops = assemble_random_walk_digraph(detail::line_digraph(n));
      const SparseMatrix cal = symmetrized_dglr_matrix(ops.laplacian);
      DenseMatrix lu(n, n);
      for (std::size_t i = 0; i + 1 < n; ++i) {
        lu(i, i) += 1;
        lu(i + 1, i + 1) += 1;
        lu(i, i + 1) -= 1;
        lu(i + 1, i) -= 1;
      }
      const double d = detail::max_abs_diff(DenseMatrix::from_sparse(cal), lu);
      if (d != 0.0) {
        os << "N = " << n << ": max difference " << d;
        return false;
      }
    }
    os << "31 sizes exact";
    return true;
  }));

  out.push_back(detail::timed_check("4-node line operators", [](std::ostream& os) {
    const auto ops = assemble_random_walk_digraph(detail::line_digraph(4));
    const DenseMatrix w = DenseMatrix::from_rows({{1, 0, 0, 0}, {1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}});
    const DenseMatrix l = DenseMatrix::from_rows({{0, 0, 0, 0}, {-1, 1, 0, 0}, {0, -1, 1, 0}, {0, 0, -1, 1}});
    const DenseMatrix c = DenseMatrix::from_rows({{1, -1, 0, 0}, {-1, 2, -1, 0}, {0, -1, 2, -1}, {0, 0, -1, 1}});
    const double d = std::max({detail::max_abs_diff(DenseMatrix::from_sparse(ops.adjacency), w),
                               detail::max_abs_diff(DenseMatrix::from_sparse(ops.laplacian), l),
                               detail::max_abs_diff(DenseMatrix::from_sparse(symmetrized_dglr_matrix(ops.laplacian)), c)});
    os << "max difference " << d;
    return d == 0.0;
  }));

  out.push_back(detail::timed_check("DGLR directionality on 3-node DAGs", [](std::ostream& os) {
    const Vector x{2, 0, 1};
    Digraph merge{3, {{0, 2, 1.0}, {1, 2, 1.0}}};
    Digraph split{3, {{2, 0, 1.0}, {2, 1, 1.0}}};
    const double a = dglr(x, assemble_random_walk_digraph(merge).laplacian);
    const double b = dglr(x, assemble_random_walk_digraph(split).laplacian);
    os << "merging DAG " << a << ", splitting DAG " << b;
    return std::abs(a) <= 1e-15 && std::abs(b - 2.0) <= 1e-15;
  }));

  out.push_back(detail::timed_check("soft-threshold prox vs grid search", [seed](std::ostream& os) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> val(-3.0, 3.0), pos(0.5, 5.0), mu(0.0, 3.0);
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
      const double a = val(rng), gamma = val(rng), rho = pos(rng), m = mu(rng);
      LayerParams p;
      p.rho = rho;
      p.mu_d1 = m;
      const double phi = soft_threshold(a - gamma / rho, m / rho);
      // entrywise: mu |phi| + gamma (phi - a) + rho/2 (phi - a)^2
      auto f = [&](double v) { return m * std::abs(v) + gamma * (v - a) + 0.5 * rho * (v - a) * (v - a); };
      double best = 0.0, best_f = std::numeric_limits<double>::infinity();
      for (int k = -100000; k <= 100000; ++k) {
        const double v = k * 1e-4;
        const double fv = f(v);
        if (fv < best_f) {
          best_f = fv;
          best = v;
        }
      }
      worst = std::max(worst, std::abs(best - phi));
    }
    const bool identity = soft_threshold(1.25, 0.0) == 1.25 && soft_threshold(-0.5, 0.5) == 0.0 &&
                          soft_threshold(2.0, 0.5) == 1.5 && soft_threshold(-2.0, 0.5) == -1.5;
    os << "max deviation " << worst;
    return identity && worst <= 1e-3;
  }));

  out.push_back(detail::timed_check("smooth-case ADMM vs dense solve (20 instances)", [seed](std::ostream& os) {
    std::mt19937_64 rng(seed + 1);
    std::uniform_real_distribution<double> mu(0.2, 3.0);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      const TinyInstance inst = random_tiny_instance(rng);
      LayerParams p;
      p.mu_u = mu(rng);
      p.mu_d2 = mu(rng);
      p.mu_d1 = 0.0;
      const Vector xs = dense_smooth_solution(inst.graph, inst.y, p.priors());
      const AdmmState s = admm_converge(inst.graph, inst.y, p, 1500);
      worst = std::max(worst, std::abs(objective(s.x, inst.y, inst.graph, p.priors()) -
                                       objective(xs, inst.y, inst.graph, p.priors())));
    }
    os << "max objective gap " << worst;
    return worst <= 1e-6;
  }));

  out.push_back(detail::timed_check("l1-case ADMM vs dual oracle (10 instances)", [seed](std::ostream& os) {
    std::mt19937_64 rng(seed + 2);
    std::uniform_real_distribution<double> mu(0.2, 2.0);
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
      const TinyInstance inst = random_tiny_instance(rng);
      LayerParams p;
      p.mu_u = mu(rng);
      p.mu_d2 = mu(rng);
      p.mu_d1 = mu(rng);
      const L1OracleResult o = l1_dual_oracle(inst.graph, inst.y, p.priors());
      const AdmmState s = admm_converge(inst.graph, inst.y, p, 3000);
      worst = std::max(worst, std::abs(objective(s.x, inst.y, inst.graph, p.priors()) - o.objective));
    }
    os << "max objective gap " << worst;
    return worst <= 1e-4;
  }));

  out.push_back(detail::timed_check("z-updates equal spectral low-pass filters", [seed](std::ostream& os) {
    std::mt19937_64 rng(seed + 3);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> pos(0.2, 3.0);
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
      const TinyInstance inst = random_tiny_instance(rng, 8, 8);
      const MixedGraph& g = inst.graph;
      const std::size_t n = g.node_count();
      AdmmState s = AdmmState::initialize(g, Vector(n, 0.0));
      for (std::size_t i = 0; i < n; ++i) {
        s.x[i] = gauss(rng);
        s.gamma_u[i] = gauss(rng);
        s.gamma_d[i] = gauss(rng);
      }
      LayerParams p;
      p.mu_u = pos(rng);
      p.mu_d2 = pos(rng);
      p.rho_u = pos(rng);
      p.rho_d = pos(rng);
      const CgSchedule exact = CgSchedule::exact(10 * n, 1e-14);
      const Vector zu = update_zu(s, g, p, exact);
      const Vector zd = update_zd(s, g, p, exact);
      Vector in_u(n), in_d(n);
      for (std::size_t i = 0; i < n; ++i) {
        in_u[i] = s.x[i] + s.gamma_u[i] / p.rho_u;
        in_d[i] = s.x[i] + s.gamma_d[i] / p.rho_d;
      }
      const Vector fu = lowpass_filter(spectrum_dense(g.laplacian_u), 2.0 * p.mu_u / p.rho_u, in_u);
      const Vector fd = lowpass_filter(spectrum_dense(g.dglr_matrix), 2.0 * p.mu_d2 / p.rho_d, in_d);
      for (std::size_t i = 0; i < n; ++i)
        worst = std::max({worst, std::abs(zu[i] - fu[i]), std::abs(zd[i] - fd[i])});
    }
    os << "max deviation " << worst;
    return worst <= 1e-8;
  }));

  out.push_back(detail::timed_check("CG vs dense elimination on SPD systems", [seed](std::ostream& os) {
    std::mt19937_64 rng(seed + 4);
    std::normal_distribution<double> gauss(0.0, 1.0);
    double worst_res = 0.0, worst_err = 0.0;
    for (std::size_t n : {5u, 40u, 120u, 200u}) {
      DenseMatrix b(n, n);
      for (double& v : b.data()) v = gauss(rng);
      DenseMatrix a = b.transpose() * b;
      for (std::size_t i = 0; i < n; ++i) a(i, i) += static_cast<double>(n);
      Vector rhs(n);
      for (double& v : rhs) v = gauss(rng);
      auto apply = [&](std::span<const double> in, std::span<double> o) {
        const Vector r = a.multiply(in);
        std::copy(r.begin(), r.end(), o.begin());
      };
      const Vector x = cg_solve(apply, rhs, Vector(n, 0.0), CgSchedule::exact(10 * n, 1e-12));
      const Vector xd = dense_solve(a, rhs);
      const Vector ax = a.multiply(x);
      double res = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        res += (ax[i] - rhs[i]) * (ax[i] - rhs[i]);
        worst_err = std::max(worst_err, std::abs(x[i] - xd[i]));
      }
      worst_res = std::max(worst_res, std::sqrt(res));
    }
    os << "max residual " << worst_res << ", max deviation " << worst_err;
    return worst_res < 1e-8 && worst_err < 1e-8;
  }));

  out.push_back(detail::timed_check("ablation variants reach their own optima", [seed](std::ostream& os) {
    std::mt19937_64 rng(seed + 5);
    std::uniform_real_distribution<double> mu(0.2, 3.0);
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
      const TinyInstance inst = random_tiny_instance(rng);
      LayerParams p;
      p.mu_u = mu(rng);
      p.mu_d2 = mu(rng);
      p.mu_d1 = 0.0;
      const AdmmState a = admm_converge(inst.graph, inst.y, p, 1500, SolverVariant::kNoDgtv);
      const AdmmState b = admm_converge(inst.graph, inst.y, p, 1500, SolverVariant::kFull);
      worst = std::max(worst, std::abs(objective(a.x, inst.y, inst.graph, p.priors()) -
                                       objective(b.x, inst.y, inst.graph, p.priors())));
      const AdmmState c = admm_converge(inst.graph, inst.y, p, 1500, SolverVariant::kUndirectedTemporal);
      const Vector xs = dense_undirected_temporal_solution(inst.graph, inst.y, p.mu_u, p.mu_d2);
      worst = std::max(worst, std::abs(variant_objective(c.x, inst.y, inst.graph, p, SolverVariant::kUndirectedTemporal) -
                                       variant_objective(xs, inst.y, inst.graph, p, SolverVariant::kUndirectedTemporal)));
    }
    os << "max objective gap " << worst;
    return worst <= 1e-6;
  }));

  out.push_back(detail::timed_check("graph invariants on random mixed graphs", [seed](std::ostream& os) {
    std::mt19937_64 rng(seed + 6);
    for (int trial = 0; trial < 25; ++trial) {
      const TinyInstance inst = random_tiny_instance(rng, 10, 12);
      if (!detail::graph_invariants_hold(inst.graph, os)) return false;
    }
    os << "25 graphs";
    return true;
  }));

  return out;
}

}  // namespace mixgraph
