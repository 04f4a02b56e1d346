#pragma once

#include <cmath>
#include <cstddef>
#include <span>

#include "mixgraph/dense.hpp"
#include "mixgraph/error.hpp"
#include "mixgraph/graph.hpp"
#include "mixgraph/sparse.hpp"

namespace mixgraph {

/// Weights of the three smoothness terms of the forecast objective.
struct PriorWeights {
  double mu_u = 0.0;   // GLR, spatial
  double mu_d2 = 0.0;  // DGLR, temporal l2
  double mu_d1 = 0.0;  // DGTV, temporal l1

  void validate() const {
    detail::require(mu_u >= 0.0 && mu_d2 >= 0.0 && mu_d1 >= 0.0, "prior weights must be nonnegative");
  }
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  detail::require_same_size(a.size(), b.size(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

namespace detail {

// (L x)_r for a Laplacian whose rows sum to zero, evaluated as
// sum_c -L_rc (x_r - x_c) so constant signals give exactly zero.
inline Vector laplacian_differences(std::span<const double> x, const SparseMatrix& l) {
  require_same_size(x.size(), l.cols(), "laplacian_differences");
  Vector out(l.rows(), 0.0);
  for (std::size_t r = 0; r < l.rows(); ++r) {
    const auto cols = l.row_cols(r);
    const auto vals = l.row_values(r);
    double s = 0.0;
    for (std::size_t k = 0; k < cols.size(); ++k)
      if (cols[k] != r) s -= vals[k] * (x[r] - x[cols[k]]);
    out[r] = s;
  }
  return out;
}

}  // namespace detail

/// x^T L_u x as the edge sum of w_ij (x_i - x_j)^2.
inline double glr(std::span<const double> x, const SparseMatrix& laplacian_u) {
  detail::require_same_size(x.size(), laplacian_u.cols(), "glr");
  double s = 0.0;
  for (std::size_t r = 0; r < laplacian_u.rows(); ++r) {
    const auto cols = laplacian_u.row_cols(r);
    const auto vals = laplacian_u.row_values(r);
    for (std::size_t k = 0; k < cols.size(); ++k) {
      if (cols[k] <= r) continue;
      const double d = x[r] - x[cols[k]];
      s -= vals[k] * d * d;
    }
  }
  return s;
}

/// ||L_rd x||_2^2
inline double dglr(std::span<const double> x, const SparseMatrix& walk_laplacian) {
  const Vector lx = detail::laplacian_differences(x, walk_laplacian);
  return dot(lx, lx);
}

/// ||L_rd x||_1. Source rows of L_rd are empty after self-loop normalization,
/// so only children contribute.
inline double dgtv(std::span<const double> x, const SparseMatrix& walk_laplacian) {
  const Vector lx = detail::laplacian_differences(x, walk_laplacian);
  double s = 0.0;
  for (double v : lx) s += std::abs(v);
  return s;
}

/// ||y - Hx||^2 where H keeps the observed (time-major prefix) entries.
inline double fidelity(std::span<const double> x, std::span<const double> y, const MixedGraph& g) {
  detail::require_same_size(x.size(), g.node_count(), "objective signal");
  detail::require_same_size(y.size(), g.observed_count(), "objective observations");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - x[i]) * (y[i] - x[i]);
  return s;
}

/// ||y - Hx||^2 + mu_u GLR + mu_d2 DGLR + mu_d1 DGTV
inline double objective(std::span<const double> x, std::span<const double> y, const MixedGraph& g,
                        const PriorWeights& w) {
  w.validate();
  double f = fidelity(x, y, g);
  if (w.mu_u != 0.0) f += w.mu_u * glr(x, g.laplacian_u);
  if (w.mu_d2 != 0.0) f += w.mu_d2 * dglr(x, g.walk_laplacian);
  if (w.mu_d1 != 0.0) f += w.mu_d1 * dgtv(x, g.walk_laplacian);
  return f;
}

constexpr std::size_t kDefaultDenseLimit = 512;

/// Dense eigendecomposition of a symmetric sparse operator, for diagnostics
/// and tests only.
inline Spectrum spectrum_dense(const SparseMatrix& a, std::size_t limit = kDefaultDenseLimit) {
  detail::require(a.square(), "spectrum_dense: matrix must be square");
  detail::require(a.rows() <= limit, "spectrum_dense: size " + std::to_string(a.rows()) +
                                         " exceeds dense limit " + std::to_string(limit));
  const double asym = a.asymmetry();
  double scale = 0.0;
  a.for_each([&](std::size_t, std::size_t, double v) { scale = std::max(scale, std::abs(v)); });
  detail::require(asym <= 1e-12 * std::max(1.0, scale), "spectrum_dense: matrix is not symmetric");
  return jacobi_eigen(DenseMatrix::from_sparse(a));
}

/// Frequency response 1 / (1 + c lambda) of the GLR-type low-pass filters.
inline double lowpass_response(double lambda, double c) { return 1.0 / (1.0 + c * lambda); }

/// V diag(1 / (1 + c lambda_k)) V^T v
inline Vector lowpass_filter(const Spectrum& s, double c, std::span<const double> v) {
  const std::size_t n = s.eigenvalues.size();
  detail::require_same_size(v.size(), n, "lowpass_filter");
  Vector coeff(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    double a = 0.0;
    for (std::size_t r = 0; r < n; ++r) a += s.eigenvectors(r, k) * v[r];
    coeff[k] = a * lowpass_response(s.eigenvalues[k], c);
  }
  Vector out(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    double a = 0.0;
    for (std::size_t k = 0; k < n; ++k) a += s.eigenvectors(r, k) * coeff[k];
    out[r] = a;
  }
  return out;
}

}  // namespace mixgraph
