#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mixgraph/error.hpp"
#include "mixgraph/sparse.hpp"

namespace mixgraph {

/// How a conjugate-gradient sub-solve runs.
///
/// Exact mode computes step size and momentum by the classical formulas and
/// stops once the residual norm falls to `tolerance` or `iterations` steps
/// have run. Unrolled mode always runs `iterations` steps with stored
/// coefficients, alpha clamped to [0, 0.8] and beta to >= 0.
struct CgSchedule {
  enum class Mode { kExact, kUnrolled };

  static constexpr double kAlphaMax = 0.8;
  static constexpr double kDefaultFill = 0.08;
  static constexpr std::size_t kDefaultUnrolledIterations = 8;
  static constexpr double kDefaultTolerance = 1e-10;

  Mode mode = Mode::kExact;
  std::size_t iterations = 1000;
  double tolerance = kDefaultTolerance;
  Vector alphas;
  Vector betas;

  static CgSchedule exact(std::size_t max_iterations, double tolerance = kDefaultTolerance) {
    CgSchedule s;
    s.mode = Mode::kExact;
    s.iterations = max_iterations;
    s.tolerance = tolerance;
    return s;
  }

  static CgSchedule unrolled(std::size_t iterations = kDefaultUnrolledIterations, double fill = kDefaultFill) {
    CgSchedule s;
    s.mode = Mode::kUnrolled;
    s.iterations = iterations;
    s.alphas.assign(iterations, fill);
    s.betas.assign(iterations, fill);
    s.clamp();
    return s;
  }

  void clamp() {
    for (double& a : alphas) a = std::clamp(a, 0.0, kAlphaMax);
    for (double& b : betas) b = std::max(b, 0.0);
  }

  void validate() const {
    if (mode == Mode::kUnrolled) {
      detail::require(alphas.size() == iterations && betas.size() == iterations,
                      "unrolled CG schedule needs one alpha and beta per iteration");
      for (double a : alphas) detail::require(a >= 0.0 && a <= kAlphaMax, "CG alpha outside [0, 0.8]");
      for (double b : betas) detail::require(b >= 0.0, "CG beta must be nonnegative");
    } else {
      detail::require(tolerance >= 0.0, "CG tolerance must be nonnegative");
    }
  }
};

struct CgReport {
  std::size_t iterations = 0;
  Vector residual_norms;  // recursive residual ||r_k||, k = 0..iterations
};

/// Solves A x = b with A given as a callable `apply(in, out)` computing
/// out = A in. Throws NumericFailure naming the iteration if any iterate
/// becomes non-finite.
template <class ApplyA>
Vector cg_solve(ApplyA&& apply, std::span<const double> b, std::span<const double> x0, const CgSchedule& sched,
                CgReport* report = nullptr) {
  detail::require_same_size(b.size(), x0.size(), "cg_solve");
  sched.validate();
  const std::size_t n = b.size();
  Vector x(x0.begin(), x0.end());
  Vector r(n), p(n), ap(n);

  apply(std::span<const double>(x), std::span<double>(ap));
  double rr = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    r[i] = b[i] - ap[i];
    rr += r[i] * r[i];
  }
  p = r;
  if (report) {
    report->iterations = 0;
    report->residual_norms.assign(1, std::sqrt(rr));
  }
  if (!std::isfinite(rr)) throw NumericFailure("cg_solve", 0);

  const bool exact = sched.mode == CgSchedule::Mode::kExact;
  for (std::size_t k = 0; k < sched.iterations; ++k) {
    if (exact && std::sqrt(rr) <= sched.tolerance) break;
    apply(std::span<const double>(p), std::span<double>(ap));
    double alpha;
    if (exact) {
      double pap = 0.0;
      for (std::size_t i = 0; i < n; ++i) pap += p[i] * ap[i];
      if (pap <= 0.0) break;  // r == 0 or A not PD along p
      alpha = rr / pap;
    } else {
      alpha = sched.alphas[k];
    }
    double rr_next = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * ap[i];
      rr_next += r[i] * r[i];
    }
    if (!std::isfinite(rr_next) || !std::isfinite(alpha)) throw NumericFailure("cg_solve", k + 1);
    const double beta = exact ? rr_next / rr : sched.betas[k];
    for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
    rr = rr_next;
    if (report) {
      report->iterations = k + 1;
      report->residual_norms.push_back(std::sqrt(rr));
    }
  }
  return x;
}

}  // namespace mixgraph
