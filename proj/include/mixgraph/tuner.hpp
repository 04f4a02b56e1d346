#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mixgraph/error.hpp"
#include "mixgraph/parallel.hpp"
#include "mixgraph/pipeline.hpp"

namespace mixgraph {

/// Simultaneous-perturbation stochastic approximation settings. Gains follow
/// a_k = a / (k + 1 + A)^alpha and c_k = c / (k + 1)^gamma.
struct SpsaOptions {
  std::size_t iterations = 100;
  double a = 0.0;  // <= 0: calibrated so the first step moves ~initial_step per coordinate
  double c = 0.1;
  double stability = 10.0;  // A
  double alpha = 0.602;
  double gamma = 0.101;
  double initial_step = 0.2;
  double max_step = 0.5;  // per-coordinate cap on one update
  std::size_t calibration = 2;
  std::size_t max_retries = 6;
  std::uint64_t seed = 1;

  void validate() const {
    detail::require(c > 0.0 && std::isfinite(c), "spsa c must be positive");
    detail::require(stability >= 0.0, "spsa stability constant must be nonnegative");
    detail::require(alpha > 0.0 && gamma > 0.0, "spsa gain exponents must be positive");
    detail::require(initial_step > 0.0 && max_step > 0.0, "spsa step sizes must be positive");
    detail::require(std::isfinite(a), "spsa a must be finite");
  }
};

struct SpsaResult {
  Vector best;
  double best_loss = 0.0;
  double initial_loss = 0.0;
  Vector best_trace;  // best-seen loss after each iteration
  Vector loss_trace;  // mean of the two perturbed losses, NaN if the iteration was rejected
  std::size_t evaluations = 0;
  std::size_t rejected = 0;
  double gain_a = 0.0;
};

using SpsaLoss = std::function<double(const Vector&)>;
using SpsaProjection = std::function<void(Vector&)>;

/// Minimizes `loss` from `theta0`. Every evaluated point competes for the
/// returned best-seen point. A non-finite loss rejects the perturbation pair
/// and halves c before retrying.
inline SpsaResult spsa_minimize(const SpsaLoss& loss, Vector theta0, const SpsaOptions& opt,
                                const SpsaProjection& project = {}) {
  opt.validate();
  detail::require(!theta0.empty(), "spsa needs at least one parameter");
  if (project) project(theta0);
  SpsaResult res;
  auto evaluate = [&](const Vector& theta) {
    const double f = loss(theta);
    ++res.evaluations;
    if (std::isfinite(f) && f < res.best_loss) {
      res.best_loss = f;
      res.best = theta;
    }
    return f;
  };
  res.best = theta0;
  res.best_loss = std::numeric_limits<double>::infinity();
  res.initial_loss = evaluate(theta0);
  if (!std::isfinite(res.initial_loss)) throw InvalidArgument("spsa: loss at the initial point is not finite");
  if (opt.iterations == 0) return res;

  const std::size_t p = theta0.size();
  std::mt19937_64 rng(opt.seed);
  Vector delta(p), plus(p), minus(p);
  double c_scale = 1.0;
  auto draw = [&] {
    for (double& d : delta) d = (rng() & 1u) ? 1.0 : -1.0;
  };
  // Returns (f+ - f-) / (2 c) for a fresh perturbation, or NaN after
  // exhausting retries.
  auto difference = [&](const Vector& theta, double c_k, double* mean) {
    for (std::size_t attempt = 0; attempt <= opt.max_retries; ++attempt) {
      const double c = c_k * c_scale;
      draw();
      for (std::size_t i = 0; i < p; ++i) {
        plus[i] = theta[i] + c * delta[i];
        minus[i] = theta[i] - c * delta[i];
      }
      if (project) {
        project(plus);
        project(minus);
      }
      const double fp = evaluate(plus);
      const double fm = evaluate(minus);
      if (std::isfinite(fp) && std::isfinite(fm)) {
        if (mean) *mean = 0.5 * (fp + fm);
        return (fp - fm) / (2.0 * c);
      }
      ++res.rejected;
      c_scale *= 0.5;
    }
    return std::numeric_limits<double>::quiet_NaN();
  };

  double a = opt.a;
  if (a <= 0.0) {
    double magnitude = 0.0;
    std::size_t used = 0;
    for (std::size_t i = 0; i < opt.calibration; ++i) {
      const double d = difference(theta0, opt.c, nullptr);
      if (std::isfinite(d)) {
        magnitude += std::abs(d);
        ++used;
      }
    }
    magnitude = used ? magnitude / static_cast<double>(used) : 0.0;
    const double scale = std::pow(opt.stability + 1.0, opt.alpha);
    a = magnitude > 0.0 ? opt.initial_step * scale / magnitude : opt.initial_step * scale;
  }
  res.gain_a = a;

  Vector theta = theta0;
  for (std::size_t k = 0; k < opt.iterations; ++k) {
    const double kk = static_cast<double>(k + 1);
    const double a_k = a / std::pow(kk + opt.stability, opt.alpha);
    const double c_k = opt.c / std::pow(kk, opt.gamma);
    double mean = std::numeric_limits<double>::quiet_NaN();
    const double d = difference(theta, c_k, &mean);
    if (std::isfinite(d)) {
      for (std::size_t i = 0; i < p; ++i) {
        const double step = std::clamp(a_k * d / delta[i], -opt.max_step, opt.max_step);
        theta[i] -= step;
      }
      if (project) project(theta);
    }
    if (k + 1 == opt.iterations) evaluate(theta);
    res.loss_trace.push_back(mean);
    res.best_trace.push_back(res.best_loss);
  }
  return res;
}

/// Which pipeline parameters tune_spsa moves.
struct TunableSet {
  bool mu = true;             // per block: mu_u, mu_d2, mu_d1 shared by its layers
  bool rho = true;            // per block: rho, rho_u, rho_d shared by its layers
  bool metric_scales = true;  // per head: one scale on its undirected and one on its directed metrics
  bool head_weights = true;   // a_h
  bool residual = true;       // p_b
  bool cg = false;            // unrolled alpha/beta per CG step (unrolled schedules only)
};

constexpr std::size_t kMaxTunedParameters = 100;
constexpr double kMinPositive = 1e-6;

/// Maps between a resolved PipelineConfig and the compressed vector SPSA
/// moves. Positive scalars live in log space; metric scales are log factors
/// relative to the base config.
class ParameterCodec {
 public:
  ParameterCodec(PipelineConfig base, TunableSet set) : base_(std::move(base)), set_(set) {
    detail::require(base_.metrics.has_value() && base_.layer_params.size() == base_.blocks &&
                        base_.residual.size() == base_.blocks,
                    "parameter codec needs a resolved config");
    if (set_.cg) detail::require(base_.cg.mode == CgSchedule::Mode::kUnrolled, "tuning CG steps needs an unrolled schedule");
    std::size_t d = 0;
    if (set_.mu) d += 3 * base_.blocks;
    if (set_.rho) d += 3 * base_.blocks;
    if (set_.metric_scales) d += 2 * base_.heads;
    if (set_.head_weights) d += base_.heads;
    if (set_.residual) d += base_.blocks;
    if (set_.cg) d += 2 * base_.cg.iterations;
    detail::require(d >= 1, "tunable set selects no parameters");
    detail::require(d <= kMaxTunedParameters,
                    "tunable set has " + std::to_string(d) + " parameters, limit is " +
                        std::to_string(kMaxTunedParameters));
    dimension_ = d;
  }

  std::size_t dimension() const { return dimension_; }
  const PipelineConfig& base() const { return base_; }

  Vector encode(const PipelineConfig& c) const {
    Vector th;
    th.reserve(dimension_);
    for (std::size_t b = 0; set_.mu && b < c.blocks; ++b) {
      const auto& p = c.layer_params[b].front();
      for (double v : {p.mu_u, p.mu_d2, p.mu_d1}) th.push_back(std::log(std::max(v, kMinPositive)));
    }
    for (std::size_t b = 0; set_.rho && b < c.blocks; ++b) {
      const auto& p = c.layer_params[b].front();
      for (double v : {p.rho, p.rho_u, p.rho_d}) th.push_back(std::log(std::max(v, kMinPositive)));
    }
    for (std::size_t h = 0; set_.metric_scales && h < c.heads; ++h) {
      th.push_back(0.0);
      th.push_back(0.0);
    }
    if (set_.head_weights) th.insert(th.end(), c.head_weights.begin(), c.head_weights.end());
    if (set_.residual) th.insert(th.end(), c.residual.begin(), c.residual.end());
    if (set_.cg) {
      th.insert(th.end(), c.cg.alphas.begin(), c.cg.alphas.end());
      th.insert(th.end(), c.cg.betas.begin(), c.cg.betas.end());
    }
    return th;
  }

  PipelineConfig decode(std::span<const double> th) const {
    detail::require_same_size(th.size(), dimension_, "parameter vector");
    PipelineConfig c = base_;
    std::size_t i = 0;
    for (std::size_t b = 0; set_.mu && b < c.blocks; ++b, i += 3) {
      for (auto& p : c.layer_params[b]) {
        p.mu_u = std::exp(th[i]);
        p.mu_d2 = std::exp(th[i + 1]);
        p.mu_d1 = std::exp(th[i + 2]);
      }
    }
    for (std::size_t b = 0; set_.rho && b < c.blocks; ++b, i += 3) {
      for (auto& p : c.layer_params[b]) {
        p.rho = std::exp(th[i]);
        p.rho_u = std::exp(th[i + 1]);
        p.rho_d = std::exp(th[i + 2]);
      }
    }
    for (std::size_t h = 0; set_.metric_scales && h < c.heads; ++h, i += 2) {
      const double su = std::exp(th[i]), sd = std::exp(th[i + 1]);
      for (auto& m : c.metrics->undirected[h])
        for (double& v : m.factor.data()) v *= su;
      for (auto& m : c.metrics->directed[h])
        for (double& v : m.factor.data()) v *= sd;
    }
    if (set_.head_weights) {
      for (std::size_t h = 0; h < c.heads; ++h) c.head_weights[h] = th[i++];
    }
    if (set_.residual) {
      for (std::size_t b = 0; b < c.blocks; ++b) c.residual[b] = th[i++];
    }
    if (set_.cg) {
      for (std::size_t k = 0; k < c.cg.iterations; ++k) c.cg.alphas[k] = th[i++];
      for (std::size_t k = 0; k < c.cg.iterations; ++k) c.cg.betas[k] = th[i++];
    }
    return c;
  }

  /// Clamps log mu's and rho's to >= log(1e-6), p_b to [0, 1], CG alphas to
  /// [0, 0.8] and betas to >= 0.
  void project(Vector& th) const {
    const double lo = std::log(kMinPositive);
    std::size_t i = 0;
    const std::size_t logs = (set_.mu ? 3 * base_.blocks : 0) + (set_.rho ? 3 * base_.blocks : 0);
    for (; i < logs; ++i) th[i] = std::max(th[i], lo);
    if (set_.metric_scales) i += 2 * base_.heads;
    if (set_.head_weights) i += base_.heads;
    if (set_.residual) {
      for (std::size_t b = 0; b < base_.blocks; ++b, ++i) th[i] = std::clamp(th[i], 0.0, 1.0);
    }
    if (set_.cg) {
      for (std::size_t k = 0; k < base_.cg.iterations; ++k, ++i) th[i] = std::clamp(th[i], 0.0, CgSchedule::kAlphaMax);
      for (std::size_t k = 0; k < base_.cg.iterations; ++k, ++i) th[i] = std::max(th[i], 0.0);
    }
  }

 private:
  PipelineConfig base_;
  TunableSet set_;
  std::size_t dimension_ = 0;
};

/// Mean Huber loss (standardized units) of the full reconstruction against
/// observed + target over `samples`. Solver failures count as +inf.
inline double validation_loss(const Forecaster& f, std::span<const Sample> samples, std::size_t threads = 1,
                              double delta = 1.0) {
  detail::require(!samples.empty(), "validation loss needs samples");
  Vector losses(samples.size(), 0.0);
  parallel_for(samples.size(), threads, [&](std::size_t i) {
    try {
      const Vector x = f.reconstruct_standardized(samples[i]);
      const Vector truth = flatten(f.standardizer().forward(samples[i].full()));
      losses[i] = huber_loss(x, truth, delta);
    } catch (const NumericFailure&) {
      losses[i] = std::numeric_limits<double>::infinity();
    }
  });
  double s = 0.0;
  for (double l : losses) s += l;
  return s / static_cast<double>(samples.size());
}

struct TuneOptions {
  SpsaOptions spsa{.iterations = 30};
  TunableSet tunables;
  std::size_t max_samples = 6;  // evenly spaced validation subset used as the tuning loss
  std::size_t threads = 1;
};

struct TuneResult {
  PipelineConfig config;  // best seen
  SpsaResult spsa;
  std::size_t dimension = 0;
};

/// Evenly spaced subset of at most `count` samples, always the same.
inline std::vector<Sample> spaced_subset(std::span<const Sample> samples, std::size_t count) {
  if (count == 0 || samples.size() <= count) return {samples.begin(), samples.end()};
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(samples[i * samples.size() / count]);
  return out;
}

/// SPSA over the validation Huber loss of the pipeline. Returns the best
/// config seen; with zero iterations that is `config` itself.
inline TuneResult tune_spsa(PipelineConfig config, const PhysicalGraph& physical, const Standardizer& standardizer,
                            std::span<const Sample> validation, const TuneOptions& opt) {
  config.resolve(physical.station_count);
  const ParameterCodec codec(config, opt.tunables);
  const std::vector<Sample> subset = spaced_subset(validation, opt.max_samples);
  auto loss = [&](const Vector& th) {
    PipelineConfig c;
    try {
      c = codec.decode(th);
      const Forecaster f(std::move(c), physical, standardizer);
      return validation_loss(f, subset, opt.threads);
    } catch (const InvalidArgument&) {
      return std::numeric_limits<double>::infinity();
    } catch (const DegenerateDegree&) {
      return std::numeric_limits<double>::infinity();
    }
  };
  TuneResult r;
  r.dimension = codec.dimension();
  r.spsa = spsa_minimize(loss, codec.encode(config), opt.spsa, [&](Vector& th) { codec.project(th); });
  r.config = opt.spsa.iterations == 0 ? config : codec.decode(r.spsa.best);
  return r;
}

}  // namespace mixgraph
