#pragma once

// Factor and stock dynamics:
//
//   dV_t = eta(V_t) dt + kappa dW_t          (d state factors, m Brownian motions)
//   dS^i_t / S^i_t = b^i(V_t) dt + sigma^i(V_t) dW_t
//
// The market price of risk theta(v) solves sigma(v) theta(v) = b(v) with minimal norm.
// kappa is d x m with d <= m; a frozen factor is simply left out of the state.

#include "ffp/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ffp {

using VecField = std::function<Vec(const Vec&)>;
using MatField = std::function<Mat(const Vec&)>;

struct FactorModel {
  std::string name;
  int dim = 1;        // d
  int noise_dim = 1;  // m
  VecField drift;
  double dissipativity = 1.0;  // C_eta
  Mat kappa;                   // d x m

  /// Throws ValidationError unless kappa kappa^T is positive definite and |kappa|_F = 1.
  void validate() const {
    if (dim < 1 || noise_dim < dim) {
      throw ValidationError("factor model: need 1 <= dim <= noise_dim");
    }
    if (kappa.rows() != dim || kappa.cols() != noise_dim) {
      throw ValidationError("factor model: kappa must be dim x noise_dim");
    }
    if (!(dissipativity > 0.0)) throw ValidationError("factor model: C_eta must be positive");
    if (std::abs(kappa.norm() - 1.0) > 1e-12) {
      throw ValidationError("factor model: Frobenius norm of kappa must be 1, got " +
                            std::to_string(kappa.norm()));
    }
    Eigen::SelfAdjointEigenSolver<Mat> es(kappa * kappa.transpose());
    if (es.eigenvalues().minCoeff() <= 1e-12) {
      throw ValidationError("factor model: kappa kappa^T is not positive definite");
    }
    if (!drift) throw ValidationError("factor model: drift is not set");
  }

  /// Diffusion matrix a = kappa kappa^T of the generator.
  Mat diffusion() const { return kappa * kappa.transpose(); }
};

struct MarketSpec {
  int n_stocks = 1;
  int noise_dim = 1;
  VecField b;      // v -> R^n
  MatField sigma;  // v -> R^{n x m}
  VecField theta;  // v -> R^m
  double theta_bound = 0.0;      // K_theta
  double theta_lipschitz = 0.0;  // C_theta
};

/// theta = sigma^T (sigma sigma^T)^{-1} b; throws RankDeficiencyError when sigma(v) loses row rank.
inline Vec theta_from_coeffs(const Mat& sigma, const Vec& b, const Vec& v) {
  if (sigma.rows() != b.size()) {
    throw DimensionError("theta_from_coeffs: sigma has " + std::to_string(sigma.rows()) +
                         " rows but b has size " + std::to_string(b.size()));
  }
  Eigen::JacobiSVD<Mat> svd(sigma);
  const auto& sv = svd.singularValues();
  const double smax = sv.size() ? sv.maxCoeff() : 0.0;
  if (sv.size() < sigma.rows() || smax == 0.0 || sv.minCoeff() <= 1e-12 * smax) {
    throw RankDeficiencyError("sigma(v) sigma(v)^T is singular at v = " + detail::format_vec(v));
  }
  const Mat gram = sigma * sigma.transpose();
  return sigma.transpose() * gram.ldlt().solve(b);
}

inline Vec theta_from_coeffs(const MarketSpec& market, const Vec& v) {
  return theta_from_coeffs(market.sigma(v), market.b(v), v);
}

struct MarketCheckReport {
  bool pass = true;
  double max_theta_norm = 0.0;
  double max_lipschitz_ratio = 0.0;
  double max_consistency_error = 0.0;  // |sigma theta - b|
};

/// Checks |theta| <= K_theta, the Lipschitz bound on consecutive samples, and sigma theta = b.
inline MarketCheckReport check_market(const MarketSpec& market, std::span<const Vec> samples) {
  MarketCheckReport r;
  Vec prev_theta;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Vec th = market.theta(samples[i]);
    r.max_theta_norm = std::max(r.max_theta_norm, th.norm());
    const double err = (market.sigma(samples[i]) * th - market.b(samples[i])).norm();
    r.max_consistency_error = std::max(r.max_consistency_error, err);
    if (i > 0) {
      const double dv = (samples[i] - samples[i - 1]).norm();
      if (dv > 0) r.max_lipschitz_ratio = std::max(r.max_lipschitz_ratio, (th - prev_theta).norm() / dv);
    }
    prev_theta = th;
  }
  r.pass = r.max_theta_norm <= market.theta_bound * (1 + 1e-12) + 1e-15 &&
           r.max_lipschitz_ratio <= market.theta_lipschitz * (1 + 1e-9) + 1e-12 &&
           r.max_consistency_error <= 1e-10;
  return r;
}

enum class NoiseMode { Random, Antithetic, Zero };

struct FactorPath {
  std::vector<double> times;
  std::vector<Vec> states;
  std::vector<Vec> brownian_increments;  // increments[k] drives step k -> k+1
  std::uint64_t seed = 0;
  double dt = 0.0;

  std::size_t steps() const { return brownian_increments.size(); }
};

/// Number of uniform steps covering `horizon`; dt is shrunk so the steps divide it exactly.
inline std::size_t step_count(double dt, double horizon) {
  if (!(dt > 0.0)) throw ValidationError("dt must be positive");
  if (horizon < dt * (1 - 1e-12)) throw ValidationError("horizon must be at least dt");
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(horizon / dt)));
}

/// Draws N(0, dt I) increments of dimension m. Antithetic mode draws the negated stream.
class BrownianSource {
 public:
  BrownianSource(int noise_dim, double dt, std::uint64_t seed, NoiseMode mode)
      : m_(noise_dim), sqrt_dt_(std::sqrt(dt)), rng_(seed), mode_(mode) {}

  void next(Vec& dw) {
    dw.resize(m_);
    if (mode_ == NoiseMode::Zero) {
      dw.setZero();
      return;
    }
    const double sign = mode_ == NoiseMode::Antithetic ? -1.0 : 1.0;
    for (int j = 0; j < m_; ++j) dw[j] = sign * sqrt_dt_ * normal_(rng_);
  }

 private:
  int m_;
  double sqrt_dt_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  NoiseMode mode_;
};

/// One Euler-Maruyama step of the factor SDE; throws on a non-finite drift.
inline void factor_step(const FactorModel& model, Vec& v, const Vec& dw, double dt, std::size_t step) {
  const Vec eta = model.drift(v);
  if (!eta.allFinite()) throw NumericOverflowError("non-finite factor drift", step);
  v += eta * dt + model.kappa * dw;
  if (!v.allFinite()) throw NumericOverflowError("non-finite factor state", step);
}

/// Euler-Maruyama path of dV = eta(V) dt + kappa dW. The Brownian increments are stored so that
/// paths with the same seed and different v0 share their noise.
inline FactorPath simulate_factor(const FactorModel& model, const Vec& v0, double dt, double horizon,
                                  std::uint64_t seed, NoiseMode mode = NoiseMode::Random) {
  detail::require_dim(v0, model.dim, "simulate_factor: v0");
  const std::size_t n = step_count(dt, horizon);
  FactorPath path;
  path.seed = seed;
  path.dt = horizon / static_cast<double>(n);
  path.times.resize(n + 1);
  path.states.reserve(n + 1);
  path.brownian_increments.reserve(n);
  BrownianSource noise(model.noise_dim, path.dt, seed, mode);
  Vec v = v0;
  Vec dw;
  path.times[0] = 0.0;
  path.states.push_back(v);
  for (std::size_t k = 0; k < n; ++k) {
    noise.next(dw);
    factor_step(model, v, dw, path.dt, k);
    path.brownian_increments.push_back(dw);
    path.states.push_back(v);
    path.times[k + 1] = path.dt * static_cast<double>(k + 1);
  }
  return path;
}

/// Re-runs the Euler recursion from a different initial point using the increments of `path`.
inline FactorPath replay_factor(const FactorModel& model, const FactorPath& path, const Vec& v0) {
  detail::require_dim(v0, model.dim, "replay_factor: v0");
  FactorPath out = path;
  Vec v = v0;
  out.states[0] = v;
  for (std::size_t k = 0; k < path.steps(); ++k) {
    factor_step(model, v, path.brownian_increments[k], path.dt, k);
    out.states[k + 1] = v;
  }
  return out;
}

struct DissipativityReport {
  bool pass = true;
  double worst_margin = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> violations;
};

/// margin = -C_eta |v - w|^2 - (eta(v) - eta(w))^T (v - w); the condition holds when margin >= 0.
inline DissipativityReport check_dissipativity(const FactorModel& model,
                                               std::span<const std::pair<Vec, Vec>> pairs) {
  if (pairs.empty()) throw ValidationError("check_dissipativity: empty sample list");
  DissipativityReport r;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& [v, w] = pairs[i];
    const Vec dv = v - w;
    const double margin =
        -model.dissipativity * dv.squaredNorm() - (model.drift(v) - model.drift(w)).dot(dv);
    r.worst_margin = std::min(r.worst_margin, margin);
    if (margin < -1e-12 * (1.0 + dv.squaredNorm())) {
      r.pass = false;
      r.violations.push_back(i);
    }
  }
  return r;
}

struct ContractionReport {
  bool pass = true;
  double worst_ratio = 0.0;  // max_t |gap_t|^2 / (slack * bound_t)
  std::vector<double> times;
  std::vector<double> gap_sq;
  std::vector<double> bound;
};

/// Simulates two noise-coupled paths and checks |V^v_t - V^w_t|^2 <= e^{-2 C_eta t} |v - w|^2
/// with multiplicative slack (1 + 10 dt).
inline ContractionReport check_ergodic_contraction(const FactorModel& model, const Vec& v0, const Vec& w0,
                                                   double dt, double horizon, std::uint64_t seed) {
  const FactorPath a = simulate_factor(model, v0, dt, horizon, seed);
  const FactorPath b = replay_factor(model, a, w0);
  const double slack = 1.0 + 10.0 * a.dt;
  const double g0 = (v0 - w0).squaredNorm();
  ContractionReport r;
  for (std::size_t k = 0; k < a.times.size(); ++k) {
    const double t = a.times[k];
    const double gap = (a.states[k] - b.states[k]).squaredNorm();
    const double bnd = std::exp(-2.0 * model.dissipativity * t) * g0;
    r.times.push_back(t);
    r.gap_sq.push_back(gap);
    r.bound.push_back(bnd);
    if (bnd > 0) {
      r.worst_ratio = std::max(r.worst_ratio, gap / (slack * bnd));
    } else if (gap > 0) {
      r.worst_ratio = std::numeric_limits<double>::infinity();
    }
  }
  r.pass = r.worst_ratio <= 1.0;
  return r;
}

}  // namespace ffp
