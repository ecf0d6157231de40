#pragma once

// Forward performance processes built from ergodic and discounted solutions, their volatilities and
// optimal strategies, wealth simulation, and the zero-volatility / market-view / benchmark closed
// forms.

#include "ffp/constraint_set.hpp"
#include "ffp/core.hpp"
#include "ffp/drivers.hpp"
#include "ffp/ergodic_solver.hpp"
#include "ffp/grid.hpp"
#include "ffp/market_model.hpp"

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace ffp {

/// Feedback strategy v -> pi (proportions for power/log, amounts for exponential).
using Strategy = std::function<Vec(const Vec&)>;

struct LabeledStrategy {
  std::string label;
  Strategy fn;
};

namespace detail {

inline void require_domain(const UtilitySpec& u, double x) {
  if (!u.is_exponential() && !(x > 0.0)) {
    throw ValidationError(u.name() + " utility: wealth must be positive, got " + std::to_string(x));
  }
}

// x-part and exponent combination shared by U and U^rho.
inline double utility_with_exponent(const UtilitySpec& u, double x, double expo) {
  if (u.is_power()) return std::pow(x, u.delta()) / u.delta() * std::exp(expo);
  if (u.is_exponential()) return -std::exp(-u.gamma() * x + expo);
  return std::log(x) + expo;
}

inline Vec optimal_from_z(const UtilitySpec& u, const ConvexSet& set, const Vec& z, const Vec& th) {
  if (u.is_power()) return set.project((z + th) / (1.0 - u.delta()));
  if (u.is_exponential()) return set.project((z + th) / u.gamma());
  return set.project(th);
}

}  // namespace detail

/// U(x,t) = utility(x) combined with exp(y(V_t) - lambda t) (or + y - lambda t for log).
class ForwardPerformance {
 public:
  ForwardPerformance(UtilitySpec utility, MarketSpec market, ConvexSet set, ErgodicSolution solution)
      : utility_(utility), market_(std::move(market)), set_(std::move(set)), sol_(std::move(solution)) {
    if (sol_.y.size() != static_cast<Eigen::Index>(sol_.grid.size())) {
      throw DimensionError("forward performance: solution does not match its grid");
    }
  }

  ForwardPerformance(const ErgodicProblem& pb, ErgodicSolution solution)
      : ForwardPerformance(pb.utility(), pb.market(), pb.set(), std::move(solution)) {}

  const UtilitySpec& utility() const { return utility_; }
  const MarketSpec& market() const { return market_; }
  const ConvexSet& set() const { return set_; }
  const ErgodicSolution& solution() const { return sol_; }
  double lambda() const { return sol_.lambda; }

  double y(const Vec& v) const { return interpolate(locate(sol_.grid, v), sol_.y); }
  Vec z(const Vec& v) const { return interpolate_rows(locate(sol_.grid, v), sol_.z); }

  double U(double x, double t, const Vec& v) const {
    detail::require_domain(utility_, x);
    return detail::utility_with_exponent(utility_, x, y(v) - sol_.lambda * t);
  }

  Vec volatility(double x, double t, const Vec& v) const {
    if (utility_.is_log()) return z(v);
    return U(x, t, v) * z(v);
  }

  Vec optimal_strategy(const Vec& v) const {
    return detail::optimal_from_z(utility_, set_, z(v), market_.theta(v));
  }

 private:
  UtilitySpec utility_;
  MarketSpec market_;
  ConvexSet set_;
  ErgodicSolution sol_;
};

inline double evaluate_U(const ForwardPerformance& fp, double x, double t, const Vec& v) { return fp.U(x, t, v); }
inline Vec evaluate_volatility(const ForwardPerformance& fp, double x, double t, const Vec& v) {
  return fp.volatility(x, t, v);
}
inline Vec optimal_strategy(const ForwardPerformance& fp, const Vec& v) { return fp.optimal_strategy(v); }

/// Log-wealth (power/log) or additive (exponential) Euler step driven by the factor's increment.
inline double wealth_step(bool additive, double state, const Vec& pi, const Vec& theta_v, const Vec& dw, double dt) {
  if (additive) return state + pi.dot(theta_v * dt + dw);
  return state + (pi.dot(theta_v) - 0.5 * pi.squaredNorm()) * dt + pi.dot(dw);
}

struct WealthPath {
  std::vector<double> wealth;     // X at each path time
  std::vector<Vec> strategy;      // pi used on [t_k, t_{k+1}); last entry repeats the terminal value
  std::vector<double> U;          // U(X_t, t0 + t, V_t) (empty when no performance process was given)
};

/// Wealth along a stored factor path with an explicit strategy. Power/log wealth is simulated in
/// logarithms so it stays positive; `additive` selects dX = pi^T (theta dt + dW).
inline WealthPath simulate_wealth(const MarketSpec& market, bool additive, const Strategy& strategy,
                                  const FactorPath& path, double x0) {
  if (!additive && !(x0 > 0.0)) throw ValidationError("simulate_wealth: x0 must be positive");
  WealthPath out;
  out.wealth.reserve(path.states.size());
  out.strategy.reserve(path.states.size());
  double state = additive ? x0 : std::log(x0);
  out.wealth.push_back(x0);
  for (std::size_t k = 0; k < path.steps(); ++k) {
    const Vec& v = path.states[k];
    const Vec pi = strategy(v);
    out.strategy.push_back(pi);
    state = wealth_step(additive, state, pi, market.theta(v), path.brownian_increments[k], path.dt);
    const double x = additive ? state : std::exp(state);
    if (!std::isfinite(x)) throw NumericOverflowError("simulate_wealth: non-finite wealth", k);
    out.wealth.push_back(x);
  }
  out.strategy.push_back(strategy(path.states.back()));
  return out;
}

/// Wealth and U along a factor path. The path's clock starts at calendar time t0.
inline WealthPath simulate_wealth(const ForwardPerformance& fp, const Strategy& strategy, const FactorPath& path,
                                  double x0, double t0 = 0.0) {
  WealthPath out = simulate_wealth(fp.market(), fp.utility().is_exponential(), strategy, path, x0);
  out.U.reserve(out.wealth.size());
  for (std::size_t k = 0; k < out.wealth.size(); ++k) {
    out.U.push_back(fp.U(out.wealth[k], t0 + path.times[k], path.states[k]));
  }
  return out;
}

inline WealthPath simulate_wealth(const ForwardPerformance& fp, const FactorPath& path, double x0) {
  return simulate_wealth(fp, [&fp](const Vec& v) { return fp.optimal_strategy(v); }, path, x0);
}

struct PathBundle {
  std::uint64_t seed = 0;
  double dt = 0.0;
  std::vector<FactorPath> factors;
  std::vector<WealthPath> wealth;
};

/// Discounted process U^rho(x,t) = utility(x) with exponent y^rho(V_t) - int_0^t rho y^rho(V_s) ds.
class DiscountedForward {
 public:
  DiscountedForward(UtilitySpec utility, MarketSpec market, ConvexSet set, Grid grid, DiscountedSolution solution)
      : utility_(utility),
        market_(std::move(market)),
        set_(std::move(set)),
        grid_(std::move(grid)),
        sol_(std::move(solution)) {}

  DiscountedForward(const ErgodicProblem& pb, DiscountedSolution solution)
      : DiscountedForward(pb.utility(), pb.market(), pb.set(), pb.grid(), std::move(solution)) {}

  const UtilitySpec& utility() const { return utility_; }
  const DiscountedSolution& solution() const { return sol_; }
  double rho() const { return sol_.rho; }
  double y(const Vec& v) const { return interpolate(locate(grid_, v), sol_.y); }
  Vec z(const Vec& v) const { return interpolate_rows(locate(grid_, v), sol_.z); }

  Vec optimal_strategy(const Vec& v) const {
    return detail::optimal_from_z(utility_, set_, z(v), market_.theta(v));
  }

  double U(double x, const Vec& v_t, double discount_integral) const {
    detail::require_domain(utility_, x);
    return detail::utility_with_exponent(utility_, x, y(v_t) - discount_integral);
  }

 private:
  UtilitySpec utility_;
  MarketSpec market_;
  ConvexSet set_;
  Grid grid_;
  DiscountedSolution sol_;
};

/// Trapezoidal accumulator of int rho y^rho(V_s) ds; additive over concatenated segments.
class DiscountAccumulator {
 public:
  explicit DiscountAccumulator(const DiscountedForward& dfp) : dfp_(&dfp) {}

  void push(double t, const Vec& v) {
    const double f = dfp_->rho() * dfp_->y(v);
    if (started_) {
      if (t < last_t_) throw ValidationError("discount accumulator: time must be nondecreasing");
      integral_ += 0.5 * (f + last_f_) * (t - last_t_);
    }
    started_ = true;
    last_t_ = t;
    last_f_ = f;
  }

  double integral() const { return integral_; }
  double last_time() const { return last_t_; }

 private:
  const DiscountedForward* dfp_;
  bool started_ = false;
  double last_t_ = 0.0;
  double last_f_ = 0.0;
  double integral_ = 0.0;
};

/// U^rho(x, t) along a factor path observed from time 0; V_t is interpolated linearly in time.
inline double evaluate_U_rho(const DiscountedForward& dfp, double x, double t, const FactorPath& path) {
  if (path.times.empty()) throw ValidationError("evaluate_U_rho: empty path");
  if (t < 0.0 || t > path.times.back() * (1 + 1e-12) + 1e-14) {
    throw ValidationError("evaluate_U_rho: path ends at " + std::to_string(path.times.back()) +
                          " before t = " + std::to_string(t));
  }
  DiscountAccumulator acc(dfp);
  Vec vt = path.states.front();
  acc.push(0.0, vt);
  for (std::size_t k = 1; k < path.times.size(); ++k) {
    if (path.times[k] <= t) {
      vt = path.states[k];
      acc.push(path.times[k], vt);
      continue;
    }
    if (t > path.times[k - 1]) {
      const double w = (t - path.times[k - 1]) / (path.times[k] - path.times[k - 1]);
      vt = (1 - w) * path.states[k - 1] + w * path.states[k];
      acc.push(t, vt);
    }
    break;
  }
  return dfp.U(x, vt, acc.integral());
}

enum class ClosedFormKind { TimeMonotone, MarketView, Benchmark };

struct ClosedFormSpec {
  ClosedFormKind kind = ClosedFormKind::TimeMonotone;
  double y0 = 0.0;
  std::function<Vec(double)> phi;  // deterministic, bounded; unused for TimeMonotone
  double phi_bound = 1.0;

  static ClosedFormSpec time_monotone(double y0) { return {ClosedFormKind::TimeMonotone, y0, {}, 0.0}; }
  static ClosedFormSpec market_view(double y0, Vec phi, double bound) {
    return {ClosedFormKind::MarketView, y0, [phi](double) { return phi; }, bound};
  }
  static ClosedFormSpec benchmark(double y0, Vec phi, double bound) {
    return {ClosedFormKind::Benchmark, y0, [phi](double) { return phi; }, bound};
  }
};

inline std::string closed_form_name(ClosedFormKind k) {
  switch (k) {
    case ClosedFormKind::TimeMonotone: return "time_monotone";
    case ClosedFormKind::MarketView: return "market_view";
    case ClosedFormKind::Benchmark: return "benchmark";
  }
  return "time_monotone";
}

/// Closed-form power processes along a factor path, evaluated at wealth[k] for each path time.
/// ds-integrals are trapezoidal and dW-integrals left-point.
inline std::vector<double> closed_form_process(const ClosedFormSpec& spec, const MarketSpec& market,
                                               const ConvexSet& set, double delta, const FactorPath& path,
                                               std::span<const double> wealth) {
  if (!set.is_full_space()) {
    throw UnsupportedConfiguration("closed-form processes require an unconstrained portfolio set");
  }
  if (!(delta > 0.0 && delta < 1.0)) throw ValidationError("closed-form processes: delta must lie in (0,1)");
  if (wealth.size() != path.times.size()) throw DimensionError("closed-form processes: wealth/path length mismatch");
  const bool with_phi = spec.kind != ClosedFormKind::TimeMonotone;
  if (with_phi && !spec.phi) throw ValidationError("closed-form processes: phi is not set");
  const double c = 0.5 * delta / (1.0 - delta);
  const int m = market.noise_dim;

  auto phi_at = [&](std::size_t k) -> Vec {
    if (!with_phi) return Vec::Zero(m);
    Vec p = spec.phi(path.times[k]);
    detail::require_dim(p, m, "closed-form processes: phi");
    if (p.norm() > spec.phi_bound * (1 + 1e-12)) {
      throw ValidationError("closed-form processes: |phi| exceeds its declared bound");
    }
    return p;
  };

  std::vector<double> out(path.times.size());
  double a_phi = 0.0;      // int |phi + theta|^2 ds
  double phi_sq = 0.0;     // int |phi|^2 ds
  double phi_theta = 0.0;  // int phi^T theta ds
  double phi_dw = 0.0;     // int phi^T dW
  Vec ph_prev = phi_at(0);
  Vec th_prev = market.theta(path.states[0]);
  for (std::size_t k = 0; k < path.times.size(); ++k) {
    if (k > 0) {
      const Vec ph = phi_at(k);
      const Vec th = market.theta(path.states[k]);
      const double ds = path.times[k] - path.times[k - 1];
      a_phi += 0.5 * ((ph_prev + th_prev).squaredNorm() + (ph + th).squaredNorm()) * ds;
      phi_sq += 0.5 * (ph_prev.squaredNorm() + ph.squaredNorm()) * ds;
      phi_theta += 0.5 * (ph_prev.dot(th_prev) + ph.dot(th)) * ds;
      phi_dw += ph_prev.dot(path.brownian_increments[k - 1]);
      ph_prev = ph;
      th_prev = th;
    }
    const double x = wealth[k];
    if (!(x > 0.0)) throw ValidationError("closed-form processes: wealth must be positive");
    const double base = std::exp(spec.y0) * std::pow(x, delta) / delta;
    switch (spec.kind) {
      case ClosedFormKind::TimeMonotone:
      case ClosedFormKind::MarketView: {
        const double log_m = phi_dw - 0.5 * phi_sq;
        out[k] = base * std::exp(-c * a_phi + log_m);
        break;
      }
      case ClosedFormKind::Benchmark: {
        const double log_m = -phi_theta - phi_dw - 0.5 * phi_sq;
        out[k] = std::exp(spec.y0) / delta * std::pow(x / std::exp(log_m), delta) * std::exp(-c * a_phi);
        break;
      }
    }
  }
  return out;
}

inline std::vector<double> closed_form_process(const ClosedFormSpec& spec, const MarketSpec& market,
                                               const ConvexSet& set, double delta, const FactorPath& path,
                                               double x) {
  const std::vector<double> wealth(path.times.size(), x);
  return closed_form_process(spec, market, set, delta, path, wealth);
}

}  // namespace ffp
