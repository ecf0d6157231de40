#pragma once

// Monte Carlo and oracle checks: the martingale / supermartingale property, the risk-sensitive
// growth rate, convergence in the discount and in the horizon, and the single-stock distortion
// linearization.

#include "ffp/constraint_set.hpp"
#include "ffp/core.hpp"
#include "ffp/drivers.hpp"
#include "ffp/ergodic_solver.hpp"
#include "ffp/forward_process.hpp"
#include "ffp/grid.hpp"
#include "ffp/market_model.hpp"
#include "ffp/parallel.hpp"

#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace ffp {

struct MonteCarloOptions {
  std::size_t n_paths = 10000;  // total paths, simulated as n_paths / 2 antithetic pairs
  double dt = 1e-3;
  std::uint64_t seed = 1;
  bool zero_noise = false;
  unsigned threads = default_thread_count();
};

enum class MartingaleVerdict { Consistent, StrictSupermartingale, Violation };

inline std::string verdict_name(MartingaleVerdict v) {
  switch (v) {
    case MartingaleVerdict::Consistent: return "martingale-consistent";
    case MartingaleVerdict::StrictSupermartingale: return "supermartingale-strict";
    case MartingaleVerdict::Violation: return "violation";
  }
  return "violation";
}

/// Statistic 1 + (U(X_s, s) - U(x, t)) / scale with scale = |U(x, t)| (power, exponential) or 1
/// (log). Its mean is 1 for a martingale and below 1 for a strict supermartingale.
struct MartingaleReport {
  std::string label;
  double t = 0.0;
  double s = 1.0;
  std::size_t n_paths = 0;
  double mean = 1.0;
  double standard_error = 0.0;
  double z_threshold = 3.0;
  MartingaleVerdict verdict = MartingaleVerdict::Consistent;
  std::string diagnostic;

  double upper() const { return 1.0 + z_threshold * standard_error; }
  double lower() const { return 1.0 - z_threshold * standard_error; }
};

namespace detail {

struct SampleStats {
  double mean = 0.0;
  double se = 0.0;
};

inline SampleStats mean_and_se(const std::vector<double>& samples) {
  SampleStats s;
  if (samples.empty()) return s;
  const auto n = static_cast<double>(samples.size());
  s.mean = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
  if (samples.size() < 2) return s;
  double ss = 0.0;
  for (double x : samples) ss += (x - s.mean) * (x - s.mean);
  s.se = std::sqrt(ss / (n - 1.0) / n);
  return s;
}

inline std::size_t pair_count(const MonteCarloOptions& mc) {
  if (mc.zero_noise) return 1;
  if (mc.n_paths < 4) throw ValidationError("Monte Carlo: need at least 4 paths");
  return mc.n_paths / 2;
}

inline NoiseMode member_mode(const MonteCarloOptions& mc, int member) {
  if (mc.zero_noise) return NoiseMode::Zero;
  return member == 0 ? NoiseMode::Random : NoiseMode::Antithetic;
}

// Burn-in noise uses a seed distinct from the main segment.
inline std::uint64_t burn_in_seed(std::uint64_t seed) { return mix_seed(seed, 0xB0B0B0B0ULL); }

}  // namespace detail

/// Runs n_paths from v0 at time 0: the factor alone up to t, then factor and wealth (restarted at
/// x0) from t to s, with the same Brownian increments driving both.
inline MartingaleReport martingale_test(const FactorModel& model, const ForwardPerformance& fp,
                                        const LabeledStrategy& strategy, double x0, double t, double s,
                                        const MonteCarloOptions& mc, std::optional<Vec> v0_opt = std::nullopt) {
  if (!(t >= 0.0 && s > t)) throw ValidationError("martingale_test: need 0 <= t < s");
  detail::require_domain(fp.utility(), x0);
  if (model.noise_dim != fp.market().noise_dim) throw DimensionError("martingale_test: model/market mismatch");
  const Vec v0 = v0_opt ? *v0_opt : fp.solution().v0;
  detail::require_dim(v0, model.dim, "martingale_test: v0");
  const bool additive = fp.utility().is_exponential();
  const bool log_scale = fp.utility().is_log();
  const std::size_t pairs = detail::pair_count(mc);
  const std::size_t n_pre = t > 0.0 ? step_count(mc.dt, t) : 0;
  const std::size_t n_main = step_count(mc.dt, s - t);
  const double dt_pre = n_pre ? t / static_cast<double>(n_pre) : mc.dt;
  const double dt_main = (s - t) / static_cast<double>(n_main);
  const int m = model.noise_dim;

  auto one_path = [&](std::uint64_t seed, NoiseMode mode) {
    Vec v = v0;
    Vec dw;
    if (n_pre) {
      BrownianSource pre(m, dt_pre, detail::burn_in_seed(seed), mode);
      for (std::size_t k = 0; k < n_pre; ++k) {
        pre.next(dw);
        factor_step(model, v, dw, dt_pre, k);
      }
    }
    const double u_t = fp.U(x0, t, v);
    BrownianSource noise(m, dt_main, seed, mode);
    double state = additive ? x0 : std::log(x0);
    for (std::size_t k = 0; k < n_main; ++k) {
      noise.next(dw);
      const Vec pi = strategy.fn(v);
      state = wealth_step(additive, state, pi, fp.market().theta(v), dw, dt_main);
      factor_step(model, v, dw, dt_main, n_pre + k);
    }
    const double x_s = additive ? state : std::exp(state);
    if (!std::isfinite(x_s)) throw NumericOverflowError("martingale_test: non-finite wealth", n_pre + n_main);
    const double u_s = fp.U(x_s, s, v);
    const double scale = log_scale ? 1.0 : std::abs(u_t);
    return 1.0 + (u_s - u_t) / scale;
  };

  std::vector<double> pair_means(pairs);
  parallel_for(
      pairs,
      [&](std::size_t j) {
        const std::uint64_t seed = detail::mix_seed(mc.seed, j);
        if (mc.zero_noise) {
          pair_means[j] = one_path(seed, NoiseMode::Zero);
        } else {
          pair_means[j] = 0.5 * (one_path(seed, NoiseMode::Random) + one_path(seed, NoiseMode::Antithetic));
        }
      },
      mc.threads);

  const auto st = detail::mean_and_se(pair_means);
  MartingaleReport r;
  r.label = strategy.label;
  r.t = t;
  r.s = s;
  r.n_paths = mc.zero_noise ? 1 : 2 * pairs;
  r.mean = st.mean;
  r.standard_error = st.se;
  const double se_floor = 1e-12 * std::max(1.0, std::abs(st.mean));
  double se = st.se;
  if (!(se > se_floor)) {
    if (!mc.zero_noise) r.diagnostic = "degenerate variance: all sampled paths give the same statistic";
    se = se_floor;
  }
  if (st.mean > 1.0 + r.z_threshold * se) {
    r.verdict = MartingaleVerdict::Violation;
  } else if (st.mean < 1.0 - r.z_threshold * se) {
    r.verdict = MartingaleVerdict::StrictSupermartingale;
  } else {
    r.verdict = MartingaleVerdict::Consistent;
  }
  return r;
}

/// Per-horizon estimate of the growth rate: (1/T) ln E[(X_T / x0)^delta] for power utility and
/// (1/T) E[ln(X_T / x0)] for log utility.
struct LambdaEstimate {
  std::string label;
  bool log_mode = false;
  std::vector<double> horizons;
  std::vector<double> estimates;
  std::vector<double> half_widths;          // 95% confidence half-widths
  std::vector<double> max_weight_fraction;  // largest single weight over the total (power only)
  std::vector<std::string> warnings;
};

inline LambdaEstimate risk_sensitive_lambda(const MarketSpec& market, const FactorModel& model,
                                            const LabeledStrategy& strategy, const UtilitySpec& utility,
                                            const Vec& v0, const std::vector<double>& horizons,
                                            const MonteCarloOptions& mc) {
  if (utility.is_exponential()) {
    throw UnsupportedConfiguration("risk_sensitive_lambda: only power and log utilities are supported");
  }
  if (horizons.empty()) throw ValidationError("risk_sensitive_lambda: no horizons");
  for (std::size_t i = 0; i < horizons.size(); ++i) {
    if (!(horizons[i] > 0.0) || (i > 0 && !(horizons[i] > horizons[i - 1]))) {
      throw ValidationError("risk_sensitive_lambda: horizons must be positive and increasing");
    }
  }
  detail::require_dim(v0, model.dim, "risk_sensitive_lambda: v0");
  const std::size_t n_steps = step_count(mc.dt, horizons.back());
  const double dt = horizons.back() / static_cast<double>(n_steps);
  std::vector<std::size_t> marks;
  for (double h : horizons) marks.push_back(static_cast<std::size_t>(std::llround(h / dt)));
  const std::size_t nh = horizons.size();
  const std::size_t pairs = detail::pair_count(mc);
  const int members = mc.zero_noise ? 1 : 2;

  // log_ret[(j * members + member) * nh + h] = ln(X_T / x0)
  std::vector<double> log_ret(pairs * static_cast<std::size_t>(members) * nh);
  parallel_for(
      pairs,
      [&](std::size_t j) {
        const std::uint64_t seed = detail::mix_seed(mc.seed, j);
        for (int member = 0; member < members; ++member) {
          BrownianSource noise(model.noise_dim, dt, seed, detail::member_mode(mc, member));
          Vec v = v0;
          Vec dw;
          double lx = 0.0;
          std::size_t next = 0;
          for (std::size_t k = 0; k < n_steps; ++k) {
            noise.next(dw);
            const Vec pi = strategy.fn(v);
            lx = wealth_step(false, lx, pi, market.theta(v), dw, dt);
            factor_step(model, v, dw, dt, k);
            while (next < nh && marks[next] == k + 1) {
              log_ret[(j * static_cast<std::size_t>(members) + static_cast<std::size_t>(member)) * nh + next] = lx;
              ++next;
            }
          }
          if (!std::isfinite(lx)) throw NumericOverflowError("risk_sensitive_lambda: non-finite wealth", n_steps);
        }
      },
      mc.threads);

  LambdaEstimate out;
  out.label = strategy.label;
  out.log_mode = utility.is_log();
  out.horizons = horizons;
  const double z95 = 1.959963984540054;
  for (std::size_t h = 0; h < nh; ++h) {
    const double T = horizons[h];
    auto at = [&](std::size_t j, int member) {
      return log_ret[(j * static_cast<std::size_t>(members) + static_cast<std::size_t>(member)) * nh + h];
    };
    if (utility.is_log()) {
      std::vector<double> pm(pairs);
      for (std::size_t j = 0; j < pairs; ++j) {
        double acc = 0.0;
        for (int member = 0; member < members; ++member) acc += at(j, member);
        pm[j] = acc / members;
      }
      const auto st = detail::mean_and_se(pm);
      out.estimates.push_back(st.mean / T);
      out.half_widths.push_back(z95 * st.se / T);
      out.max_weight_fraction.push_back(0.0);
      continue;
    }
    const double d = utility.delta();
    double shift = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < pairs; ++j) {
      for (int member = 0; member < members; ++member) shift = std::max(shift, d * at(j, member));
    }
    std::vector<double> pm(pairs);
    double total = 0.0;
    double max_w = 0.0;
    for (std::size_t j = 0; j < pairs; ++j) {
      double acc = 0.0;
      for (int member = 0; member < members; ++member) {
        const double w = std::exp(d * at(j, member) - shift);
        acc += w;
        max_w = std::max(max_w, w);
      }
      total += acc;
      pm[j] = acc / members;
    }
    const auto st = detail::mean_and_se(pm);
    out.estimates.push_back((shift + std::log(st.mean)) / T);
    out.half_widths.push_back(z95 * st.se / st.mean / T);
    const double frac = max_w / total;
    out.max_weight_fraction.push_back(frac);
    if (frac > 0.05) {
      out.warnings.push_back("T = " + std::to_string(T) + ": largest weight is " + std::to_string(100.0 * frac) +
                             "% of the total; the exponential-moment estimate is tail-dominated");
    }
  }
  return out;
}

struct ConvergenceTable {
  std::string parameter;
  std::vector<std::string> columns;
  std::vector<double> params;
  std::vector<std::vector<double>> rows;  // rows[i][c]
  double fitted_rate = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> notes;

  std::vector<double> column(std::size_t c) const {
    std::vector<double> out;
    for (const auto& r : rows) out.push_back(r[c]);
    return out;
  }
  std::size_t column_index(const std::string& name) const {
    for (std::size_t c = 0; c < columns.size(); ++c) {
      if (columns[c] == name) return c;
    }
    throw ValidationError("convergence table: no column '" + name + "'");
  }
};

/// Least-squares slope of y on x.
inline double least_squares_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ValidationError("least_squares_slope: need two matching samples");
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxy / sxx;
}

struct StrategyGapOptions {
  std::size_t n_paths = 32;
  double horizon = 5.0;
  double dt = 0.01;
  std::uint64_t seed = 17;
};

/// Discount study over a completed vanishing-discount run. Columns: lambda_gap = |rho y^rho(v0) - lambda|,
/// y_gap = sup over probes |ybar^rho - y|, strategy_gap = average over paths of (1/T) int |pi^rho - pi*|^2 dt
/// (same factor paths for every rho). fitted_rate is the slope of ln(lambda_gap) against ln(rho).
inline ConvergenceTable rho_convergence_study(const ErgodicProblem& pb, const VanishingDiscountResult& vd,
                                              const std::vector<Vec>& probes, const StrategyGapOptions& gap = {}) {
  const ErgodicSolution& sol = vd.solution;
  const InterpStencil st0 = locate(pb.grid(), sol.v0);
  std::vector<InterpStencil> probe_st;
  for (const auto& p : probes) probe_st.push_back(locate(pb.grid(), p));
  if (probe_st.empty()) throw ValidationError("rho_convergence_study: no probe points");

  std::vector<FactorPath> paths;
  for (std::size_t i = 0; i < gap.n_paths; ++i) {
    paths.push_back(simulate_factor(pb.model(), sol.v0, gap.dt, gap.horizon, detail::mix_seed(gap.seed, i)));
  }
  const ForwardPerformance fp(pb, sol);
  std::vector<std::vector<Vec>> pi_star(paths.size());
  for (std::size_t i = 0; i < paths.size(); ++i) {
    for (const auto& v : paths[i].states) pi_star[i].push_back(fp.optimal_strategy(v));
  }

  ConvergenceTable t;
  t.parameter = "rho";
  t.columns = {"lambda_gap", "y_gap", "strategy_gap"};
  for (std::size_t k = 0; k < vd.discounted.size(); ++k) {
    const DiscountedSolution& d = vd.discounted[k];
    const double at_v0 = interpolate(st0, d.y);
    double ygap = 0.0;
    for (std::size_t p = 0; p < probes.size(); ++p) {
      ygap = std::max(ygap, std::abs(interpolate(probe_st[p], d.y) - at_v0 - interpolate(probe_st[p], sol.y)));
    }
    const DiscountedForward dfp(pb, d);
    double sgap = 0.0;
    for (std::size_t i = 0; i < paths.size(); ++i) {
      const auto& states = paths[i].states;
      double acc = 0.0;
      for (std::size_t s = 0; s < states.size(); ++s) {
        const double g = (dfp.optimal_strategy(states[s]) - pi_star[i][s]).squaredNorm();
        acc += (s == 0 || s + 1 == states.size() ? 0.5 : 1.0) * g * paths[i].dt;
      }
      sgap += acc / gap.horizon;
    }
    sgap /= static_cast<double>(paths.size());
    t.params.push_back(d.rho);
    t.rows.push_back({std::abs(vd.lambda_rho[k] - sol.lambda), ygap, sgap});
  }
  std::vector<double> lx, ly;
  for (std::size_t k = 0; k < t.rows.size(); ++k) {
    if (t.rows[k][0] > 0.0) {
      lx.push_back(std::log(t.params[k]));
      ly.push_back(std::log(t.rows[k][0]));
    }
  }
  if (lx.size() >= 2) t.fitted_rate = least_squares_slope(lx, ly);
  for (std::size_t k = 2; k < t.rows.size(); ++k) {
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
      if (t.rows[k][c] > t.rows[k - 1][c] * (1 + 1e-9) + 1e-15) {
        t.notes.push_back("row rho=" + std::to_string(t.params[k]) + ": " + t.columns[c] + " increased");
      }
    }
  }
  return t;
}

inline ConvergenceTable rho_convergence_study(const ErgodicProblem& pb, const std::vector<double>& rhos,
                                              const Vec& v0, const std::vector<Vec>& probes,
                                              const StrategyGapOptions& gap = {}) {
  return rho_convergence_study(pb, vanishing_discount(pb, rhos, v0), probes, gap);
}

struct HorizonStudyOptions {
  double dt = 0.005;  // backward time step
  double x = 1.0;     // wealth at which u^rho / U^rho is compared (the ratio does not depend on it)
};

/// Horizon study at fixed rho, evaluated at t = 0 on the probe points. Columns:
/// ratio_gap = max |u^rho(x,0;T) / U^rho(x,0) - 1| (for log utility the difference u^rho - U^rho),
/// y_gap = max |Y^{rho,T}(v,0) - y^rho(v)|. A baseline row T = 0 (terminal slice) comes first.
/// fitted_rate is minus the least-squares slope of ln(ratio_gap) against T over the rows T > 0.
inline ConvergenceTable horizon_convergence_study(const ErgodicProblem& pb, double rho,
                                                  const std::vector<double>& horizons,
                                                  const std::vector<Vec>& probes,
                                                  const HorizonStudyOptions& opt = {}) {
  if (horizons.empty()) throw ValidationError("horizon_convergence_study: no horizons");
  if (probes.empty()) throw ValidationError("horizon_convergence_study: no probe points");
  const DiscountedSolution disc = solve_discounted(pb, rho);
  std::vector<InterpStencil> st;
  for (const auto& p : probes) st.push_back(locate(pb.grid(), p));
  const bool log_mode = pb.utility().is_log();

  ConvergenceTable t;
  t.parameter = "T";
  t.columns = {"ratio_gap", "y_gap"};
  auto add_row = [&](double T, const Vec& y0) {
    double ratio_gap = 0.0, ygap = 0.0;
    for (const auto& s : st) {
      const double diff = interpolate(s, y0) - interpolate(s, disc.y);
      ygap = std::max(ygap, std::abs(diff));
      ratio_gap = std::max(ratio_gap, log_mode ? std::abs(diff) : std::abs(std::expm1(diff)));
    }
    t.params.push_back(T);
    t.rows.push_back({ratio_gap, ygap});
  };
  add_row(0.0, Vec::Zero(pb.size()));
  for (std::size_t i = 0; i < horizons.size(); ++i) {
    const double T = horizons[i];
    if (!(T > 0.0) || (i > 0 && !(T > horizons[i - 1]))) {
      throw ValidationError("horizon_convergence_study: horizons must be positive and increasing");
    }
    const int steps = static_cast<int>(std::max<long long>(1, std::llround(T / opt.dt)));
    const FiniteHorizonSolution fh = solve_finite_horizon(pb, rho, T, steps);
    add_row(T, fh.y.front());
  }
  std::vector<double> xs, ys;
  for (std::size_t k = 1; k < t.rows.size(); ++k) {
    if (t.rows[k][0] > 0.0) {
      xs.push_back(t.params[k]);
      ys.push_back(std::log(t.rows[k][0]));
    }
  }
  if (xs.size() >= 2) t.fitted_rate = -least_squares_slope(xs, ys);
  for (std::size_t k = 2; k < t.rows.size(); ++k) {
    if (t.rows[k][0] > t.rows[k - 1][0]) t.notes.push_back("row T=" + std::to_string(t.params[k]) + ": gap increased");
  }
  return t;
}

/// max y - min y over grid nodes within three invariant standard deviations of v0 on every axis.
/// Under the optimal strategy the growth-rate estimate at horizon T differs from lambda by at most
/// this oscillation divided by T.
inline double central_oscillation(const ErgodicSolution& sol, const FactorModel& model) {
  const Mat a = model.diffusion();
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t p = 0; p < sol.grid.size(); ++p) {
    const Vec pt = sol.grid.point(p);
    bool inside = true;
    for (int ax = 0; ax < sol.grid.dim; ++ax) {
      const double sd = std::sqrt(a(ax, ax) / (2.0 * model.dissipativity));
      inside = inside && std::abs(pt[ax] - sol.v0[ax]) <= 3.0 * sd;
    }
    if (!inside) continue;
    lo = std::min(lo, sol.y[static_cast<Eigen::Index>(p)]);
    hi = std::max(hi, sol.y[static_cast<Eigen::Index>(p)]);
  }
  return hi >= lo ? hi - lo : 0.0;
}

/// delta_hat = (1 - delta + delta kappa1^2) / (1 - delta).
inline double distortion_power(double delta, double kappa1) {
  return (1.0 - delta + delta * kappa1 * kappa1) / (1.0 - delta);
}

struct DistortionReport {
  double delta = 0.0;
  double delta_hat = 0.0;
  double horizon = 0.0;
  double probe_lower = 0.0;
  double probe_upper = 0.0;
  double max_relative_mismatch = 0.0;  // over probe nodes
  double lambda_solver = 0.0;
  double lambda_oracle = 0.0;          // principal eigenvalue of the linear operator / delta_hat
};

struct DistortionOptions {
  double horizon = 1.0;
  int time_steps = 400;
  double probe_lower = -2.0;
  double probe_upper = 2.0;
};

/// Single stock, one state factor driven by two Brownian motions (kappa = (kappa1, kappa2)),
/// Pi = R x {0}, power utility. The exponential transform phi = e^{delta_hat y} solves the linear
/// equation 1/2 phi'' + (eta + delta kappa1 theta / (1 - delta)) phi' + c(v) phi = delta_hat lambda phi
/// with c = delta_hat delta theta^2 / (2 (1 - delta)). The oracle propagates the linear parabolic problem
/// backward from phi at time T (Crank-Nicolson) and compares with e^{delta_hat (y + lambda T)}.
inline DistortionReport distortion_oracle(const ErgodicProblem& pb, const ErgodicSolution& sol,
                                          const DistortionOptions& opt = {}) {
  const FactorModel& model = pb.model();
  const MarketSpec& market = pb.market();
  const ConvexSet& set = pb.set();
  bool ok = model.dim == 1 && model.noise_dim == 2 && market.n_stocks == 1 && pb.utility().is_power();
  if (ok) {
    const auto* sub = std::get_if<CoordinateSubspace>(&set.kind());
    ok = sub && sub->free.size() == 2 && sub->free[0] && !sub->free[1];
  }
  if (ok) ok = pb.theta_nodes().col(1).cwiseAbs().maxCoeff() == 0.0;
  if (!ok) {
    throw UnsupportedConfiguration(
        "distortion oracle: requires one stock, one factor with two Brownian motions, Pi = R x {0}, "
        "power utility and theta = (theta1, 0)");
  }
  const double delta = pb.utility().delta();
  const double k1 = model.kappa(0, 0);
  const double dh = distortion_power(delta, k1);
  const Grid& g = pb.grid();
  const auto n = pb.size();
  const auto pts = g.points();

  Vec drift(n), pot(n);
  for (Eigen::Index p = 0; p < n; ++p) {
    const double th = pb.theta_nodes()(p, 0);
    drift[p] = model.drift(pts[static_cast<std::size_t>(p)])[0] + delta * k1 * th / (1.0 - delta);
    pot[p] = dh * delta * th * th / (2.0 * (1.0 - delta));
  }
  const GridOperators& ops = pb.ops();
  SpMat A = 0.5 * ops.second(0) + SpMat(drift.asDiagonal() * ops.first(0));
  SpMat P(n, n);
  P.setIdentity();
  A += SpMat(pot.asDiagonal() * P);
  A.makeCompressed();

  // Backward Crank-Nicolson from phi(T) = e^{dh y}.
  const double dt = opt.horizon / opt.time_steps;
  SpMat I(n, n);
  I.setIdentity();
  const SpMat lhs = I - 0.5 * dt * A;
  const SpMat rhs = I + 0.5 * dt * A;
  Eigen::SparseLU<SpMat> lu;
  lu.compute(lhs);
  if (lu.info() != Eigen::Success) throw ConvergenceError("distortion oracle: factorization failed");
  Vec phi = (dh * sol.y).array().exp().matrix();
  for (int k = 0; k < opt.time_steps; ++k) phi = lu.solve(rhs * phi);

  DistortionReport r;
  r.delta = delta;
  r.delta_hat = dh;
  r.horizon = opt.horizon;
  r.probe_lower = opt.probe_lower;
  r.probe_upper = opt.probe_upper;
  r.lambda_solver = sol.lambda;
  for (Eigen::Index p = 0; p < n; ++p) {
    const double v = pts[static_cast<std::size_t>(p)][0];
    if (v < opt.probe_lower || v > opt.probe_upper) continue;
    const double expected = std::exp(dh * (sol.y[p] + sol.lambda * opt.horizon));
    r.max_relative_mismatch = std::max(r.max_relative_mismatch, std::abs(phi[p] / expected - 1.0));
  }

  // Principal eigenvalue by shifted inverse iteration; the shift exceeds every Gershgorin centre.
  const double shift = pot.maxCoeff() + 0.05;
  Eigen::SparseLU<SpMat> lu2;
  lu2.compute(shift * I - A);
  if (lu2.info() != Eigen::Success) throw ConvergenceError("distortion oracle: eigen factorization failed");
  Vec x = Vec::Ones(n);
  double mu = 0.0;
  for (int it = 0; it < 500; ++it) {
    const Vec xn = lu2.solve(x);
    const double mu_new = xn.dot(x) / x.dot(x);
    x = xn / xn.norm();
    if (it > 0 && std::abs(mu_new - mu) <= 1e-15 * std::abs(mu_new)) {
      mu = mu_new;
      break;
    }
    mu = mu_new;
  }
  r.lambda_oracle = (shift - 1.0 / mu) / dh;
  return r;
}

}  // namespace ffp
