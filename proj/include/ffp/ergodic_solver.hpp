#pragma once

// Numerical solution of the discounted semilinear elliptic PDE
//
//   rho y = L y + H(v, q(kappa^T grad y)),
//
// its vanishing-discount limit (y, z, lambda) solving L y + H(v, kappa^T grad y) = lambda, and the
// finite-horizon backward problem d_t Y + L Y + H(v, kappa^T grad Y) - rho Y = 0, Y(., T) = 0.

#include "ffp/constraint_set.hpp"
#include "ffp/core.hpp"
#include "ffp/drivers.hpp"
#include "ffp/grid.hpp"
#include "ffp/market_model.hpp"

#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace ffp {

struct SolverOptions {
  double tol_fp = 1e-10;  // sup-norm change of the fixed-point map
  int max_iter = 5000;
  double damping = 0.8;  // y <- (1 - w) y + w y'
  // Spread allowed among the last three lambda_rho, as a fraction of K.
  double cauchy_fraction = 0.1;
};

/// Everything the solvers need, precomputed once: generator matrix, theta at the nodes and the
/// driver constants estimated over the grid.
class ErgodicProblem {
 public:
  ErgodicProblem(FactorModel model, MarketSpec market, UtilitySpec utility, ConvexSet set, Grid grid,
                 SolverOptions options = {})
      : model_(std::move(model)),
        market_(std::move(market)),
        utility_(utility),
        set_(std::move(set)),
        ops_(std::move(grid)),
        options_(options) {
    model_.validate();
    if (market_.noise_dim != model_.noise_dim) {
      throw DimensionError("market and factor model use different Brownian dimensions");
    }
    if (set_.dim() != model_.noise_dim) throw DimensionError("constraint set dimension must equal noise dimension");
    const Grid& g = ops_.grid();
    if (g.dim != model_.dim) throw DimensionError("grid dimension must equal factor dimension");
    generator_ = ops_.generator(model_);
    const auto n = static_cast<Eigen::Index>(g.size());
    theta_nodes_.resize(n, model_.noise_dim);
    const auto pts = g.points();
    for (Eigen::Index p = 0; p < n; ++p) theta_nodes_.row(p) = market_.theta(pts[static_cast<std::size_t>(p)]).transpose();
    constants_ = estimate_driver_constants(model_, market_, utility_, set_, pts);
  }

  const FactorModel& model() const { return model_; }
  const MarketSpec& market() const { return market_; }
  const UtilitySpec& utility() const { return utility_; }
  const ConvexSet& set() const { return set_; }
  const Grid& grid() const { return ops_.grid(); }
  const GridOperators& ops() const { return ops_; }
  const SpMat& generator() const { return generator_; }
  const Mat& theta_nodes() const { return theta_nodes_; }
  const DriverConstants& constants() const { return constants_; }
  const SolverOptions& options() const { return options_; }
  Eigen::Index size() const { return static_cast<Eigen::Index>(grid().size()); }

  /// Nodal z = kappa^T grad y (second-order differences): N x m.
  Mat z_of(const Vec& y) const { return ops_.gradient(y) * model_.kappa; }

  /// Nodal H(v, q(z)) (or H(v, z) when truncate is false).
  Vec driver_at(const Mat& z, bool truncate = true) const {
    const double radius = constants_.truncation_radius();
    Vec h(size());
    for (Eigen::Index p = 0; p < size(); ++p) {
      const Vec zp = z.row(p).transpose();
      const Vec th = theta_nodes_.row(p).transpose();
      h[p] = driver_value(utility_, truncate ? truncate_q(zp, radius) : zp, th, set_);
    }
    return h;
  }

  double max_abs_driver(const Mat& z) const { return driver_at(z, false).cwiseAbs().maxCoeff(); }

 private:
  FactorModel model_;
  MarketSpec market_;
  UtilitySpec utility_;
  ConvexSet set_;
  GridOperators ops_;
  SolverOptions options_;
  SpMat generator_;
  Mat theta_nodes_;
  DriverConstants constants_;
};

struct DiscountedSolution {
  double rho = 0.0;
  Vec y;  // y^rho at the nodes
  Mat z;  // kappa^T grad y^rho at the nodes
  double residual_norm = 0.0;  // sup |rho y - L y - H(v, q(z))| of the discrete equations
  int iterations = 0;
  bool z_bound_warning = false;  // max |z| exceeds the truncation radius by more than 10%
  std::vector<double> change_history;
};

struct ErgodicSolution {
  double lambda = 0.0;
  Vec y;  // normalized so that y(v0) = 0
  Mat z;
  Vec v0;
  std::vector<double> rho_sequence;
  Grid grid;
  double lambda_richardson = 0.0;  // extrapolated from the lambda_rho table
  double residual_sup = 0.0;       // fourth-order consistency residual on interior nodes
  double residual_tolerance = 0.0;
  bool residual_ok = true;
};

struct VanishingDiscountResult {
  ErgodicSolution solution;
  std::vector<DiscountedSolution> discounted;
  std::vector<double> lambda_rho;  // rho * y^rho(v0)
  double cauchy_spread = 0.0;
};

struct FiniteHorizonSolution {
  double rho = 0.0;
  double horizon = 0.0;
  std::vector<double> times;  // ascending, times.back() == horizon
  std::vector<Vec> y;         // y[k] = Y(., times[k]); y.back() == 0

  /// Linear interpolation in time, multilinear in space.
  double value(const Grid& g, const Vec& v, double t) const {
    const InterpStencil st = locate(g, v);
    if (t <= times.front()) return interpolate(st, y.front());
    if (t >= times.back()) return interpolate(st, y.back());
    const double dt = times[1] - times[0];
    const auto k = std::min(static_cast<std::size_t>((t - times.front()) / dt), times.size() - 2);
    const double w = (t - times[k]) / dt;
    return (1 - w) * interpolate(st, y[k]) + w * interpolate(st, y[k + 1]);
  }
};

namespace detail {

inline SpMat shifted_operator(const SpMat& L, double diag, double scale) {
  // diag * I - scale * L
  SpMat I(L.rows(), L.cols());
  I.setIdentity();
  SpMat A = diag * I - scale * L;
  A.makeCompressed();
  return A;
}

inline std::string format_history(const std::vector<double>& hist) {
  std::ostringstream os;
  const std::size_t start = hist.size() > 10 ? hist.size() - 10 : 0;
  for (std::size_t i = start; i < hist.size(); ++i) os << (i == start ? "" : ", ") << hist[i];
  return os.str();
}

}  // namespace detail

/// Damped fixed point: z = q(kappa^T grad y), solve rho y' - L y' = H(v, z), y <- (1-w) y + w y'.
inline DiscountedSolution solve_discounted(const ErgodicProblem& pb, double rho,
                                           const std::optional<Vec>& warm_start = std::nullopt) {
  if (!(rho > 0.0)) throw ValidationError("solve_discounted: rho must be positive");
  const auto& opt = pb.options();
  Eigen::SparseLU<SpMat> lu;
  lu.compute(detail::shifted_operator(pb.generator(), rho, 1.0));
  if (lu.info() != Eigen::Success) throw ConvergenceError("solve_discounted: factorization failed");

  DiscountedSolution sol;
  sol.rho = rho;
  const Vec h0 = pb.driver_at(Mat::Zero(pb.size(), pb.model().noise_dim));
  Vec y = warm_start ? *warm_start : Vec(h0 / rho);
  bool converged = false;
  for (int it = 0; it < opt.max_iter; ++it) {
    const Vec h = pb.driver_at(pb.z_of(y));
    const Vec y_new = lu.solve(h);
    const double change = (y_new - y).cwiseAbs().maxCoeff();
    sol.change_history.push_back(change);
    y = (1.0 - opt.damping) * y + opt.damping * y_new;
    sol.iterations = it + 1;
    if (!y.allFinite()) throw ConvergenceError("solve_discounted: iterate became non-finite");
    if (change < opt.tol_fp) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    throw ConvergenceError("solve_discounted: no convergence at rho = " + std::to_string(rho) + " after " +
                           std::to_string(opt.max_iter) +
                           " iterations; last changes: " + detail::format_history(sol.change_history));
  }
  sol.y = y;
  sol.z = pb.z_of(y);
  const Vec h = pb.driver_at(sol.z);
  sol.residual_norm = (rho * y - pb.generator() * y - h).cwiseAbs().maxCoeff();
  const double zmax = sol.z.rowwise().norm().maxCoeff();
  sol.z_bound_warning = zmax > 1.1 * pb.constants().truncation_radius();
  return sol;
}

inline DiscountedSolution solve_discounted(const FactorModel& model, const MarketSpec& market,
                                           const UtilitySpec& utility, const ConvexSet& set, double rho,
                                           const Grid& grid) {
  return solve_discounted(ErgodicProblem(model, market, utility, set, grid), rho);
}

struct ResidualReport {
  double sup = 0.0;
  double rms = 0.0;
  std::size_t interior_nodes = 0;
  double max_abs_driver = 0.0;
  double z_utilization = 0.0;  // max |z| (C_eta - C_v) / C_v
};

namespace detail {

// Pointwise residual L y + H(v, kappa^T grad y) - c_p with fourth-order derivatives, where c_p is
// lambda (ergodic) or rho y_p (discounted).
template <class Offset>
ResidualReport residual_impl(const ErgodicProblem& pb, const Vec& y, const Mat& z, Offset offset) {
  const Grid& g = pb.grid();
  const Mat a = pb.model().diffusion();
  ResidualReport r;
  double ss = 0.0;
  for (std::size_t p = 0; p < g.size(); ++p) {
    if (g.boundary_distance(p) < 2) continue;
    const auto d = fourth_order_derivatives(g, y, p);
    const Vec v = g.point(p);
    const Vec zp = pb.model().kappa.transpose() * d.gradient;
    const Vec th = pb.theta_nodes().row(static_cast<Eigen::Index>(p)).transpose();
    const double gen = 0.5 * (a.cwiseProduct(d.hessian)).sum() + pb.model().drift(v).dot(d.gradient);
    const double res = gen + driver_value(pb.utility(), zp, th, pb.set()) - offset(p);
    r.sup = std::max(r.sup, std::abs(res));
    ss += res * res;
    ++r.interior_nodes;
  }
  if (r.interior_nodes == 0) throw ValidationError("residual_report: grid has no interior nodes");
  r.rms = std::sqrt(ss / static_cast<double>(r.interior_nodes));
  r.max_abs_driver = pb.max_abs_driver(z);
  const auto& c = pb.constants();
  r.z_utilization = z.rowwise().norm().maxCoeff() * (c.c_eta - c.c_v) / c.c_v;
  return r;
}

}  // namespace detail

/// Residual of the ergodic PDE measured with fourth-order stencils, so that it reflects the
/// consistency error of the second-order scheme rather than the algebraic solver tolerance.
inline ResidualReport residual_report(const ErgodicProblem& pb, const ErgodicSolution& s) {
  return detail::residual_impl(pb, s.y, s.z, [&](std::size_t) { return s.lambda; });
}

inline ResidualReport residual_report(const ErgodicProblem& pb, const DiscountedSolution& s) {
  return detail::residual_impl(pb, s.y, s.z,
                               [&](std::size_t p) { return s.rho * s.y[static_cast<Eigen::Index>(p)]; });
}

/// Tolerance 10 h^2 max|H| for the ergodic residual.
inline double ergodic_residual_tolerance(const ErgodicProblem& pb, const Mat& z) {
  const double h = pb.grid().min_h();
  return 10.0 * h * h * std::max(pb.max_abs_driver(z), 1e-12);
}

/// Direct solve of the discrete ergodic problem L y + H(v, q(kappa^T grad y)) = lambda, y(v0) = 0,
/// by the same damped fixed point applied to the bordered system [L -1; w^T 0].
inline ErgodicSolution solve_ergodic_direct(const ErgodicProblem& pb, const Vec& v0, Vec y_init,
                                            double lambda_init) {
  const auto& opt = pb.options();
  const Eigen::Index n = pb.size();
  const InterpStencil st = locate(pb.grid(), v0);

  std::vector<Eigen::Triplet<double>> trip;
  const SpMat& L = pb.generator();
  for (int k = 0; k < L.outerSize(); ++k) {
    for (SpMat::InnerIterator it(L, k); it; ++it) trip.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
  }
  for (Eigen::Index p = 0; p < n; ++p) trip.emplace_back(static_cast<int>(p), static_cast<int>(n), -1.0);
  for (int k = 0; k < st.count; ++k) {
    trip.emplace_back(static_cast<int>(n), static_cast<int>(st.index[k]), st.weight[k]);
  }
  SpMat B(n + 1, n + 1);
  B.setFromTriplets(trip.begin(), trip.end());
  B.makeCompressed();
  Eigen::SparseLU<SpMat> lu;
  lu.compute(B);
  if (lu.info() != Eigen::Success) throw ConvergenceError("ergodic solve: bordered factorization failed");

  Vec y = std::move(y_init);
  double lambda = lambda_init;
  Vec rhs(n + 1);
  bool converged = false;
  std::vector<double> hist;
  for (int it = 0; it < opt.max_iter; ++it) {
    rhs.head(n) = -pb.driver_at(pb.z_of(y));
    rhs[n] = 0.0;
    const Vec sol = lu.solve(rhs);
    const double change =
        std::max((sol.head(n) - y).cwiseAbs().maxCoeff(), std::abs(sol[n] - lambda));
    hist.push_back(change);
    y = (1.0 - opt.damping) * y + opt.damping * sol.head(n);
    lambda = (1.0 - opt.damping) * lambda + opt.damping * sol[n];
    if (!y.allFinite()) throw ConvergenceError("ergodic solve: iterate became non-finite");
    if (change < opt.tol_fp) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    throw ConvergenceError("ergodic solve: no convergence; last changes: " + detail::format_history(hist));
  }
  // Remove the O(tol) drift of the normalization left by damping.
  y.array() -= interpolate(st, y);

  ErgodicSolution s;
  s.lambda = lambda;
  s.y = y;
  s.z = pb.z_of(y);
  s.v0 = v0;
  s.grid = pb.grid();
  return s;
}

/// Vanishing discount: for each rho, lambda_rho = rho y^rho(v0) and ybar = y^rho - y^rho(v0); lambda is
/// extrapolated linearly in rho from the last two entries and the ergodic pair is then obtained by a
/// direct solve seeded with (ybar at the smallest rho, extrapolated lambda).
inline VanishingDiscountResult vanishing_discount(const ErgodicProblem& pb, const std::vector<double>& rhos,
                                                  const Vec& v0) {
  if (rhos.size() < 2) throw ValidationError("vanishing_discount: need at least two discounts");
  for (std::size_t i = 0; i < rhos.size(); ++i) {
    if (!(rhos[i] > 0.0) || (i > 0 && !(rhos[i] < rhos[i - 1]))) {
      throw ValidationError("vanishing_discount: rho sequence must be positive and decreasing");
    }
  }
  detail::require_dim(v0, pb.model().dim, "vanishing_discount: v0");
  const InterpStencil st = locate(pb.grid(), v0);

  VanishingDiscountResult out;
  std::optional<Vec> warm;
  for (double rho : rhos) {
    DiscountedSolution d = solve_discounted(pb, rho, warm);
    const double at_v0 = interpolate(st, d.y);
    out.lambda_rho.push_back(rho * at_v0);
    out.discounted.push_back(std::move(d));
    if (out.discounted.size() < rhos.size()) {
      // y^rho ~ lambda / rho + ybar: keep the shape, move the level to the next discount.
      const double rho_next = rhos[out.discounted.size()];
      warm = Vec(out.discounted.back().y.array() - at_v0 + rho * at_v0 / rho_next);
    }
  }

  const std::size_t m = rhos.size();
  const double ra = rhos[m - 2], rb = rhos[m - 1];
  const double la = out.lambda_rho[m - 2], lb = out.lambda_rho[m - 1];
  const double lambda_rich = (ra * lb - rb * la) / (ra - rb);

  const std::size_t first = m >= 3 ? m - 3 : 0;
  const auto [lo, hi] = std::minmax_element(out.lambda_rho.begin() + static_cast<long>(first), out.lambda_rho.end());
  out.cauchy_spread = *hi - *lo;
  const double tol = pb.options().cauchy_fraction * std::max(pb.constants().k, 1e-12);
  if (out.cauchy_spread > tol) {
    std::ostringstream os;
    os << "vanishing_discount: lambda_rho is not Cauchy (spread " << out.cauchy_spread << " > " << tol << "); table:";
    for (std::size_t i = 0; i < m; ++i) os << " [rho=" << rhos[i] << ", lambda=" << out.lambda_rho[i] << "]";
    throw ConvergenceError(os.str());
  }

  const DiscountedSolution& last = out.discounted.back();
  Vec ybar = last.y.array() - interpolate(st, last.y);
  ErgodicSolution sol = solve_ergodic_direct(pb, v0, std::move(ybar), lambda_rich);
  sol.rho_sequence = rhos;
  sol.lambda_richardson = lambda_rich;
  const ResidualReport rep = residual_report(pb, sol);
  sol.residual_sup = rep.sup;
  sol.residual_tolerance = ergodic_residual_tolerance(pb, sol.z);
  sol.residual_ok = rep.sup <= sol.residual_tolerance;
  out.solution = std::move(sol);
  return out;
}

inline VanishingDiscountResult vanishing_discount(const FactorModel& model, const MarketSpec& market,
                                                  const UtilitySpec& utility, const ConvexSet& set, const Grid& grid,
                                                  const std::vector<double>& rhos, const Vec& v0) {
  return vanishing_discount(ErgodicProblem(model, market, utility, set, grid), rhos, v0);
}

/// Backward IMEX stepping: (I + dt (rho - L)) Y^k = Y^{k+1} + dt H(v, q(kappa^T grad Y^{k+1})).
inline FiniteHorizonSolution solve_finite_horizon(const ErgodicProblem& pb, double rho, double horizon,
                                                  int time_steps) {
  if (!(horizon > 0.0)) throw ValidationError("solve_finite_horizon: horizon must be positive");
  if (!(rho > 0.0)) throw ValidationError("solve_finite_horizon: rho must be positive");
  if (time_steps < 1) throw ValidationError("solve_finite_horizon: need at least one time step");
  const double dt = horizon / time_steps;
  Eigen::SparseLU<SpMat> lu;
  lu.compute(detail::shifted_operator(pb.generator(), 1.0 + dt * rho, dt));
  if (lu.info() != Eigen::Success) throw ConvergenceError("solve_finite_horizon: factorization failed");

  FiniteHorizonSolution out;
  out.rho = rho;
  out.horizon = horizon;
  const auto steps = static_cast<std::size_t>(time_steps);
  out.times.resize(steps + 1);
  out.y.resize(steps + 1);
  for (std::size_t k = 0; k <= steps; ++k) out.times[k] = dt * static_cast<double>(k);
  out.times.back() = horizon;
  out.y[steps] = Vec::Zero(pb.size());
  const double blowup = 10.0 * (pb.constants().k / rho + 1.0);
  for (std::size_t k = steps; k-- > 0;) {
    const Vec h = pb.driver_at(pb.z_of(out.y[k + 1]));
    out.y[k] = lu.solve(out.y[k + 1] + dt * h);
    if (!out.y[k].allFinite() || out.y[k].cwiseAbs().maxCoeff() > blowup) {
      throw NumericOverflowError("solve_finite_horizon: slice blow-up", k);
    }
  }
  return out;
}

}  // namespace ffp
