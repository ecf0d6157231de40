// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include "ffp/ffp.hpp"

#include <Eigen/Eigenvalues>

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

using namespace ffp;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", x);
  return buf;
}

struct Outcome {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    if (!detail.empty()) detail += "; ";
    detail += (ok ? "" : "FAILED ") + what;
  }
};

RunConfig config(const std::string& name) { return load_config(fs::path(FFP_CONFIG_DIR) / (name + ".json")); }

RunConfig with_nodes(RunConfig c, int nodes) {
  c.grid.nodes = {nodes};
  return c;
}

double max_abs(const Vec& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

// E[f(V)] for V ~ N(0, s^2) by Gauss-Hermite quadrature (Golub-Welsch).
double gauss_hermite(const std::function<double(double)>& f, double s, int n) {
  Mat j = Mat::Zero(n, n);
  for (int k = 1; k < n; ++k) j(k, k - 1) = j(k - 1, k) = std::sqrt(k / 2.0);
  Eigen::SelfAdjointEigenSolver<Mat> es(j);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double w = es.eigenvectors()(0, i) * es.eigenvectors()(0, i);
    acc += w * f(std::sqrt(2.0) * s * es.eigenvalues()[i]);
  }
  return acc;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(FFP_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ffp_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ErgodicSolution solve(const ErgodicProblem& pb, const RunConfig& c) {
  return vanishing_discount(pb, c.rho_sequence, c.v0).solution;
}

Outcome ac1() {
  Outcome o;
  const auto t0 = Clock::now();
  const RunConfig cp = config("constant_power");
  const ErgodicSolution p = solve(make_problem(cp), cp);
  o.check(std::abs(p.lambda - 0.08) <= 1e-6, "power lambda " + num(p.lambda));
  o.check(max_abs(p.y) <= 1e-8, "max|y| " + num(max_abs(p.y)));
  o.check(p.z.cwiseAbs().maxCoeff() <= 1e-8, "max|z| " + num(p.z.cwiseAbs().maxCoeff()));
  const RunConfig ce = config("constant_exponential");
  const ErgodicSolution e = solve(make_problem(ce), ce);
  o.check(std::abs(e.lambda + 0.08) <= 1e-6, "exponential lambda " + num(e.lambda));
  const double dt = seconds_since(t0);
  o.check(dt < 5.0, "runtime " + num(dt) + " s");
  return o;
}

Outcome ac2() {
  Outcome o;
  const auto t0 = Clock::now();
  const RunConfig c = config("tanh_log");
  const ErgodicSolution s = solve(make_problem(c), c);
  const double sd = std::sqrt(c.model.diffusion()(0, 0) / (2.0 * c.model.dissipativity));
  const double oracle = gauss_hermite(
      [&](double v) { return 0.5 * c.market.theta(Vec::Constant(1, v)).squaredNorm(); }, sd, 80);
  o.check(std::abs(s.lambda - oracle) <= 1e-3, "lambda " + num(s.lambda) + " vs quadrature " + num(oracle));
  const double dt = seconds_since(t0);
  o.check(dt < 30.0, "runtime " + num(dt) + " s");
  return o;
}

Outcome ac3() {
  Outcome o;
  for (const char* name : {"tanh_power", "tanh_exponential", "tanh_log"}) {
    const RunConfig fine = config(name);
    const RunConfig coarse = with_nodes(fine, (fine.grid.nodes[0] + 1) / 2);
    double sup[2];
    int i = 0;
    for (const RunConfig* c : {&coarse, &fine}) {
      const ErgodicProblem pb = make_problem(*c);
      const ErgodicSolution s = solve(pb, *c);
      const ResidualReport r = residual_report(pb, s);
      const double h = c->grid.h(0);
      const double tol = 10.0 * h * h * r.max_abs_driver;
      sup[i++] = r.sup;
      o.check(r.sup <= tol, std::string(name) + " n=" + std::to_string(c->grid.nodes[0]) + " residual " + num(r.sup) +
                                " <= " + num(tol));
    }
    o.check(sup[0] / sup[1] >= 3.0, std::string(name) + " refinement ratio " + num(sup[0] / sup[1]));
  }
  return o;
}

Outcome ac4() {
  Outcome o;
  for (const auto& entry : fs::directory_iterator(FFP_CONFIG_DIR)) {
    if (entry.path().extension() != ".json") continue;
    const RunConfig c = load_config(entry.path());
    const ErgodicProblem pb = make_problem(c);
    const ErgodicSolution s = solve(pb, c);
    const double zmax = s.z.rowwise().norm().maxCoeff();
    const double bound = 1.1 * pb.constants().truncation_radius();
    o.check(zmax <= bound, c.name + " " + num(zmax) + " <= " + num(bound));
  }
  return o;
}

Outcome ac5() {
  Outcome o;
  const auto t0 = Clock::now();
  const RunConfig c = config("tanh_power");
  const ErgodicProblem pb = make_problem(c);
  const ErgodicSolution s = solve(pb, c);
  const ForwardPerformance fp(pb, s);
  MonteCarloOptions mc = c.mc;
  mc.n_paths = 10000;
  mc.dt = 1e-3;
  const double delta = c.utility.delta(), shift = 0.1, t = 0.0, u = 1.0;
  const LabeledStrategy optimal{"optimal", [&fp](const Vec& v) { return fp.optimal_strategy(v); }};
  const LabeledStrategy zero{"zero", [](const Vec&) { return Vec(Vec::Zero(1)); }};
  const LabeledStrategy shifted{"shifted", [&fp, shift](const Vec& v) {
                                  return Vec(fp.optimal_strategy(v).array() + shift);
                                }};
  const auto ro = martingale_test(c.model, fp, optimal, 1.0, t, u, mc);
  o.check(std::abs(ro.mean - 1.0) <= 3.0 * ro.standard_error,
          "optimal " + num(ro.mean) + " se " + num(ro.standard_error));
  const auto rz = martingale_test(c.model, fp, zero, 1.0, t, u, mc);
  o.check(rz.mean <= 1.0 + 3.0 * rz.standard_error, "zero " + num(rz.mean) + " se " + num(rz.standard_error));
  const auto rs = martingale_test(c.model, fp, shifted, 1.0, t, u, mc);
  const double need = 0.5 * delta * (1 - delta) * shift * shift * (u - t) - 3.0 * rs.standard_error;
  o.check(rs.mean <= 1.0 + 3.0 * rs.standard_error && 1.0 - rs.mean >= need,
          "shifted " + num(rs.mean) + " se " + num(rs.standard_error) + ", 1 - mean >= " + num(need));
  const double dt = seconds_since(t0);
  o.check(dt < 120.0, "runtime " + num(dt) + " s");
  return o;
}

Outcome ac6() {
  Outcome o;
  const RunConfig c = config("constant_power");
  MonteCarloOptions mc = c.mc;
  mc.n_paths = 10000;
  mc.dt = 0.01;
  const std::vector<double> hs = {50.0};
  auto est = [&](double pi) {
    return risk_sensitive_lambda(c.market, c.model, {"pi", [pi](const Vec&) { return Vec(Vec::Constant(1, pi)); }},
                                 c.utility, c.v0, hs, mc);
  };
  const auto opt = est(0.8);
  o.check(std::abs(opt.estimates[0] - 0.08) <= 2.0 * opt.half_widths[0],
          "pi=0.8 " + num(opt.estimates[0]) + " +- " + num(opt.half_widths[0]) + ", max weight " +
              num(opt.max_weight_fraction[0]));
  const auto low = est(0.4);
  o.check(0.08 - low.estimates[0] >= 0.01, "pi=0.4 " + num(low.estimates[0]));
  return o;
}

Outcome ac7() {
  Outcome o;
  const RunConfig c = config("tanh_power");
  const ErgodicProblem pb = make_problem(c);
  const ConvergenceTable t = rho_convergence_study(pb, c.rho_sequence, c.v0, c.verify.probes);
  for (const char* col : {"lambda_gap", "y_gap"}) {
    const auto x = t.column(t.column_index(col));
    o.check(x.front() >= 5.0 * x.back(), std::string(col) + " " + num(x.front()) + " -> " + num(x.back()));
  }
  const auto sg = t.column(t.column_index("strategy_gap"));
  bool mono = true;
  for (std::size_t i = 1; i < sg.size(); ++i) mono = mono && sg[i] <= sg[i - 1] * (1 + 1e-9);
  o.check(mono, "strategy gap " + num(sg.front()) + " -> " + num(sg.back()));
  return o;
}

Outcome ac8() {
  Outcome o;
  const double rho = 0.1;
  const std::vector<double> horizons = {5.0, 10.0, 20.0};
  const RunConfig c = config("tanh_power");
  const ConvergenceTable t = horizon_convergence_study(make_problem(c), rho, horizons, c.verify.probes);
  o.check(std::abs(t.fitted_rate - rho) <= 0.2 * rho, "tanh rate " + num(t.fitted_rate));
  const RunConfig k = config("constant_power");
  const ErgodicProblem pk = make_problem(k);
  const ConvergenceTable tk = horizon_convergence_study(pk, rho, horizons, k.verify.probes);
  const double h0 = 0.5 * k.utility.delta() / (1 - k.utility.delta()) * 0.16;
  double worst = 0.0;
  const std::size_t yg = tk.column_index("y_gap");
  for (std::size_t i = 0; i < tk.rows.size(); ++i) {
    worst = std::max(worst, std::abs(tk.rows[i][yg] - h0 / rho * std::exp(-rho * tk.params[i])));
  }
  o.check(worst <= 1e-3, "constant envelope deviation " + num(worst));
  return o;
}

Outcome ac9() {
  Outcome o;
  for (double delta : {0.3, 0.5, 0.7}) {
    RunConfig c = config("distortion");
    c.utility = UtilitySpec::power(delta);
    const ErgodicProblem pb = make_problem(c);
    const DistortionReport r = distortion_oracle(pb, solve(pb, c));
    o.check(r.max_relative_mismatch <= 1e-2, "delta " + num(delta) + " mismatch " + num(r.max_relative_mismatch));
  }
  return o;
}

Outcome ac10() {
  Outcome o;
  const RunConfig c = config("tanh_power");
  const ConvexSet full = ConvexSet::full_space(1);
  double worst = 0.0;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const FactorPath path = simulate_factor(c.model, c.v0, 1e-3, 2.0, detail::mix_seed(c.mc.seed, i));
    const auto w = simulate_wealth(c.market, false, [](const Vec& v) { return Vec(Vec::Constant(1, 0.5 + 0.2 * v[0])); },
                                   path, 1.0);
    const Vec zero = Vec::Zero(1);
    const auto tm = closed_form_process(ClosedFormSpec::time_monotone(0.2), c.market, full, 0.5, path, w.wealth);
    const auto mv = closed_form_process(ClosedFormSpec::market_view(0.2, zero, 1.0), c.market, full, 0.5, path, w.wealth);
    const auto bm = closed_form_process(ClosedFormSpec::benchmark(0.2, zero, 1.0), c.market, full, 0.5, path, w.wealth);
    for (std::size_t k = 0; k < tm.size(); ++k) {
      worst = std::max({worst, std::abs(mv[k] - tm[k]) / std::abs(tm[k]), std::abs(bm[k] - tm[k]) / std::abs(tm[k])});
    }
  }
  o.check(worst <= 4.0 * std::numeric_limits<double>::epsilon(), "phi=0 relative deviation " + num(worst));

  const RunConfig k = config("constant_power");
  const ErgodicProblem pk = make_problem(k);
  const ForwardPerformance fp(pk, solve(pk, k));
  const double y0 = 0.3;
  double dev = 0.0;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const FactorPath path = simulate_factor(k.model, k.v0, 1e-3, 2.0, detail::mix_seed(k.mc.seed, i));
    const WealthPath w = simulate_wealth(fp, path, 1.0);
    const auto tm = closed_form_process(ClosedFormSpec::time_monotone(y0), k.market, k.set, 0.5, path, w.wealth);
    for (std::size_t j = 0; j < tm.size(); ++j) {
      dev = std::max(dev, std::abs(tm[j] - std::exp(y0) * evaluate_U(fp, w.wealth[j], path.times[j], path.states[j])));
    }
  }
  o.check(dev <= 1e-10, "time-monotone vs e^{Y0} U deviation " + num(dev));
  return o;
}

Outcome ac11() {
  Outcome o;
  const fs::path d = scratch("determinism");
  const std::string cfg = (fs::path(FFP_CONFIG_DIR) / "tanh_power.json").string();
  for (const char* run : {"a", "b"}) {
    const fs::path r = d / run;
    o.check(run_cli("solve --config " + cfg + " --out " + (r / "sol").string()) == 0, std::string("solve ") + run);
    o.check(run_cli("simulate --config " + cfg + " --solution " + (r / "sol").string() + " --paths 4 --out " +
                    (r / "sim").string()) == 0,
            std::string("simulate ") + run);
    o.check(run_cli("verify --config " + cfg + " --solution " + (r / "sol").string() +
                    " --studies martingale,rho --paths 200 --out " + (r / "ver").string()) == 0,
            std::string("verify ") + run);
  }
  int compared = 0;
  bool same = true;
  for (const auto& entry : fs::recursive_directory_iterator(d / "a")) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), d / "a");
    same = same && fs::exists(d / "b" / rel) && read_file(entry.path()) == read_file(d / "b" / rel);
    ++compared;
  }
  o.check(same && compared >= 8, std::to_string(compared) + " files byte-identical");
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"AC1 constant-coefficient exactness", ac1},
      {"AC2 logarithmic quadrature oracle", ac2},
      {"AC3 ergodic PDE residual", ac3},
      {"AC4 z bound", ac4},
      {"AC5 martingale gate", ac5},
      {"AC6 risk-sensitive lambda", ac6},
      {"AC7 rho convergence", ac7},
      {"AC8 horizon convergence", ac8},
      {"AC9 distortion oracle", ac9},
      {"AC10 closed forms", ac10},
      {"AC11 determinism", ac11},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    std::printf("%s %s (%.1f s): %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), seconds_since(t0), o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failed;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed ? 1 : 0;
}
