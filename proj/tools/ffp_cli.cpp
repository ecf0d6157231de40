// ffp: solve, verify and simulate forward performance processes from a JSON run configuration.

#include "ffp/ffp.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace ffp;

namespace {

enum ExitCode { kOk = 0, kGateFailed = 1, kInvalidConfig = 2, kIntegrity = 3, kSolverFailure = 4 };

struct Gate {
  std::string study;
  std::string name;
  bool passed = false;
  std::string detail;
};

void print_gate(const Gate& g) {
  std::printf("[%s] %s: %s (%s)\n", g.passed ? "PASS" : "FAIL", g.study.c_str(), g.name.c_str(), g.detail.c_str());
}

std::string num(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

fs::path prepare_dir(const std::string& flag, const std::string& fallback) {
  fs::path dir = flag.empty() ? fs::path(fallback) : fs::path(flag);
  fs::create_directories(dir);
  return dir;
}

std::string residual_csv(const ErgodicProblem& pb, const ErgodicSolution& s, const VanishingDiscountResult* vd,
                         const std::string& hash) {
  const ResidualReport rep = residual_report(pb, s);
  const auto& c = pb.constants();
  std::string out = metadata_block({{"kind", "residual_report"}, {"config_hash", hash}});
  out += "metric,value\n";
  auto row = [&](const std::string& k, double v) { out += k + "," + fmt(v) + "\n"; };
  row("lambda", s.lambda);
  row("lambda_richardson", s.lambda_richardson);
  row("residual_sup", rep.sup);
  row("residual_rms", rep.rms);
  row("residual_tolerance", ergodic_residual_tolerance(pb, s.z));
  row("interior_nodes", static_cast<double>(rep.interior_nodes));
  row("max_abs_driver", rep.max_abs_driver);
  row("z_max", s.z.rowwise().norm().maxCoeff());
  row("truncation_radius", c.truncation_radius());
  row("z_utilization", rep.z_utilization);
  row("c_v", c.c_v);
  row("c_z", c.c_z);
  row("k", c.k);
  row("c_eta", c.c_eta);
  if (vd) row("cauchy_spread", vd->cauchy_spread);
  return out;
}

int cmd_solve(const std::string& config_path, const std::string& out_flag) {
  const RunConfig cfg = load_config(config_path);
  const fs::path dir = prepare_dir(out_flag, cfg.output_directory);
  const ErgodicProblem pb = make_problem(cfg);
  const VanishingDiscountResult vd = vanishing_discount(pb, cfg.rho_sequence, cfg.v0);
  const ErgodicSolution& s = vd.solution;

  Manifest manifest(cfg.hash, "solve");
  manifest.add(dir, "solution.csv", solution_csv(s, cfg.hash));
  manifest.add(dir, "lambda_table.csv", lambda_table_csv(vd, cfg.hash));
  manifest.add(dir, "residual.csv", residual_csv(pb, s, &vd, cfg.hash));
  manifest.add(dir, "lambda.txt", fmt(s.lambda) + "\n");
  manifest.write(dir);

  std::printf("config      %s (hash %s)\n", cfg.name.c_str(), cfg.hash.c_str());
  std::printf("utility     %s\n", cfg.utility.name().c_str());
  std::printf("lambda      %.12g\n", s.lambda);
  std::printf("richardson  %.12g\n", s.lambda_richardson);
  std::printf("residual    %.3e (tolerance %.3e)\n", s.residual_sup, s.residual_tolerance);
  for (const auto& d : vd.discounted) {
    if (d.z_bound_warning) std::printf("warning: |z| exceeds 1.1 x truncation radius at rho = %g\n", d.rho);
  }
  std::printf("wrote       %s\n", dir.string().c_str());
  if (!s.residual_ok) {
    std::fprintf(stderr, "error: ergodic residual %.3e exceeds tolerance %.3e\n", s.residual_sup, s.residual_tolerance);
    return kSolverFailure;
  }
  return kOk;
}

struct LoadedRun {
  RunConfig cfg;
  ErgodicSolution solution;
};

LoadedRun load_run(const std::string& config_path, const std::string& solution_dir) {
  LoadedRun r{load_config(config_path), {}};
  const fs::path dir(solution_dir);
  Manifest::verify(dir, r.cfg.hash);
  LoadedSolution ls = parse_solution_csv(read_file(dir / "solution.csv"));
  if (ls.metadata["config_hash"] != r.cfg.hash) throw IntegrityError("solution.csv was produced from a different config");
  const Grid& g = ls.solution.grid;
  if (g.dim != r.cfg.grid.dim || g.nodes != r.cfg.grid.nodes) throw IntegrityError("solution grid does not match config");
  r.solution = std::move(ls.solution);
  return r;
}

Strategy shifted(const ForwardPerformance& fp, double shift) {
  return [&fp, shift](const Vec& v) {
    const Vec pi = fp.optimal_strategy(v);
    return fp.set().project(pi + Vec::Constant(pi.size(), shift));
  };
}

std::string martingale_csv(const std::vector<MartingaleReport>& reps, const std::string& hash) {
  std::string out = metadata_block({{"kind", "martingale"}, {"config_hash", hash}});
  out += "strategy,t,s,n_paths,mean,standard_error,upper,lower,verdict\n";
  for (const auto& r : reps) {
    out += r.label + "," + fmt(r.t) + "," + fmt(r.s) + "," + std::to_string(r.n_paths) + "," + fmt(r.mean) + "," +
           fmt(r.standard_error) + "," + fmt(r.upper()) + "," + fmt(r.lower()) + "," + verdict_name(r.verdict) + "\n";
  }
  return out;
}

std::string lambda_csv(const std::vector<LambdaEstimate>& ests, double lambda, const std::string& hash) {
  std::string out = metadata_block({{"kind", "risk_sensitive_lambda"}, {"config_hash", hash}, {"lambda", fmt(lambda)}});
  out += "strategy,T,estimate,half_width,max_weight_fraction\n";
  for (const auto& e : ests) {
    for (std::size_t i = 0; i < e.horizons.size(); ++i) {
      out += e.label + "," + fmt(e.horizons[i]) + "," + fmt(e.estimates[i]) + "," + fmt(e.half_widths[i]) + "," +
             fmt(e.max_weight_fraction[i]) + "\n";
    }
  }
  return out;
}

bool decreased_by(const std::vector<double>& col, double factor) {
  return col.back() <= col.front() / factor || col.front() <= 1e-10;
}

int cmd_verify(const std::string& config_path, const std::string& solution_dir, const std::string& out_flag,
               std::optional<std::uint64_t> seed, std::optional<std::size_t> paths,
               const std::vector<std::string>& studies_flag, bool suboptimal) {
  LoadedRun run = load_run(config_path, solution_dir);
  RunConfig& cfg = run.cfg;
  if (seed) cfg.mc.seed = *seed;
  if (paths) {
    cfg.mc.n_paths = *paths;
    cfg.verify.lambda_paths = *paths;
  }
  std::vector<std::string> studies = studies_flag.empty() ? cfg.verify.studies : studies_flag;
  for (const auto& s : studies) {
    if (std::find(all_studies().begin(), all_studies().end(), s) == all_studies().end()) {
      throw ValidationError("unknown study '" + s + "'");
    }
  }
  auto wanted = [&](const char* s) { return std::find(studies.begin(), studies.end(), s) != studies.end(); };
  const fs::path dir = prepare_dir(out_flag, (fs::path(cfg.output_directory) / "verify").string());
  const ErgodicProblem pb = make_problem(cfg);
  const ForwardPerformance fp(pb, run.solution);
  const ErgodicSolution& sol = run.solution;
  Manifest manifest(cfg.hash, "verify");
  std::vector<Gate> gates;

  if (wanted("solution")) {
    const ResidualReport rep = residual_report(pb, sol);
    const double tol = ergodic_residual_tolerance(pb, sol.z);
    gates.push_back({"solution", "ergodic residual", rep.sup <= tol, num(rep.sup) + " <= " + num(tol)});
    const double zmax = sol.z.rowwise().norm().maxCoeff();
    const double bound = 1.1 * pb.constants().truncation_radius();
    gates.push_back({"solution", "z bound", zmax <= bound, num(zmax) + " <= " + num(bound)});
  }

  if (wanted("martingale")) {
    std::vector<MartingaleReport> reps;
    const LabeledStrategy optimal{"optimal", [&fp](const Vec& v) { return fp.optimal_strategy(v); }};
    const LabeledStrategy zero{"zero", [m = cfg.market.noise_dim](const Vec&) { return Vec(Vec::Zero(m)); }};
    const LabeledStrategy shift{"shifted", shifted(fp, cfg.verify.suboptimal_shift)};
    for (const auto& [t, s] : cfg.verify.martingale_times) {
      const std::string when = "(" + num(t) + "," + num(s) + ")";
      auto r = martingale_test(cfg.model, fp, optimal, cfg.verify.x0, t, s, cfg.mc);
      gates.push_back({"martingale", "optimal " + when, r.verdict == MartingaleVerdict::Consistent,
                       "mean " + num(r.mean) + ", se " + num(r.standard_error) + ", " + verdict_name(r.verdict)});
      reps.push_back(r);
      r = martingale_test(cfg.model, fp, zero, cfg.verify.x0, t, s, cfg.mc);
      gates.push_back({"martingale", "zero " + when, r.verdict != MartingaleVerdict::Violation,
                       "mean " + num(r.mean) + ", se " + num(r.standard_error) + ", " + verdict_name(r.verdict)});
      reps.push_back(r);
      if (suboptimal) {
        r = martingale_test(cfg.model, fp, shift, cfg.verify.x0, t, s, cfg.mc);
        gates.push_back({"martingale", "shifted " + when + " expected supermartingale-strict",
                         r.verdict == MartingaleVerdict::StrictSupermartingale,
                         "mean " + num(r.mean) + ", se " + num(r.standard_error) + ", " + verdict_name(r.verdict)});
        reps.push_back(r);
      }
    }
    manifest.add(dir, "martingale.csv", martingale_csv(reps, cfg.hash));
  }

  if (wanted("lambda")) {
    if (cfg.utility.is_exponential()) {
      std::printf("[SKIP] lambda: not defined for exponential utility\n");
    } else {
      MonteCarloOptions mc = cfg.mc;
      mc.dt = cfg.verify.lambda_dt;
      mc.n_paths = cfg.verify.lambda_paths;
      const LabeledStrategy optimal{"optimal", [&fp](const Vec& v) { return fp.optimal_strategy(v); }};
      const LabeledStrategy half{"half", [&fp](const Vec& v) { return Vec(0.5 * fp.optimal_strategy(v)); }};
      const auto& hs = cfg.verify.lambda_horizons;
      const auto e_opt = risk_sensitive_lambda(cfg.market, cfg.model, optimal, cfg.utility, sol.v0, hs, mc);
      const auto e_half = risk_sensitive_lambda(cfg.market, cfg.model, half, cfg.utility, sol.v0, hs, mc);
      for (const auto& w : e_opt.warnings) std::printf("warning: optimal %s\n", w.c_str());
      const double T = hs.back();
      const double slack = central_oscillation(sol, cfg.model) / T;
      const double gap = std::abs(e_opt.estimates.back() - sol.lambda);
      const double allowed = 2.0 * e_opt.half_widths.back() + slack;
      gates.push_back({"lambda", "optimal at T=" + num(T), gap <= allowed,
                       "estimate " + num(e_opt.estimates.back()) + " vs " + num(sol.lambda) + ", |gap| " + num(gap) +
                           " <= " + num(allowed)});
      gates.push_back({"lambda", "half strategy below lambda",
                       e_half.estimates.back() <= sol.lambda + e_half.half_widths.back(),
                       "estimate " + num(e_half.estimates.back()) + " <= " + num(sol.lambda) + " + " +
                           num(e_half.half_widths.back())});
      manifest.add(dir, "lambda.csv", lambda_csv({e_opt, e_half}, sol.lambda, cfg.hash));
    }
  }

  if (wanted("rho")) {
    const VanishingDiscountResult vd = vanishing_discount(pb, cfg.rho_sequence, cfg.v0);
    const ConvergenceTable t = rho_convergence_study(pb, vd, cfg.verify.probes);
    const auto lam = t.column(0), yg = t.column(1), sg = t.column(2);
    gates.push_back({"rho", "lambda gap decreases 5x", decreased_by(lam, 5.0),
                     num(lam.front()) + " -> " + num(lam.back())});
    gates.push_back({"rho", "y gap decreases 5x", decreased_by(yg, 5.0), num(yg.front()) + " -> " + num(yg.back())});
    bool mono = true;
    for (std::size_t i = 1; i < sg.size(); ++i) mono = mono && sg[i] <= sg[i - 1] * (1 + 1e-9) + 1e-15;
    gates.push_back({"rho", "strategy gap nonincreasing", mono, num(sg.front()) + " -> " + num(sg.back())});
    manifest.add(dir, "rho_convergence.csv", table_csv(t, {{"kind", "rho_convergence"}, {"config_hash", cfg.hash}}));
  }

  if (wanted("horizon")) {
    const double rho = cfg.verify.horizon_rho;
    HorizonStudyOptions ho;
    ho.dt = cfg.verify.horizon_dt;
    const ConvergenceTable t = horizon_convergence_study(pb, rho, cfg.verify.horizons, cfg.verify.probes, ho);
    const double rel = std::abs(t.fitted_rate - rho) / rho;
    gates.push_back({"horizon", "fitted rate within 20% of rho", rel <= 0.2,
                     "rate " + num(t.fitted_rate) + " vs rho " + num(rho)});
    if (cfg.market.theta_lipschitz == 0.0) {
      const double h0 = pb.driver_at(Mat::Zero(pb.size(), cfg.market.noise_dim))[0];
      double worst = 0.0;
      for (std::size_t i = 1; i < t.rows.size(); ++i) {
        worst = std::max(worst, std::abs(t.rows[i][1] - std::abs(h0) / rho * std::exp(-rho * t.params[i])));
      }
      gates.push_back({"horizon", "constant envelope", worst <= 1e-3, "max deviation " + num(worst)});
    }
    manifest.add(dir, "horizon_convergence.csv",
                 table_csv(t, {{"kind", "horizon_convergence"}, {"config_hash", cfg.hash}, {"rho", fmt(rho)}}));
  }

  if (wanted("oracle")) {
    DistortionOptions o;
    o.horizon = cfg.verify.oracle_horizon;
    o.time_steps = cfg.verify.oracle_steps;
    o.probe_lower = cfg.verify.oracle_probe_lower;
    o.probe_upper = cfg.verify.oracle_probe_upper;
    try {
      const DistortionReport r = distortion_oracle(pb, sol, o);
      gates.push_back({"oracle", "linearized mismatch", r.max_relative_mismatch <= 1e-2,
                       num(r.max_relative_mismatch) + " <= 0.01"});
      std::string csv = metadata_block({{"kind", "distortion_oracle"}, {"config_hash", cfg.hash}});
      csv += "delta,delta_hat,horizon,max_relative_mismatch,lambda_solver,lambda_oracle\n";
      csv += fmt(r.delta) + "," + fmt(r.delta_hat) + "," + fmt(r.horizon) + "," + fmt(r.max_relative_mismatch) + "," +
             fmt(r.lambda_solver) + "," + fmt(r.lambda_oracle) + "\n";
      manifest.add(dir, "oracle.csv", csv);
    } catch (const UnsupportedConfiguration&) {
      std::printf("[SKIP] oracle: configuration is not the single-stock two-noise setting\n");
    }
  }

  std::string gcsv = metadata_block({{"kind", "gates"}, {"config_hash", cfg.hash}});
  gcsv += "study,gate,passed,detail\n";
  bool all = true;
  for (const auto& g : gates) {
    print_gate(g);
    all = all && g.passed;
    gcsv += g.study + "," + g.name + "," + (g.passed ? "1" : "0") + ",\"" + g.detail + "\"\n";
  }
  manifest.add(dir, "gates.csv", gcsv);
  manifest.write(dir);
  std::printf("%s: %zu gates, %s\n", dir.string().c_str(), gates.size(), all ? "all passed" : "FAILURES");
  return all ? kOk : kGateFailed;
}

int cmd_simulate(const std::string& config_path, const std::string& solution_dir, const std::string& out_flag,
                 std::optional<std::uint64_t> seed, std::optional<std::size_t> paths, bool zero_noise,
                 bool closed_form) {
  LoadedRun run = load_run(config_path, solution_dir);
  RunConfig& cfg = run.cfg;
  const std::uint64_t master = seed.value_or(cfg.mc.seed);
  const std::size_t n_paths = zero_noise ? 1 : paths.value_or(8);
  const fs::path dir = prepare_dir(out_flag, (fs::path(cfg.output_directory) / "simulate").string());
  if (closed_form && !cfg.utility.is_power()) {
    throw UnsupportedConfiguration("closed-form overlays are power processes; the config uses " + cfg.utility.name());
  }
  const ErgodicProblem pb = make_problem(cfg);
  const ForwardPerformance fp(pb, run.solution);
  const int d = cfg.model.dim, m = cfg.market.noise_dim;

  std::string out = metadata_block({{"kind", "paths"},
                                    {"config_hash", cfg.hash},
                                    {"seed", std::to_string(master)},
                                    {"zero_noise", zero_noise ? "1" : "0"},
                                    {"x0", fmt(cfg.verify.x0)}});
  out += "path,t";
  for (int a = 0; a < d; ++a) out += ",v" + std::to_string(a);
  out += ",x";
  for (int j = 0; j < m; ++j) out += ",pi" + std::to_string(j);
  out += ",U";
  if (closed_form) out += ",U_time_monotone,U_market_view,U_benchmark";
  out += "\n";

  const auto mode = zero_noise ? NoiseMode::Zero : NoiseMode::Random;
  for (std::size_t i = 0; i < n_paths; ++i) {
    const FactorPath path =
        simulate_factor(cfg.model, run.solution.v0, cfg.mc.dt, cfg.simulate_horizon, detail::mix_seed(master, i), mode);
    const WealthPath w = simulate_wealth(fp, path, cfg.verify.x0);
    std::vector<double> tm, mv, bm;
    if (closed_form) {
      const auto& c = cfg.closed_form;
      const double delta = cfg.utility.delta();
      tm = closed_form_process(ClosedFormSpec::time_monotone(c.y0), cfg.market, cfg.set, delta, path, w.wealth);
      mv = closed_form_process(ClosedFormSpec::market_view(c.y0, c.phi, c.phi_bound), cfg.market, cfg.set, delta, path,
                               w.wealth);
      bm = closed_form_process(ClosedFormSpec::benchmark(c.y0, c.phi, c.phi_bound), cfg.market, cfg.set, delta, path,
                               w.wealth);
    }
    for (std::size_t k = 0; k < path.times.size(); ++k) {
      out += std::to_string(i) + "," + fmt(path.times[k]);
      for (int a = 0; a < d; ++a) out += "," + fmt(path.states[k][a]);
      out += "," + fmt(w.wealth[k]);
      for (int j = 0; j < m; ++j) out += "," + fmt(w.strategy[k][j]);
      out += "," + fmt(w.U[k]);
      if (closed_form) out += "," + fmt(tm[k]) + "," + fmt(mv[k]) + "," + fmt(bm[k]);
      out += "\n";
    }
  }
  Manifest manifest(cfg.hash, "simulate");
  manifest.add(dir, "paths.csv", out);
  manifest.write(dir);
  std::printf("wrote %zu paths to %s\n", n_paths, (dir / "paths.csv").string().c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Forward performance processes in stochastic factor markets"};
  app.require_subcommand(1);

  std::string config, out, solution;
  std::vector<std::string> studies;
  std::uint64_t seed = 0;
  std::size_t paths = 0;
  bool zero_noise = false, suboptimal = false, closed_form = false;

  auto* solve = app.add_subcommand("solve", "Solve the ergodic problem and write the solution");
  solve->add_option("--config", config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  solve->add_option("--out", out, "Output directory (default: output.directory from the config)");

  auto* verify = app.add_subcommand("verify", "Run verification studies against a solution");
  verify->add_option("--config", config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  verify->add_option("--solution", solution, "Directory written by 'solve'")->required();
  verify->add_option("--out", out, "Output directory");
  auto* v_seed = verify->add_option("--seed", seed, "Master seed for Monte Carlo studies");
  auto* v_paths = verify->add_option("--paths", paths, "Number of Monte Carlo paths");
  verify->add_option("--studies", studies, "Comma-separated subset of: solution,martingale,lambda,rho,horizon,oracle")
      ->delimiter(',');
  verify->add_flag("--suboptimal", suboptimal, "Also test the shifted strategy, expecting a strict supermartingale");

  auto* simulate = app.add_subcommand("simulate", "Write factor, wealth, strategy and U paths");
  simulate->add_option("--config", config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  simulate->add_option("--solution", solution, "Directory written by 'solve'")->required();
  simulate->add_option("--out", out, "Output directory");
  auto* s_seed = simulate->add_option("--seed", seed, "Master seed");
  auto* s_paths = simulate->add_option("--paths", paths, "Number of paths (default 8)");
  simulate->add_flag("--zero-noise", zero_noise, "Switch off the Brownian increments");
  simulate->add_flag("--closed-form", closed_form, "Add time-monotone, market-view and benchmark columns");

  CLI11_PARSE(app, argc, argv);

  try {
    if (solve->parsed()) return cmd_solve(config, out);
    if (verify->parsed()) {
      return cmd_verify(config, solution, out, v_seed->count() ? std::optional(seed) : std::nullopt,
                        v_paths->count() ? std::optional(paths) : std::nullopt, studies, suboptimal);
    }
    if (simulate->parsed()) {
      return cmd_simulate(config, solution, out, s_seed->count() ? std::optional(seed) : std::nullopt,
                          s_paths->count() ? std::optional(paths) : std::nullopt, zero_noise, closed_form);
    }
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "invalid configuration: %s\n", e.what());
    return kInvalidConfig;
  } catch (const IntegrityError& e) {
    std::fprintf(stderr, "refusing to run: %s\n", e.what());
    return kIntegrity;
  } catch (const UnsupportedConfiguration& e) {
    std::fprintf(stderr, "unsupported: %s\n", e.what());
    return kInvalidConfig;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kSolverFailure;
  }
  return kOk;
}
