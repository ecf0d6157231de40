#pragma once

// JSON run configuration with a strict schema: unknown keys are rejected and every error names the
// offending field.

#include "ffp/constraint_set.hpp"
#include "ffp/core.hpp"
#include "ffp/drivers.hpp"
#include "ffp/ergodic_solver.hpp"
#include "ffp/forward_process.hpp"
#include "ffp/grid.hpp"
#include "ffp/io.hpp"
#include "ffp/market_model.hpp"
#include "ffp/model_library.hpp"
#include "ffp/verification.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace ffp {

inline const std::vector<std::string>& all_studies() {
  static const std::vector<std::string> s = {"solution", "martingale", "lambda", "rho", "horizon", "oracle"};
  return s;
}

struct VerificationConfig {
  double x0 = 1.0;
  std::vector<std::pair<double, double>> martingale_times = {{0.0, 1.0}, {0.5, 2.0}};
  double suboptimal_shift = 1.0;
  std::vector<double> lambda_horizons = {10.0, 25.0, 50.0};
  double lambda_dt = 0.01;
  std::size_t lambda_paths = 10000;
  double horizon_rho = 0.1;
  std::vector<double> horizons = {5.0, 10.0, 20.0};
  double horizon_dt = 0.005;
  std::vector<Vec> probes;  // defaults to a small stencil around v0
  double oracle_horizon = 1.0;
  int oracle_steps = 400;
  double oracle_probe_lower = -2.0;
  double oracle_probe_upper = 2.0;
  std::vector<std::string> studies = all_studies();
};

struct ClosedFormConfig {
  double y0 = 0.0;
  Vec phi;  // empty: zero vector of the noise dimension
  double phi_bound = 1.0;
};

struct RunConfig {
  std::string name;
  std::string hash;  // FNV-1a of the canonical JSON dump
  FactorModel model;
  MarketSpec market;
  UtilitySpec utility = UtilitySpec::logarithmic();
  ConvexSet set = ConvexSet::full_space(1);
  Grid grid;
  SolverOptions solver;
  std::vector<double> rho_sequence = {0.5, 0.2, 0.1, 0.05, 0.02, 0.01};
  Vec v0;
  MonteCarloOptions mc;
  VerificationConfig verify;
  ClosedFormConfig closed_form;
  double simulate_horizon = 1.0;
  std::string output_directory = "out";
  DriverConstants constants;
};

namespace detail {

using nlohmann::json;

class ConfigReader {
 public:
  static void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) throw ValidationError("config: '" + where + "' must be an object");
    std::set<std::string> ok;
    for (const char* a : allowed) ok.insert(a);
    for (const auto& [k, _] : obj.items()) {
      if (!ok.count(k)) throw ValidationError("config: unknown key '" + join_path(where, k) + "'");
    }
  }

  static std::string join_path(const std::string& where, const std::string& key) {
    return where.empty() ? key : where + "." + key;
  }

  static const json& require(const json& obj, const std::string& where, const char* key) {
    if (!obj.contains(key)) throw ValidationError("config: missing required field '" + join_path(where, key) + "'");
    return obj.at(key);
  }

  static double number(const json& j, const std::string& path) {
    if (!j.is_number()) throw ValidationError("config: '" + path + "' must be a number");
    return j.get<double>();
  }

  static double number_or(const json& obj, const std::string& where, const char* key, double dflt) {
    return obj.contains(key) ? number(obj.at(key), join_path(where, key)) : dflt;
  }

  static std::int64_t integer(const json& j, const std::string& path) {
    if (!j.is_number_integer() && !j.is_number_unsigned()) {
      throw ValidationError("config: '" + path + "' must be an integer");
    }
    return j.get<std::int64_t>();
  }

  static std::string string(const json& j, const std::string& path) {
    if (!j.is_string()) throw ValidationError("config: '" + path + "' must be a string");
    return j.get<std::string>();
  }

  static std::vector<double> numbers(const json& j, const std::string& path) {
    if (!j.is_array()) throw ValidationError("config: '" + path + "' must be an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(number(j[i], path + "[" + std::to_string(i) + "]"));
    return out;
  }

  static Vec vec(const json& j, const std::string& path) {
    const auto v = numbers(j, path);
    return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
  }

  static Mat mat(const json& j, const std::string& path) {
    if (!j.is_array() || j.empty()) throw ValidationError("config: '" + path + "' must be a nonempty array of rows");
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < j.size(); ++i) rows.push_back(numbers(j[i], path + "[" + std::to_string(i) + "]"));
    const std::size_t cols = rows[0].size();
    Mat m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != cols) throw ValidationError("config: '" + path + "' rows have different lengths");
      for (std::size_t c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = rows[i][c];
    }
    return m;
  }
};

inline FactorModel parse_factor(const json& j) {
  using R = ConfigReader;
  R::check_keys(j, "factor", {"drift", "speed", "mean", "eps", "kappa"});
  const std::string drift = R::string(R::require(j, "factor", "drift"), "factor.drift");
  const Mat kappa = R::mat(R::require(j, "factor", "kappa"), "factor.kappa");
  FactorModel m;
  if (drift == "ou") {
    const Vec speed = R::vec(R::require(j, "factor", "speed"), "factor.speed");
    const Vec mean = j.contains("mean") ? R::vec(j.at("mean"), "factor.mean") : Vec::Zero(kappa.rows());
    if (j.contains("eps")) throw ValidationError("config: 'factor.eps' only applies to the ou_sin drift");
    m = ou_model(kappa, speed, mean);
  } else if (drift == "ou_sin") {
    const double speed = R::number(R::require(j, "factor", "speed"), "factor.speed");
    const double eps = R::number(R::require(j, "factor", "eps"), "factor.eps");
    if (j.contains("mean")) throw ValidationError("config: 'factor.mean' does not apply to the ou_sin drift");
    m = ou_sin_model(kappa, speed, eps);
  } else {
    throw ValidationError("config: 'factor.drift' must be 'ou' or 'ou_sin', got '" + drift + "'");
  }
  m.validate();
  return m;
}

inline MarketSpec parse_market(const json& j, int state_dim) {
  using R = ConfigReader;
  R::check_keys(j, "market", {"theta_family", "sigma", "amplitude", "scale", "axis"});
  ShapedMarketParams p;
  p.shape = theta_shape_from_name(R::string(R::require(j, "market", "theta_family"), "market.theta_family"));
  p.sigma = R::mat(R::require(j, "market", "sigma"), "market.sigma");
  p.amplitude = R::vec(R::require(j, "market", "amplitude"), "market.amplitude");
  if (j.contains("scale")) p.scale = R::vec(j.at("scale"), "market.scale");
  if (j.contains("axis")) {
    for (double a : R::numbers(j.at("axis"), "market.axis")) p.axis.push_back(static_cast<int>(a));
  }
  p.state_dim = state_dim;
  return shaped_market(p);
}

inline UtilitySpec parse_utility(const json& j) {
  using R = ConfigReader;
  R::check_keys(j, "utility", {"type", "delta", "gamma"});
  const std::string type = R::string(R::require(j, "utility", "type"), "utility.type");
  if (type == "power") return UtilitySpec::power(R::number(R::require(j, "utility", "delta"), "utility.delta"));
  if (type == "exponential") {
    return UtilitySpec::exponential(R::number(R::require(j, "utility", "gamma"), "utility.gamma"));
  }
  if (type == "log") return UtilitySpec::logarithmic();
  throw ValidationError("config: 'utility.type' must be power, exponential or log");
}

inline ConvexSet parse_constraint(const json& j, int m) {
  using R = ConfigReader;
  R::check_keys(j, "constraint", {"type", "lower", "upper", "center", "radius", "free"});
  const std::string type = R::string(R::require(j, "constraint", "type"), "constraint.type");
  ConvexSet s = ConvexSet::full_space(m);
  if (type == "full") {
    s = ConvexSet::full_space(m);
  } else if (type == "box") {
    s = ConvexSet::box(R::vec(R::require(j, "constraint", "lower"), "constraint.lower"),
                       R::vec(R::require(j, "constraint", "upper"), "constraint.upper"));
  } else if (type == "ball") {
    s = ConvexSet::ball(R::vec(R::require(j, "constraint", "center"), "constraint.center"),
                        R::number(R::require(j, "constraint", "radius"), "constraint.radius"));
  } else if (type == "subspace") {
    const json& f = R::require(j, "constraint", "free");
    if (!f.is_array()) throw ValidationError("config: 'constraint.free' must be an array of booleans");
    std::vector<bool> free;
    for (const auto& b : f) {
      if (!b.is_boolean()) throw ValidationError("config: 'constraint.free' must be an array of booleans");
      free.push_back(b.get<bool>());
    }
    s = ConvexSet::subspace(free);
  } else {
    throw ValidationError("config: 'constraint.type' must be full, box, ball or subspace");
  }
  if (s.dim() != m) throw ValidationError("config: constraint dimension must equal the number of Brownian motions");
  return s;
}

inline Grid parse_grid(const json& j, int dim) {
  using R = ConfigReader;
  R::check_keys(j, "grid", {"lower", "upper", "nodes"});
  Grid g;
  g.dim = dim;
  g.lower = R::numbers(R::require(j, "grid", "lower"), "grid.lower");
  g.upper = R::numbers(R::require(j, "grid", "upper"), "grid.upper");
  for (double n : R::numbers(R::require(j, "grid", "nodes"), "grid.nodes")) g.nodes.push_back(static_cast<int>(n));
  if (static_cast<int>(g.lower.size()) != dim) throw ValidationError("config: 'grid.lower' needs one entry per factor");
  if (static_cast<int>(g.upper.size()) != dim) throw ValidationError("config: 'grid.upper' needs one entry per factor");
  if (static_cast<int>(g.nodes.size()) != dim) throw ValidationError("config: 'grid.nodes' needs one entry per factor");
  g.validate();
  return g;
}

inline std::vector<Vec> default_probes(const Vec& v0) {
  std::vector<Vec> out;
  const std::vector<double> offs = {-1.0, -0.5, 0.0, 0.5, 1.0};
  if (v0.size() == 1) {
    for (double o : offs) out.push_back(v0 + Vec::Constant(1, o));
  } else {
    for (double a : offs) {
      for (double b : offs) {
        Vec p = v0;
        p[0] += a;
        p[1] += b;
        out.push_back(p);
      }
    }
  }
  return out;
}

}  // namespace detail

inline RunConfig parse_config(const nlohmann::json& j) {
  using R = detail::ConfigReader;
  R::check_keys(j, "", {"name", "factor", "market", "utility", "constraint", "grid", "solver", "monte_carlo",
                        "verification", "closed_form", "output"});
  RunConfig c;
  c.hash = hex64(fnv1a64(j.dump()));
  c.name = j.contains("name") ? R::string(j.at("name"), "name") : "run";
  c.model = detail::parse_factor(R::require(j, "", "factor"));
  c.market = detail::parse_market(R::require(j, "", "market"), c.model.dim);
  if (c.market.noise_dim != c.model.noise_dim) {
    throw ValidationError("config: 'market.sigma' must have as many columns as 'factor.kappa'");
  }
  c.utility = detail::parse_utility(R::require(j, "", "utility"));
  c.set = j.contains("constraint") ? detail::parse_constraint(j.at("constraint"), c.model.noise_dim)
                                   : ConvexSet::full_space(c.model.noise_dim);
  c.grid = detail::parse_grid(R::require(j, "", "grid"), c.model.dim);
  c.v0 = Vec::Zero(c.model.dim);

  if (j.contains("solver")) {
    const auto& s = j.at("solver");
    R::check_keys(s, "solver", {"rho_sequence", "v0", "tol_fp", "max_iter", "damping", "cauchy_fraction"});
    if (s.contains("rho_sequence")) c.rho_sequence = R::numbers(s.at("rho_sequence"), "solver.rho_sequence");
    if (s.contains("v0")) c.v0 = R::vec(s.at("v0"), "solver.v0");
    c.solver.tol_fp = R::number_or(s, "solver", "tol_fp", c.solver.tol_fp);
    if (s.contains("max_iter")) c.solver.max_iter = static_cast<int>(R::integer(s.at("max_iter"), "solver.max_iter"));
    c.solver.damping = R::number_or(s, "solver", "damping", c.solver.damping);
    c.solver.cauchy_fraction = R::number_or(s, "solver", "cauchy_fraction", c.solver.cauchy_fraction);
  }
  detail::require_dim(c.v0, c.model.dim, "config: solver.v0");
  if (!(c.solver.damping > 0.0 && c.solver.damping <= 1.0)) throw ValidationError("config: 'solver.damping' must lie in (0,1]");
  for (std::size_t i = 0; i < c.rho_sequence.size(); ++i) {
    if (!(c.rho_sequence[i] > 0.0) || (i > 0 && !(c.rho_sequence[i] < c.rho_sequence[i - 1]))) {
      throw ValidationError("config: 'solver.rho_sequence' must be positive and decreasing");
    }
  }

  if (j.contains("monte_carlo")) {
    const auto& m = j.at("monte_carlo");
    R::check_keys(m, "monte_carlo", {"paths", "dt", "seed", "horizon"});
    c.simulate_horizon = R::number_or(m, "monte_carlo", "horizon", c.simulate_horizon);
    if (m.contains("paths")) c.mc.n_paths = static_cast<std::size_t>(R::integer(m.at("paths"), "monte_carlo.paths"));
    c.mc.dt = R::number_or(m, "monte_carlo", "dt", c.mc.dt);
    if (m.contains("seed")) c.mc.seed = static_cast<std::uint64_t>(R::integer(m.at("seed"), "monte_carlo.seed"));
  }
  if (!(c.mc.dt > 0.0)) throw ValidationError("config: 'monte_carlo.dt' must be positive");
  if (!(c.simulate_horizon >= c.mc.dt)) throw ValidationError("config: 'monte_carlo.horizon' must be at least dt");

  auto& v = c.verify;
  if (j.contains("verification")) {
    const auto& s = j.at("verification");
    R::check_keys(s, "verification",
                  {"x0", "martingale_times", "suboptimal_shift", "lambda_horizons", "lambda_dt", "lambda_paths",
                   "horizon_rho", "horizons", "horizon_dt", "probes", "oracle_horizon", "oracle_steps",
                   "oracle_probe", "studies"});
    v.x0 = R::number_or(s, "verification", "x0", v.x0);
    if (s.contains("martingale_times")) {
      v.martingale_times.clear();
      const auto& mt = s.at("martingale_times");
      if (!mt.is_array()) throw ValidationError("config: 'verification.martingale_times' must be an array of [t, s]");
      for (std::size_t i = 0; i < mt.size(); ++i) {
        const auto ts = R::numbers(mt[i], "verification.martingale_times[" + std::to_string(i) + "]");
        if (ts.size() != 2 || !(ts[0] >= 0.0 && ts[1] > ts[0])) {
          throw ValidationError("config: 'verification.martingale_times' entries must be [t, s] with 0 <= t < s");
        }
        v.martingale_times.emplace_back(ts[0], ts[1]);
      }
    }
    v.suboptimal_shift = R::number_or(s, "verification", "suboptimal_shift", v.suboptimal_shift);
    if (s.contains("lambda_horizons")) v.lambda_horizons = R::numbers(s.at("lambda_horizons"), "verification.lambda_horizons");
    v.lambda_dt = R::number_or(s, "verification", "lambda_dt", v.lambda_dt);
    if (s.contains("lambda_paths")) {
      v.lambda_paths = static_cast<std::size_t>(R::integer(s.at("lambda_paths"), "verification.lambda_paths"));
    }
    v.horizon_rho = R::number_or(s, "verification", "horizon_rho", v.horizon_rho);
    if (s.contains("horizons")) v.horizons = R::numbers(s.at("horizons"), "verification.horizons");
    v.horizon_dt = R::number_or(s, "verification", "horizon_dt", v.horizon_dt);
    if (s.contains("probes")) {
      const auto& pr = s.at("probes");
      if (!pr.is_array()) throw ValidationError("config: 'verification.probes' must be an array of points");
      for (std::size_t i = 0; i < pr.size(); ++i) {
        v.probes.push_back(R::vec(pr[i], "verification.probes[" + std::to_string(i) + "]"));
        detail::require_dim(v.probes.back(), c.model.dim, "config: verification.probes");
      }
    }
    v.oracle_horizon = R::number_or(s, "verification", "oracle_horizon", v.oracle_horizon);
    if (s.contains("oracle_steps")) v.oracle_steps = static_cast<int>(R::integer(s.at("oracle_steps"), "verification.oracle_steps"));
    if (s.contains("oracle_probe")) {
      const auto op = R::numbers(s.at("oracle_probe"), "verification.oracle_probe");
      if (op.size() != 2 || !(op[0] < op[1])) throw ValidationError("config: 'verification.oracle_probe' must be [lo, hi]");
      v.oracle_probe_lower = op[0];
      v.oracle_probe_upper = op[1];
    }
    if (s.contains("studies")) {
      v.studies.clear();
      const auto& st = s.at("studies");
      if (!st.is_array()) throw ValidationError("config: 'verification.studies' must be an array of names");
      for (const auto& x : st) v.studies.push_back(R::string(x, "verification.studies"));
    }
  }
  if (v.probes.empty()) v.probes = detail::default_probes(c.v0);
  for (const auto& s : v.studies) {
    if (std::find(all_studies().begin(), all_studies().end(), s) == all_studies().end()) {
      throw ValidationError("config: unknown study '" + s + "'");
    }
  }

  if (j.contains("closed_form")) {
    const auto& s = j.at("closed_form");
    R::check_keys(s, "closed_form", {"y0", "phi", "phi_bound"});
    c.closed_form.y0 = R::number_or(s, "closed_form", "y0", 0.0);
    if (s.contains("phi")) {
      c.closed_form.phi = R::vec(s.at("phi"), "closed_form.phi");
      detail::require_dim(c.closed_form.phi, c.model.noise_dim, "config: closed_form.phi");
    }
    c.closed_form.phi_bound = R::number_or(s, "closed_form", "phi_bound", 1.0);
  }
  if (c.closed_form.phi.size() == 0) c.closed_form.phi = Vec::Zero(c.model.noise_dim);

  if (j.contains("output")) {
    const auto& o = j.at("output");
    R::check_keys(o, "output", {"directory"});
    if (o.contains("directory")) c.output_directory = R::string(o.at("directory"), "output.directory");
  }

  // Preconditions of the solvers, surfaced before any computation.
  check_grid_margin(c.grid, c.model, {c.v0});
  for (const auto& p : v.probes) {
    if (!c.grid.contains(p)) throw ValidationError("config: probe " + detail::format_vec(p) + " lies outside the grid");
  }
  c.constants = estimate_driver_constants(c.model, c.market, c.utility, c.set, c.grid.points());
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("config: " + path.string() + " is not valid JSON: " + e.what());
  } catch (const IntegrityError& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  return parse_config(j);
}

inline ErgodicProblem make_problem(const RunConfig& c) {
  return ErgodicProblem(c.model, c.market, c.utility, c.set, c.grid, c.solver);
}

}  // namespace ffp
