#pragma once

// CSV artifacts with "# key=value" metadata headers, FNV-1a checksums and run manifests.

#include "ffp/core.hpp"
#include "ffp/ergodic_solver.hpp"
#include "ffp/grid.hpp"
#include "ffp/verification.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ffp {

/// Missing, corrupted or mismatched artifacts.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IntegrityError("cannot open " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  out << content;
  if (!out) throw Error("write failed for " + p.string());
}

inline std::string file_checksum(const std::filesystem::path& p) { return hex64(fnv1a64(read_file(p))); }

/// Round-trip formatting of doubles.
inline std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

using Metadata = std::vector<std::pair<std::string, std::string>>;

inline std::string metadata_block(const Metadata& meta) {
  std::string s;
  for (const auto& [k, v] : meta) s += "# " + k + "=" + v + "\n";
  return s;
}

inline std::string join(const std::vector<double>& xs, const char* sep = ";") {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? sep : "") + fmt(xs[i]);
  return s;
}

inline std::vector<double> split_doubles(const std::string& s, char sep = ';') {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, sep)) {
    if (tok.empty()) continue;
    std::size_t used = 0;
    out.push_back(std::stod(tok, &used));
    if (used != tok.size()) throw std::invalid_argument("trailing characters in '" + tok + "'");
  }
  return out;
}

/// Solution file: metadata (lambda, v0, grid, config hash), then one row per node with the node
/// coordinates, y and the components of z.
inline std::string solution_csv(const ErgodicSolution& s, const std::string& config_hash) {
  const Grid& g = s.grid;
  std::vector<double> lo(g.lower.begin(), g.lower.end()), hi(g.upper.begin(), g.upper.end());
  std::vector<double> nodes(g.nodes.begin(), g.nodes.end());
  std::vector<double> v0(s.v0.data(), s.v0.data() + s.v0.size());
  Metadata meta = {{"kind", "ergodic_solution"},
                   {"config_hash", config_hash},
                   {"lambda", fmt(s.lambda)},
                   {"lambda_richardson", fmt(s.lambda_richardson)},
                   {"v0", join(v0)},
                   {"grid_dim", std::to_string(g.dim)},
                   {"grid_lower", join(lo)},
                   {"grid_upper", join(hi)},
                   {"grid_nodes", join(nodes)},
                   {"noise_dim", std::to_string(s.z.cols())},
                   {"rho_sequence", join(s.rho_sequence)},
                   {"residual_sup", fmt(s.residual_sup)},
                   {"residual_tolerance", fmt(s.residual_tolerance)}};
  std::string out = metadata_block(meta);
  for (int a = 0; a < g.dim; ++a) out += "v" + std::to_string(a) + ",";
  out += "y";
  for (Eigen::Index j = 0; j < s.z.cols(); ++j) out += ",z" + std::to_string(j);
  out += "\n";
  for (std::size_t p = 0; p < g.size(); ++p) {
    const Vec pt = g.point(p);
    for (int a = 0; a < g.dim; ++a) out += fmt(pt[a]) + ",";
    out += fmt(s.y[static_cast<Eigen::Index>(p)]);
    for (Eigen::Index j = 0; j < s.z.cols(); ++j) out += "," + fmt(s.z(static_cast<Eigen::Index>(p), j));
    out += "\n";
  }
  return out;
}

struct LoadedSolution {
  std::map<std::string, std::string> metadata;
  ErgodicSolution solution;
};

inline LoadedSolution parse_solution_csv(const std::string& text) {
  LoadedSolution out;
  std::istringstream in(text);
  std::string line;
  std::vector<std::vector<double>> rows;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.rfind("# ", 0) == 0) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw IntegrityError("solution file: malformed metadata line");
      out.metadata[line.substr(2, eq - 2)] = line.substr(eq + 1);
      continue;
    }
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    try {
      rows.push_back(split_doubles(line, ','));
    } catch (const std::logic_error&) {
      throw IntegrityError("solution file: unparsable row '" + line + "'");
    }
  }
  auto need = [&](const char* key) -> const std::string& {
    auto it = out.metadata.find(key);
    if (it == out.metadata.end()) throw IntegrityError(std::string("solution file: missing metadata '") + key + "'");
    return it->second;
  };
  try {
    ErgodicSolution& s = out.solution;
    Grid& g = s.grid;
    g.dim = std::stoi(need("grid_dim"));
    g.lower = split_doubles(need("grid_lower"));
    g.upper = split_doubles(need("grid_upper"));
    for (double n : split_doubles(need("grid_nodes"))) g.nodes.push_back(static_cast<int>(n));
    g.validate();
    const int m = std::stoi(need("noise_dim"));
    s.lambda = std::stod(need("lambda"));
    s.lambda_richardson = std::stod(need("lambda_richardson"));
    const auto v0 = split_doubles(need("v0"));
    s.v0 = Eigen::Map<const Vec>(v0.data(), static_cast<Eigen::Index>(v0.size()));
    s.rho_sequence = split_doubles(need("rho_sequence"));
    s.residual_sup = std::stod(need("residual_sup"));
    s.residual_tolerance = std::stod(need("residual_tolerance"));
    s.residual_ok = s.residual_sup <= s.residual_tolerance;
    if (rows.size() != g.size()) throw IntegrityError("solution file: node count does not match grid");
    const auto n = static_cast<Eigen::Index>(g.size());
    s.y.resize(n);
    s.z.resize(n, m);
    for (Eigen::Index p = 0; p < n; ++p) {
      const auto& r = rows[static_cast<std::size_t>(p)];
      if (static_cast<int>(r.size()) != g.dim + 1 + m) throw IntegrityError("solution file: bad row width");
      s.y[p] = r[static_cast<std::size_t>(g.dim)];
      for (int j = 0; j < m; ++j) s.z(p, j) = r[static_cast<std::size_t>(g.dim + 1 + j)];
    }
  } catch (const std::invalid_argument&) {
    throw IntegrityError("solution file: unparsable number");
  } catch (const std::out_of_range&) {
    throw IntegrityError("solution file: number out of range");
  } catch (const ValidationError& e) {
    throw IntegrityError(std::string("solution file: ") + e.what());
  }
  return out;
}

inline std::string lambda_table_csv(const VanishingDiscountResult& vd, const std::string& config_hash) {
  std::string out = metadata_block({{"kind", "lambda_table"}, {"config_hash", config_hash}});
  out += "rho,lambda_rho,iterations,residual_norm,z_bound_warning\n";
  for (std::size_t k = 0; k < vd.discounted.size(); ++k) {
    const auto& d = vd.discounted[k];
    out += fmt(d.rho) + "," + fmt(vd.lambda_rho[k]) + "," + std::to_string(d.iterations) + "," +
           fmt(d.residual_norm) + "," + (d.z_bound_warning ? "1" : "0") + "\n";
  }
  return out;
}

inline std::string table_csv(const ConvergenceTable& t, const Metadata& meta) {
  std::string out = metadata_block(meta);
  out += "# fitted_rate=" + fmt(t.fitted_rate) + "\n";
  for (const auto& n : t.notes) out += "# note=" + n + "\n";
  out += t.parameter;
  for (const auto& c : t.columns) out += "," + c;
  out += "\n";
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    out += fmt(t.params[i]);
    for (double x : t.rows[i]) out += "," + fmt(x);
    out += "\n";
  }
  return out;
}

/// manifest.json: config hash plus the checksum of every artifact in the run directory.
class Manifest {
 public:
  explicit Manifest(std::string config_hash, std::string command)
      : config_hash_(std::move(config_hash)), command_(std::move(command)) {}

  void add(const std::filesystem::path& dir, const std::string& name, const std::string& content) {
    write_file(dir / name, content);
    artifacts_[name] = hex64(fnv1a64(content));
  }

  void write(const std::filesystem::path& dir) const {
    nlohmann::json j;
    j["config_hash"] = config_hash_;
    j["command"] = command_;
    j["artifacts"] = artifacts_;
    write_file(dir / "manifest.json", j.dump(2) + "\n");
  }

  /// Checks the manifest's config hash and every listed checksum; returns the artifact names.
  static std::vector<std::string> verify(const std::filesystem::path& dir, const std::string& expected_hash) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_file(dir / "manifest.json"));
    } catch (const nlohmann::json::exception& e) {
      throw IntegrityError(std::string("manifest: ") + e.what());
    }
    if (!j.contains("config_hash") || j["config_hash"] != expected_hash) {
      throw IntegrityError("config hash mismatch: solution in " + dir.string() + " was produced from a different config");
    }
    std::vector<std::string> names;
    for (const auto& [name, sum] : j.at("artifacts").items()) {
      const std::string actual = file_checksum(dir / name);
      if (actual != sum.get<std::string>()) throw IntegrityError("checksum mismatch for " + (dir / name).string());
      names.push_back(name);
    }
    return names;
  }

 private:
  std::string config_hash_;
  std::string command_;
  std::map<std::string, std::string> artifacts_;
};

}  // namespace ffp
