#pragma once

// Drivers of the ergodic BSDEs for the three homothetic utility classes, the truncation q
// that makes them Lipschitz, and estimates of the structural constants C_v, C_z and K.

#include "ffp/constraint_set.hpp"
#include "ffp/core.hpp"
#include "ffp/market_model.hpp"

#include <algorithm>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace ffp {

struct Power {
  double delta;
};
struct Exponential {
  double gamma;
};
struct Logarithmic {};

class UtilitySpec {
 public:
  using Kind = std::variant<Power, Exponential, Logarithmic>;

  static UtilitySpec power(double delta) {
    if (!(delta > 0.0 && delta < 1.0)) throw ValidationError("power utility: delta must lie in (0,1)");
    return UtilitySpec(Power{delta});
  }
  static UtilitySpec exponential(double gamma) {
    if (!(gamma > 0.0)) throw ValidationError("exponential utility: gamma must be positive");
    return UtilitySpec(Exponential{gamma});
  }
  static UtilitySpec logarithmic() { return UtilitySpec(Logarithmic{}); }

  const Kind& kind() const { return kind_; }
  bool is_power() const { return std::holds_alternative<Power>(kind_); }
  bool is_exponential() const { return std::holds_alternative<Exponential>(kind_); }
  bool is_log() const { return std::holds_alternative<Logarithmic>(kind_); }
  double delta() const { return std::get<Power>(kind_).delta; }
  double gamma() const { return std::get<Exponential>(kind_).gamma; }

  std::string name() const {
    if (is_power()) return "power";
    if (is_exponential()) return "exponential";
    return "log";
  }

 private:
  explicit UtilitySpec(Kind k) : kind_(k) {}
  Kind kind_;
};

// F(v,z) = -1/2 d(1-d) dist^2(Pi, (z+theta)/(1-d)) + 1/2 d/(1-d) |z+theta|^2 + 1/2 |z|^2
inline double driver_F(const Vec& z, const Vec& theta_v, const ConvexSet& set, double delta) {
  const Vec w = z + theta_v;
  return -0.5 * delta * (1.0 - delta) * set.dist_sq(w / (1.0 - delta)) +
         0.5 * delta / (1.0 - delta) * w.squaredNorm() + 0.5 * z.squaredNorm();
}

// G(v,z) = 1/2 g^2 dist^2(Pi, (z+theta)/g) - 1/2 |z+theta|^2 + 1/2 |z|^2
inline double driver_G(const Vec& z, const Vec& theta_v, const ConvexSet& set, double gamma) {
  const Vec w = z + theta_v;
  return 0.5 * gamma * gamma * set.dist_sq(w / gamma) - 0.5 * w.squaredNorm() + 0.5 * z.squaredNorm();
}

inline double driver_Ftilde(const Vec& theta_v, const ConvexSet& set) {
  return -0.5 * set.dist_sq(theta_v) + 0.5 * theta_v.squaredNorm();
}

/// Driver along a fixed (not necessarily optimal) strategy pi; never exceeds driver_F.
inline double driver_F_pi(const Vec& z, const Vec& pi, const Vec& theta_v, double delta) {
  return -0.5 * delta * (1.0 - delta) * pi.squaredNorm() + delta * pi.dot(z + theta_v) +
         0.5 * z.squaredNorm();
}

inline double driver_F(const Vec& v, const Vec& z, const VecField& theta, const ConvexSet& set,
                       double delta) {
  return driver_F(z, theta(v), set, delta);
}
inline double driver_G(const Vec& v, const Vec& z, const VecField& theta, const ConvexSet& set,
                       double gamma) {
  return driver_G(z, theta(v), set, gamma);
}
inline double driver_Ftilde(const Vec& v, const VecField& theta, const ConvexSet& set) {
  return driver_Ftilde(theta(v), set);
}
inline double driver_F_pi(const Vec& v, const Vec& z, const Vec& pi, const VecField& theta, double delta) {
  return driver_F_pi(z, pi, theta(v), delta);
}

/// H(v, z) for the utility class: F, G or F~ (the latter ignores z).
inline double driver_value(const UtilitySpec& u, const Vec& z, const Vec& theta_v, const ConvexSet& set) {
  if (u.is_power()) return driver_F(z, theta_v, set, u.delta());
  if (u.is_exponential()) return driver_G(z, theta_v, set, u.gamma());
  return driver_Ftilde(theta_v, set);
}

// Lower floor for C_v; with constant theta the sampled constant is exactly zero.
inline constexpr double kMinStateLipschitz = 1e-9;

struct DriverConstants {
  double c_v = kMinStateLipschitz;  // |H(v,z) - H(w,z)| <= C_v (1+|z|) |v-w|
  double c_z = 0.0;                 // |H(v,z) - H(v,z')| <= C_z (1+|z|+|z'|) |z-z'|
  double k = 0.0;                   // |H(v,0)| <= K
  double c_eta = 1.0;

  static DriverConstants make(double c_v, double c_z, double k, double c_eta) {
    DriverConstants c{std::max(c_v, kMinStateLipschitz), c_z, k, c_eta};
    if (!(c.c_eta > c.c_v)) {
      throw ValidationError("driver constants: need C_eta > C_v (C_eta = " + std::to_string(c_eta) +
                            ", C_v = " + std::to_string(c.c_v) + ")");
    }
    return c;
  }

  /// Radius C_v / (C_eta - C_v) of the truncation ball; also the a priori bound on |z|.
  double truncation_radius() const { return c_v / (c_eta - c_v); }
};

/// q(z): radial clip onto the ball of radius `radius`.
inline Vec truncate_q(const Vec& z, double radius) {
  const double r = z.norm();
  if (r <= radius) return z;
  return z * (radius / r);
}

inline Vec truncate_q(const Vec& z, const DriverConstants& c) { return truncate_q(z, c.truncation_radius()); }

namespace detail {

inline std::vector<Vec> z_probe_set(int m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  std::vector<Vec> out;
  out.push_back(Vec::Zero(m));
  for (double mag : {0.05, 0.2, 0.5, 1.0, 2.0, 5.0, 20.0, 100.0}) {
    for (int rep = 0; rep < 6; ++rep) {
      Vec dir(m);
      for (int j = 0; j < m; ++j) dir[j] = n01(rng);
      out.push_back(dir.normalized() * mag);
    }
  }
  return out;
}

// Sampled sup of |H(v,z) - H(w,z)| / ((1+|z|)|v-w|) over consecutive sample pairs.
inline double sampled_state_lipschitz(const UtilitySpec& u, const MarketSpec& market, const ConvexSet& set,
                                      std::span<const Vec> v_samples) {
  const auto zs = z_probe_set(market.noise_dim, 7);
  double best = 0.0;
  std::vector<Vec> thetas;
  thetas.reserve(v_samples.size());
  for (const auto& v : v_samples) thetas.push_back(market.theta(v));
  for (std::size_t i = 1; i < v_samples.size(); ++i) {
    const double dv = (v_samples[i] - v_samples[i - 1]).norm();
    if (dv <= 0) continue;
    for (const auto& z : zs) {
      const double dh =
          std::abs(driver_value(u, z, thetas[i], set) - driver_value(u, z, thetas[i - 1], set));
      best = std::max(best, dh / ((1.0 + z.norm()) * dv));
    }
  }
  return best;
}

}  // namespace detail

/// Estimate of C_v. Power: delta max{1,K_theta} C_theta / (1-delta). Logarithmic: C_theta K_theta.
/// Exponential: sampled sup over `v_samples` (consecutive pairs) with a 5% safety factor.
inline double cv_estimate(const MarketSpec& market, const UtilitySpec& u,
                          const ConvexSet& set = ConvexSet::full_space(1), std::span<const Vec> v_samples = {}) {
  if (u.is_power()) {
    const double d = u.delta();
    return d * std::max(1.0, market.theta_bound) * market.theta_lipschitz / (1.0 - d);
  }
  if (u.is_log()) return market.theta_lipschitz * market.theta_bound;
  if (v_samples.size() < 2) throw ValidationError("cv_estimate: exponential case needs v samples");
  const ConvexSet& s = set.dim() == market.noise_dim ? set : ConvexSet::full_space(market.noise_dim);
  return 1.05 * detail::sampled_state_lipschitz(u, market, s, v_samples);
}

/// Structural constants of the driver. C_z is sampled on z-pairs within radius 10 around each v;
/// K follows the closed-form bounds when 0 lies in Pi and is sampled (+5%) otherwise.
inline DriverConstants estimate_driver_constants(const FactorModel& model, const MarketSpec& market,
                                                 const UtilitySpec& u, const ConvexSet& set,
                                                 std::span<const Vec> v_samples) {
  const double c_v = cv_estimate(market, u, set, v_samples);

  double c_z = 0.0;
  if (!u.is_log()) {
    const auto zs = detail::z_probe_set(market.noise_dim, 11);
    const std::size_t stride = std::max<std::size_t>(1, v_samples.size() / 16);
    for (std::size_t i = 0; i < v_samples.size(); i += stride) {
      const Vec th = market.theta(v_samples[i]);
      for (std::size_t a = 0; a < zs.size(); ++a) {
        if (zs[a].norm() > 10.0) continue;
        for (std::size_t b = a + 1; b < zs.size(); ++b) {
          if (zs[b].norm() > 10.0) continue;
          const double dz = (zs[a] - zs[b]).norm();
          if (dz <= 0) continue;
          const double dh = std::abs(driver_value(u, zs[a], th, set) - driver_value(u, zs[b], th, set));
          c_z = std::max(c_z, dh / ((1.0 + zs[a].norm() + zs[b].norm()) * dz));
        }
      }
    }
  }

  const double kt = market.theta_bound;
  double k = 0.0;
  if (set.contains(Vec::Zero(set.dim()))) {
    if (u.is_power()) {
      const double d = u.delta();
      k = 0.5 * std::max(d / (1.0 - d), 1.0) * kt * kt;
    } else {
      k = 0.5 * kt * kt;
    }
  } else {
    const Vec zero = Vec::Zero(market.noise_dim);
    for (const auto& v : v_samples) k = std::max(k, std::abs(driver_value(u, zero, market.theta(v), set)));
    k *= 1.05;
  }
  return DriverConstants::make(c_v, c_z, k, model.dissipativity);
}

}  // namespace ffp
