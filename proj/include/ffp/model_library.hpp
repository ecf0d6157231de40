#pragma once

// Built-in factor drifts and market-price-of-risk families.
//
// Drifts (componentwise):  ou      eta_i = -c_i (v_i - m_i)           C_eta = min c_i
//                          ou_sin  eta_i = -c v_i + eps sin(v_i)      C_eta = c - |eps|
// Stock drifts:            b_i(v) = amp_i s(scale_i v[axis_i]),  s in {1, tanh, logistic}
// with constant volatility sigma (n x m), so theta(v) = P b(v) and P = sigma^T (sigma sigma^T)^{-1}.

#include "ffp/core.hpp"
#include "ffp/market_model.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace ffp {

inline FactorModel ou_model(Mat kappa, Vec speed, Vec mean) {
  FactorModel m;
  m.name = "ou";
  m.dim = static_cast<int>(kappa.rows());
  m.noise_dim = static_cast<int>(kappa.cols());
  detail::require_dim(speed, m.dim, "ou_model: speed");
  detail::require_dim(mean, m.dim, "ou_model: mean");
  if (!(speed.minCoeff() > 0.0)) throw ValidationError("ou_model: mean-reversion speeds must be positive");
  m.dissipativity = speed.minCoeff();
  m.kappa = std::move(kappa);
  m.drift = [speed, mean](const Vec& v) -> Vec { return -(speed.array() * (v - mean).array()).matrix(); };
  return m;
}

inline FactorModel ou_sin_model(Mat kappa, double speed, double eps) {
  FactorModel m;
  m.name = "ou_sin";
  m.dim = static_cast<int>(kappa.rows());
  m.noise_dim = static_cast<int>(kappa.cols());
  if (!(speed > std::abs(eps))) throw ValidationError("ou_sin_model: need speed > |eps|");
  m.dissipativity = speed - std::abs(eps);
  m.kappa = std::move(kappa);
  m.drift = [speed, eps](const Vec& v) -> Vec { return -speed * v + eps * v.array().sin().matrix(); };
  return m;
}

enum class ThetaShape { Constant, Tanh, Logistic };

inline ThetaShape theta_shape_from_name(const std::string& s) {
  if (s == "constant") return ThetaShape::Constant;
  if (s == "tanh") return ThetaShape::Tanh;
  if (s == "logistic") return ThetaShape::Logistic;
  throw ValidationError("unknown theta family '" + s + "' (expected constant, tanh or logistic)");
}

inline std::string theta_shape_name(ThetaShape s) {
  switch (s) {
    case ThetaShape::Constant: return "constant";
    case ThetaShape::Tanh: return "tanh";
    case ThetaShape::Logistic: return "logistic";
  }
  return "constant";
}

struct ShapedMarketParams {
  ThetaShape shape = ThetaShape::Constant;
  Mat sigma;                  // n x m, constant
  Vec amplitude;              // n
  Vec scale;                  // n (ignored for constant)
  std::vector<int> axis;      // n factor coordinates (ignored for constant)
  int state_dim = 1;
};

/// Market with constant volatility and shaped drift. K_theta and C_theta are the exact bounds
/// |P|_2 |amp| and |P|_2 sqrt(sum (amp_i scale_i L_s)^2), with L_s = 1 (tanh) or 1/4 (logistic).
inline MarketSpec shaped_market(const ShapedMarketParams& p) {
  const auto n = p.sigma.rows();
  const auto m = p.sigma.cols();
  if (n < 1 || m < n) throw ValidationError("shaped_market: sigma must be n x m with 1 <= n <= m");
  detail::require_dim(p.amplitude, n, "shaped_market: amplitude");
  Vec scale = p.scale.size() ? p.scale : Vec::Ones(n);
  detail::require_dim(scale, n, "shaped_market: scale");
  std::vector<int> axis = p.axis;
  if (axis.empty()) axis.assign(static_cast<std::size_t>(n), 0);
  if (static_cast<Eigen::Index>(axis.size()) != n) throw DimensionError("shaped_market: axis needs one entry per stock");
  for (int a : axis) {
    if (a < 0 || a >= p.state_dim) throw ValidationError("shaped_market: factor axis out of range");
  }
  // Rank check and pseudo-inverse once.
  const Vec probe = Vec::Zero(p.state_dim);
  Mat pinv(m, n);
  for (Eigen::Index j = 0; j < n; ++j) pinv.col(j) = theta_from_coeffs(p.sigma, Vec::Unit(n, j), probe);
  const double pnorm = Eigen::JacobiSVD<Mat>(pinv).singularValues()(0);

  const ThetaShape shape = p.shape;
  auto b = [shape, amp = p.amplitude, scale, axis](const Vec& v) -> Vec {
    Vec out(amp.size());
    for (Eigen::Index i = 0; i < amp.size(); ++i) {
      const double x = scale[i] * v[axis[static_cast<std::size_t>(i)]];
      double s = 1.0;
      if (shape == ThetaShape::Tanh) s = std::tanh(x);
      else if (shape == ThetaShape::Logistic) s = 1.0 / (1.0 + std::exp(-x));
      out[i] = amp[i] * s;
    }
    return out;
  };

  MarketSpec mk;
  mk.n_stocks = static_cast<int>(n);
  mk.noise_dim = static_cast<int>(m);
  mk.b = b;
  mk.sigma = [sigma = p.sigma](const Vec&) -> Mat { return sigma; };
  mk.theta = [b, pinv](const Vec& v) -> Vec { return pinv * b(v); };
  mk.theta_bound = pnorm * p.amplitude.norm();
  double lip = 0.0;
  if (shape != ThetaShape::Constant) {
    const double ls = shape == ThetaShape::Tanh ? 1.0 : 0.25;
    lip = pnorm * (p.amplitude.array() * scale.array() * ls).matrix().norm();
  }
  mk.theta_lipschitz = lip;
  return mk;
}

/// One stock, one factor, one Brownian motion: theta(v) = (b/sigma) s(scale v).
inline MarketSpec scalar_market(ThetaShape shape, double b_amp, double sigma, double scale = 1.0) {
  ShapedMarketParams p;
  p.shape = shape;
  p.sigma = Mat::Constant(1, 1, sigma);
  p.amplitude = Vec::Constant(1, b_amp);
  p.scale = Vec::Constant(1, scale);
  p.axis = {0};
  p.state_dim = 1;
  return shaped_market(p);
}

}  // namespace ffp
