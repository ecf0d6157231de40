#include "ffp/drivers.hpp"
#include "ffp/model_library.hpp"

#include <gtest/gtest.h>

#include <random>
#include <vector>

using namespace ffp;

namespace {

Vec v1(double x) { return Vec::Constant(1, x); }
Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

// F by brute force: sup over a fine grid of pi in Pi of the driver along pi.
double sup_over_pi_1d(double z, double th, double delta, double lo, double hi) {
  double best = -1e300;
  const int n = 200000;
  for (int i = 0; i <= n; ++i) {
    const double pi = lo + (hi - lo) * i / n;
    best = std::max(best, driver_F_pi(v1(z), v1(pi), v1(th), delta));
  }
  return best;
}

}  // namespace

TEST(DriverF, UnconstrainedPlugIn) {
  const auto full = ConvexSet::full_space(2);
  EXPECT_NEAR(driver_F(Vec::Zero(2), v2(0.4, 0), full, 0.5), 0.08, 1e-15);
}

TEST(DriverF, FrozenSecondCoordinate) {
  const auto sub = ConvexSet::subspace({true, false});
  const double f = driver_F(v2(0.1, 0.2), v2(0.4, 0), sub, 0.5);
  EXPECT_NEAR(f, 0.5 * 0.25 + 0.005 + 0.02, 1e-15);
  EXPECT_NEAR(f, 0.15, 1e-15);
}

TEST(DriverF, ZeroThetaReduction) {
  const auto full = ConvexSet::full_space(2);
  const Vec z = v2(0.3, -0.7);
  for (double d : {0.2, 0.5, 0.8}) {
    EXPECT_NEAR(driver_F(z, Vec::Zero(2), full, d), 0.5 * d / (1 - d) * z.squaredNorm() + 0.5 * z.squaredNorm(),
                1e-15);
  }
}

TEST(DriverF, MatchesSupremumOverBox) {
  const auto box = ConvexSet::box(v1(-0.5), v1(0.5));
  for (double z : {-0.3, 0.0, 0.2}) {
    for (double th : {-0.6, 0.1, 0.4}) {
      EXPECT_NEAR(driver_F(v1(z), v1(th), box, 0.5), sup_over_pi_1d(z, th, 0.5, -0.5, 0.5), 1e-9);
    }
  }
}

TEST(DriverG, Examples) {
  const auto full = ConvexSet::full_space(2);
  EXPECT_NEAR(driver_G(Vec::Zero(2), v2(0.4, 0), full, 1.0), -0.08, 1e-15);
  const auto none = ConvexSet::ball(Vec::Zero(2), 0.0);
  EXPECT_NEAR(driver_G(Vec::Zero(2), v2(0.4, 0), none, 1.0), 0.0, 1e-15);
  EXPECT_NEAR(driver_G(v2(0.1, 0), v2(0.4, 0), full, 2.0), -0.12, 1e-15);
}

TEST(DriverFtilde, Examples) {
  EXPECT_NEAR(driver_Ftilde(v2(0.4, 0), ConvexSet::full_space(2)), 0.08, 1e-15);
  const auto none = ConvexSet::ball(Vec::Zero(2), 0.0);
  for (double t : {-1.0, 0.3, 2.0}) EXPECT_NEAR(driver_Ftilde(v2(t, 0.5 * t), none), 0.0, 1e-15);
  const auto box = ConvexSet::box(v2(-0.1, -0.1), v2(0.1, 0.1));
  EXPECT_NEAR(driver_Ftilde(v2(0.4, 0), box), -0.5 * 0.09 + 0.5 * 0.16, 1e-15);
  EXPECT_NEAR(driver_Ftilde(v2(0.4, 0), box), 0.035, 1e-15);
}

TEST(DriverFpi, Examples) {
  const auto full = ConvexSet::full_space(2);
  const Vec z = v2(0.1, -0.2), th = v2(0.4, 0.1);
  const double d = 0.5;
  EXPECT_NEAR(driver_F_pi(z, (z + th) / (1 - d), th, d), driver_F(z, th, full, d), 1e-15);
  EXPECT_NEAR(driver_F_pi(z, Vec::Zero(2), th, d), 0.5 * z.squaredNorm(), 1e-15);
  EXPECT_NEAR(driver_F_pi(v1(0), v1(0.4), v1(0.4), 0.5), 0.06, 1e-15);
  EXPECT_LT(driver_F_pi(v1(0), v1(0.4), v1(0.4), 0.5), driver_F(v1(0), v1(0.4), ConvexSet::full_space(1), 0.5));
}

TEST(DriverFpi, ScanShowsPositiveGapAwayFromOptimum) {
  double best_pi = 0, best = -1e300;
  for (int i = 0; i <= 4000; ++i) {
    const double pi = -1.0 + 0.001 * i;
    const double f = driver_F_pi(v1(0), v1(pi), v1(0.4), 0.5);
    if (f > best) best = f, best_pi = pi;
  }
  EXPECT_NEAR(best_pi, 0.8, 1e-12);
  EXPECT_NEAR(best, 0.08, 1e-12);
}

TEST(DriverProperties, SuboptimalityGapNonnegative) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> ud(0.05, 0.95);
  const std::vector<ConvexSet> sets = {ConvexSet::full_space(2), ConvexSet::box(v2(-0.5, 0), v2(0.5, 1.0)),
                                       ConvexSet::ball(v2(0.2, 0), 0.4), ConvexSet::subspace({true, false})};
  for (const auto& set : sets) {
    for (int i = 0; i < 2000; ++i) {
      const double d = ud(rng);
      const Vec z = v2(n01(rng), n01(rng)), th = v2(n01(rng), n01(rng));
      const Vec pi = set.project(v2(2 * n01(rng), 2 * n01(rng)));
      const double f = driver_F(z, th, set, d);
      EXPECT_GE(f - driver_F_pi(z, pi, th, d), -1e-12) << set.kind_name();
      const Vec star = set.project((z + th) / (1 - d));
      EXPECT_NEAR(f, driver_F_pi(z, star, th, d), 1e-12 * (1 + std::abs(f))) << set.kind_name();
    }
  }
}

TEST(Truncation, Examples) {
  EXPECT_EQ(truncate_q(Vec::Zero(2), 0.5), Vec::Zero(2));
  const Vec z = v2(0.15, 0.2);
  EXPECT_EQ(truncate_q(z, 0.5), z);
  EXPECT_NEAR(truncate_q(v1(2.0), 0.5)[0], 0.5, 1e-15);
}

TEST(Truncation, IsProjectionOntoBall) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n01;
  const double R = 0.7;
  for (int i = 0; i < 1000; ++i) {
    const Vec a = v2(n01(rng), n01(rng)), b = v2(n01(rng), n01(rng));
    const Vec qa = truncate_q(a, R), qb = truncate_q(b, R);
    EXPECT_LE(qa.norm(), R * (1 + 1e-15));
    EXPECT_NEAR((truncate_q(qa, R) - qa).norm(), 0.0, 1e-15);
    EXPECT_LE((qa - qb).norm(), (a - b).norm() * (1 + 1e-14));
    EXPECT_NEAR(qa.normalized().dot(a.normalized()), 1.0, 1e-14);
  }
}

TEST(DriverConstants, TruncationRadiusAndValidation) {
  const auto c = DriverConstants::make(0.3, 1.0, 0.1, 1.0);
  EXPECT_NEAR(c.truncation_radius(), 0.3 / 0.7, 1e-15);
  EXPECT_NEAR(truncate_q(v1(5.0), c)[0], 0.3 / 0.7, 1e-15);
  EXPECT_THROW(DriverConstants::make(1.0, 1.0, 0.1, 1.0), ValidationError);
  EXPECT_EQ(DriverConstants::make(0.0, 1.0, 0.1, 1.0).c_v, kMinStateLipschitz);
}

TEST(CvEstimate, PowerFormula) {
  MarketSpec mk;
  mk.noise_dim = 1;
  mk.theta_bound = 0.5;
  mk.theta_lipschitz = 0.3;
  EXPECT_NEAR(cv_estimate(mk, UtilitySpec::power(0.5)), 0.3, 1e-15);
  EXPECT_NEAR(cv_estimate(mk, UtilitySpec::power(0.01)), 0.01 * 0.3 / 0.99, 1e-15);
  mk.theta_bound = 2.0;
  EXPECT_NEAR(cv_estimate(mk, UtilitySpec::power(0.5)), 0.6, 1e-15);
}

TEST(CvEstimate, LogCaseBoundsSampledRatio) {
  MarketSpec mk = scalar_market(ThetaShape::Tanh, 0.5, 1.0, 0.3);
  ASSERT_NEAR(mk.theta_bound, 0.5, 1e-15);
  ASSERT_NEAR(mk.theta_lipschitz, 0.15, 1e-15);
  const double cv = cv_estimate(mk, UtilitySpec::logarithmic());
  EXPECT_NEAR(cv, 0.075, 1e-15);

  const MarketSpec mk2 = scalar_market(ThetaShape::Tanh, 0.5, 1.0, 0.6);
  EXPECT_NEAR(cv_estimate(mk2, UtilitySpec::logarithmic()), 0.15, 1e-15);
  const auto full = ConvexSet::full_space(1);
  double worst = 0;
  for (int i = 0; i < 400; ++i) {
    const Vec a = v1(-8 + 0.04 * i), b = v1(-8 + 0.04 * (i + 1));
    worst = std::max(worst, std::abs(driver_Ftilde(mk2.theta(a), full) - driver_Ftilde(mk2.theta(b), full)) / 0.04);
  }
  EXPECT_LE(worst, 0.15);
}

TEST(CvEstimate, ExponentialNeedsSamples) {
  const MarketSpec mk = scalar_market(ThetaShape::Tanh, 0.4, 1.0);
  EXPECT_THROW(cv_estimate(mk, UtilitySpec::exponential(1.0)), ValidationError);
  std::vector<Vec> vs;
  for (int i = 0; i <= 200; ++i) vs.push_back(v1(-5 + 0.05 * i));
  EXPECT_GT(cv_estimate(mk, UtilitySpec::exponential(1.0), ConvexSet::full_space(1), vs), 0.0);
}

TEST(DriverProperties, StateLipschitzAndBoundAtZero) {
  const MarketSpec mk = scalar_market(ThetaShape::Tanh, 0.4, 1.0);
  const FactorModel model = ou_model(Mat::Ones(1, 1), v1(1.0), v1(0.0));
  std::vector<Vec> grid;
  for (int i = 0; i <= 400; ++i) grid.push_back(v1(-5 + 0.025 * i));
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> uv(-5, 5), uz(-3, 3);
  const std::vector<UtilitySpec> utils = {UtilitySpec::power(0.3), UtilitySpec::power(0.7),
                                          UtilitySpec::exponential(1.0), UtilitySpec::exponential(2.5)};
  for (const auto& u : utils) {
    const auto full = ConvexSet::full_space(1);
    const auto c = estimate_driver_constants(model, mk, u, full, grid);
    for (int i = 0; i < 3000; ++i) {
      const Vec v = v1(uv(rng)), w = v1(uv(rng)), z = v1(uz(rng));
      const double lhs = std::abs(driver_value(u, z, mk.theta(v), full) - driver_value(u, z, mk.theta(w), full));
      EXPECT_LE(lhs, c.c_v * (1 + z.norm()) * (v - w).norm() + 1e-14) << u.name();
    }
    for (const auto& v : grid) EXPECT_LE(std::abs(driver_value(u, Vec::Zero(1), mk.theta(v), full)), c.k + 1e-15);
  }
}

TEST(DriverConstants, BoundAtZeroFormulas) {
  const MarketSpec mk = scalar_market(ThetaShape::Constant, 0.08, 0.2);
  const FactorModel model = ou_model(Mat::Ones(1, 1), v1(1.0), v1(0.0));
  const std::vector<Vec> vs = {v1(-1), v1(0), v1(1)};
  const auto full = ConvexSet::full_space(1);
  EXPECT_NEAR(estimate_driver_constants(model, mk, UtilitySpec::power(0.5), full, vs).k, 0.08, 1e-15);
  EXPECT_NEAR(estimate_driver_constants(model, mk, UtilitySpec::power(0.75), full, vs).k, 0.5 * 3 * 0.16, 1e-15);
  EXPECT_NEAR(estimate_driver_constants(model, mk, UtilitySpec::exponential(2.0), full, vs).k, 0.08, 1e-15);
  // 0 outside Pi: K is sampled with a 5% margin.
  const auto away = ConvexSet::box(v1(0.1), v1(1.0));
  const auto c = estimate_driver_constants(model, mk, UtilitySpec::power(0.5), away, vs);
  EXPECT_NEAR(c.k, 1.05 * std::abs(driver_F(v1(0), v1(0.4), away, 0.5)), 1e-15);
}

TEST(UtilitySpec, ParameterRanges) {
  EXPECT_THROW(UtilitySpec::power(0.0), ValidationError);
  EXPECT_THROW(UtilitySpec::power(1.0), ValidationError);
  EXPECT_THROW(UtilitySpec::exponential(0.0), ValidationError);
  EXPECT_EQ(UtilitySpec::power(0.5).name(), "power");
  EXPECT_EQ(UtilitySpec::exponential(1.0).name(), "exponential");
  EXPECT_EQ(UtilitySpec::logarithmic().name(), "log");
}
