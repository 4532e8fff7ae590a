#include <gtest/gtest.h>

#include <random>

#include "riskrl/risk.hpp"

using namespace riskrl;

TEST(Risk, Ranges) {
  EXPECT_TRUE(beta_in_range(RiskMetric::wang, -1.0));
  EXPECT_TRUE(beta_in_range(RiskMetric::wang, 1.0));
  EXPECT_FALSE(beta_in_range(RiskMetric::wang, 1.0001));
  EXPECT_FALSE(beta_in_range(RiskMetric::cvar, 0.0));
  EXPECT_TRUE(beta_in_range(RiskMetric::cvar, 1e-9));
  EXPECT_FALSE(beta_in_range(RiskMetric::wang, std::nan("")));
  EXPECT_THROW(RiskSpec(RiskMetric::cvar, 0.0).validate(), ConfigError);
  EXPECT_EQ(RiskSpec(RiskMetric::neutral, 0.7).beta, 0.0);
  EXPECT_EQ(metric_from_string("cvar"), RiskMetric::cvar);
  EXPECT_THROW(metric_from_string("var"), ConfigError);
}

TEST(Risk, InverseNormalRoundTrip) {
  for (double p : {1e-10, 1e-4, 0.02, 0.1, 0.3, 0.5, 0.77, 0.98, 0.9999, 1 - 1e-10})
    EXPECT_NEAR(normal_cdf(normal_cdf_inv(p)), p, 1e-14 + 1e-12 * p) << p;
  EXPECT_NEAR(normal_cdf_inv(0.975), 1.959963984540054, 1e-12);
  EXPECT_THROW(normal_cdf_inv(0.0), std::domain_error);
}

TEST(Risk, KnownValues) {
  EXPECT_NEAR(distortion({RiskMetric::wang, 1.0}, 0.5), 0.841345, 1e-6);
  const auto w = distortion_weights({RiskMetric::cvar, 0.5}, 4);
  EXPECT_EQ(w, (std::vector<double>{0.5, 0.5, 0.0, 0.0}));
  EXPECT_EQ(distorted_value(QuantileDistribution({1, 2, 3, 4}), {RiskMetric::cvar, 0.5}), 1.5);
  EXPECT_EQ(distorted_value(QuantileDistribution({4, 1, 3, 2}), {RiskMetric::cvar, 0.5}), 1.5);
}

TEST(Risk, NeutralLimitsReproduceMean) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-10, 10);
  for (int c = 0; c < 100; ++c) {
    std::vector<double> q(1 + c % 17);
    for (auto& v : q) v = u(rng);
    QuantileDistribution z(q);
    EXPECT_EQ(distorted_value(z, {RiskMetric::wang, 0.0}), dist_mean(z));
    EXPECT_EQ(distorted_value(z, {RiskMetric::cvar, 1.0}), dist_mean(z));
    EXPECT_EQ(distorted_value(z, {RiskMetric::neutral, 0.0}), dist_mean(z));
  }
}

// The weight on the k-th sorted atom is the distorted measure of its probability
// interval; integrating g' numerically over that interval must agree.
TEST(Risk, WeightsMatchIntegratedDensity) {
  for (double beta : {-1.0, -0.3, 0.4, 1.0}) {
    const RiskSpec s{RiskMetric::wang, beta};
    const std::size_t n = 8;
    const auto w = distortion_weights(s, n);
    for (std::size_t k = 0; k < n; ++k) {
      const double a = static_cast<double>(k) / n, b = static_cast<double>(k + 1) / n;
      // Wang density: phi(z + beta) / phi(z) with z = Phi^-1(tau)
      double integral = 0.0;
      const int steps = 20000;
      for (int i = 0; i < steps; ++i) {
        const double tau = a + (b - a) * (i + 0.5) / steps;
        const double z = normal_cdf_inv(tau);
        integral += std::exp(-beta * z - 0.5 * beta * beta) * (b - a) / steps;
      }
      EXPECT_NEAR(w[k], integral, 2e-4) << beta << " " << k;
    }
  }
}

TEST(Risk, CvarIsTailAverage) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int c = 0; c < 100; ++c) {
    const std::size_t n = 10;
    std::vector<double> q(n);
    for (auto& v : q) v = u(rng);
    const double beta = 0.1 * (1 + c % 10);
    auto s = q;
    std::sort(s.begin(), s.end());
    // expected shortfall of a discrete uniform over n atoms at level beta
    const double mass = beta * n;
    double acc = 0.0, left = mass;
    for (std::size_t k = 0; k < n && left > 1e-12; ++k) {
      const double take = std::min(1.0, left);
      acc += take * s[k];
      left -= take;
    }
    EXPECT_NEAR(distorted_value(QuantileDistribution(q), {RiskMetric::cvar, beta}), acc / mass, 1e-12);
  }
}

TEST(Risk, DirectionOfEffect) {
  QuantileDistribution z({-5.0, 0.0, 1.0, 2.0});
  const double m = dist_mean(z);
  EXPECT_LT(distorted_value(z, {RiskMetric::wang, 0.5}), m);
  EXPECT_GT(distorted_value(z, {RiskMetric::wang, -0.5}), m);
  EXPECT_LT(distorted_value(z, {RiskMetric::cvar, 0.3}), m);
}

TEST(Risk, DistortionRejectsBadTau) {
  EXPECT_THROW(distortion({RiskMetric::wang, 0.2}, 1.5), ConfigError);
  EXPECT_EQ(distortion({RiskMetric::wang, 0.2}, 0.0), 0.0);
  EXPECT_EQ(distortion({RiskMetric::wang, 0.2}, 1.0), 1.0);
}
