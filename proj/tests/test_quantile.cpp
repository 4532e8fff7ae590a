#include <gtest/gtest.h>

#include <random>

#include "riskrl/quantile.hpp"

using namespace riskrl;

TEST(Quantile, Fractions) {
  const auto tau = quantile_fractions(4);
  ASSERT_EQ(tau.size(), 5u);
  EXPECT_DOUBLE_EQ(tau[0], 0.0);
  EXPECT_DOUBLE_EQ(tau[2], 0.5);
  EXPECT_DOUBLE_EQ(tau[4], 1.0);
  EXPECT_DOUBLE_EQ(midpoint_fraction(0, 4), 0.125);
  EXPECT_DOUBLE_EQ(midpoint_fraction(3, 4), 0.875);
}

TEST(Quantile, MeanAndSorted) {
  QuantileDistribution z({3.0, -1.0, 2.0, 0.0});
  EXPECT_DOUBLE_EQ(dist_mean(z), 1.0);
  EXPECT_EQ(z.sorted().quantiles, (std::vector<double>{-1.0, 0.0, 2.0, 3.0}));
  EXPECT_THROW(dist_mean(QuantileDistribution()), ConfigError);
}

TEST(Quantile, PinballHandComputed) {
  // N = 2: tau = 0.25, 0.75. Target 1 against heads 0 and 2.
  QuantileDistribution z({0.0, 2.0});
  const auto r = pinball_loss(z, 1.0);
  // head 0: u = 1, w = 0.25 -> 0.25; head 1: u = -1, w = -0.25 -> 0.25; mean 0.25
  EXPECT_DOUBLE_EQ(r.loss, 0.25);
  EXPECT_DOUBLE_EQ(r.grad[0], -0.125);
  EXPECT_DOUBLE_EQ(r.grad[1], 0.125);
}

TEST(Quantile, HuberReducesToScaledSquareInsideKappa) {
  QuantileDistribution z({0.0});
  const auto r = pinball_loss(z, 0.2, 1.0);
  EXPECT_NEAR(r.loss, 0.5 * 0.5 * 0.04, 1e-15);
  const auto far = pinball_loss(z, 3.0, 1.0);
  EXPECT_NEAR(far.loss, 0.5 * (3.0 - 0.5), 1e-15);
  EXPECT_THROW(pinball_loss(z, 0.0, -1.0), ConfigError);
}

// Minimizing the summed pinball loss by subgradient descent must land each head
// on the empirical tau_i quantile of the sample set.
TEST(Quantile, PinballMinimizerIsEmpiricalQuantile) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd(2.0, 3.0);
  std::vector<double> samples(401);
  for (double& s : samples) s = nd(rng);
  const std::size_t n = 8;
  QuantileDistribution z(std::vector<double>(n, 0.0));
  for (int it = 0; it < 20000; ++it) {
    const double lr = 4.0 / (1.0 + it * 0.01);
    const auto r = pinball_loss(z, samples);
    for (std::size_t i = 0; i < n; ++i) z.quantiles[i] -= lr * r.grad[i];
  }
  auto sorted = samples;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < n; ++i) {
    const double tau = midpoint_fraction(i, n);
    const double lo = sorted[static_cast<std::size_t>(std::floor(tau * samples.size())) - 1];
    const double hi = sorted[static_cast<std::size_t>(std::ceil(tau * samples.size()))];
    EXPECT_GE(z.quantiles[i], lo - 0.05) << i;
    EXPECT_LE(z.quantiles[i], hi + 0.05) << i;
  }
}

TEST(Quantile, Wasserstein) {
  QuantileDistribution a({0.0, 1.0, 2.0});
  QuantileDistribution b({2.5, 0.5, 1.5});
  EXPECT_DOUBLE_EQ(wasserstein1(a, b), 0.5);
  EXPECT_DOUBLE_EQ(wasserstein1(a, a), 0.0);
  EXPECT_THROW(wasserstein1(a, QuantileDistribution({1.0})), ConfigError);
}

TEST(Quantile, WassersteinMatchesCdfIntegral) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (int c = 0; c < 50; ++c) {
    std::vector<double> qa(6), qb(6);
    for (auto& v : qa) v = u(rng);
    for (auto& v : qb) v = u(rng);
    QuantileDistribution a(qa), b(qb);
    // integral of |F_a - F_b| over a fine grid
    double integral = 0.0;
    const double dx = 1e-4;
    for (double x = -5.0; x < 5.0; x += dx) {
      double fa = 0, fb = 0;
      for (double v : qa) fa += v <= x;
      for (double v : qb) fb += v <= x;
      integral += std::abs(fa - fb) / 6.0 * dx;
    }
    EXPECT_NEAR(wasserstein1(a, b), integral, 5e-3);
  }
}

TEST(Quantile, HistogramMassAndEdges) {
  QuantileDistribution z({0.0, 0.1, 0.5, 1.0});
  const auto h = to_histogram(z, 2, 0.0, 1.0);
  EXPECT_EQ(h.edges, (std::vector<double>{0.0, 0.5, 1.0}));
  EXPECT_DOUBLE_EQ(h.masses[0], 0.5);
  EXPECT_DOUBLE_EQ(h.masses[1], 0.5);
  const auto d = to_histogram(QuantileDistribution({2.0, 2.0}), 4);
  EXPECT_DOUBLE_EQ(d.edges.front(), 1.5);
  EXPECT_DOUBLE_EQ(d.edges.back(), 2.5);
  double total = 0;
  for (double m : d.masses) total += m;
  EXPECT_DOUBLE_EQ(total, 1.0);
  EXPECT_THROW(to_histogram(z, 0), ConfigError);
}
