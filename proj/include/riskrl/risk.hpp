#pragma once

// Distortion risk metrics and the distorted expectation of a quantile distribution.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "riskrl/errors.hpp"
#include "riskrl/quantile.hpp"

namespace riskrl {

enum class RiskMetric { neutral, wang, cvar };

inline std::string to_string(RiskMetric m) {
  switch (m) {
    case RiskMetric::neutral: return "neutral";
    case RiskMetric::wang: return "wang";
    case RiskMetric::cvar: return "cvar";
  }
  return "neutral";
}

inline RiskMetric metric_from_string(const std::string& s) {
  if (s == "neutral") return RiskMetric::neutral;
  if (s == "wang") return RiskMetric::wang;
  if (s == "cvar") return RiskMetric::cvar;
  throw ConfigError("unknown risk metric '" + s + "'");
}

struct BetaRange {
  double lo;
  double hi;
  bool lo_inclusive;
};

/// Valid beta values per metric: wang [-1, 1], cvar (0, 1], neutral {0}.
inline BetaRange beta_range(RiskMetric m) {
  switch (m) {
    case RiskMetric::wang: return {-1.0, 1.0, true};
    case RiskMetric::cvar: return {0.0, 1.0, false};
    case RiskMetric::neutral: return {0.0, 0.0, true};
  }
  return {0.0, 0.0, true};
}

inline bool beta_in_range(RiskMetric m, double beta) {
  if (!std::isfinite(beta)) return false;
  if (m == RiskMetric::neutral) return true;
  const auto r = beta_range(m);
  return (r.lo_inclusive ? beta >= r.lo : beta > r.lo) && beta <= r.hi;
}

struct RiskSpec {
  RiskMetric metric = RiskMetric::neutral;
  double beta = 0.0;

  RiskSpec() = default;
  RiskSpec(RiskMetric m, double b) : metric(m), beta(m == RiskMetric::neutral ? 0.0 : b) {}

  void validate() const {
    if (!beta_in_range(metric, beta))
      throw ConfigError("beta " + std::to_string(beta) + " outside the valid range for metric " +
                        to_string(metric));
  }

  bool operator==(const RiskSpec&) const = default;
};

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Acklam's rational approximation followed by one Halley refinement step
/// against the erfc-based CDF.
inline double normal_cdf_inv(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("normal_cdf_inv: p must lie strictly inside (0, 1)");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = normal_cdf(x) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

/// g_beta(tau). Wang endpoints are pinned to their limits g(0) = 0, g(1) = 1.
inline double distortion(const RiskSpec& spec, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("distortion: tau must lie in [0, 1]");
  switch (spec.metric) {
    case RiskMetric::neutral: return tau;
    case RiskMetric::wang:
      if (tau == 0.0) return 0.0;
      if (tau == 1.0) return 1.0;
      if (spec.beta == 0.0) return tau;
      return normal_cdf(normal_cdf_inv(tau) + spec.beta);
    case RiskMetric::cvar:
      if (!(spec.beta > 0.0)) throw ConfigError("distortion: cvar requires beta > 0");
      return std::min(tau / spec.beta, 1.0);
  }
  return tau;
}

/// w_k = g(k/N) - g((k-1)/N), k = 1..N, a probability vector over sorted quantiles.
inline std::vector<double> distortion_weights(const RiskSpec& spec, std::size_t n) {
  if (n == 0) throw ConfigError("distortion_weights: N must be >= 1");
  spec.validate();
  std::vector<double> w(n);
  if (spec.metric == RiskMetric::neutral || (spec.metric == RiskMetric::wang && spec.beta == 0.0)) {
    std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(n));
    return w;
  }
  const auto tau = quantile_fractions(n);
  double prev = distortion(spec, tau[0]);
  double total = 0.0;
  for (std::size_t k = 1; k <= n; ++k) {
    const double cur = distortion(spec, tau[k]);
    w[k - 1] = std::max(cur - prev, 0.0);
    total += w[k - 1];
    prev = cur;
  }
  if (std::abs(total - 1.0) > 1e-12)
    for (double& x : w) x /= total;
  return w;
}

/// Distorted expectation of Z: weights applied to the ascending-sorted quantiles.
inline double distorted_value(const QuantileDistribution& z, const RiskSpec& spec) {
  if (z.quantiles.empty()) throw ConfigError("distorted_value: empty distribution");
  if (spec.metric == RiskMetric::neutral || (spec.metric == RiskMetric::wang && spec.beta == 0.0) ||
      (spec.metric == RiskMetric::cvar && spec.beta == 1.0))
    return dist_mean(z);
  const auto w = distortion_weights(spec, z.size());
  const auto s = z.sorted();
  double v = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) v += w[k] * s.quantiles[k];
  return v;
}

}  // namespace riskrl
