#pragma once

// Return distributions as a uniform mixture of N Diracs at quantile locations.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "riskrl/errors.hpp"

namespace riskrl {

struct QuantileDistribution {
  std::vector<double> quantiles;

  QuantileDistribution() = default;
  explicit QuantileDistribution(std::vector<double> q) : quantiles(std::move(q)) {}

  std::size_t size() const { return quantiles.size(); }

  QuantileDistribution sorted() const {
    QuantileDistribution z = *this;
    std::sort(z.quantiles.begin(), z.quantiles.end());
    return z;
  }
};

/// tau_i = i / N for i = 0..N.
inline std::vector<double> quantile_fractions(std::size_t n) {
  std::vector<double> tau(n + 1);
  for (std::size_t i = 0; i <= n; ++i) tau[i] = static_cast<double>(i) / static_cast<double>(n);
  return tau;
}

/// Regression target fraction of head i (0-based): (2i + 1) / (2N).
inline double midpoint_fraction(std::size_t i, std::size_t n) {
  return (2.0 * static_cast<double>(i) + 1.0) / (2.0 * static_cast<double>(n));
}

inline double dist_mean(const QuantileDistribution& z) {
  if (z.quantiles.empty()) throw ConfigError("dist_mean: empty distribution");
  return std::accumulate(z.quantiles.begin(), z.quantiles.end(), 0.0) / static_cast<double>(z.size());
}

struct PinballResult {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d quantile_i
};

/// Quantile regression loss of every head against every target sample, averaged
/// over heads and samples. kappa = 0 is the plain pinball loss; kappa > 0 is the
/// Huber-smoothed variant |tau - 1[u<0]| * huber_kappa(u) / kappa.
inline PinballResult pinball_loss(const QuantileDistribution& predicted, std::span<const double> targets,
                                  double kappa = 0.0) {
  if (kappa < 0.0) throw ConfigError("pinball_loss: kappa must be >= 0");
  if (predicted.quantiles.empty() || targets.empty()) throw ConfigError("pinball_loss: empty input");
  const std::size_t n = predicted.size();
  const double norm = 1.0 / (static_cast<double>(n) * static_cast<double>(targets.size()));
  PinballResult r;
  r.grad.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double tau = midpoint_fraction(i, n);
    const double phi = predicted.quantiles[i];
    for (double target : targets) {
      const double u = target - phi;
      const double w = (u < 0.0) ? tau - 1.0 : tau;  // signed asymmetric weight
      if (kappa == 0.0) {
        r.loss += u * w * norm;
        r.grad[i] -= w * norm;
      } else {
        const double au = std::abs(u);
        const double huber = au <= kappa ? 0.5 * u * u : kappa * (au - 0.5 * kappa);
        const double dhuber = au <= kappa ? u : kappa * (u < 0.0 ? -1.0 : 1.0);
        r.loss += std::abs(w) * huber / kappa * norm;
        r.grad[i] -= std::abs(w) * dhuber / kappa * norm;
      }
    }
  }
  return r;
}

inline PinballResult pinball_loss(const QuantileDistribution& predicted, double target, double kappa = 0.0) {
  return pinball_loss(predicted, std::span<const double>(&target, 1), kappa);
}

inline double wasserstein1(const QuantileDistribution& a, const QuantileDistribution& b) {
  if (a.size() != b.size() || a.size() == 0)
    throw ConfigError("wasserstein1: distributions must have equal, non-zero N");
  const auto sa = a.sorted();
  const auto sb = b.sorted();
  double s = 0.0;
  for (std::size_t i = 0; i < sa.size(); ++i) s += std::abs(sa.quantiles[i] - sb.quantiles[i]);
  return s / static_cast<double>(sa.size());
}

struct Histogram {
  std::vector<double> edges;   // bins + 1
  std::vector<double> masses;  // bins, sums to 1
};

/// Bins the Diracs over [lo, hi]; the last bin is closed on the right.
inline Histogram to_histogram(const QuantileDistribution& z, int bins, double lo, double hi) {
  if (bins < 1) throw ConfigError("to_histogram: bins must be >= 1");
  if (z.quantiles.empty()) throw ConfigError("to_histogram: empty distribution");
  if (!(hi > lo)) throw ConfigError("to_histogram: empty range");
  Histogram h;
  h.edges.resize(bins + 1);
  const double width = (hi - lo) / bins;
  for (int i = 0; i <= bins; ++i) h.edges[i] = lo + width * i;
  h.edges[bins] = hi;
  h.masses.assign(bins, 0.0);
  const double m = 1.0 / static_cast<double>(z.size());
  for (double q : z.quantiles) {
    int b = static_cast<int>(std::floor((q - lo) / width));
    b = std::clamp(b, 0, bins - 1);
    h.masses[b] += m;
  }
  return h;
}

/// Range taken from the quantiles themselves; a degenerate range is widened to +-0.5.
inline Histogram to_histogram(const QuantileDistribution& z, int bins) {
  if (z.quantiles.empty()) throw ConfigError("to_histogram: empty distribution");
  auto [mn, mx] = std::minmax_element(z.quantiles.begin(), z.quantiles.end());
  double lo = *mn, hi = *mx;
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  return to_histogram(z, bins, lo, hi);
}

}  // namespace riskrl
