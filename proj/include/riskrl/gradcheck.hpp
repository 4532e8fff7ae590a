#pragma once

// Randomized finite-difference checks of MLP backprop and the quantile losses.

#include <json.hpp>

#include "riskrl/nn.hpp"
#include "riskrl/quantile.hpp"
#include "riskrl/rng.hpp"

namespace riskrl {

struct GradSuiteResult {
  int cases = 0;
  double mlp = 0.0;        // MLP under a random linear loss
  double pinball = 0.0;    // loss w.r.t. quantile values
  double composite = 0.0;  // pinball loss through an MLP
  double max_error() const { return std::max({mlp, pinball, composite}); }
};

namespace gradcheck_detail {

inline Matrix random_matrix(int rows, int cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r) m(r, c) = uniform(rng, -scale, scale);
  return m;
}

inline MlpSpec random_spec(Rng& rng, int out) {
  std::vector<int> widths{std::uniform_int_distribution<int>(1, 6)(rng)};
  const int hidden = std::uniform_int_distribution<int>(0, 3)(rng);
  for (int i = 0; i < hidden; ++i) widths.push_back(std::uniform_int_distribution<int>(2, 10)(rng));
  widths.push_back(out);
  return {widths, uniform(rng, 0.0, 1.0) < 0.5 ? Activation::tanh : Activation::relu};
}

inline ParamSet random_params(const MlpSpec& spec, Rng& rng) {
  ParamSet p = init_params(spec, rng);
  for (auto& l : p.layers)
    for (int i = 0; i < l.bias.size(); ++i) l.bias(i) = uniform(rng, -0.5, 0.5);
  return p;
}

// ReLU units within `margin` of their kink would make central differences straddle it.
inline bool near_kink(const ParamSet& p, const Matrix& x, double margin) {
  if (p.spec.activation != Activation::relu) return false;
  MlpCache cache;
  mlp_forward(p, x, &cache);
  for (std::size_t l = 0; l + 1 < cache.pre.size(); ++l)
    if ((cache.pre[l].array().abs() < margin).any()) return true;
  return false;
}

}  // namespace gradcheck_detail

/// `specs` randomized cases, each checking all three gradient routes.
inline GradSuiteResult gradient_suite(int specs, std::uint64_t seed) {
  using namespace gradcheck_detail;
  GradSuiteResult res;
  for (int k = 0; k < specs; ++k) {
    Rng rng = make_rng(seed, "gradcheck", static_cast<std::uint64_t>(k));

    // MLP, random direction loss
    const int out = std::uniform_int_distribution<int>(1, 8)(rng);
    ParamSet p;
    Matrix x;
    do {
      p = random_params(random_spec(rng, out), rng);
      x = random_matrix(p.spec.layer_widths.front(), std::uniform_int_distribution<int>(1, 5)(rng), rng);
    } while (near_kink(p, x, 1e-3));
    const Matrix dir = random_matrix(out, static_cast<int>(x.cols()), rng);
    auto linear = [&](const Matrix& o) { return std::make_pair((o.array() * dir.array()).sum(), Matrix(dir)); };
    res.mlp = std::max(res.mlp, grad_check(p, x, linear));

    // pinball / Huber loss w.r.t. the quantiles
    const int n = std::uniform_int_distribution<int>(1, 16)(rng);
    const double kappa = uniform(rng, 0.0, 1.0) < 0.5 ? 0.0 : uniform(rng, 0.5, 2.0);
    std::vector<double> targets(std::uniform_int_distribution<int>(1, 8)(rng));
    for (double& t : targets) t = uniform(rng, -3.0, 3.0);
    auto far_from_kinks = [&](std::span<const double> q) {
      for (double v : q)
        for (double t : targets) {
          const double u = std::abs(t - v);
          if (u < 1e-3 || (kappa > 0.0 && std::abs(u - kappa) < 1e-3)) return false;
        }
      return true;
    };
    std::vector<double> q(n);
    do {
      for (double& v : q) v = uniform(rng, -3.0, 3.0);
    } while (!far_from_kinks(q));
    auto loss = [&](std::span<const double> v) {
      return pinball_loss(QuantileDistribution(std::vector<double>(v.begin(), v.end())), targets, kappa).loss;
    };
    auto grad = [&](std::span<const double> v) {
      return pinball_loss(QuantileDistribution(std::vector<double>(v.begin(), v.end())), targets, kappa).grad;
    };
    res.pinball = std::max(res.pinball, grad_check(q, loss, grad));

    // pinball through an MLP whose outputs are the quantiles of one state
    ParamSet c;
    Matrix s;
    do {
      c = random_params(random_spec(rng, n), rng);
      s = random_matrix(c.spec.layer_widths.front(), 1, rng);
    } while (near_kink(c, s, 1e-3) || !far_from_kinks(std::span<const double>(mlp_forward(c, s).data(), n)));
    auto quantile_loss = [&](const Matrix& o) {
      const auto r = pinball_loss(QuantileDistribution(std::vector<double>(o.data(), o.data() + o.size())), targets,
                                  kappa);
      return std::make_pair(r.loss, Matrix(Eigen::Map<const Matrix>(r.grad.data(), n, 1)));
    };
    res.composite = std::max(res.composite, grad_check(c, s, quantile_loss));
    ++res.cases;
  }
  return res;
}

inline nlohmann::json to_json(const GradSuiteResult& r) {
  return {{"cases", r.cases},
          {"max_rel_error", r.max_error()},
          {"mlp", r.mlp},
          {"pinball", r.pinball},
          {"composite", r.composite}};
}

}  // namespace riskrl
