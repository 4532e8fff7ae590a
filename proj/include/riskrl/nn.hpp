#pragma once

// Dense multilayer perceptrons with hand-written backpropagation and Adam.
//
// Batches are column-major: an input batch is a (features x batch) matrix and
// every layer maps it to a (width x batch) matrix. A single sample is a batch
// of one column.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "riskrl/errors.hpp"
#include "riskrl/rng.hpp"

namespace riskrl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { tanh, relu };

inline std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  throw ConfigError("unknown activation '" + s + "'");
}

struct MlpSpec {
  std::vector<int> layer_widths;
  Activation activation = Activation::tanh;

  void validate() const {
    if (layer_widths.size() < 2) throw ConfigError("MlpSpec needs at least 2 layer widths");
    for (int w : layer_widths)
      if (w < 1) throw ConfigError("MlpSpec widths must be >= 1");
  }
  int input_dim() const { return layer_widths.front(); }
  int output_dim() const { return layer_widths.back(); }
  std::size_t num_layers() const { return layer_widths.size() - 1; }

  bool operator==(const MlpSpec&) const = default;
};

struct Layer {
  Matrix weight;  // out x in
  Vector bias;    // out
};

using LayerGrads = std::vector<Layer>;

struct ParamSet {
  MlpSpec spec;
  std::vector<Layer> layers;
  std::vector<Layer> adam_m;
  std::vector<Layer> adam_v;
  std::int64_t step_count = 0;
  // Bumped on every in-place update; caches remember the revision they saw.
  std::uint64_t revision = 0;

  std::size_t num_params() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }
};

struct MlpCache {
  std::uint64_t revision = 0;
  std::vector<Matrix> inputs;  // input to layer i (post-activation of layer i-1)
  std::vector<Matrix> pre;     // pre-activation of layer i
};

inline LayerGrads zeros_like(const std::vector<Layer>& layers) {
  LayerGrads g(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    g[i].weight = Matrix::Zero(layers[i].weight.rows(), layers[i].weight.cols());
    g[i].bias = Vector::Zero(layers[i].bias.size());
  }
  return g;
}

/// Scaled-uniform init: U(-a, a) with a = gain * sqrt(3 / fan_in), zero biases.
/// `output_gain` applies to the last layer only.
inline ParamSet init_params(const MlpSpec& spec, Rng& rng, double hidden_gain = 1.0,
                            double output_gain = 1.0) {
  spec.validate();
  ParamSet p;
  p.spec = spec;
  for (std::size_t i = 0; i < spec.num_layers(); ++i) {
    const int in = spec.layer_widths[i];
    const int out = spec.layer_widths[i + 1];
    const double gain = (i + 1 == spec.num_layers()) ? output_gain : hidden_gain;
    const double a = gain * std::sqrt(3.0 / in);
    Layer l{Matrix(out, in), Vector::Zero(out)};
    for (int c = 0; c < in; ++c)
      for (int r = 0; r < out; ++r) l.weight(r, c) = uniform(rng, -a, a);
    p.layers.push_back(std::move(l));
  }
  p.adam_m = zeros_like(p.layers);
  p.adam_v = zeros_like(p.layers);
  return p;
}

namespace detail {

inline void activate(Activation act, const Matrix& z, Matrix& out) {
  // tanh(x) = 1 - 2 / (exp(2x) + 1); Eigen vectorizes exp but not tanh for doubles.
  if (act == Activation::tanh)
    out = (1.0 - 2.0 / ((2.0 * z.array()).exp() + 1.0)).matrix();
  else
    out = z.array().max(0.0).matrix();
}

// Multiplies `grad` in place by the activation derivative, given the
// pre-activation `z` and the activation output `a`.
inline void activation_backward(Activation act, const Matrix& z, const Matrix& a, Matrix& grad) {
  if (act == Activation::tanh) {
    grad.array() *= 1.0 - a.array().square();
  } else {
    grad.array() *= (z.array() > 0.0).cast<double>();
  }
}

}  // namespace detail

inline Matrix mlp_forward(const ParamSet& params, const Matrix& input, MlpCache* cache = nullptr) {
  if (input.rows() != params.spec.input_dim())
    throw ConfigError("mlp_forward: input has " + std::to_string(input.rows()) + " rows, expected " +
                      std::to_string(params.spec.input_dim()));
  const std::size_t n = params.layers.size();
  if (cache) {
    cache->revision = params.revision;
    cache->inputs.resize(n);
    cache->pre.resize(n);
  }
  Matrix a = input;
  for (std::size_t i = 0; i < n; ++i) {
    const Layer& l = params.layers[i];
    Matrix z = l.weight * a;
    z.colwise() += l.bias;
    if (cache) {
      cache->inputs[i] = std::move(a);
      cache->pre[i] = z;
    }
    if (i + 1 < n)
      detail::activate(params.spec.activation, z, a);
    else
      a = std::move(z);
  }
  return a;
}

inline Vector mlp_forward(const ParamSet& params, const Vector& input) {
  return mlp_forward(params, Matrix(input), nullptr).col(0);
}

struct BackwardResult {
  LayerGrads param_grads;
  Matrix input_grad;
};

/// Gradients of a scalar loss L given dL/d(output) for every column of the batch.
/// Gradients are summed over the batch.
inline BackwardResult mlp_backward(const ParamSet& params, const MlpCache& cache, const Matrix& output_grad) {
  const std::size_t n = params.layers.size();
  if (cache.revision != params.revision || cache.inputs.size() != n)
    throw ContractViolation("mlp_backward: cache was not produced by these parameters");
  if (output_grad.rows() != params.spec.output_dim() || output_grad.cols() != cache.inputs[0].cols())
    throw ContractViolation("mlp_backward: output_grad shape does not match the cached batch");
  BackwardResult r;
  r.param_grads.resize(n);
  Matrix g = output_grad;
  for (std::size_t k = n; k-- > 0;) {
    if (k + 1 < n) detail::activation_backward(params.spec.activation, cache.pre[k], cache.inputs[k + 1], g);
    r.param_grads[k].weight = g * cache.inputs[k].transpose();
    r.param_grads[k].bias = g.rowwise().sum();
    g = params.layers[k].weight.transpose() * g;
  }
  r.input_grad = std::move(g);
  return r;
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

namespace detail {

template <class P, class G>
void adam_update(P&& p, P&& m, P&& v, const G& g, double lr, std::int64_t t, const AdamConfig& cfg) {
  m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
  v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.eps);
}

}  // namespace detail

inline bool all_finite(const LayerGrads& grads) {
  for (const auto& g : grads)
    if (!g.weight.allFinite() || !g.bias.allFinite()) return false;
  return true;
}

/// Bias-corrected Adam. Rejects (throws, leaves params untouched) on non-finite gradients.
inline void adam_step(ParamSet& params, const LayerGrads& grads, double lr, const AdamConfig& cfg = {}) {
  if (grads.size() != params.layers.size()) throw ConfigError("adam_step: gradient layer count mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (grads[i].weight.rows() != params.layers[i].weight.rows() ||
        grads[i].weight.cols() != params.layers[i].weight.cols() ||
        grads[i].bias.size() != params.layers[i].bias.size())
      throw ConfigError("adam_step: gradient shape mismatch at layer " + std::to_string(i));
  if (!all_finite(grads)) throw NumericError("adam_step: non-finite gradient, update rejected");
  const std::int64_t t = ++params.step_count;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    detail::adam_update(params.layers[i].weight, params.adam_m[i].weight, params.adam_v[i].weight,
                        grads[i].weight, lr, t, cfg);
    detail::adam_update(params.layers[i].bias, params.adam_m[i].bias, params.adam_v[i].bias, grads[i].bias,
                        lr, t, cfg);
  }
  ++params.revision;
}

/// A free parameter vector with its own Adam moments (e.g. a Gaussian log-std).
struct ParamVector {
  Vector value;
  Vector adam_m;
  Vector adam_v;
  std::int64_t step_count = 0;

  static ParamVector filled(int n, double v) {
    return {Vector::Constant(n, v), Vector::Zero(n), Vector::Zero(n), 0};
  }
};

inline void adam_step(ParamVector& p, const Vector& grad, double lr, const AdamConfig& cfg = {}) {
  if (grad.size() != p.value.size()) throw ConfigError("adam_step: gradient shape mismatch");
  if (!grad.allFinite()) throw NumericError("adam_step: non-finite gradient, update rejected");
  const std::int64_t t = ++p.step_count;
  detail::adam_update(p.value, p.adam_m, p.adam_v, grad, lr, t, cfg);
}

inline double squared_norm(const LayerGrads& grads) {
  double s = 0.0;
  for (const auto& g : grads) s += g.weight.squaredNorm() + g.bias.squaredNorm();
  return s;
}

inline void scale(LayerGrads& grads, double factor) {
  for (auto& g : grads) {
    g.weight *= factor;
    g.bias *= factor;
  }
}

inline void accumulate(LayerGrads& into, const LayerGrads& from) {
  for (std::size_t i = 0; i < into.size(); ++i) {
    into[i].weight += from[i].weight;
    into[i].bias += from[i].bias;
  }
}

/// Row-major flattening: for each layer, weight rows then bias.
inline std::vector<double> flatten(const std::vector<Layer>& layers) {
  std::vector<double> out;
  for (const auto& l : layers) {
    for (int r = 0; r < l.weight.rows(); ++r)
      for (int c = 0; c < l.weight.cols(); ++c) out.push_back(l.weight(r, c));
    for (int r = 0; r < l.bias.size(); ++r) out.push_back(l.bias(r));
  }
  return out;
}

inline void unflatten(std::span<const double> flat, std::vector<Layer>& layers) {
  std::size_t k = 0;
  for (auto& l : layers) {
    for (int r = 0; r < l.weight.rows(); ++r)
      for (int c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = flat[k++];
    for (int r = 0; r < l.bias.size(); ++r) l.bias(r) = flat[k++];
  }
  if (k != flat.size()) throw ConfigError("unflatten: size mismatch");
}

/// Max relative error |a - n| / max(|a|, |n|, 1e-6) between an analytic gradient
/// and central finite differences of `loss` around `x`.
inline double grad_check(std::vector<double> x, const std::function<double(std::span<const double>)>& loss,
                         const std::function<std::vector<double>(std::span<const double>)>& gradient,
                         double eps = 1e-5) {
  const std::vector<double> analytic = gradient(x);
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + eps;
    const double up = loss(x);
    x[i] = saved - eps;
    const double down = loss(x);
    x[i] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

/// Gradient check of an MLP under a loss defined on its outputs.
/// `loss_fn` maps the output batch to (loss, dloss/doutput).
inline double grad_check(const ParamSet& params, const Matrix& input,
                         const std::function<std::pair<double, Matrix>(const Matrix&)>& loss_fn,
                         double eps = 1e-5) {
  ParamSet work = params;
  auto loss = [&](std::span<const double> flat) {
    unflatten(flat, work.layers);
    return loss_fn(mlp_forward(work, input)).first;
  };
  auto grad = [&](std::span<const double> flat) {
    unflatten(flat, work.layers);
    ++work.revision;
    MlpCache cache;
    const Matrix out = mlp_forward(work, input, &cache);
    return flatten(mlp_backward(work, cache, loss_fn(out).second).param_grads);
  };
  return grad_check(flatten(params.layers), loss, grad, eps);
}

}  // namespace riskrl
