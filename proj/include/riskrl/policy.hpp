#pragma once

// Actor and critic networks.
//
// The actor is an encoder MLP over the stacked exteroceptive block whose
// embedding is concatenated with the stacked shared block and beta and fed to
// a trunk MLP. The trunk output is either a Gaussian mean (with a
// state-independent learnable log-std) or categorical logits. Students swap
// the encoder and keep the trunk.

#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>
#include <vector>

#include "riskrl/envs/env.hpp"
#include "riskrl/nn.hpp"
#include "riskrl/quantile.hpp"

namespace riskrl {

enum class HeadKind { gaussian, categorical };

inline constexpr double kLogStdMin = -4.0;
inline constexpr double kLogStdMax = 1.0;

struct ActorSpec {
  int ext_dim = 0;      // per frame
  int shared_dim = 0;   // per frame
  int stack = 1;        // frames K
  int embed_dim = 16;
  std::vector<int> encoder_hidden{64};
  std::vector<int> trunk_hidden{64, 64};
  Activation activation = Activation::tanh;
  HeadKind head = HeadKind::gaussian;
  int action_dim = 2;   // gaussian: action dims; categorical: number of actions
  double init_log_std = -0.5;

  int encoder_input() const { return ext_dim * stack; }
  int trunk_rest_input() const { return shared_dim * stack + 1; }  // + beta
  int trunk_input() const { return embed_dim + trunk_rest_input(); }

  MlpSpec encoder_mlp() const {
    MlpSpec s{{encoder_input()}, activation};
    for (int w : encoder_hidden) s.layer_widths.push_back(w);
    s.layer_widths.push_back(embed_dim);
    return s;
  }
  MlpSpec trunk_mlp() const {
    MlpSpec s{{trunk_input()}, activation};
    for (int w : trunk_hidden) s.layer_widths.push_back(w);
    s.layer_widths.push_back(action_dim);
    return s;
  }
  /// Environment-facing action vector length.
  int env_action_dim() const { return head == HeadKind::categorical ? 1 : action_dim; }

  bool operator==(const ActorSpec&) const = default;
};

struct Actor {
  ActorSpec spec;
  ParamSet encoder;
  ParamSet trunk;
  ParamVector log_std;  // empty for categorical heads

  static Actor create(const ActorSpec& spec, Rng& rng) {
    Actor a;
    a.spec = spec;
    a.encoder = init_params(spec.encoder_mlp(), rng, 1.0, 1.0);
    a.trunk = init_params(spec.trunk_mlp(), rng, 1.0, 0.01);
    if (spec.head == HeadKind::gaussian) a.log_std = ParamVector::filled(spec.action_dim, spec.init_log_std);
    return a;
  }

  Vector clamped_log_std() const {
    return log_std.value.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
  }
};

struct ActorInput {
  Matrix ext;   // encoder_input x B
  Matrix rest;  // trunk_rest_input x B (shared block then beta)
};

struct ActorForward {
  Matrix out;    // action_dim x B (means or logits)
  Matrix embed;  // embed_dim x B
  MlpCache encoder_cache;
  MlpCache trunk_cache;
};

struct ActorGrads {
  LayerGrads encoder;
  LayerGrads trunk;
  Vector log_std;
};

inline ActorGrads zero_grads(const Actor& a) {
  ActorGrads g{zeros_like(a.encoder.layers), zeros_like(a.trunk.layers), Vector::Zero(a.log_std.value.size())};
  return g;
}

inline Matrix stack_rows(const Matrix& top, const Matrix& bottom) {
  Matrix m(top.rows() + bottom.rows(), top.cols());
  m << top, bottom;
  return m;
}

/// Trunk forward from given features, bypassing the encoder.
inline ActorForward actor_forward_from_features(const Actor& a, const Matrix& embed, const Matrix& rest) {
  ActorForward f;
  f.embed = embed;
  f.out = mlp_forward(a.trunk, stack_rows(embed, rest), &f.trunk_cache);
  return f;
}

inline ActorForward actor_forward(const Actor& a, const ActorInput& in) {
  if (in.ext.rows() != a.spec.encoder_input() || in.rest.rows() != a.spec.trunk_rest_input())
    throw ConfigError("actor_forward: observation dimensions do not match the actor");
  ActorForward f;
  f.embed = mlp_forward(a.encoder, in.ext, &f.encoder_cache);
  f.out = mlp_forward(a.trunk, stack_rows(f.embed, in.rest), &f.trunk_cache);
  return f;
}

/// Backprop dL/d(out) through trunk and encoder. log_std gradient is left at zero.
inline ActorGrads actor_backward(const Actor& a, const ActorForward& f, const Matrix& out_grad,
                                 bool through_encoder = true) {
  ActorGrads g;
  auto tb = mlp_backward(a.trunk, f.trunk_cache, out_grad);
  g.trunk = std::move(tb.param_grads);
  if (through_encoder) {
    const Matrix embed_grad = tb.input_grad.topRows(a.spec.embed_dim);
    g.encoder = mlp_backward(a.encoder, f.encoder_cache, embed_grad).param_grads;
  } else {
    g.encoder = zeros_like(a.encoder.layers);
  }
  g.log_std = Vector::Zero(a.log_std.value.size());
  return g;
}

// ---------------------------------------------------------------------------
// Action distributions

inline double gaussian_log_prob(const Vector& mean, const Vector& log_std, const Vector& action) {
  double lp = 0.0;
  for (int i = 0; i < mean.size(); ++i) {
    const double z = (action(i) - mean(i)) * std::exp(-log_std(i));
    lp += -0.5 * z * z - log_std(i) - 0.5 * std::log(2.0 * std::numbers::pi);
  }
  return lp;
}

inline double gaussian_entropy(const Vector& log_std) {
  return (log_std.array() + 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e)).sum();
}

inline Vector log_softmax(const Vector& logits) {
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return (logits.array() - lse).matrix();
}

inline double categorical_entropy(const Vector& logits) {
  const Vector lp = log_softmax(logits);
  return -(lp.array().exp() * lp.array()).sum();
}

/// Log-probability of `action` (env-facing encoding) under the head output `out`.
inline double log_prob(const Actor& a, const Vector& out, const Vector& action) {
  if (a.spec.head == HeadKind::gaussian) return gaussian_log_prob(out, a.clamped_log_std(), action);
  return log_softmax(out)(static_cast<int>(action(0)));
}

inline Vector sample_action(const Actor& a, const Vector& out, Rng& rng) {
  if (a.spec.head == HeadKind::gaussian) {
    const Vector std = a.clamped_log_std().array().exp();
    Vector act(out.size());
    for (int i = 0; i < out.size(); ++i) act(i) = out(i) + std(i) * standard_normal(rng);
    return act;
  }
  const Vector p = log_softmax(out).array().exp();
  const double u = uniform(rng, 0.0, 1.0);
  double c = 0.0;
  int k = 0;
  for (; k < p.size() - 1; ++k) {
    c += p(k);
    if (u < c) break;
  }
  return Vector::Constant(1, k);
}

/// Deterministic action: Gaussian mean or the most likely category (lowest index on ties).
inline Vector mean_action(const Actor& a, const Vector& out) {
  if (a.spec.head == HeadKind::gaussian) return out;
  Eigen::Index k = 0;
  out.maxCoeff(&k);
  return Vector::Constant(1, static_cast<double>(k));
}

// ---------------------------------------------------------------------------
// Observation stacking

/// Keeps the K most recent observations of one environment.
class ObsHistory {
 public:
  explicit ObsHistory(int k = 1) : k_(std::max(k, 1)) {}

  void reset(const PolicyObs& first) {
    frames_.assign(k_, first);
  }
  void push(const PolicyObs& obs) {
    if (frames_.empty()) {
      reset(obs);
      return;
    }
    frames_.pop_front();
    frames_.push_back(obs);
  }
  /// Writes the stacked observation (oldest first) into column `col` of `in`.
  void write(ActorInput& in, Eigen::Index col) const {
    Eigen::Index r = 0;
    for (const auto& f : frames_)
      for (double v : f.exteroceptive) in.ext(r++, col) = v;
    r = 0;
    for (const auto& f : frames_)
      for (double v : f.shared) in.rest(r++, col) = v;
    in.rest(r, col) = frames_.back().beta;
  }
  void set_beta(double beta) {
    for (auto& f : frames_) f.beta = beta;
  }
  const PolicyObs& latest() const { return frames_.back(); }

 private:
  int k_;
  std::deque<PolicyObs> frames_;
};

inline ActorInput make_actor_input(const ActorSpec& spec, Eigen::Index batch) {
  return {Matrix::Zero(spec.encoder_input(), batch), Matrix::Zero(spec.trunk_rest_input(), batch)};
}

inline ActorInput single_input(const ActorSpec& spec, const ObsHistory& h) {
  ActorInput in = make_actor_input(spec, 1);
  h.write(in, 0);
  return in;
}

// ---------------------------------------------------------------------------
// Critic

struct CriticSpec {
  int input_dim = 0;
  std::vector<int> hidden{64, 64};
  int num_quantiles = 32;
  Activation activation = Activation::tanh;

  MlpSpec mlp() const {
    MlpSpec s{{input_dim}, activation};
    for (int w : hidden) s.layer_widths.push_back(w);
    s.layer_widths.push_back(num_quantiles);
    return s;
  }
  bool operator==(const CriticSpec&) const = default;
};

struct Critic {
  CriticSpec spec;
  ParamSet net;

  static Critic create(const CriticSpec& spec, Rng& rng) {
    if (spec.num_quantiles < 1 || spec.num_quantiles > 200)
      throw ConfigError("critic quantile count must lie in [1, 200]");
    return {spec, init_params(spec.mlp(), rng, 1.0, 1.0)};
  }

  QuantileDistribution distribution(const std::vector<double>& obs) const {
    const Vector out = mlp_forward(net, Eigen::Map<const Vector>(obs.data(), static_cast<Eigen::Index>(obs.size())).eval());
    return QuantileDistribution(std::vector<double>(out.data(), out.data() + out.size()));
  }
};

}  // namespace riskrl
