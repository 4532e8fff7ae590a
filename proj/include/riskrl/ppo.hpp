#pragma once

// Clipped-surrogate policy optimization on risk-adjusted advantages with a
// quantile critic, and the teacher training loop.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "riskrl/rollout.hpp"

namespace riskrl {

struct ScheduleEntry {
  int iteration = 0;
  std::map<std::string, double> weights;

  bool operator==(const ScheduleEntry&) const = default;
};

struct TrainerConfig {
  double lr = 1e-3;
  double gamma = 0.99;
  double lambda = 0.95;
  double target_lambda = 0.95;  // critic regression targets
  double clip = 0.2;
  double entropy_coef = 1e-3;  // bonus weight; negative values penalize entropy
  double value_coef = 0.9;
  double max_grad_norm = 1.0;
  double target_kl = 0.01;
  bool adaptive_lr = true;
  int epochs = 5;
  int minibatch = 1024;
  int num_envs = 64;
  int steps = 96;
  int iterations = 300;
  int num_quantiles = 32;
  double kappa = 0.0;
  int stack = 3;
  int embed_dim = 16;
  std::vector<int> encoder_hidden{64};
  std::vector<int> actor_hidden{64, 64};
  std::vector<int> critic_hidden{64, 64};
  Activation activation = Activation::tanh;
  double init_log_std = -0.5;
  std::vector<ScheduleEntry> reward_schedule;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("trainer.lr must be > 0");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("trainer.gamma must lie in (0, 1]");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("trainer.lambda must lie in [0, 1]");
    if (!(target_lambda >= 0.0 && target_lambda <= 1.0)) throw ConfigError("trainer.target_lambda must lie in [0, 1]");
    if (!(clip > 0.0 && clip < 1.0)) throw ConfigError("trainer.clip must lie in (0, 1)");
    if (value_coef < 0.0) throw ConfigError("trainer.value_coef must be >= 0");
    if (!(max_grad_norm > 0.0)) throw ConfigError("trainer.max_grad_norm must be > 0");
    if (!(target_kl > 0.0)) throw ConfigError("trainer.target_kl must be > 0");
    if (epochs < 1 || minibatch < 1 || num_envs < 1 || steps < 1 || iterations < 0)
      throw ConfigError("trainer epochs/minibatch/num_envs/steps must be >= 1");
    if (num_quantiles < 1 || num_quantiles > 200) throw ConfigError("trainer.num_quantiles must lie in [1, 200]");
    if (kappa < 0.0) throw ConfigError("trainer.kappa must be >= 0");
    if (stack < 1) throw ConfigError("trainer.stack must be >= 1");
  }
};

inline constexpr double kLrMin = 1e-5;
inline constexpr double kLrMax = 1e-2;

/// Adaptive learning-rate rule applied after each epoch.
inline double adapt_lr(double lr, double kl, double target_kl) {
  if (kl > 2.0 * target_kl) lr /= 1.5;
  else if (kl < 0.5 * target_kl) lr *= 1.5;
  return std::clamp(lr, kLrMin, kLrMax);
}

inline ActorSpec teacher_actor_spec(const ObsDims& d, const TrainerConfig& c) {
  ActorSpec s;
  s.ext_dim = d.teacher_ext;
  s.shared_dim = d.shared;
  s.stack = c.stack;
  s.embed_dim = c.embed_dim;
  s.encoder_hidden = c.encoder_hidden;
  s.trunk_hidden = c.actor_hidden;
  s.activation = c.activation;
  s.head = d.discrete_actions > 0 ? HeadKind::categorical : HeadKind::gaussian;
  s.action_dim = d.discrete_actions > 0 ? d.discrete_actions : d.action;
  s.init_log_std = c.init_log_std;
  return s;
}

inline CriticSpec critic_spec(const ObsDims& d, const TrainerConfig& c) {
  return CriticSpec{d.critic, c.critic_hidden, c.num_quantiles, c.activation};
}

// ---------------------------------------------------------------------------
// Per-sample policy terms

/// KL(old || new) between the action distributions of two head outputs.
inline double policy_kl(const Actor& a, const Vector& old_out, const Vector& old_log_std, const Vector& new_out) {
  if (a.spec.head == HeadKind::gaussian) {
    const Vector nls = a.clamped_log_std();
    double kl = 0.0;
    for (int i = 0; i < old_out.size(); ++i) {
      const double vo = std::exp(2.0 * old_log_std(i));
      const double vn = std::exp(2.0 * nls(i));
      const double d = old_out(i) - new_out(i);
      kl += nls(i) - old_log_std(i) + (vo + d * d) / (2.0 * vn) - 0.5;
    }
    return kl;
  }
  const Vector lo = log_softmax(old_out);
  const Vector ln = log_softmax(new_out);
  return (lo.array().exp() * (lo - ln).array()).sum();
}

struct Surrogate {
  double value = 0.0;   // min(r A, clip(r) A)
  double dlogp = 0.0;   // d value / d log pi_new
  bool clipped = false;
};

inline Surrogate clipped_surrogate(double logp_new, double logp_old, double adv, double clip) {
  const double r = std::exp(logp_new - logp_old);
  const double rc = std::clamp(r, 1.0 - clip, 1.0 + clip);
  Surrogate s;
  const double un = r * adv;
  const double cl = rc * adv;
  if (un <= cl) {
    s.value = un;
    s.dlogp = r * adv;
  } else {
    s.value = cl;
    s.dlogp = 0.0;
  }
  s.clipped = rc != r;
  return s;
}

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double kl = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
};

struct PpoGrads {
  ActorGrads actor;
  LayerGrads critic;
};

struct MinibatchResult {
  PpoGrads grads;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clipped = 0.0;
};

inline ActorInput gather(const ActorInput& in, const std::vector<std::size_t>& idx) {
  ActorInput out{Matrix(in.ext.rows(), idx.size()), Matrix(in.rest.rows(), idx.size())};
  for (std::size_t j = 0; j < idx.size(); ++j) {
    out.ext.col(j) = in.ext.col(idx[j]);
    out.rest.col(j) = in.rest.col(idx[j]);
  }
  return out;
}

inline Matrix gather(const Matrix& m, const std::vector<std::size_t>& idx) {
  Matrix out(m.rows(), idx.size());
  for (std::size_t j = 0; j < idx.size(); ++j) out.col(j) = m.col(idx[j]);
  return out;
}

/// Loss = -mean(surrogate) - entropy_coef * mean(entropy) + value_coef * mean(pinball).
/// Returns gradients of that loss.
inline MinibatchResult ppo_minibatch(const Actor& actor, const Critic& critic, const RolloutBatch& b,
                                     const std::vector<double>& adv, const std::vector<double>& targets,
                                     const std::vector<std::size_t>& idx, const TrainerConfig& cfg) {
  const double m = static_cast<double>(idx.size());
  MinibatchResult r;
  const ActorForward f = actor_forward(actor, gather(b.actor_obs, idx));
  Matrix out_grad = Matrix::Zero(f.out.rows(), f.out.cols());
  Vector log_std_grad = Vector::Zero(actor.log_std.value.size());
  const bool gaussian = actor.spec.head == HeadKind::gaussian;
  const Vector ls = gaussian ? actor.clamped_log_std() : Vector();
  for (std::size_t j = 0; j < idx.size(); ++j) {
    const std::size_t i = idx[j];
    const Vector head = f.out.col(j);
    const Vector action = b.actions.col(i);
    const double lp = log_prob(actor, head, action);
    const Surrogate s = clipped_surrogate(lp, b.log_probs[i], adv[i], cfg.clip);
    r.policy_loss -= s.value / m;
    if (s.clipped) r.clipped += 1.0;
    const double g = -s.dlogp / m;  // d loss / d logp
    if (gaussian) {
      for (int d = 0; d < head.size(); ++d) {
        const double inv_var = std::exp(-2.0 * ls(d));
        const double diff = action(d) - head(d);
        out_grad(d, j) += g * diff * inv_var;
        log_std_grad(d) += g * (diff * diff * inv_var - 1.0);
      }
    } else {
      const Vector lsm = log_softmax(head);
      const Vector p = lsm.array().exp();
      const int k = static_cast<int>(action(0));
      for (int d = 0; d < head.size(); ++d) out_grad(d, j) += g * ((d == k ? 1.0 : 0.0) - p(d));
      const double h = -(p.array() * lsm.array()).sum();
      r.entropy += h / m;
      for (int d = 0; d < head.size(); ++d) out_grad(d, j) += cfg.entropy_coef * p(d) * (lsm(d) + h) / m;
    }
  }
  if (gaussian) {
    r.entropy = gaussian_entropy(ls);
    log_std_grad.array() -= cfg.entropy_coef;
    for (int d = 0; d < ls.size(); ++d)
      if (actor.log_std.value(d) < kLogStdMin || actor.log_std.value(d) > kLogStdMax) log_std_grad(d) = 0.0;
  }
  r.grads.actor = actor_backward(actor, f, out_grad, true);
  r.grads.actor.log_std = log_std_grad;

  MlpCache cache;
  const Matrix z = mlp_forward(critic.net, gather(b.critic_obs, idx), &cache);
  Matrix z_grad(z.rows(), z.cols());
  for (std::size_t j = 0; j < idx.size(); ++j) {
    QuantileDistribution q(std::vector<double>(z.col(j).data(), z.col(j).data() + z.rows()));
    const PinballResult p = pinball_loss(q, targets[idx[j]], cfg.kappa);
    r.value_loss += p.loss / m;
    for (int k = 0; k < z.rows(); ++k) z_grad(k, j) = cfg.value_coef * p.grad[k] / m;
  }
  r.grads.critic = mlp_backward(critic.net, cache, z_grad).param_grads;
  return r;
}

inline double global_norm(const PpoGrads& g) {
  return std::sqrt(squared_norm(g.actor.encoder) + squared_norm(g.actor.trunk) + g.actor.log_std.squaredNorm() +
                   squared_norm(g.critic));
}

inline void clip_grads(PpoGrads& g, double max_norm, double norm) {
  if (norm <= max_norm || norm == 0.0) return;
  const double f = max_norm / norm;
  scale(g.actor.encoder, f);
  scale(g.actor.trunk, f);
  g.actor.log_std *= f;
  scale(g.critic, f);
}

inline void apply_grads(Actor& actor, Critic& critic, const PpoGrads& g, double lr) {
  if (!all_finite(g.actor.encoder) || !all_finite(g.actor.trunk) || !all_finite(g.critic) ||
      !g.actor.log_std.allFinite())
    throw NumericError("ppo_update: non-finite gradient");
  adam_step(actor.encoder, g.actor.encoder, lr);
  adam_step(actor.trunk, g.actor.trunk, lr);
  if (actor.spec.head == HeadKind::gaussian) adam_step(actor.log_std, g.actor.log_std, lr);
  adam_step(critic.net, g.critic, lr);
}

/// Mean KL(old || new) over the whole batch under the current actor.
inline double batch_kl(const Actor& actor, const RolloutBatch& b) {
  const Matrix out = actor_forward(actor, b.actor_obs).out;
  double kl = 0.0;
  for (Eigen::Index i = 0; i < out.cols(); ++i) kl += policy_kl(actor, b.old_out.col(i), b.old_log_std, out.col(i));
  return kl / static_cast<double>(out.cols());
}

/// Epochs of shuffled minibatch updates. `lr` is adapted in place after each epoch.
inline UpdateStats ppo_update(Actor& actor, Critic& critic, const RolloutBatch& b, const std::vector<double>& adv,
                              const std::vector<double>& targets, const TrainerConfig& cfg, double& lr, Rng& rng) {
  const std::size_t n = b.size();
  if (adv.size() != n || targets.size() != n) throw ContractViolation("ppo_update: advantages/targets misaligned");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t mb = std::min<std::size_t>(static_cast<std::size_t>(cfg.minibatch), n);
  UpdateStats st;
  double updates = 0.0, clipped = 0.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start + mb <= n || start == 0; start += mb) {
      const std::size_t end = std::min(start + mb, n);
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(end));
      MinibatchResult r = ppo_minibatch(actor, critic, b, adv, targets, idx, cfg);
      if (!std::isfinite(r.policy_loss) || !std::isfinite(r.value_loss))
        throw NumericError("ppo_update: non-finite loss");
      const double norm = global_norm(r.grads);
      clip_grads(r.grads, cfg.max_grad_norm, norm);
      apply_grads(actor, critic, r.grads, lr);
      st.policy_loss += r.policy_loss;
      st.value_loss += r.value_loss;
      st.entropy += r.entropy;
      st.grad_norm += norm;
      clipped += r.clipped;
      updates += 1.0;
      if (end == n) break;
    }
    st.kl = batch_kl(actor, b);
    if (cfg.adaptive_lr) lr = adapt_lr(lr, st.kl, cfg.target_kl);
  }
  st.policy_loss /= updates;
  st.value_loss /= updates;
  st.entropy /= updates;
  st.grad_norm /= updates;
  st.clip_fraction = clipped / (static_cast<double>(n) * cfg.epochs);
  st.lr = lr;
  return st;
}

// ---------------------------------------------------------------------------
// Training loop

struct IterationStats {
  int iteration = 0;
  UpdateStats update;
  int episodes = 0;
  double mean_return = 0.0;
  double success_rate = 0.0;
  double collision_rate = 0.0;
  double mean_level = 0.0;
  std::vector<int> level_histogram;
  std::vector<std::string> schedule_applied;
};

inline json to_json(const IterationStats& s) {
  json j = {{"format_version", 1},
            {"iteration", s.iteration},
            {"episodes", s.episodes},
            {"mean_return", s.mean_return},
            {"success_rate", s.success_rate},
            {"collision_rate", s.collision_rate},
            {"mean_level", s.mean_level},
            {"level_histogram", s.level_histogram},
            {"policy_loss", s.update.policy_loss},
            {"value_loss", s.update.value_loss},
            {"entropy", s.update.entropy},
            {"kl", s.update.kl},
            {"clip_fraction", s.update.clip_fraction},
            {"grad_norm", s.update.grad_norm},
            {"lr", s.update.lr}};
  if (!s.schedule_applied.empty()) j["schedule_applied"] = s.schedule_applied;
  return j;
}

/// Owns the teacher actor, critic, environment pool and optimizer state.
class TeacherTrainer {
 public:
  TeacherTrainer(TrainerConfig cfg, EnvConfig env_cfg, RiskMetric metric)
      : cfg_(std::move(cfg)), env_cfg_(std::move(env_cfg)), metric_(metric) {
    cfg_.validate();
    env_cfg_.validate();
    const ObsDims d = env_dims(env_cfg_);
    Rng init = make_rng(cfg_.seed, "init");
    actor_ = Actor::create(teacher_actor_spec(d, cfg_), init);
    critic_ = Critic::create(critic_spec(d, cfg_), init);
    EnvConfig pool_cfg = env_cfg_;
    pool_cfg.seed = derive_seed(cfg_.seed, "env");
    pool_ = std::make_unique<EnvPool>(pool_cfg, cfg_.num_envs, cfg_.stack, ObsMode::teacher,
                                      default_beta_sampler(metric_), cfg_.seed);
    lr_ = cfg_.lr;
  }

  const TrainerConfig& config() const { return cfg_; }
  const EnvConfig& env_config() const { return env_cfg_; }
  RiskMetric metric() const { return metric_; }
  Actor& actor() { return actor_; }
  Critic& critic() { return critic_; }
  const Actor& actor() const { return actor_; }
  const Critic& critic() const { return critic_; }
  EnvPool& pool() { return *pool_; }
  int iteration() const { return iteration_; }
  double lr() const { return lr_; }

  /// Applies schedule entries whose iteration equals the current one.
  std::vector<std::string> apply_schedule() {
    std::vector<std::string> applied;
    for (const auto& e : cfg_.reward_schedule) {
      if (e.iteration != iteration_) continue;
      for (const auto& [term, w] : e.weights) {
        pool_->set_reward_weight(term, w);
        env_cfg_.reward_weights[term] = w;
        applied.push_back(term);
      }
    }
    return applied;
  }

  IterationStats step() {
    IterationStats s;
    s.iteration = iteration_;
    s.schedule_applied = apply_schedule();
    const Actor actor_backup = actor_;
    const Critic critic_backup = critic_;
    try {
      const RolloutBatch b = collect(actor_, critic_, *pool_, cfg_.steps);
      const AdvantageResult adv = risk_advantages(b, metric_, cfg_.gamma, cfg_.lambda);
      const std::vector<double> targets = lambda_return_targets(b, cfg_.gamma, cfg_.target_lambda);
      Rng rng = make_rng(cfg_.seed, "minibatch", static_cast<std::uint64_t>(iteration_));
      s.update = ppo_update(actor_, critic_, b, adv.normalized, targets, cfg_, lr_, rng);
      summarize(b, s);
    } catch (const NumericError&) {
      actor_ = actor_backup;
      critic_ = critic_backup;
      throw;
    }
    ++iteration_;
    return s;
  }

 private:
  void summarize(const RolloutBatch& b, IterationStats& s) const {
    s.episodes = static_cast<int>(b.finished.size());
    double ret = 0.0, succ = 0.0, coll = 0.0;
    for (const auto& e : b.finished) {
      ret += e.ret;
      succ += e.success ? 1.0 : 0.0;
      coll += (e.cause == TerminationCause::collision || e.cause == TerminationCause::object_lost) ? 1.0 : 0.0;
    }
    if (s.episodes > 0) {
      s.mean_return = ret / s.episodes;
      s.success_rate = succ / s.episodes;
      s.collision_rate = coll / s.episodes;
    }
    s.level_histogram.assign(pool_->env(0).num_levels(), 0);
    double lvl = 0.0;
    for (int e = 0; e < pool_->size(); ++e) {
      const int l = pool_->env(e).tracked_level();
      s.level_histogram[l] += 1;
      lvl += l;
    }
    s.mean_level = lvl / pool_->size();
  }

  TrainerConfig cfg_;
  EnvConfig env_cfg_;
  RiskMetric metric_;
  Actor actor_;
  Critic critic_;
  std::unique_ptr<EnvPool> pool_;
  double lr_ = 1e-3;
  int iteration_ = 0;
};

}  // namespace riskrl
