#pragma once

// Trajectory collection under the beta-conditioned policy, risk-adjusted
// advantages and quantile-regression targets.

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <vector>

#include "riskrl/envs/factory.hpp"
#include "riskrl/policy.hpp"
#include "riskrl/risk.hpp"

namespace riskrl {

/// Per-episode beta draw: wang U[-1, 1], cvar U[0.01, 1], neutral 0.
inline double sample_beta(RiskMetric metric, Rng& rng) {
  switch (metric) {
    case RiskMetric::wang: return uniform(rng, -1.0, 1.0);
    case RiskMetric::cvar: return uniform(rng, 0.01, 1.0);
    case RiskMetric::neutral: return 0.0;
  }
  return 0.0;
}

using BetaSampler = std::function<double(Rng&)>;

inline BetaSampler default_beta_sampler(RiskMetric metric) {
  return [metric](Rng& rng) { return sample_beta(metric, rng); };
}

enum class ObsMode { teacher, student };

struct EpisodeRecord {
  double ret = 0.0;
  int length = 0;
  int level = 0;
  double beta = 0.0;
  TerminationCause cause = TerminationCause::none;
  bool success = false;
  RewardTerms terms;
};

/// Transitions are stored column-wise at index t * num_envs + e.
struct RolloutBatch {
  int num_envs = 0;
  int steps = 0;
  ActorInput actor_obs;
  Matrix critic_obs;       // critic_dim x n
  Matrix old_out;          // actor head output at collection time
  Vector old_log_std;
  Matrix actions;          // env action dim x n
  std::vector<double> log_probs;
  std::vector<double> beta;
  std::vector<double> rewards;
  std::vector<std::uint8_t> dones;
  std::vector<TerminationCause> causes;
  Matrix values;           // N x n: critic quantiles of s_t
  Matrix bootstrap_values; // N x num_envs: quantiles of the state after the last step
  std::vector<double> bootstrap_beta;
  std::vector<EpisodeRecord> finished;

  std::size_t size() const { return static_cast<std::size_t>(num_envs) * steps; }
  std::size_t index(int t, int e) const { return static_cast<std::size_t>(t) * num_envs + e; }

  QuantileDistribution value_at(std::size_t i) const {
    return QuantileDistribution(std::vector<double>(values.col(i).data(), values.col(i).data() + values.rows()));
  }
};

/// A pool of environments with persistent episodes, histories and betas.
/// Episodes continue across collect() calls; finished ones auto-reset with a
/// fresh beta and a curriculum update.
class EnvPool {
 public:
  EnvPool(const EnvConfig& cfg, int num_envs, int stack, ObsMode mode, BetaSampler sampler,
          std::uint64_t master_seed)
      : mode_(mode), sampler_(std::move(sampler)) {
    for (int e = 0; e < num_envs; ++e) {
      envs_.push_back(make_env(cfg, e));
      beta_rngs_.push_back(make_rng(master_seed, "beta", e));
      policy_rngs_.push_back(make_rng(master_seed, "policy", e));
      histories_.emplace_back(stack);
      betas_.push_back(0.0);
      running_.emplace_back();
    }
    for (int e = 0; e < num_envs; ++e) begin_episode(e);
  }

  int size() const { return static_cast<int>(envs_.size()); }
  EnvInstance& env(int e) { return *envs_[e]; }
  const EnvInstance& env(int e) const { return *envs_[e]; }
  ObsHistory& history(int e) { return histories_[e]; }
  double beta(int e) const { return betas_[e]; }
  Rng& policy_rng(int e) { return policy_rngs_[e]; }
  ObsMode mode() const { return mode_; }

  void set_reward_weight(const std::string& term, double w) {
    for (auto& env : envs_) env->set_reward_weight(term, w);
  }
  void pin_levels(int level) {
    for (auto& env : envs_) {
      env->set_tracked_level(level);
      env->pin_level(true);
    }
  }
  /// Discards running episodes and starts new ones.
  void restart() {
    for (int e = 0; e < size(); ++e) begin_episode(e);
  }

  PolicyObs observe(int e) {
    return mode_ == ObsMode::teacher ? envs_[e]->observe_teacher(betas_[e]) : envs_[e]->observe_student(betas_[e]);
  }

  /// Steps env e; returns the step result and, when the episode ended, its record.
  StepResult step(int e, std::span<const double> action, EpisodeRecord* finished_out = nullptr) {
    const StepResult r = envs_[e]->step(action);
    auto& run = running_[e];
    run.ret += r.reward_total;
    run.length += 1;
    for (const auto& [k, v] : r.reward_terms) run.terms[k] += v;
    if (r.success) run.success = true;
    if (r.terminated) {
      run.cause = r.cause;
      if (finished_out) *finished_out = run;
      envs_[e]->record_outcome(envs_[e]->episode_outcome());
      envs_[e]->reset();
      begin_episode_after_reset(e);
    } else {
      histories_[e].push(observe(e));
    }
    return r;
  }

 private:
  void begin_episode(int e) {
    envs_[e]->reset();
    begin_episode_after_reset(e);
  }
  void begin_episode_after_reset(int e) {
    betas_[e] = sampler_(beta_rngs_[e]);
    running_[e] = EpisodeRecord{};
    running_[e].beta = betas_[e];
    running_[e].level = envs_[e]->episode_level();
    histories_[e].reset(observe(e));
  }

  ObsMode mode_;
  BetaSampler sampler_;
  std::vector<std::unique_ptr<EnvInstance>> envs_;
  std::vector<Rng> beta_rngs_;
  std::vector<Rng> policy_rngs_;
  std::vector<ObsHistory> histories_;
  std::vector<double> betas_;
  std::vector<EpisodeRecord> running_;
};

inline Matrix critic_batch(EnvPool& pool) {
  const int e0 = 0;
  const auto first = pool.env(e0).observe_critic();
  Matrix m(static_cast<Eigen::Index>(first.size()), pool.size());
  for (int e = 0; e < pool.size(); ++e) {
    const auto v = pool.env(e).observe_critic();
    for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<Eigen::Index>(i), e) = v[i];
  }
  return m;
}

inline ActorInput actor_batch(const ActorSpec& spec, EnvPool& pool) {
  ActorInput in = make_actor_input(spec, pool.size());
  for (int e = 0; e < pool.size(); ++e) pool.history(e).write(in, e);
  return in;
}

/// Steps every env `steps` times with actions sampled from the actor.
inline RolloutBatch collect(const Actor& actor, const Critic& critic, EnvPool& pool, int steps) {
  const int E = pool.size();
  const int n = E * steps;
  const int act_dim = actor.spec.env_action_dim();
  const int nq = critic.spec.num_quantiles;
  RolloutBatch b;
  b.num_envs = E;
  b.steps = steps;
  b.actor_obs = make_actor_input(actor.spec, n);
  b.critic_obs = Matrix(critic.spec.input_dim, n);
  b.old_out = Matrix(actor.spec.action_dim, n);
  b.old_log_std = actor.spec.head == HeadKind::gaussian ? actor.clamped_log_std() : Vector();
  b.actions = Matrix(act_dim, n);
  b.log_probs.resize(n);
  b.beta.resize(n);
  b.rewards.resize(n);
  b.dones.resize(n);
  b.causes.resize(n);
  b.values = Matrix(nq, n);

  for (int t = 0; t < steps; ++t) {
    const ActorInput in = actor_batch(actor.spec, pool);
    const Matrix cobs = critic_batch(pool);
    const Matrix out = actor_forward(actor, in).out;
    const Matrix z = mlp_forward(critic.net, cobs);
    if (!out.allFinite() || !z.allFinite()) throw NumericError("collect: non-finite policy or value output");
    for (int e = 0; e < E; ++e) {
      const std::size_t i = b.index(t, e);
      b.actor_obs.ext.col(i) = in.ext.col(e);
      b.actor_obs.rest.col(i) = in.rest.col(e);
      b.critic_obs.col(i) = cobs.col(e);
      b.old_out.col(i) = out.col(e);
      b.values.col(i) = z.col(e);
      b.beta[i] = pool.beta(e);
      const Vector head = out.col(e);
      const Vector a = sample_action(actor, head, pool.policy_rng(e));
      b.actions.col(i) = a;
      b.log_probs[i] = log_prob(actor, head, a);
      if (!std::isfinite(b.log_probs[i])) throw NumericError("collect: non-finite log-probability");
      EpisodeRecord rec;
      const StepResult r = pool.step(e, std::span<const double>(a.data(), a.size()), &rec);
      b.rewards[i] = r.reward_total;
      b.dones[i] = r.terminated ? 1 : 0;
      b.causes[i] = r.cause;
      if (r.terminated) b.finished.push_back(std::move(rec));
    }
  }
  b.bootstrap_values = mlp_forward(critic.net, critic_batch(pool));
  b.bootstrap_beta.resize(E);
  for (int e = 0; e < E; ++e) b.bootstrap_beta[e] = pool.beta(e);
  return b;
}

/// Caches distortion weights per distinct beta value.
class DistortionCache {
 public:
  explicit DistortionCache(RiskMetric metric) : metric_(metric) {}

  double value(const double* sorted_quantiles, std::size_t n, double beta) {
    const RiskSpec spec(metric_, beta);
    if (spec.metric == RiskMetric::neutral || (spec.metric == RiskMetric::wang && spec.beta == 0.0) ||
        (spec.metric == RiskMetric::cvar && spec.beta == 1.0)) {
      return std::accumulate(sorted_quantiles, sorted_quantiles + n, 0.0) / static_cast<double>(n);
    }
    auto it = cache_.find(spec.beta);
    if (it == cache_.end()) it = cache_.emplace(spec.beta, distortion_weights(spec, n)).first;
    double v = 0.0;
    for (std::size_t k = 0; k < n; ++k) v += it->second[k] * sorted_quantiles[k];
    return v;
  }

  double value(const QuantileDistribution& z, double beta) {
    const auto s = z.sorted();
    return value(s.quantiles.data(), s.size(), beta);
  }

 private:
  RiskMetric metric_;
  std::map<double, std::vector<double>> cache_;
};

struct AdvantageResult {
  std::vector<double> raw;         // before normalization
  std::vector<double> normalized;  // zero mean, unit variance over the batch
  std::vector<double> risk_values; // V_beta(s_t)
};

/// GAE over TD residuals of the distorted value V_beta(s) = distorted_value(Z(s), (metric, beta)).
/// No bootstrap across terminations; the last step bootstraps from Z(s_T).
inline AdvantageResult risk_advantages(const RolloutBatch& b, RiskMetric metric, double gamma, double lambda) {
  DistortionCache cache(metric);
  const std::size_t n = b.size();
  AdvantageResult r;
  r.risk_values.resize(n);
  for (std::size_t i = 0; i < n; ++i) r.risk_values[i] = cache.value(b.value_at(i), b.beta[i]);
  std::vector<double> boot(b.num_envs);
  for (int e = 0; e < b.num_envs; ++e) {
    QuantileDistribution z(std::vector<double>(b.bootstrap_values.col(e).data(),
                                               b.bootstrap_values.col(e).data() + b.bootstrap_values.rows()));
    boot[e] = cache.value(z, b.bootstrap_beta[e]);
  }
  r.raw.assign(n, 0.0);
  for (int e = 0; e < b.num_envs; ++e) {
    double next_adv = 0.0;
    for (int t = b.steps - 1; t >= 0; --t) {
      const std::size_t i = b.index(t, e);
      const double not_done = b.dones[i] ? 0.0 : 1.0;
      const double next_v = (t + 1 < b.steps) ? r.risk_values[b.index(t + 1, e)] : boot[e];
      const double delta = b.rewards[i] + gamma * next_v * not_done - r.risk_values[i];
      next_adv = delta + gamma * lambda * not_done * next_adv;
      r.raw[i] = next_adv;
    }
  }
  r.normalized = r.raw;
  if (n > 1) {
    const double mean = std::accumulate(r.raw.begin(), r.raw.end(), 0.0) / static_cast<double>(n);
    double var = 0.0;
    for (double a : r.raw) var += (a - mean) * (a - mean);
    const double sd = std::sqrt(var / static_cast<double>(n - 1));
    for (double& a : r.normalized) a = (a - mean) / (sd + 1e-8);
  }
  return r;
}

/// TD(lambda) returns computed backward, bootstrapping with the critic mean.
inline std::vector<double> lambda_return_targets(const RolloutBatch& b, double gamma, double lambda) {
  const std::size_t n = b.size();
  std::vector<double> targets(n, 0.0);
  for (int e = 0; e < b.num_envs; ++e) {
    double next_return = b.bootstrap_values.col(e).mean();
    double next_mean = next_return;
    for (int t = b.steps - 1; t >= 0; --t) {
      const std::size_t i = b.index(t, e);
      const double not_done = b.dones[i] ? 0.0 : 1.0;
      const double g = b.rewards[i] + gamma * not_done * ((1.0 - lambda) * next_mean + lambda * next_return);
      targets[i] = g;
      next_return = g;
      next_mean = b.values.col(i).mean();
    }
  }
  return targets;
}

}  // namespace riskrl
