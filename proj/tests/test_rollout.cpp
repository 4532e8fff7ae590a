#include <gtest/gtest.h>

#include "riskrl/ppo.hpp"

using namespace riskrl;

namespace {

// Hand-built batch: E envs, T steps, N quantiles, random rewards/values/dones.
RolloutBatch random_batch(int E, int T, int N, std::uint64_t seed, RiskMetric metric) {
  Rng rng(seed);
  RolloutBatch b;
  b.num_envs = E;
  b.steps = T;
  const int n = E * T;
  b.values = Matrix(N, n);
  b.bootstrap_values = Matrix(N, E);
  for (int i = 0; i < n; ++i)
    for (int q = 0; q < N; ++q) b.values(q, i) = uniform(rng, -3, 3);
  for (int e = 0; e < E; ++e)
    for (int q = 0; q < N; ++q) b.bootstrap_values(q, e) = uniform(rng, -3, 3);
  b.rewards.resize(n);
  b.dones.resize(n);
  b.beta.resize(n);
  b.bootstrap_beta.resize(E);
  for (int e = 0; e < E; ++e) {
    double beta = sample_beta(metric, rng);
    for (int t = 0; t < T; ++t) {
      const std::size_t i = b.index(t, e);
      b.rewards[i] = uniform(rng, -1, 1);
      b.beta[i] = beta;
      b.dones[i] = uniform(rng, 0, 1) < 0.15;
      if (b.dones[i]) beta = sample_beta(metric, rng);
    }
    b.bootstrap_beta[e] = beta;
  }
  return b;
}

double vbeta(const Matrix& m, Eigen::Index col, RiskMetric metric, double beta) {
  return distorted_value(QuantileDistribution(std::vector<double>(m.col(col).data(), m.col(col).data() + m.rows())),
                         {metric, beta});
}

}  // namespace

// A_t = sum_k (gamma lambda)^k delta_{t+k}, truncated at the first termination.
TEST(RiskAdvantages, MatchForwardSum) {
  for (RiskMetric metric : {RiskMetric::neutral, RiskMetric::wang, RiskMetric::cvar}) {
    const RolloutBatch b = random_batch(3, 12, 8, 7, metric);
    const double gamma = 0.97, lambda = 0.9;
    const auto r = risk_advantages(b, metric, gamma, lambda);
    for (int e = 0; e < b.num_envs; ++e) {
      auto delta = [&](int t) {
        const std::size_t i = b.index(t, e);
        const double v = vbeta(b.values, static_cast<Eigen::Index>(i), metric, b.beta[i]);
        double next = 0.0;
        if (!b.dones[i]) {
          next = t + 1 < b.steps ? vbeta(b.values, static_cast<Eigen::Index>(b.index(t + 1, e)), metric,
                                         b.beta[b.index(t + 1, e)])
                                 : vbeta(b.bootstrap_values, e, metric, b.bootstrap_beta[e]);
        }
        return b.rewards[i] + gamma * next - v;
      };
      for (int t = 0; t < b.steps; ++t) {
        double a = 0.0, w = 1.0;
        for (int k = t; k < b.steps; ++k) {
          a += w * delta(k);
          if (b.dones[b.index(k, e)]) break;
          w *= gamma * lambda;
        }
        EXPECT_NEAR(r.raw[b.index(t, e)], a, 1e-12);
      }
    }
    double mean = 0, sq = 0;
    for (double a : r.normalized) mean += a;
    mean /= r.normalized.size();
    for (double a : r.normalized) sq += (a - mean) * (a - mean);
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(sq / (r.normalized.size() - 1), 1.0, 1e-6);
  }
}

TEST(RiskAdvantages, RiskAversionPenalizesTailyNextState) {
  // One env, one step: identical means, the next state has a heavy lower tail.
  RolloutBatch b;
  b.num_envs = 1;
  b.steps = 1;
  b.values = Matrix::Constant(4, 1, 1.0);
  b.bootstrap_values = Matrix(4, 1);
  b.bootstrap_values << -5.0, 3.0, 3.0, 3.0;
  b.rewards = {0.0};
  b.dones = {0};
  b.beta = {1.0};
  b.bootstrap_beta = {1.0};
  const double averse = risk_advantages(b, RiskMetric::wang, 1.0, 1.0).raw[0];
  b.beta = {-1.0};
  b.bootstrap_beta = {-1.0};
  const double seeking = risk_advantages(b, RiskMetric::wang, 1.0, 1.0).raw[0];
  // V_beta(s) = 1 for every beta; the next-state term decides.
  EXPECT_LT(averse, 0.0);
  EXPECT_GT(seeking, 0.0);
}

TEST(LambdaReturns, LimitsMatchMonteCarloAndTd) {
  const RolloutBatch b = random_batch(2, 10, 4, 3, RiskMetric::neutral);
  const double gamma = 0.9;
  const auto mc = lambda_return_targets(b, gamma, 1.0);
  const auto td = lambda_return_targets(b, gamma, 0.0);
  for (int e = 0; e < b.num_envs; ++e) {
    for (int t = 0; t < b.steps; ++t) {
      const std::size_t i = b.index(t, e);
      double g = 0.0, w = 1.0;
      bool ended = false;
      for (int k = t; k < b.steps; ++k) {
        g += w * b.rewards[b.index(k, e)];
        w *= gamma;
        if (b.dones[b.index(k, e)]) {
          ended = true;
          break;
        }
      }
      if (!ended) g += w * b.bootstrap_values.col(e).mean();
      EXPECT_NEAR(mc[i], g, 1e-12);
      double next = 0.0;
      if (!b.dones[i]) next = t + 1 < b.steps ? b.values.col(b.index(t + 1, e)).mean() : b.bootstrap_values.col(e).mean();
      EXPECT_NEAR(td[i], b.rewards[i] + gamma * next, 1e-12);
    }
  }
}

TEST(BetaSampling, Ranges) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double w = sample_beta(RiskMetric::wang, rng);
    EXPECT_GE(w, -1.0);
    EXPECT_LE(w, 1.0);
    const double c = sample_beta(RiskMetric::cvar, rng);
    EXPECT_TRUE(beta_in_range(RiskMetric::cvar, c));
    EXPECT_EQ(sample_beta(RiskMetric::neutral, rng), 0.0);
  }
}

TEST(Collect, ShapesBetasAndEpisodeBookkeeping) {
  TrainerConfig tc;
  tc.num_envs = 4;
  tc.num_quantiles = 8;
  const EnvConfig env = default_env_config(Task::riskynav);
  Rng rng(5);
  const ObsDims d = env_dims(env);
  const Actor actor = Actor::create(teacher_actor_spec(d, tc), rng);
  const Critic critic = Critic::create(critic_spec(d, tc), rng);
  EnvPool pool(env, 4, tc.stack, ObsMode::teacher, default_beta_sampler(RiskMetric::wang), 11);
  const RolloutBatch b = collect(actor, critic, pool, 150);
  ASSERT_EQ(b.size(), 600u);
  EXPECT_EQ(b.values.rows(), 8);
  EXPECT_EQ(b.actions.rows(), 2);
  EXPECT_TRUE(b.values.allFinite());
  EXPECT_FALSE(b.finished.empty());

  // the pool is fresh, so each env's first episode starts at t = 0
  for (int e = 0; e < 4; ++e) {
    double ret = 0.0;
    for (int t = 0; t < b.steps; ++t) {
      const std::size_t i = b.index(t, e);
      if (t > 0 && !b.dones[b.index(t - 1, e)]) {
        EXPECT_EQ(b.beta[i], b.beta[b.index(t - 1, e)]);
      }
      ret += b.rewards[i];
      if (b.dones[i]) {
        const auto it = std::find_if(b.finished.begin(), b.finished.end(), [&](const EpisodeRecord& r) {
          return r.beta == b.beta[i] && r.length == t + 1;
        });
        ASSERT_NE(it, b.finished.end());
        EXPECT_NEAR(it->ret, ret, 1e-9);
        EXPECT_EQ(it->cause, b.causes[i]);
        break;
      }
    }
  }
}

TEST(Collect, SameSeedSameBatch) {
  TrainerConfig tc;
  tc.num_quantiles = 4;
  const EnvConfig env = default_env_config(Task::cliffslip);
  auto run = [&] {
    Rng rng(2);
    const ObsDims d = env_dims(env);
    const Actor actor = Actor::create(teacher_actor_spec(d, tc), rng);
    const Critic critic = Critic::create(critic_spec(d, tc), rng);
    EnvPool pool(env, 3, tc.stack, ObsMode::teacher, default_beta_sampler(RiskMetric::cvar), 4);
    return collect(actor, critic, pool, 50);
  };
  const RolloutBatch a = run(), b = run();
  EXPECT_EQ(a.rewards, b.rewards);
  EXPECT_EQ(a.beta, b.beta);
  EXPECT_TRUE(a.actions == b.actions);
}
