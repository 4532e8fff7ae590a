#pragma once

// Exact finite-horizon oracles on tabular MDPs: distributional policy
// evaluation by backward induction and recursively distorted value iteration.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "riskrl/envs/cliffslip.hpp"
#include "riskrl/policy.hpp"
#include "riskrl/risk.hpp"

namespace riskrl {

struct TabularMdp {
  int num_states = 0;
  int num_actions = 0;
  std::vector<double> P;  // P[(s * A + a) * S + s']
  std::vector<double> R;  // same layout: reward of the transition s -a-> s'
  std::vector<std::uint8_t> terminal;
  double gamma = 1.0;
  int start = 0;

  std::size_t idx(int s, int a, int s2) const {
    return (static_cast<std::size_t>(s) * num_actions + a) * num_states + s2;
  }
  double p(int s, int a, int s2) const { return P[idx(s, a, s2)]; }
  double r(int s, int a, int s2) const { return R[idx(s, a, s2)]; }

  void validate() const {
    for (int s = 0; s < num_states; ++s)
      for (int a = 0; a < num_actions; ++a) {
        double sum = 0.0;
        for (int s2 = 0; s2 < num_states; ++s2) {
          if (p(s, a, s2) < 0.0) throw ConfigError("TabularMdp: negative transition probability");
          sum += p(s, a, s2);
        }
        if (std::abs(sum - 1.0) > 1e-12) throw ConfigError("TabularMdp: transition row does not sum to 1");
      }
  }
};

/// Exact model of a cliffslip configuration. States are cells y * width + x.
/// Cliff and goal cells are terminal and self-absorbing with zero reward.
inline TabularMdp env_to_mdp(const EnvConfig& cfg, double gamma) {
  if (cfg.task != Task::cliffslip) throw ConfigError("env_to_mdp: only the cliffslip task is tabular");
  const CliffSlip env(cfg);
  TabularMdp m;
  m.num_states = env.num_cells();
  m.num_actions = CliffSlip::kNumActions;
  m.gamma = gamma;
  m.start = env.cell(0, 0);
  const std::size_t n = static_cast<std::size_t>(m.num_states) * m.num_actions * m.num_states;
  m.P.assign(n, 0.0);
  m.R.assign(n, 0.0);
  m.terminal.assign(m.num_states, 0);
  const double p = env.p_slip();
  for (int y = 0; y < env.height(); ++y)
    for (int x = 0; x < env.width(); ++x) {
      const int s = env.cell(x, y);
      const bool term = env.is_cliff(x, y) || env.is_goal(x, y);
      m.terminal[s] = term ? 1 : 0;
      for (int a = 0; a < m.num_actions; ++a) {
        if (term) {
          m.P[m.idx(s, a, s)] = 1.0;
          continue;
        }
        for (int d = 0; d < CliffSlip::kNumActions; ++d) {
          const double w = (d == a ? 1.0 - p : 0.0) + p / CliffSlip::kNumActions;
          if (w == 0.0) continue;
          const auto [nx, ny] = env.move(x, y, d);
          const int s2 = env.cell(nx, ny);
          m.P[m.idx(s, a, s2)] += w;
          m.R[m.idx(s, a, s2)] = sum_terms(env.transition_terms(nx, ny));
        }
      }
    }
  m.validate();
  return m;
}

/// Finite distribution over return values, atoms ascending by value.
struct SupportDistribution {
  std::vector<std::pair<double, double>> atoms;  // (value, probability)

  double mean() const {
    double m = 0.0;
    for (const auto& [v, p] : atoms) m += v * p;
    return m;
  }
  double total_probability() const {
    double s = 0.0;
    for (const auto& [v, p] : atoms) s += p;
    return s;
  }
  /// Quantile function at level tau in (0, 1]: smallest v with F(v) >= tau.
  double quantile(double tau) const {
    double c = 0.0;
    for (const auto& [v, p] : atoms) {
      c += p;
      if (c >= tau - 1e-15) return v;
    }
    return atoms.back().first;
  }
};

struct SupportOptions {
  double merge_tol = 1e-9;
  double prune_below = 1e-12;
  std::size_t max_atoms = 100000;
};

/// Sorts, merges atoms closer than merge_tol, prunes tiny masses and renormalizes.
inline SupportDistribution normalize_support(std::vector<std::pair<double, double>> raw, const SupportOptions& opt) {
  std::sort(raw.begin(), raw.end());
  SupportDistribution d;
  for (const auto& [v, p] : raw) {
    if (!d.atoms.empty() && v - d.atoms.back().first <= opt.merge_tol) {
      auto& [bv, bp] = d.atoms.back();
      bv = (bv * bp + v * p) / (bp + p > 0.0 ? bp + p : 1.0);
      bp += p;
    } else {
      d.atoms.emplace_back(v, p);
    }
  }
  std::erase_if(d.atoms, [&](const auto& a) { return a.second < opt.prune_below; });
  const double total = d.total_probability();
  if (total <= 0.0) throw NumericError("normalize_support: all probability mass pruned");
  for (auto& a : d.atoms) a.second /= total;
  if (d.atoms.size() > opt.max_atoms)
    throw NumericError("support explosion: " + std::to_string(d.atoms.size()) + " atoms exceed the cap of " +
                       std::to_string(opt.max_atoms));
  return d;
}

/// Action chosen at step index t (0-based from the episode start) in state s.
using TabularPolicy = std::function<int(int t, int s)>;

/// Time-indexed return distributions: dist[t][s] is the return from state s
/// with steps t..horizon-1 remaining to act.
inline std::vector<std::vector<SupportDistribution>> distributional_eval(const TabularMdp& m,
                                                                         const TabularPolicy& policy, int horizon,
                                                                         const SupportOptions& opt = {}) {
  std::vector<std::vector<SupportDistribution>> dist(horizon + 1, std::vector<SupportDistribution>(m.num_states));
  for (int s = 0; s < m.num_states; ++s) dist[horizon][s].atoms = {{0.0, 1.0}};
  for (int t = horizon - 1; t >= 0; --t) {
    for (int s = 0; s < m.num_states; ++s) {
      if (m.terminal[s]) {
        dist[t][s].atoms = {{0.0, 1.0}};
        continue;
      }
      const int a = policy(t, s);
      std::vector<std::pair<double, double>> raw;
      for (int s2 = 0; s2 < m.num_states; ++s2) {
        const double p = m.p(s, a, s2);
        if (p == 0.0) continue;
        for (const auto& [v, q] : dist[t + 1][s2].atoms) raw.emplace_back(m.r(s, a, s2) + m.gamma * v, p * q);
      }
      dist[t][s] = normalize_support(std::move(raw), opt);
    }
  }
  return dist;
}

/// Expected-value policy evaluation: values[t][s].
inline std::vector<std::vector<double>> policy_evaluation(const TabularMdp& m, const TabularPolicy& policy,
                                                          int horizon) {
  std::vector<std::vector<double>> v(horizon + 1, std::vector<double>(m.num_states, 0.0));
  for (int t = horizon - 1; t >= 0; --t)
    for (int s = 0; s < m.num_states; ++s) {
      if (m.terminal[s]) continue;
      const int a = policy(t, s);
      double q = 0.0;
      for (int s2 = 0; s2 < m.num_states; ++s2) q += m.p(s, a, s2) * (m.r(s, a, s2) + m.gamma * v[t + 1][s2]);
      v[t][s] = q;
    }
  return v;
}

/// Distorted expectation of a finite distribution with arbitrary probabilities:
/// outcomes sorted ascending, weight_k = g(F_k) - g(F_{k-1}).
inline double distorted_expectation(std::vector<std::pair<double, double>> outcomes, const RiskSpec& spec) {
  std::sort(outcomes.begin(), outcomes.end());
  double cum = 0.0, g_prev = 0.0, v = 0.0;
  for (std::size_t k = 0; k < outcomes.size(); ++k) {
    cum += outcomes[k].second;
    const double g = (k + 1 == outcomes.size()) ? 1.0 : distortion(spec, std::min(cum, 1.0));
    v += (g - g_prev) * outcomes[k].first;
    g_prev = g;
  }
  return v;
}

struct RiskVIResult {
  std::vector<std::vector<double>> values;  // [t][s], t = 0..horizon
  std::vector<std::vector<int>> policy;     // [t][s], t = 0..horizon-1

  TabularPolicy as_policy() const {
    return [p = policy](int t, int s) { return p[t][s]; };
  }
};

/// V_t(s) = max_a rho_beta[r + gamma V_{t+1}(s')], ties to the lowest action index.
inline RiskVIResult risk_value_iteration(const TabularMdp& m, const RiskSpec& spec, int horizon) {
  spec.validate();
  RiskVIResult r;
  r.values.assign(horizon + 1, std::vector<double>(m.num_states, 0.0));
  r.policy.assign(horizon, std::vector<int>(m.num_states, 0));
  const bool neutral = spec.metric == RiskMetric::neutral;
  for (int t = horizon - 1; t >= 0; --t)
    for (int s = 0; s < m.num_states; ++s) {
      if (m.terminal[s]) continue;
      double best = -std::numeric_limits<double>::infinity();
      int best_a = 0;
      for (int a = 0; a < m.num_actions; ++a) {
        double q = 0.0;
        if (neutral) {
          for (int s2 = 0; s2 < m.num_states; ++s2)
            q += m.p(s, a, s2) * (m.r(s, a, s2) + m.gamma * r.values[t + 1][s2]);
        } else {
          std::vector<std::pair<double, double>> out;
          for (int s2 = 0; s2 < m.num_states; ++s2)
            if (m.p(s, a, s2) > 0.0) out.emplace_back(m.r(s, a, s2) + m.gamma * r.values[t + 1][s2], m.p(s, a, s2));
          q = distorted_expectation(std::move(out), spec);
        }
        if (q > best + 1e-12) {
          best = q;
          best_a = a;
        }
      }
      r.values[t][s] = best;
      r.policy[t][s] = best_a;
    }
  return r;
}

/// Probability of ever entering a state in `hazard` within `horizon` steps from `start`.
inline double hazard_entry_probability(const TabularMdp& m, const TabularPolicy& policy, int horizon, int start,
                                       const std::vector<std::uint8_t>& hazard) {
  std::vector<double> mass(m.num_states, 0.0);
  mass[start] = 1.0;
  double entered = 0.0;
  for (int t = 0; t < horizon; ++t) {
    std::vector<double> next(m.num_states, 0.0);
    for (int s = 0; s < m.num_states; ++s) {
      if (mass[s] == 0.0 || m.terminal[s]) continue;
      const int a = policy(t, s);
      for (int s2 = 0; s2 < m.num_states; ++s2) {
        const double p = mass[s] * m.p(s, a, s2);
        if (p == 0.0) continue;
        if (hazard[s2]) entered += p;
        else next[s2] += p;
      }
    }
    for (int s = 0; s < m.num_states; ++s)
      if (m.terminal[s] && !hazard[s]) next[s] = 0.0;
    mass = std::move(next);
  }
  return entered;
}

inline std::vector<std::uint8_t> cliff_cells(const EnvConfig& cfg) {
  const CliffSlip env(cfg);
  std::vector<std::uint8_t> h(env.num_cells(), 0);
  for (int y = 0; y < env.height(); ++y)
    for (int x = 0; x < env.width(); ++x) h[env.cell(x, y)] = env.is_cliff(x, y) ? 1 : 0;
  return h;
}

/// Cells visited by the policy from the start when no slip occurs.
inline std::vector<int> nominal_path(const EnvConfig& cfg, const TabularPolicy& policy, int horizon) {
  const CliffSlip env(cfg);
  int x = 0, y = 0;
  std::vector<int> path{env.cell(x, y)};
  for (int t = 0; t < horizon; ++t) {
    if (env.is_cliff(x, y) || env.is_goal(x, y)) break;
    std::tie(x, y) = env.move(x, y, policy(t, env.cell(x, y)));
    path.push_back(env.cell(x, y));
  }
  return path;
}

/// Smallest Manhattan distance to a cliff cell over the path, excluding the
/// start cell and terminal cells.
inline int min_cliff_distance(const EnvConfig& cfg, const std::vector<int>& path) {
  const CliffSlip env(cfg);
  int best = env.width() + env.height();
  for (std::size_t i = 1; i < path.size(); ++i) {
    const int x = path[i] % env.width(), y = path[i] / env.width();
    if (env.is_goal(x, y) || env.is_cliff(x, y)) continue;
    for (int cx = 1; cx < env.width() - 1; ++cx) best = std::min(best, std::abs(x - cx) + y);
  }
  return best;
}

/// Integral over tau of |Z^-1(tau) - D^-1(tau)|; both quantile functions are
/// step functions, so the integral is a sum over merged breakpoints.
inline double wasserstein1(const QuantileDistribution& z, const SupportDistribution& d) {
  if (z.size() == 0 || d.atoms.empty()) throw ConfigError("wasserstein1: empty distribution");
  const auto q = z.sorted().quantiles;
  const double n = static_cast<double>(q.size());
  double w = 0.0, tau = 0.0, cum = d.atoms[0].second;
  std::size_t i = 0, k = 0;
  while (i < q.size() && k < d.atoms.size()) {
    const double next_i = static_cast<double>(i + 1) / n;
    const double next = std::min(next_i, cum);
    w += (next - tau) * std::abs(q[i] - d.atoms[k].first);
    tau = next;
    if (next_i <= tau + 1e-15) ++i;
    if (cum <= tau + 1e-15 && ++k < d.atoms.size()) cum += d.atoms[k].second;
  }
  return w;
}

// ---------------------------------------------------------------------------
// Quantile critic fitted to a fixed tabular policy from sampled returns

struct CriticFitConfig {
  int episodes = 16000;
  int num_quantiles = 200;
  std::vector<int> hidden{64, 64};
  int updates = 20000;
  int minibatch = 256;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct ReturnSample {
  std::vector<double> obs;  // critic observation
  double ret = 0.0;         // undiscounted return from this step to the end
};

/// Monte Carlo (lambda = 1) return samples of `policy`, one per visited step.
inline std::vector<ReturnSample> sample_returns(const EnvConfig& cfg, const TabularPolicy& policy, int episodes,
                                                std::uint64_t seed) {
  auto env = make_env(cfg, seed);
  std::vector<ReturnSample> out;
  for (int e = 0; e < episodes; ++e) {
    env->reset();
    const std::size_t first = out.size();
    std::vector<double> rewards;
    while (!env->terminated()) {
      auto obs = env->observe_critic();
      const int s = static_cast<int>(std::max_element(obs.begin(), obs.end() - 1) - obs.begin());
      const double a = policy(env->step_index(), s);
      out.push_back({std::move(obs), 0.0});
      rewards.push_back(env->step(std::span<const double>(&a, 1)).reward_total);
    }
    double g = 0.0;
    for (std::size_t k = rewards.size(); k-- > 0;) {
      g += rewards[k];
      out[first + k].ret = g;
    }
  }
  return out;
}

/// Pinball regression of every head on the sampled returns, Adam on random minibatches.
inline Critic fit_quantile_critic(const EnvConfig& cfg, const TabularPolicy& policy, const CriticFitConfig& c) {
  Rng rng = make_rng(c.seed, "critic_fit");
  const auto data = sample_returns(cfg, policy, c.episodes, derive_seed(c.seed, "critic_fit_env", 0));
  CriticSpec spec;
  spec.input_dim = static_cast<int>(data.front().obs.size());
  spec.hidden = c.hidden;
  spec.num_quantiles = c.num_quantiles;
  Critic critic = Critic::create(spec, rng);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  Matrix in(spec.input_dim, c.minibatch), grad(c.num_quantiles, c.minibatch);
  std::vector<double> target(c.minibatch);
  for (int u = 0; u < c.updates; ++u) {
    for (int j = 0; j < c.minibatch; ++j) {
      const auto& d = data[pick(rng)];
      in.col(j) = Eigen::Map<const Vector>(d.obs.data(), spec.input_dim);
      target[j] = d.ret;
    }
    MlpCache cache;
    const Matrix out = mlp_forward(critic.net, in, &cache);
    for (int j = 0; j < c.minibatch; ++j) {
      const QuantileDistribution z(std::vector<double>(out.col(j).data(), out.col(j).data() + out.rows()));
      const auto r = pinball_loss(z, target[j]);
      for (int q = 0; q < c.num_quantiles; ++q) grad(q, j) = r.grad[q] / c.minibatch;
    }
    adam_step(critic.net, mlp_backward(critic.net, cache, grad).param_grads, c.lr);
  }
  return critic;
}

inline json to_json(const SupportDistribution& d) {
  json v = json::array(), p = json::array();
  for (const auto& [a, b] : d.atoms) {
    v.push_back(a);
    p.push_back(b);
  }
  return {{"values", v}, {"probs", p}};
}

}  // namespace riskrl
