#pragma once

// Shared environment vocabulary and the type-erased instance used by rollouts.

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "riskrl/errors.hpp"
#include "riskrl/rng.hpp"

namespace riskrl {

using json = nlohmann::json;

enum class Task { cliffslip, riskynav, grabhold };

inline std::string to_string(Task t) {
  switch (t) {
    case Task::cliffslip: return "cliffslip";
    case Task::riskynav: return "riskynav";
    case Task::grabhold: return "grabhold";
  }
  return "cliffslip";
}

inline Task task_from_string(const std::string& s) {
  if (s == "cliffslip") return Task::cliffslip;
  if (s == "riskynav") return Task::riskynav;
  if (s == "grabhold") return Task::grabhold;
  throw ConfigError("unknown task '" + s + "'");
}

enum class TerminationCause { none, goal, collision, object_lost, timeout };

inline std::string to_string(TerminationCause c) {
  switch (c) {
    case TerminationCause::none: return "none";
    case TerminationCause::goal: return "goal";
    case TerminationCause::collision: return "collision";
    case TerminationCause::object_lost: return "object_lost";
    case TerminationCause::timeout: return "timeout";
  }
  return "none";
}

enum class Outcome { success, failure };

/// Term name -> weighted contribution. Ordered so summation order is fixed.
using RewardTerms = std::map<std::string, double>;

struct StepResult {
  double reward_total = 0.0;
  RewardTerms reward_terms;
  bool terminated = false;
  TerminationCause cause = TerminationCause::none;
  bool success = false;
};

/// Sums the terms in map order; every env builds reward_total with this.
inline double sum_terms(const RewardTerms& terms) {
  double s = 0.0;
  for (const auto& [name, v] : terms) s += v;
  return s;
}

struct EnvConfig {
  Task task = Task::cliffslip;
  int horizon = 40;
  double dt = 1.0;
  std::uint64_t seed = 0;
  // Uniform observation noise half-widths per channel name.
  std::map<std::string, double> noise;
  // Reward weights per term name; contributions are weight * raw term * reward_scale.
  std::map<std::string, double> reward_weights;
  double reward_scale = 1.0;
  // Task-specific scalars (grid size, radii, speeds, ...). Unknown keys are rejected per task.
  std::map<std::string, double> params;

  double param(const std::string& key) const {
    auto it = params.find(key);
    if (it == params.end()) throw ConfigError("env param '" + key + "' missing");
    return it->second;
  }
  double noise_amp(const std::string& key) const {
    auto it = noise.find(key);
    return it == noise.end() ? 0.0 : it->second;
  }
  double weight(const std::string& key) const {
    auto it = reward_weights.find(key);
    return it == reward_weights.end() ? 0.0 : it->second;
  }
  void validate() const {
    if (horizon < 1) throw ConfigError("env horizon must be >= 1");
    if (!(dt > 0.0)) throw ConfigError("env dt must be > 0");
    for (const auto& [k, a] : noise)
      if (a < 0.0) throw ConfigError("noise amplitude '" + k + "' must be >= 0");
  }
};

/// Observation fed to an actor: an exteroceptive block (encoder input), a
/// shared block (proprioception, goal, task flags, previous action) and beta.
struct PolicyObs {
  std::vector<double> exteroceptive;
  std::vector<double> shared;
  double beta = 0.0;
};

struct ObsDims {
  int teacher_ext = 0;
  int student_ext = 0;
  int shared = 0;
  int critic = 0;
  int action = 0;
  int discrete_actions = 0;  // > 0 for a categorical action space
};

/// +1 on success (capped at max_level), -1 on failure (floored at 0).
inline int curriculum_update(int level, Outcome outcome, int max_level) {
  if (outcome == Outcome::success) return std::min(level + 1, max_level);
  return std::max(level - 1, 0);
}

inline double noisy(double value, double amplitude, Rng& rng) {
  return amplitude > 0.0 ? value + uniform(rng, -amplitude, amplitude) : value;
}

/// Runtime handle over one environment: current state, curriculum level and
/// the three independent random streams (reset sampling, dynamics, observation noise).
class EnvInstance {
 public:
  virtual ~EnvInstance() = default;

  virtual const EnvConfig& config() const = 0;
  virtual ObsDims dims() const = 0;
  virtual int num_levels() const = 0;

  /// Starts a new episode at the tracked curriculum level (uniform level when at max).
  virtual void reset() = 0;
  virtual void reset_at_level(int level) = 0;
  /// Restores a serialized layout (evaluation sets); reseeds the dynamics and noise streams.
  virtual void reset_to_layout(const json& layout, std::uint64_t stream_seed) = 0;
  virtual StepResult step(std::span<const double> action) = 0;

  virtual PolicyObs observe_teacher(double beta) = 0;
  virtual PolicyObs observe_student(double beta) = 0;
  virtual std::vector<double> observe_critic() const = 0;

  virtual json geometry() const = 0;
  virtual json layout() const = 0;
  virtual std::unique_ptr<EnvInstance> clone() const = 0;

  virtual void set_reward_weight(const std::string& term, double weight) = 0;

  virtual int step_index() const = 0;
  virtual bool terminated() const = 0;
  virtual int episode_level() const = 0;

  int tracked_level() const { return tracked_level_; }
  void set_tracked_level(int level) { tracked_level_ = std::clamp(level, 0, num_levels() - 1); }
  /// A pinned level ignores recorded outcomes (a pinned max level still samples levels uniformly).
  void pin_level(bool pinned) { pinned_ = pinned; }

  /// Applies the curriculum rule for a finished episode.
  void record_outcome(Outcome outcome) {
    if (!pinned_) tracked_level_ = curriculum_update(tracked_level_, outcome, num_levels() - 1);
  }

  /// Whether the finished episode counts as a curriculum success.
  virtual Outcome episode_outcome() const = 0;

 protected:
  int tracked_level_ = 0;
  bool pinned_ = false;
};

/// Adapts a task model (pure reset/step/observe functions over a State value)
/// to the EnvInstance interface.
template <class Model>
class BasicEnvInstance final : public EnvInstance {
 public:
  using State = typename Model::State;

  BasicEnvInstance(EnvConfig cfg, std::uint64_t index)
      : model_(std::move(cfg)),
        reset_rng_(make_rng(model_.config().seed, "reset", index)),
        dynamics_rng_(make_rng(model_.config().seed, "dynamics", index)),
        noise_rng_(make_rng(model_.config().seed, "noise", index)) {
    state_ = model_.reset(0, reset_rng_);
  }

  const Model& model() const { return model_; }
  const State& state() const { return state_; }
  State& mutable_state() { return state_; }

  const EnvConfig& config() const override { return model_.config(); }
  ObsDims dims() const override { return model_.dims(); }
  int num_levels() const override { return Model::kNumLevels; }

  void reset() override {
    int level = tracked_level_;
    if (level == num_levels() - 1 && num_levels() > 1)
      level = std::uniform_int_distribution<int>(0, num_levels() - 1)(reset_rng_);
    state_ = model_.reset(level, reset_rng_);
  }
  void reset_at_level(int level) override { state_ = model_.reset(level, reset_rng_); }
  void reset_to_layout(const json& layout, std::uint64_t stream_seed) override {
    state_ = model_.from_layout(layout);
    dynamics_rng_ = make_rng(stream_seed, "dynamics");
    noise_rng_ = make_rng(stream_seed, "noise");
  }
  StepResult step(std::span<const double> action) override {
    auto [next, result] = model_.step(state_, action, dynamics_rng_);
    state_ = std::move(next);
    return result;
  }

  PolicyObs observe_teacher(double beta) override { return model_.observe_teacher(state_, beta, noise_rng_); }
  PolicyObs observe_student(double beta) override { return model_.observe_student(state_, beta, noise_rng_); }
  std::vector<double> observe_critic() const override { return model_.observe_critic(state_); }

  json geometry() const override { return model_.geometry(state_); }
  json layout() const override { return model_.layout(state_); }
  std::unique_ptr<EnvInstance> clone() const override { return std::make_unique<BasicEnvInstance>(*this); }

  void set_reward_weight(const std::string& term, double weight) override {
    model_.set_reward_weight(term, weight);
  }

  int step_index() const override { return state_.t; }
  bool terminated() const override { return state_.terminated; }
  int episode_level() const override { return state_.level; }
  Outcome episode_outcome() const override { return model_.outcome(state_); }

 private:
  Model model_;
  Rng reset_rng_;
  Rng dynamics_rng_;
  Rng noise_rng_;
  State state_;
};

}  // namespace riskrl
