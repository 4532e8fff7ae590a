#pragma once

// DAgger distillation of a privileged teacher into a student whose encoder
// reads the non-privileged observation block. Phase A steps the environments
// with teacher actions and trains only the student encoder; phase B steps them
// with student actions and trains every student parameter. Labels are always
// the teacher's mean action for the same state and beta.

#include <algorithm>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "riskrl/checkpoint.hpp"

namespace riskrl {

struct DistillConfig {
  int warmup_episodes = 100;
  int rounds = 60;
  int steps_per_round = 96;
  int num_envs = 32;
  double lr = 1e-3;
  int minibatch = 512;
  int updates_per_round = 24;
  int buffer_capacity = 200000;
  int validation_envs = 32;
  int validation_steps = 96;
  std::vector<int> encoder_hidden{64};
  bool phase_b = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (warmup_episodes < 0) throw ConfigError("distill.warmup_episodes must be >= 0");
    if (!(lr > 0.0)) throw ConfigError("distill.lr must be > 0");
    if (rounds < 0 || steps_per_round < 1 || num_envs < 1 || minibatch < 1 || updates_per_round < 1 ||
        buffer_capacity < 1 || validation_envs < 1 || validation_steps < 1)
      throw ConfigError("distill counts must be >= 1 (rounds >= 0)");
  }
};

inline ActorSpec student_actor_spec(const ActorSpec& teacher, const ObsDims& dims,
                                    const std::vector<int>& encoder_hidden) {
  if (teacher.shared_dim != dims.shared)
    throw ConfigError("init_student: teacher trunk expects a shared block of " + std::to_string(teacher.shared_dim) +
                      ", student observations provide " + std::to_string(dims.shared));
  if (teacher.head != HeadKind::gaussian) throw ConfigError("distillation requires a continuous-action teacher");
  ActorSpec s = teacher;
  s.ext_dim = dims.student_ext;
  s.encoder_hidden = encoder_hidden;
  return s;
}

/// Fresh encoder producing the teacher's embedding width; trunk and log-std copied.
inline Actor init_student(const Actor& teacher, const ObsDims& dims, const std::vector<int>& encoder_hidden, Rng& rng) {
  Actor s;
  s.spec = student_actor_spec(teacher.spec, dims, encoder_hidden);
  s.encoder = init_params(s.spec.encoder_mlp(), rng);
  s.trunk = teacher.trunk;
  s.trunk.adam_m = zeros_like(s.trunk.layers);
  s.trunk.adam_v = zeros_like(s.trunk.layers);
  s.trunk.step_count = 0;
  s.log_std = teacher.log_std;
  return s;
}

/// Deterministic teacher mean action for one stacked observation.
inline Vector teacher_label(const Actor& teacher, const ObsHistory& h) {
  return mean_action(teacher, actor_forward(teacher, single_input(teacher.spec, h)).out.col(0));
}

/// L2 objective: mean over samples and action dimensions of squared differences.
inline double action_mse(const Matrix& student, const Matrix& teacher) {
  return (student - teacher).squaredNorm() / static_cast<double>(student.size());
}

/// Environments observed through both projections, with a shared per-episode beta.
class PairedPool {
 public:
  PairedPool(const EnvConfig& cfg, int n, int teacher_stack, int student_stack, RiskMetric metric,
             std::uint64_t seed)
      : metric_(metric) {
    for (int e = 0; e < n; ++e) {
      envs_.push_back(make_env(cfg, e));
      envs_.back()->set_tracked_level(envs_.back()->num_levels() - 1);
      envs_.back()->pin_level(true);
      beta_rngs_.push_back(make_rng(seed, "beta", e));
      teacher_.emplace_back(teacher_stack);
      student_.emplace_back(student_stack);
      betas_.push_back(0.0);
    }
    for (int e = 0; e < n; ++e) begin(e);
  }

  int size() const { return static_cast<int>(envs_.size()); }
  const ObsHistory& teacher_history(int e) const { return teacher_[e]; }
  const ObsHistory& student_history(int e) const { return student_[e]; }
  double beta(int e) const { return betas_[e]; }

  /// Returns true when the step ended the episode (the env is then reset).
  bool step(int e, const Vector& action) {
    const StepResult r = envs_[e]->step(std::span<const double>(action.data(), action.size()));
    if (r.terminated) {
      begin(e);
      return true;
    }
    observe(e, false);
    return false;
  }

 private:
  void begin(int e) {
    envs_[e]->reset();
    betas_[e] = sample_beta(metric_, beta_rngs_[e]);
    observe(e, true);
  }
  void observe(int e, bool first) {
    PolicyObs t = envs_[e]->observe_teacher(betas_[e]);
    PolicyObs s = envs_[e]->observe_student(betas_[e]);
    if (first) {
      teacher_[e].reset(t);
      student_[e].reset(s);
    } else {
      teacher_[e].push(t);
      student_[e].push(s);
    }
  }

  RiskMetric metric_;
  std::vector<std::unique_ptr<EnvInstance>> envs_;
  std::vector<Rng> beta_rngs_;
  std::vector<ObsHistory> teacher_;
  std::vector<ObsHistory> student_;
  std::vector<double> betas_;
};

/// FIFO of (student input, teacher label) pairs.
struct DistillBuffer {
  std::deque<Vector> ext;
  std::deque<Vector> rest;
  std::deque<Vector> label;
  std::size_t capacity = 200000;

  std::size_t size() const { return label.size(); }
  void add(const Vector& e, const Vector& r, const Vector& l) {
    ext.push_back(e);
    rest.push_back(r);
    label.push_back(l);
    while (label.size() > capacity) {
      ext.pop_front();
      rest.pop_front();
      label.pop_front();
    }
  }
};

struct PairedStep {
  ActorInput student_in;
  Matrix teacher_act;
  Matrix student_act;
  int episodes_finished = 0;
};

enum class Driver { teacher, student };

/// Steps every env once, driven by teacher or student mean actions.
inline PairedStep paired_step(const Actor& teacher, const Actor& student, PairedPool& pool, Driver driver) {
  const int n = pool.size();
  PairedStep s;
  ActorInput tin = make_actor_input(teacher.spec, n);
  s.student_in = make_actor_input(student.spec, n);
  for (int e = 0; e < n; ++e) {
    pool.teacher_history(e).write(tin, e);
    pool.student_history(e).write(s.student_in, e);
  }
  s.teacher_act = actor_forward(teacher, tin).out;
  s.student_act = actor_forward(student, s.student_in).out;
  const Matrix& drive = driver == Driver::teacher ? s.teacher_act : s.student_act;
  for (int e = 0; e < n; ++e)
    if (pool.step(e, drive.col(e))) ++s.episodes_finished;
  return s;
}

struct DistillRoundStats {
  int round = 0;
  std::string phase;
  int episodes = 0;
  double train_loss = 0.0;
  double validation_mse = 0.0;
  std::size_t buffer_size = 0;
};

inline json to_json(const DistillRoundStats& s) {
  return {{"format_version", kFormatVersion}, {"round", s.round},          {"phase", s.phase},
          {"episodes", s.episodes},           {"train_loss", s.train_loss}, {"validation_mse", s.validation_mse},
          {"buffer_size", s.buffer_size}};
}

/// Held-out action MSE on states the student visits itself, on a separately seeded pool.
inline double validation_mse(const Actor& teacher, const Actor& student, const EnvConfig& env, RiskMetric metric,
                             int envs, int steps, std::uint64_t seed) {
  EnvConfig c = env;
  c.seed = derive_seed(seed, "validation_env");
  PairedPool pool(c, envs, teacher.spec.stack, student.spec.stack, metric, derive_seed(seed, "validation"));
  double total = 0.0;
  for (int t = 0; t < steps; ++t) {
    const PairedStep s = paired_step(teacher, student, pool, Driver::student);
    total += action_mse(s.student_act, s.teacher_act);
  }
  return total / steps;
}

class Distiller {
 public:
  Distiller(DistillConfig cfg, const Checkpoint& teacher, std::string teacher_hash)
      : cfg_(std::move(cfg)), teacher_ck_(teacher), teacher_hash_(std::move(teacher_hash)) {
    cfg_.validate();
    if (teacher.kind != CheckpointKind::teacher) throw ConfigError("distill: checkpoint is not a teacher");
    const ObsDims dims = env_dims(teacher.env);
    Rng init = make_rng(cfg_.seed, "student_init");
    student_ = init_student(teacher.actor, dims, cfg_.encoder_hidden, init);
    EnvConfig c = teacher.env;
    c.seed = derive_seed(cfg_.seed, "env");
    pool_ = std::make_unique<PairedPool>(c, cfg_.num_envs, teacher.actor.spec.stack, student_.spec.stack,
                                         teacher.metric, cfg_.seed);
    buffer_.capacity = static_cast<std::size_t>(cfg_.buffer_capacity);
  }

  const Actor& student() const { return student_; }
  const Actor& teacher() const { return teacher_ck_.actor; }
  const DistillConfig& config() const { return cfg_; }

  /// Runs phase A then (unless disabled) phase B; `log` receives one record per round.
  void run(const std::function<void(const DistillRoundStats&)>& log = {}) {
    int round = 0, episodes = 0;
    while (episodes < cfg_.warmup_episodes) {
      DistillRoundStats s = round_step(Driver::teacher, false, round);
      episodes += s.episodes;
      s.episodes = episodes;
      if (log) log(s);
      ++round;
    }
    if (!cfg_.phase_b) return;
    for (int r = 0; r < cfg_.rounds; ++r) {
      DistillRoundStats s = round_step(Driver::student, true, round);
      episodes += s.episodes;
      s.episodes = episodes;
      if (log) log(s);
      ++round;
    }
  }

  Checkpoint student_checkpoint() const {
    Checkpoint c;
    c.kind = CheckpointKind::student;
    c.task = teacher_ck_.task;
    c.metric = teacher_ck_.metric;
    c.seed = cfg_.seed;
    c.iteration = 0;
    c.env = teacher_ck_.env;
    c.actor = student_;
    c.trainer = teacher_ck_.trainer;
    c.teacher_hash = teacher_hash_;
    return c;
  }

 private:
  DistillRoundStats round_step(Driver driver, bool train_all, int round) {
    DistillRoundStats st;
    st.round = round;
    st.phase = driver == Driver::teacher ? "A" : "B";
    for (int t = 0; t < cfg_.steps_per_round; ++t) {
      const PairedStep s = paired_step(teacher_ck_.actor, student_, *pool_, driver);
      for (int e = 0; e < pool_->size(); ++e)
        buffer_.add(s.student_in.ext.col(e), s.student_in.rest.col(e), s.teacher_act.col(e));
      st.episodes += s.episodes_finished;
    }
    Rng rng = make_rng(cfg_.seed, "distill_minibatch", static_cast<std::uint64_t>(round));
    double loss = 0.0;
    for (int u = 0; u < cfg_.updates_per_round; ++u) loss += update(rng, train_all);
    st.train_loss = loss / cfg_.updates_per_round;
    st.validation_mse = validation_mse(teacher_ck_.actor, student_, teacher_ck_.env, teacher_ck_.metric,
                                       cfg_.validation_envs, cfg_.validation_steps, cfg_.seed);
    st.buffer_size = buffer_.size();
    return st;
  }

  double update(Rng& rng, bool train_all) {
    const std::size_t m = std::min<std::size_t>(static_cast<std::size_t>(cfg_.minibatch), buffer_.size());
    std::uniform_int_distribution<std::size_t> pick(0, buffer_.size() - 1);
    ActorInput in = make_actor_input(student_.spec, static_cast<Eigen::Index>(m));
    Matrix target(student_.spec.action_dim, static_cast<Eigen::Index>(m));
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t i = pick(rng);
      in.ext.col(j) = buffer_.ext[i];
      in.rest.col(j) = buffer_.rest[i];
      target.col(j) = buffer_.label[i];
    }
    const ActorForward f = actor_forward(student_, in);
    const double loss = action_mse(f.out, target);
    const Matrix grad = 2.0 * (f.out - target) / static_cast<double>(f.out.size());
    ActorGrads g = actor_backward(student_, f, grad, true);
    adam_step(student_.encoder, g.encoder, cfg_.lr);
    if (train_all) adam_step(student_.trunk, g.trunk, cfg_.lr);
    return loss;
  }

  DistillConfig cfg_;
  Checkpoint teacher_ck_;
  std::string teacher_hash_;
  Actor student_;
  std::unique_ptr<PairedPool> pool_;
  DistillBuffer buffer_;
};

}  // namespace riskrl
