#pragma once

// Live rollout sessions. One episode per session, stepped by a single loop;
// beta changes and pause/resume/reset are queued and applied at step boundaries.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>

#include "riskrl/checkpoint.hpp"
#include "riskrl/envs/factory.hpp"

namespace riskrl {

inline constexpr int kHistogramBins = 20;
inline constexpr std::size_t kFrameHistory = 300;
inline constexpr std::size_t kSubscriberQueue = 4096;

/// Reference betas streamed with every frame, keyed by their display label.
inline std::vector<std::pair<std::string, double>> reference_betas(RiskMetric m) {
  switch (m) {
    case RiskMetric::wang: return {{"-1.0", -1.0}, {"0.0", 0.0}, {"1.0", 1.0}};
    case RiskMetric::cvar: return {{"0.05", 0.05}, {"0.5", 0.5}, {"1.0", 1.0}};
    case RiskMetric::neutral: return {{"0.0", 0.0}};
  }
  return {};
}

inline void check_beta(RiskMetric m, double beta) {
  if (!beta_in_range(m, beta)) {
    const auto r = beta_range(m);
    throw ConfigError("beta " + json(beta).dump() + " outside " + to_string(m) + " range " +
                      (r.lo_inclusive ? "[" : "(") + json(r.lo).dump() + ", " + json(r.hi).dump() + "]");
  }
}

// ---------------------------------------------------------------------------
// Checkpoint registry

struct StoredCheckpoint {
  std::string name;
  std::string hash;
  std::shared_ptr<const Checkpoint> checkpoint;
};

class CheckpointStore {
 public:
  void add(std::string name, Checkpoint c) {
    const std::string hash = content_hash(serialize_checkpoint(c));
    add(std::move(name), std::move(c), hash);
  }
  void add(std::string name, Checkpoint c, std::string hash) {
    entries_[name] = {name, std::move(hash), std::make_shared<const Checkpoint>(std::move(c))};
  }

  /// Every *.json file in `dir` that parses as a checkpoint, named by file stem.
  static CheckpointStore from_directory(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw NotFound("checkpoint directory '" + dir + "' not found");
    CheckpointStore s;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.path().extension() != ".json") continue;
      try {
        s.add(e.path().stem().string(), load_checkpoint(e.path().string()), file_hash(e.path().string()));
      } catch (const std::exception&) {
        // not a checkpoint (reports, configs); skipped
      }
    }
    return s;
  }

  const StoredCheckpoint& get(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw NotFound("unknown checkpoint '" + name + "'");
    return it->second;
  }

  json list() const {
    json out = json::array();
    for (const auto& [name, e] : entries_) {
      const auto& c = *e.checkpoint;
      const auto r = beta_range(c.metric);
      out.push_back({{"name", name},
                     {"hash", e.hash},
                     {"kind", c.kind == CheckpointKind::teacher ? "teacher" : "student"},
                     {"task", to_string(c.task)},
                     {"metric", to_string(c.metric)},
                     {"beta_range", {r.lo, r.hi}},
                     {"iteration", c.iteration},
                     {"has_critic", c.critic.has_value()}});
    }
    return out;
  }

 private:
  std::map<std::string, StoredCheckpoint> entries_;
};

// ---------------------------------------------------------------------------
// Requests

struct SessionRequest {
  std::string checkpoint;
  std::string critic;  // empty: the policy checkpoint's own critic
  double beta = 0.0;
  std::optional<std::uint64_t> seed;
  double hz = 10.0;
};

inline SessionRequest session_request_from_json(const json& j) {
  ObjectReader r(j, "request");
  SessionRequest q;
  q.checkpoint = r.require<std::string>("checkpoint");
  r.read("critic", q.critic);
  r.read("beta", q.beta);
  std::uint64_t seed = 0;
  if (r.read("seed", seed)) q.seed = seed;
  r.read("hz", q.hz);
  r.finish();
  if (!(q.hz > 0.0 && q.hz <= 1000.0)) throw ConfigError("request.hz: must lie in (0, 1000]");
  return q;
}

// ---------------------------------------------------------------------------
// Session core: deterministic, single-threaded stepping

enum class RunState { running, paused, terminated };

inline std::string to_string(RunState s) {
  switch (s) {
    case RunState::running: return "running";
    case RunState::paused: return "paused";
    case RunState::terminated: return "terminated";
  }
  return "paused";
}

class SessionCore {
 public:
  SessionCore(std::string id, const StoredCheckpoint& policy, const StoredCheckpoint& critic, double beta,
              std::uint64_t seed)
      : id_(std::move(id)), policy_name_(policy.name), critic_name_(critic.name), policy_(policy.checkpoint),
        critic_(critic.checkpoint), seed_(seed), beta_(beta) {
    if (!critic_->critic) throw ConfigError("checkpoint '" + critic.name + "' has no critic");
    if (critic_->task != policy_->task)
      throw ConfigError("critic task " + to_string(critic_->task) + " does not match policy task " +
                        to_string(policy_->task));
    check_beta(policy_->metric, beta);
    EnvConfig cfg = policy_->env;
    cfg.seed = seed;
    env_ = make_env(cfg, 0);
    history_ = ObsHistory(policy_->actor.spec.stack);
    begin_episode();
  }

  const std::string& id() const { return id_; }
  RiskMetric metric() const { return policy_->metric; }
  double beta() const { return beta_; }
  int step_index() const { return env_->step_index(); }
  int episode() const { return episode_; }
  bool terminated() const { return env_->terminated(); }
  const json& frame() const { return frame_; }

  void set_beta(double beta) {
    check_beta(metric(), beta);
    beta_ = beta;
    history_.set_beta(beta);
  }

  /// Advances one step and returns the new frame; a finished episode replays its terminal frame.
  const json& step() {
    if (env_->terminated()) return frame_;
    ActorInput in = single_input(policy_->actor.spec, history_);
    const Vector out = actor_forward(policy_->actor, in).out.col(0);
    const Vector action = mean_action(policy_->actor, out);
    const StepResult r = env_->step(std::span<const double>(action.data(), action.size()));
    if (!env_->terminated()) history_.push(observe());
    frame_ = make_frame(&r, action);
    return frame_;
  }

  void reset() {
    ++episode_;
    begin_episode();
  }

  json descriptor() const {
    const auto r = beta_range(metric());
    return {{"id", id_},
            {"task", to_string(policy_->task)},
            {"metric", to_string(metric())},
            {"beta", beta_},
            {"beta_range", {r.lo, r.hi}},
            {"checkpoint", policy_name_},
            {"critic", critic_name_},
            {"mode", policy_->obs_mode() == ObsMode::teacher ? "teacher" : "student"},
            {"seed", seed_},
            {"episode", episode_},
            {"t", step_index()}};
  }

 private:
  PolicyObs observe() {
    return policy_->obs_mode() == ObsMode::teacher ? env_->observe_teacher(beta_) : env_->observe_student(beta_);
  }

  void begin_episode() {
    env_->reset_at_level(env_->num_levels() - 1);
    history_.reset(observe());
    frame_ = make_frame(nullptr, Vector());
  }

  json make_frame(const StepResult* r, const Vector& action) const {
    const QuantileDistribution z = critic_->critic->distribution(env_->observe_critic());
    json refs = json::object();
    for (const auto& [label, b] : reference_betas(metric())) refs[label] = distorted_value(z, {metric(), b});
    const Histogram h = to_histogram(z, kHistogramBins);
    const PolicyObs& obs = history_.latest();
    json f = {{"t", step_index()},
              {"episode", episode_},
              {"beta", beta_},
              {"geometry", env_->geometry()},
              {"quantiles", z.quantiles},
              {"histogram", {{"edges", h.edges}, {"masses", h.masses}}},
              {"distorted", {{"current", distorted_value(z, {metric(), beta_})}, {"refs", refs}}},
              {"reward_terms", r ? json(r->reward_terms) : json::object()},
              {"reward", r ? r->reward_total : 0.0},
              {"action", to_std(action)},
              {"obs", {{"exteroceptive", obs.exteroceptive}, {"shared", obs.shared}}},
              {"terminated", env_->terminated()},
              {"cause", to_string(r ? r->cause : TerminationCause::none)}};
    return f;
  }

  std::string id_, policy_name_, critic_name_;
  std::shared_ptr<const Checkpoint> policy_, critic_;
  std::uint64_t seed_;
  double beta_;
  int episode_ = 0;
  std::unique_ptr<EnvInstance> env_;
  ObsHistory history_;
  json frame_;
};

// ---------------------------------------------------------------------------
// Fan-out of serialized frames to one subscriber

class FrameQueue {
 public:
  using Frame = std::shared_ptr<const std::string>;

  void push(Frame f) {
    {
      std::lock_guard lock(m_);
      if (closed_) return;
      if (q_.size() >= kSubscriberQueue) q_.pop_front();
      q_.push_back(std::move(f));
    }
    cv_.notify_one();
  }
  void close() {
    {
      std::lock_guard lock(m_);
      closed_ = true;
    }
    cv_.notify_all();
  }
  bool closed() const {
    std::lock_guard lock(m_);
    return closed_ && q_.empty();
  }
  /// Next frame, or null on timeout or close.
  Frame pop(std::chrono::milliseconds timeout) {
    std::unique_lock lock(m_);
    cv_.wait_for(lock, timeout, [&] { return closed_ || !q_.empty(); });
    if (q_.empty()) return nullptr;
    Frame f = std::move(q_.front());
    q_.pop_front();
    return f;
  }

 private:
  mutable std::mutex m_;
  std::condition_variable cv_;
  std::deque<Frame> q_;
  bool closed_ = false;
};

// ---------------------------------------------------------------------------
// Threaded session

class Session {
 public:
  Session(SessionCore core, double hz) : core_(std::move(core)), hz_(hz) {
    publish(core_.frame());
    thread_ = std::thread([this] { loop(); });
  }
  ~Session() { stop(); }
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  /// Validated now, applied at the next step boundary; later calls overwrite earlier ones.
  void set_beta(double beta) {
    check_beta(core_.metric(), beta);
    {
      std::lock_guard lock(m_);
      pending_beta_ = beta;
    }
    cv_.notify_all();
  }
  void pause() { command(Command::pause); }
  void resume() { command(Command::resume); }
  void reset() { command(Command::reset); }

  json descriptor() const {
    std::lock_guard lock(m_);
    json d = descriptor_;
    d["state"] = to_string(state_);
    d["hz"] = hz_;
    if (pending_beta_) d["pending_beta"] = *pending_beta_;
    return d;
  }

  /// Replays buffered frames of the current episode with t >= from (default: only the latest).
  std::shared_ptr<FrameQueue> subscribe(std::optional<int> from = std::nullopt) {
    auto q = std::make_shared<FrameQueue>();
    std::lock_guard lock(m_);
    if (stopping_) {
      q->close();
      return q;
    }
    if (!history_.empty()) {
      if (!from) {
        q->push(history_.back().second);
      } else {
        for (const auto& [t, f] : history_)
          if (t >= *from) q->push(f);
      }
    }
    subscribers_.push_back(q);
    return q;
  }

  void stop() {
    {
      std::lock_guard lock(m_);
      if (stopping_) return;
      stopping_ = true;
      for (auto& s : subscribers_) s->close();
      subscribers_.clear();
    }
    cv_.notify_all();
    if (thread_.joinable()) thread_.join();
  }

 private:
  enum class Command { pause, resume, reset };
  using Clock = std::chrono::steady_clock;

  void command(Command c) {
    {
      std::lock_guard lock(m_);
      commands_.push_back(c);
    }
    cv_.notify_all();
  }

  // Caller holds m_. Publishing after a reset starts a fresh history.
  void publish(const json& frame) {
    auto text = std::make_shared<const std::string>(frame.dump());
    const int t = frame.at("t").get<int>();
    if (!history_.empty() && t == 0) history_.clear();
    history_.emplace_back(t, text);
    if (history_.size() > kFrameHistory) history_.pop_front();
    for (auto& s : subscribers_) s->push(text);
    descriptor_ = core_.descriptor();
  }

  void loop() {
    const auto period = std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(1.0 / hz_));
    auto next = Clock::now() + period;
    std::unique_lock lock(m_);
    while (!stopping_) {
      if (state_ == RunState::running)
        cv_.wait_until(lock, next, [&] { return stopping_; });
      else
        cv_.wait(lock, [&] { return stopping_ || !commands_.empty() || pending_beta_; });
      if (stopping_) break;

      // step boundary
      if (pending_beta_) {
        core_.set_beta(*pending_beta_);
        pending_beta_.reset();
        descriptor_ = core_.descriptor();
      }
      bool resumed = false;
      while (!commands_.empty()) {
        const Command c = commands_.front();
        commands_.pop_front();
        if (c == Command::pause && state_ == RunState::running) state_ = RunState::paused;
        if (c == Command::resume) {
          if (state_ == RunState::terminated)
            publish(core_.step());  // terminal frame replayed
          else if (state_ == RunState::paused)
            resumed = true;
        }
        if (c == Command::reset) {
          core_.reset();
          state_ = RunState::paused;
          publish(core_.frame());
        }
      }
      if (resumed) {
        state_ = RunState::running;
        next = Clock::now() + period;
        continue;
      }
      if (state_ != RunState::running || Clock::now() < next) continue;

      publish(core_.step());
      if (core_.terminated()) state_ = RunState::terminated;
      next += period;
      if (next < Clock::now()) next = Clock::now() + period;
    }
  }

  SessionCore core_;
  double hz_;
  mutable std::mutex m_;
  std::condition_variable cv_;
  RunState state_ = RunState::paused;
  std::optional<double> pending_beta_;
  std::deque<Command> commands_;
  std::deque<std::pair<int, FrameQueue::Frame>> history_;
  std::vector<std::shared_ptr<FrameQueue>> subscribers_;
  json descriptor_;
  bool stopping_ = false;
  std::thread thread_;
};

// ---------------------------------------------------------------------------

class SessionManager {
 public:
  explicit SessionManager(CheckpointStore store, std::uint64_t seed = 0) : store_(std::move(store)), seed_(seed) {}
  ~SessionManager() { close_all(); }

  const CheckpointStore& store() const { return store_; }

  json create(const SessionRequest& q) {
    const auto& policy = store_.get(q.checkpoint);
    const auto& critic = store_.get(q.critic.empty() ? q.checkpoint : q.critic);
    std::lock_guard lock(m_);
    const int n = next_id_;
    const std::string id = "s" + std::to_string(n);
    const std::uint64_t seed = q.seed ? *q.seed : derive_seed(seed_, "session", static_cast<std::uint64_t>(n));
    auto s = std::make_shared<Session>(SessionCore(id, policy, critic, q.beta, seed), q.hz);
    ++next_id_;
    sessions_[id] = s;
    return s->descriptor();
  }

  std::shared_ptr<Session> get(const std::string& id) const {
    std::lock_guard lock(m_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw NotFound("unknown session '" + id + "'");
    return it->second;
  }

  void remove(const std::string& id) {
    std::shared_ptr<Session> s;
    {
      std::lock_guard lock(m_);
      auto it = sessions_.find(id);
      if (it == sessions_.end()) throw NotFound("unknown session '" + id + "'");
      s = it->second;
      sessions_.erase(it);
    }
    s->stop();
  }

  json list() const {
    std::lock_guard lock(m_);
    json out = json::array();
    for (const auto& [id, s] : sessions_) out.push_back(s->descriptor());
    return out;
  }

  void close_all() {
    std::map<std::string, std::shared_ptr<Session>> all;
    {
      std::lock_guard lock(m_);
      all.swap(sessions_);
    }
    for (auto& [id, s] : all) s->stop();
  }

 private:
  CheckpointStore store_;
  std::uint64_t seed_;
  mutable std::mutex m_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  int next_id_ = 1;
};

}  // namespace riskrl
