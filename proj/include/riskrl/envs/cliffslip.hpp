#pragma once

// Slippery cliff grid. Cells are indexed y * width + x with y = 0 the bottom row:
// start (0, 0), goal (width - 1, 0), cliff cells between them on the bottom row.
// With probability p_slip the commanded move is replaced by a uniformly random one.

#include <array>
#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "riskrl/envs/env.hpp"

namespace riskrl {

class CliffSlip {
 public:
  static constexpr int kNumLevels = 1;
  static constexpr int kNumActions = 4;  // up, right, down, left
  static constexpr std::array<int, 4> kDx{0, 1, 0, -1};
  static constexpr std::array<int, 4> kDy{1, 0, -1, 0};

  struct State {
    int x = 0;
    int y = 0;
    int t = 0;
    int level = 0;
    int prev_action = -1;
    bool terminated = false;
    TerminationCause cause = TerminationCause::none;
  };

  static EnvConfig default_config() {
    EnvConfig c;
    c.task = Task::cliffslip;
    c.horizon = 40;
    c.dt = 1.0;
    c.params = {{"width", 4}, {"height", 3}, {"p_slip", 0.1}};
    c.reward_weights = {{"step", -1.0}, {"cliff", -50.0}, {"goal", 10.0}};
    return c;
  }

  explicit CliffSlip(EnvConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    width_ = static_cast<int>(cfg_.param("width"));
    height_ = static_cast<int>(cfg_.param("height"));
    p_slip_ = cfg_.param("p_slip");
    if (width_ < 3 || height_ < 2) throw ConfigError("cliffslip grid must be at least 3x2");
    if (p_slip_ < 0.0 || p_slip_ > 1.0) throw ConfigError("cliffslip p_slip must lie in [0, 1]");
  }

  const EnvConfig& config() const { return cfg_; }
  void set_reward_weight(const std::string& term, double w) { cfg_.reward_weights[term] = w; }
  int width() const { return width_; }
  int height() const { return height_; }
  int num_cells() const { return width_ * height_; }
  double p_slip() const { return p_slip_; }

  int cell(int x, int y) const { return y * width_ + x; }
  bool is_cliff(int x, int y) const { return y == 0 && x > 0 && x < width_ - 1; }
  bool is_goal(int x, int y) const { return y == 0 && x == width_ - 1; }

  /// Cell reached by moving in `dir` from (x, y); bumping a wall stays put.
  std::pair<int, int> move(int x, int y, int dir) const {
    const int nx = x + kDx[dir];
    const int ny = y + kDy[dir];
    if (nx < 0 || nx >= width_ || ny < 0 || ny >= height_) return {x, y};
    return {nx, ny};
  }

  /// Reward terms for the transition into (nx, ny).
  RewardTerms transition_terms(int nx, int ny) const {
    RewardTerms terms;
    terms["step"] = cfg_.weight("step") * cfg_.reward_scale;
    terms["cliff"] = is_cliff(nx, ny) ? cfg_.weight("cliff") * cfg_.reward_scale : 0.0;
    terms["goal"] = is_goal(nx, ny) ? cfg_.weight("goal") * cfg_.reward_scale : 0.0;
    return terms;
  }

  ObsDims dims() const {
    ObsDims d;
    d.teacher_ext = num_cells();
    d.student_ext = 4;
    d.shared = 0;
    d.critic = num_cells() + 1;
    d.action = 1;
    d.discrete_actions = kNumActions;
    return d;
  }

  State reset(int level, Rng&) const {
    if (level != 0) throw ConfigError("cliffslip has a single curriculum level (0)");
    return State{};
  }

  std::pair<State, StepResult> step(const State& s, std::span<const double> action, Rng& rng) const {
    if (s.terminated) throw ContractViolation("cliffslip: step on a terminated episode");
    if (action.size() != 1) throw ConfigError("cliffslip expects one discrete action");
    const int commanded = static_cast<int>(action[0]);
    if (commanded < 0 || commanded >= kNumActions) throw ConfigError("cliffslip action out of range");
    int dir = commanded;
    if (p_slip_ > 0.0 && uniform(rng, 0.0, 1.0) < p_slip_)
      dir = std::uniform_int_distribution<int>(0, kNumActions - 1)(rng);
    State n = s;
    std::tie(n.x, n.y) = move(s.x, s.y, dir);
    n.t = s.t + 1;
    n.prev_action = commanded;
    StepResult r;
    r.reward_terms = transition_terms(n.x, n.y);
    r.reward_total = sum_terms(r.reward_terms);
    if (is_cliff(n.x, n.y)) {
      r.cause = TerminationCause::collision;
    } else if (is_goal(n.x, n.y)) {
      r.cause = TerminationCause::goal;
      r.success = true;
    } else if (n.t >= cfg_.horizon) {
      r.cause = TerminationCause::timeout;
    }
    r.terminated = r.cause != TerminationCause::none;
    n.terminated = r.terminated;
    n.cause = r.cause;
    return {n, r};
  }

  PolicyObs observe_teacher(const State& s, double beta, Rng&) const {
    PolicyObs o;
    o.exteroceptive.assign(num_cells(), 0.0);
    o.exteroceptive[cell(s.x, s.y)] = 1.0;
    o.beta = beta;
    return o;
  }

  /// Free cells before a wall or cliff in each direction, plus uniform noise.
  PolicyObs observe_student(const State& s, double beta, Rng& rng) const {
    PolicyObs o;
    const double a = cfg_.noise_amp("scan");
    for (int dir = 0; dir < kNumActions; ++dir) {
      int x = s.x, y = s.y, free = 0;
      while (true) {
        auto [nx, ny] = move(x, y, dir);
        if ((nx == x && ny == y) || is_cliff(nx, ny)) break;
        ++free;
        x = nx;
        y = ny;
      }
      o.exteroceptive.push_back(noisy(free, a, rng));
    }
    o.beta = beta;
    return o;
  }

  std::vector<double> observe_critic(const State& s) const {
    std::vector<double> v(num_cells() + 1, 0.0);
    v[cell(s.x, s.y)] = 1.0;
    v.back() = static_cast<double>(s.t) / cfg_.horizon;
    return v;
  }

  json geometry(const State& s) const {
    std::vector<int> cliff;
    for (int x = 1; x < width_ - 1; ++x) cliff.push_back(x);
    return {{"task", "cliffslip"}, {"width", width_}, {"height", height_}, {"agent", {s.x, s.y}},
            {"goal", {width_ - 1, 0}}, {"cliff_columns", cliff}};
  }

  json layout(const State&) const { return {{"task", "cliffslip"}, {"level", 0}}; }
  State from_layout(const json&) const { return State{}; }

  Outcome outcome(const State& s) const {
    return s.cause == TerminationCause::goal ? Outcome::success : Outcome::failure;
  }

 private:
  EnvConfig cfg_;
  int width_ = 4;
  int height_ = 3;
  double p_slip_ = 0.1;
};

}  // namespace riskrl
