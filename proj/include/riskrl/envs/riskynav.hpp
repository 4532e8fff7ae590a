#pragma once

// Planar navigation to a goal past static discs and one randomly moving disc.
// The agent is a holonomic disc commanded by a 2D velocity, scaled into the unit disc, times v_max.

#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "riskrl/envs/env.hpp"
#include "riskrl/envs/geometry.hpp"

namespace riskrl {

class RiskyNav {
 public:
  static constexpr int kNumLevels = 10;

  struct State {
    Vec2 agent = Vec2::Zero();
    Vec2 velocity = Vec2::Zero();
    Vec2 goal = Vec2::Zero();
    Vec2 obstacle = Vec2::Zero();         // dynamic disc
    Vec2 obstacle_anchor = Vec2::Zero();  // centre its walk reverts to
    std::vector<Vec2> statics;
    Vec2 prev_action = Vec2::Zero();
    int t = 0;
    int level = 0;
    bool terminated = false;
    TerminationCause cause = TerminationCause::none;
  };

  static EnvConfig default_config() {
    EnvConfig c;
    c.task = Task::riskynav;
    c.horizon = 96;
    c.dt = 0.1;
    c.params = {{"arena_half", 3.0},       {"agent_radius", 0.15},    {"obstacle_radius", 0.3},
                {"static_radius", 0.25},   {"num_static", 2},         {"v_max", 1.0},
                {"obstacle_step", 0.08},   {"obstacle_reversion", 0.05}, {"obstacle_offset", 0.3},
                {"goal_threshold", 0.15},  {"num_rays", 16},          {"ray_range", 3.0},
                {"sense_range", 3.0},      {"goal_range_min", 0.25},  {"goal_range_max", 2.0}};
    c.noise = {{"scan", 0.1}, {"obstacle", 0.05}};
    c.reward_weights = {{"goal", 10.0},         {"progress", 10.0},     {"termination", -5.0},
                        {"alive", -0.03},       {"padded_alive", -0.03}, {"action_rate", -0.005},
                        {"base_vel", -0.005}};
    return c;
  }

  explicit RiskyNav(EnvConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    half_ = cfg_.param("arena_half");
    r_agent_ = cfg_.param("agent_radius");
    r_obs_ = cfg_.param("obstacle_radius");
    r_static_ = cfg_.param("static_radius");
    num_static_ = static_cast<int>(cfg_.param("num_static"));
    v_max_ = cfg_.param("v_max");
    step_scale_ = cfg_.param("obstacle_step");
    reversion_ = cfg_.param("obstacle_reversion");
    offset_ = cfg_.param("obstacle_offset");
    goal_threshold_ = cfg_.param("goal_threshold");
    num_rays_ = static_cast<int>(cfg_.param("num_rays"));
    ray_range_ = cfg_.param("ray_range");
    sense_range_ = cfg_.param("sense_range");
    goal_min_ = cfg_.param("goal_range_min");
    goal_max_ = cfg_.param("goal_range_max");
    if (num_static_ < 0 || num_rays_ < 1) throw ConfigError("riskynav: bad obstacle or ray count");
    if (goal_max_ + r_agent_ >= half_) throw ConfigError("riskynav: goal range exceeds arena");
  }

  const EnvConfig& config() const { return cfg_; }
  void set_reward_weight(const std::string& term, double w) { cfg_.reward_weights[term] = w; }
  double goal_threshold() const { return goal_threshold_; }
  double arena_half() const { return half_; }
  int num_rays() const { return num_rays_; }

  /// Half-width of the goal sampling box at a curriculum level.
  double goal_range(int level) const {
    return goal_min_ + (goal_max_ - goal_min_) * static_cast<double>(level) / (kNumLevels - 1);
  }

  ObsDims dims() const {
    ObsDims d;
    d.teacher_ext = 2 * num_static_ + 3;
    d.student_ext = num_rays_;
    d.shared = 10;
    d.critic = 11 + 2 * num_static_;
    d.action = 2;
    return d;
  }

  State reset(int level, Rng& rng) const {
    if (level < 0 || level >= kNumLevels) throw ConfigError("riskynav level must lie in [0, 9]");
    State s;
    s.level = level;
    const double g = goal_range(level);
    s.goal = {uniform(rng, -g, g), uniform(rng, -g, g)};

    // Dynamic obstacle walks around a point beside the start-goal midpoint; the
    // offset is widened when the segment is too short to keep start and goal clear.
    const Vec2 mid = 0.5 * s.goal;
    const double len = s.goal.norm();
    const Vec2 along = len > 1e-9 ? Vec2(s.goal / len) : Vec2(1.0, 0.0);
    const Vec2 perp(-along.y(), along.x());
    double off = uniform(rng, -offset_, offset_);
    const double clear = r_agent_ + r_obs_ + 0.25;
    const double needed = std::sqrt(std::max(0.0, clear * clear - 0.25 * len * len));
    if (std::abs(off) < needed) off = off < 0.0 ? -needed : needed;
    s.obstacle_anchor = mid + off * perp;
    s.obstacle = s.obstacle_anchor;

    const double lim = half_ - r_static_ - 0.2;
    for (int i = 0; i < num_static_; ++i) {
      Vec2 p;
      for (int attempt = 0; attempt < 1000; ++attempt) {
        p = {uniform(rng, -lim, lim), uniform(rng, -lim, lim)};
        if (static_placement_ok(s, p)) break;
      }
      s.statics.push_back(p);
    }
    return s;
  }

  std::pair<State, StepResult> step(const State& s, std::span<const double> action, Rng& rng) const {
    if (s.terminated) throw ContractViolation("riskynav: step on a terminated episode");
    if (action.size() != 2) throw ConfigError("riskynav expects a 2D velocity action");
    State n = s;
    Vec2 a(action[0], action[1]);
    if (!a.allFinite()) throw NumericError("riskynav: non-finite action");
    if (a.norm() > 1.0) a.normalize();
    n.velocity = v_max_ * a;
    n.agent = s.agent + n.velocity * cfg_.dt;
    n.obstacle = walk(s.obstacle, s.obstacle_anchor, rng);
    n.prev_action = a;
    n.t = s.t + 1;

    const double prev_dist = (s.agent - s.goal).norm();
    const double dist = (n.agent - n.goal).norm();
    const bool collided = in_collision(n);
    const bool reached = !collided && dist < goal_threshold_;

    StepResult r;
    const double k = cfg_.reward_scale;
    auto& terms = r.reward_terms;
    terms["goal"] = reached ? cfg_.weight("goal") * k : 0.0;
    terms["progress"] = cfg_.weight("progress") * (prev_dist - dist) * k;
    terms["termination"] = collided ? cfg_.weight("termination") * k : 0.0;
    terms["alive"] = (collided || reached) ? 0.0 : cfg_.weight("alive") * k;
    terms["padded_alive"] = collided ? cfg_.weight("padded_alive") * (cfg_.horizon - n.t) * k : 0.0;
    terms["action_rate"] = cfg_.weight("action_rate") * (a - s.prev_action).norm() * k;
    terms["base_vel"] = cfg_.weight("base_vel") * n.velocity.norm() * k;
    r.reward_total = sum_terms(terms);

    if (collided)
      r.cause = TerminationCause::collision;
    else if (reached)
      r.cause = TerminationCause::goal;
    else if (n.t >= cfg_.horizon)
      r.cause = TerminationCause::timeout;
    r.success = reached;
    r.terminated = r.cause != TerminationCause::none;
    n.terminated = r.terminated;
    n.cause = r.cause;
    return {n, r};
  }

  bool in_collision(const State& s) const {
    if (std::abs(s.agent.x()) > half_ - r_agent_ || std::abs(s.agent.y()) > half_ - r_agent_) return true;
    if ((s.agent - s.obstacle).norm() < r_agent_ + r_obs_) return true;
    for (const auto& p : s.statics)
      if ((s.agent - p).norm() < r_agent_ + r_static_) return true;
    return false;
  }

  PolicyObs observe_teacher(const State& s, double beta, Rng& rng) const {
    PolicyObs o;
    for (const auto& p : s.statics) {
      o.exteroceptive.push_back(p.x() - s.agent.x());
      o.exteroceptive.push_back(p.y() - s.agent.y());
    }
    const Vec2 rel = s.obstacle - s.agent;
    const double a = cfg_.noise_amp("obstacle");
    if (rel.norm() <= sense_range_) {
      o.exteroceptive.push_back(1.0);
      o.exteroceptive.push_back(noisy(rel.x(), a, rng));
      o.exteroceptive.push_back(noisy(rel.y(), a, rng));
    } else {
      o.exteroceptive.insert(o.exteroceptive.end(), {0.0, 0.0, 0.0});
    }
    o.shared = shared_block(s);
    o.beta = beta;
    return o;
  }

  PolicyObs observe_student(const State& s, double beta, Rng& rng) const {
    PolicyObs o;
    const auto scan = ray_scan(s);
    const double a = cfg_.noise_amp("scan");
    for (double d : scan) o.exteroceptive.push_back(noisy(d, a, rng));
    o.shared = shared_block(s);
    o.beta = beta;
    return o;
  }

  std::vector<double> observe_critic(const State& s) const {
    std::vector<double> v{s.agent.x(),  s.agent.y(),  s.velocity.x(), s.velocity.y(),
                          s.goal.x() - s.agent.x(), s.goal.y() - s.agent.y(),
                          s.obstacle.x() - s.agent.x(), s.obstacle.y() - s.agent.y()};
    for (const auto& p : s.statics) {
      v.push_back(p.x() - s.agent.x());
      v.push_back(p.y() - s.agent.y());
    }
    v.push_back(s.prev_action.x());
    v.push_back(s.prev_action.y());
    v.push_back(static_cast<double>(s.t) / cfg_.horizon);
    return v;
  }

  /// Noise-free distances from the agent centre along evenly spaced rays, capped at ray_range.
  std::vector<double> ray_scan(const State& s) const {
    std::vector<double> out(num_rays_);
    for (int k = 0; k < num_rays_; ++k) {
      const Vec2 dir = unit_direction(k, num_rays_);
      double d = ray_box_exit(s.agent, dir, half_, half_);
      d = std::min(d, ray_circle(s.agent, dir, s.obstacle, r_obs_));
      for (const auto& p : s.statics) d = std::min(d, ray_circle(s.agent, dir, p, r_static_));
      out[k] = std::min(d, ray_range_);
    }
    return out;
  }

  json geometry(const State& s) const {
    json statics = json::array();
    for (const auto& p : s.statics) statics.push_back({{"x", p.x()}, {"y", p.y()}, {"r", r_static_}});
    return {{"task", "riskynav"},
            {"arena_half", half_},
            {"agent", {{"x", s.agent.x()}, {"y", s.agent.y()}, {"r", r_agent_}}},
            {"goal", {{"x", s.goal.x()}, {"y", s.goal.y()}, {"r", goal_threshold_}}},
            {"dynamic", {{"x", s.obstacle.x()}, {"y", s.obstacle.y()}, {"r", r_obs_}}},
            {"statics", statics}};
  }

  json layout(const State& s) const {
    json statics = json::array();
    for (const auto& p : s.statics) statics.push_back({p.x(), p.y()});
    return {{"task", "riskynav"},
            {"level", s.level},
            {"goal", {s.goal.x(), s.goal.y()}},
            {"obstacle_anchor", {s.obstacle_anchor.x(), s.obstacle_anchor.y()}},
            {"statics", statics}};
  }

  State from_layout(const json& j) const {
    State s;
    s.level = j.at("level").get<int>();
    s.goal = {j.at("goal")[0].get<double>(), j.at("goal")[1].get<double>()};
    s.obstacle_anchor = {j.at("obstacle_anchor")[0].get<double>(), j.at("obstacle_anchor")[1].get<double>()};
    s.obstacle = s.obstacle_anchor;
    for (const auto& p : j.at("statics")) s.statics.emplace_back(p[0].get<double>(), p[1].get<double>());
    if (static_cast<int>(s.statics.size()) != num_static_)
      throw ConfigError("riskynav layout has the wrong number of static obstacles");
    return s;
  }

  Outcome outcome(const State& s) const {
    return s.cause == TerminationCause::goal ? Outcome::success : Outcome::failure;
  }

 private:
  std::vector<double> shared_block(const State& s) const {
    return {s.agent.x(),  s.agent.y(),  s.velocity.x(), s.velocity.y(), s.goal.x(),
            s.goal.y(),   s.goal.x() - s.agent.x(), s.goal.y() - s.agent.y(),
            s.prev_action.x(), s.prev_action.y()};
  }

  bool static_placement_ok(const State& s, const Vec2& p) const {
    if (p.norm() < r_static_ + r_agent_ + 0.35) return false;
    if ((p - s.goal).norm() < r_static_ + goal_threshold_ + 0.3) return false;
    if ((p - s.obstacle_anchor).norm() < r_static_ + r_obs_ + 0.4) return false;
    for (const auto& q : s.statics)
      if ((p - q).norm() < 2.0 * r_static_ + 0.3) return false;
    return true;
  }

  // Mean-reverting Gaussian step, reflected at the arena walls.
  Vec2 walk(const Vec2& p, const Vec2& anchor, Rng& rng) const {
    Vec2 n = p - reversion_ * (p - anchor);
    n.x() += step_scale_ * standard_normal(rng);
    n.y() += step_scale_ * standard_normal(rng);
    const double lim = half_ - r_obs_;
    for (int i = 0; i < 2; ++i) {
      if (n[i] > lim) n[i] = 2.0 * lim - n[i];
      if (n[i] < -lim) n[i] = -2.0 * lim - n[i];
    }
    return n;
  }

  EnvConfig cfg_;
  double half_, r_agent_, r_obs_, r_static_;
  int num_static_;
  double v_max_, step_scale_, reversion_, offset_, goal_threshold_;
  int num_rays_;
  double ray_range_, sense_range_, goal_min_, goal_max_;
};

}  // namespace riskrl
