#pragma once

// Planar grab-and-hold: move an effector point to an object on a table, close
// the grip to attach it, carry it to a goal near the table edge and keep it
// there. Carrying fast makes the grip slip; a slipping or pushed object keeps
// sliding and is lost once it crosses the edge. Holding at the goal does not
// end the episode.

#include <array>
#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "riskrl/envs/env.hpp"
#include "riskrl/envs/geometry.hpp"

namespace riskrl {

class GrabHold {
 public:
  static constexpr int kNumLevels = 20;

  struct State {
    Vec2 effector = Vec2::Zero();
    Vec2 velocity = Vec2::Zero();
    Vec2 object = Vec2::Zero();
    Vec2 object_velocity = Vec2::Zero();
    Vec2 goal = Vec2::Zero();
    bool attached = false;
    bool ever_grasped = false;
    std::array<double, 3> prev_action{0.0, 0.0, 0.0};
    int t = 0;
    int level = 0;
    bool terminated = false;
    TerminationCause cause = TerminationCause::none;
  };

  static EnvConfig default_config() {
    EnvConfig c;
    c.task = Task::grabhold;
    c.horizon = 48;
    c.dt = 0.1;
    c.reward_scale = 0.1;
    c.params = {{"table_half_x", 0.6},   {"table_half_y", 0.5},  {"edge_x", 0.6},
                {"v_max", 0.5},          {"grasp_radius", 0.06}, {"push_radius", 0.05},
                {"object_radius", 0.03}, {"slip_base", 0.0},     {"slip_gain", 0.6},
                {"friction", 0.7},       {"goal_x", 0.45},       {"goal_y", 0.0},
                {"object_x", 0.1},       {"object_y", 0.0},      {"num_rays", 16},
                {"ray_range", 1.0},      {"visible_range", 0.8}};
    c.noise = {{"object", 0.03}, {"scan", 0.1}, {"effector", 0.01}};
    c.reward_weights = {{"reach", 1.0},        {"grasp", 5.0},       {"object_goal", 5.0},
                        {"hold", 10.0},        {"pick_success", 20.0}, {"termination", -20.0},
                        {"action_rate", -1e-3}, {"base_vel", -0.01}};
    return c;
  }

  explicit GrabHold(EnvConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    hx_ = cfg_.param("table_half_x");
    hy_ = cfg_.param("table_half_y");
    edge_x_ = cfg_.param("edge_x");
    v_max_ = cfg_.param("v_max");
    grasp_radius_ = cfg_.param("grasp_radius");
    push_radius_ = cfg_.param("push_radius");
    object_radius_ = cfg_.param("object_radius");
    slip_base_ = cfg_.param("slip_base");
    slip_gain_ = cfg_.param("slip_gain");
    friction_ = cfg_.param("friction");
    goal_ = {cfg_.param("goal_x"), cfg_.param("goal_y")};
    nominal_object_ = {cfg_.param("object_x"), cfg_.param("object_y")};
    num_rays_ = static_cast<int>(cfg_.param("num_rays"));
    ray_range_ = cfg_.param("ray_range");
    visible_range_ = cfg_.param("visible_range");
    if (num_rays_ < 1) throw ConfigError("grabhold: num_rays must be >= 1");
  }

  const EnvConfig& config() const { return cfg_; }
  void set_reward_weight(const std::string& term, double w) { cfg_.reward_weights[term] = w; }
  double edge_x() const { return edge_x_; }

  ObsDims dims() const {
    ObsDims d;
    d.teacher_ext = 6;
    d.student_ext = num_rays_;
    d.shared = 13;
    d.critic = 15;
    d.action = 3;
    return d;
  }

  State reset(int level, Rng& rng) const {
    if (level < 0 || level >= kNumLevels) throw ConfigError("grabhold level must lie in [0, 19]");
    const double frac = static_cast<double>(level) / (kNumLevels - 1);
    State s;
    s.level = level;
    s.goal = goal_;
    const double perturb = 0.2 * frac;
    s.object = nominal_object_ + Vec2(uniform(rng, -perturb, perturb), uniform(rng, -perturb, perturb));
    const double dist = 0.5 * frac * uniform(rng, 0.5, 1.0);
    const double angle = uniform(rng, 0.0, 2.0 * M_PI);
    s.effector = s.object + dist * Vec2(std::cos(angle), std::sin(angle));
    s.effector.x() = std::clamp(s.effector.x(), -hx_, hx_);
    s.effector.y() = std::clamp(s.effector.y(), -hy_, hy_);
    return s;
  }

  std::pair<State, StepResult> step(const State& s, std::span<const double> action, Rng& rng) const {
    if (s.terminated) throw ContractViolation("grabhold: step on a terminated episode");
    if (action.size() != 3) throw ConfigError("grabhold expects [vx, vy, grip]");
    State n = s;
    const Vec2 a(std::clamp(action[0], -1.0, 1.0), std::clamp(action[1], -1.0, 1.0));
    const bool grip = action[2] > 0.5;
    n.velocity = v_max_ * a;
    n.effector = s.effector + n.velocity * cfg_.dt;
    n.effector.x() = std::clamp(n.effector.x(), -hx_, hx_);
    n.effector.y() = std::clamp(n.effector.y(), -hy_, hy_);
    n.prev_action = {a.x(), a.y(), std::clamp(action[2], 0.0, 1.0)};
    n.t = s.t + 1;

    if (n.attached && !grip) n.attached = false;
    if (n.attached) {
      const double speed = n.velocity.norm();
      const double p_slip = std::clamp(slip_base_ + slip_gain_ * speed * speed, 0.0, 1.0);
      if (p_slip > 0.0 && uniform(rng, 0.0, 1.0) < p_slip) {
        n.attached = false;
        n.object_velocity = 1.5 * n.velocity + Vec2(0.1 * standard_normal(rng), 0.1 * standard_normal(rng));
      } else {
        n.object = n.effector;
        n.object_velocity = n.velocity;
      }
    }
    if (!n.attached) {
      const double d = (n.effector - n.object).norm();
      if (grip && d < grasp_radius_) {
        n.attached = true;
        n.ever_grasped = true;
        n.object_velocity = Vec2::Zero();
      } else {
        if (d < push_radius_ && n.velocity.norm() > 0.0) n.object_velocity += n.velocity;
        n.object += n.object_velocity * cfg_.dt;
        n.object_velocity *= friction_;
      }
    }

    const bool lost = n.object.x() > edge_x_ || std::abs(n.object.x()) > hx_ + 0.05 ||
                      std::abs(n.object.y()) > hy_ + 0.05;
    const double d_eo = (n.effector - n.object).norm();
    const double d_og = (n.object - n.goal).norm();
    const double k = cfg_.reward_scale;

    StepResult r;
    auto& terms = r.reward_terms;
    terms["reach"] = cfg_.weight("reach") * (1.0 - std::tanh(5.0 * d_eo)) * k;
    terms["grasp"] = n.attached ? cfg_.weight("grasp") * k : 0.0;
    terms["object_goal"] = cfg_.weight("object_goal") * (1.0 - std::tanh(d_og)) * k;
    const bool placed_loose = d_og < 0.25;
    const bool placed = d_og < 0.15;
    terms["hold"] = placed_loose ? cfg_.weight("hold") * (1.0 - std::tanh(n.velocity.norm() / 3.0)) * k : 0.0;
    const bool success = placed && n.object_velocity.norm() < 1.5 && !lost;
    terms["pick_success"] = success ? cfg_.weight("pick_success") * k : 0.0;
    terms["termination"] = lost ? cfg_.weight("termination") * k : 0.0;
    const Vec2 prev(s.prev_action[0], s.prev_action[1]);
    terms["action_rate"] =
        cfg_.weight("action_rate") *
        std::hypot((a - prev).norm(), n.prev_action[2] - s.prev_action[2]) * k;
    terms["base_vel"] = cfg_.weight("base_vel") * n.velocity.norm() * k;
    r.reward_total = sum_terms(terms);
    r.success = success;
    if (lost)
      r.cause = TerminationCause::object_lost;
    else if (n.t >= cfg_.horizon)
      r.cause = TerminationCause::timeout;
    r.terminated = r.cause != TerminationCause::none;
    n.terminated = r.terminated;
    n.cause = r.cause;
    return {n, r};
  }

  bool object_visible(const State& s) const { return (s.object - s.effector).norm() <= visible_range_; }

  PolicyObs observe_teacher(const State& s, double beta, Rng& rng) const {
    PolicyObs o;
    const double a = cfg_.noise_amp("object");
    const bool vis = object_visible(s);
    const Vec2 rel = s.object - s.effector;
    o.exteroceptive = {vis ? noisy(rel.x(), a, rng) : 0.0,
                       vis ? noisy(rel.y(), a, rng) : 0.0,
                       s.attached ? 1.0 : 0.0,
                       edge_x_ - s.object.x(),
                       s.object_velocity.x(),
                       s.object_velocity.y()};
    o.shared = shared_block(s, rng);
    o.beta = beta;
    return o;
  }

  PolicyObs observe_student(const State& s, double beta, Rng& rng) const {
    PolicyObs o;
    const double a = cfg_.noise_amp("scan");
    for (double d : ray_scan(s)) o.exteroceptive.push_back(noisy(d, a, rng));
    o.shared = shared_block(s, rng);
    o.beta = beta;
    return o;
  }

  std::vector<double> observe_critic(const State& s) const {
    return {s.effector.x(),
            s.effector.y(),
            s.velocity.x(),
            s.velocity.y(),
            s.object.x() - s.effector.x(),
            s.object.y() - s.effector.y(),
            s.object_velocity.x(),
            s.object_velocity.y(),
            s.goal.x() - s.object.x(),
            s.goal.y() - s.object.y(),
            s.attached ? 1.0 : 0.0,
            edge_x_ - s.object.x(),
            s.prev_action[0],
            s.prev_action[2],
            static_cast<double>(s.t) / cfg_.horizon};
  }

  /// Distances from the effector to the object disc or the table boundary.
  std::vector<double> ray_scan(const State& s) const {
    std::vector<double> out(num_rays_);
    for (int k = 0; k < num_rays_; ++k) {
      const Vec2 dir = unit_direction(k, num_rays_);
      double d = ray_box_exit(s.effector, dir, hx_, hy_);
      if (!s.attached) d = std::min(d, ray_circle(s.effector, dir, s.object, object_radius_));
      out[k] = std::min(d, ray_range_);
    }
    return out;
  }

  json geometry(const State& s) const {
    return {{"task", "grabhold"},
            {"table", {{"half_x", hx_}, {"half_y", hy_}, {"edge_x", edge_x_}}},
            {"effector", {{"x", s.effector.x()}, {"y", s.effector.y()}}},
            {"object", {{"x", s.object.x()}, {"y", s.object.y()}, {"r", object_radius_}}},
            {"goal", {{"x", s.goal.x()}, {"y", s.goal.y()}, {"r", 0.15}}},
            {"attached", s.attached}};
  }

  json layout(const State& s) const {
    return {{"task", "grabhold"},
            {"level", s.level},
            {"effector", {s.effector.x(), s.effector.y()}},
            {"object", {s.object.x(), s.object.y()}},
            {"goal", {s.goal.x(), s.goal.y()}}};
  }

  State from_layout(const json& j) const {
    State s;
    s.level = j.at("level").get<int>();
    s.effector = {j.at("effector")[0].get<double>(), j.at("effector")[1].get<double>()};
    s.object = {j.at("object")[0].get<double>(), j.at("object")[1].get<double>()};
    s.goal = {j.at("goal")[0].get<double>(), j.at("goal")[1].get<double>()};
    return s;
  }

  /// Curriculum success is a grasp at some point of an episode that did not lose the object.
  Outcome outcome(const State& s) const {
    return (s.ever_grasped && s.cause != TerminationCause::object_lost) ? Outcome::success : Outcome::failure;
  }

 private:
  std::vector<double> shared_block(const State& s, Rng& rng) const {
    const double a = cfg_.noise_amp("effector");
    const bool vis = object_visible(s);
    return {noisy(s.effector.x(), a, rng),
            noisy(s.effector.y(), a, rng),
            s.velocity.x(),
            s.velocity.y(),
            s.goal.x(),
            s.goal.y(),
            vis ? 1.0 : 0.0,
            (s.effector - s.object).norm(),
            (s.object - s.goal).norm(),
            edge_x_ - s.effector.x(),
            s.prev_action[0],
            s.prev_action[1],
            s.prev_action[2]};
  }

  EnvConfig cfg_;
  double hx_, hy_, edge_x_, v_max_, grasp_radius_, push_radius_, object_radius_;
  double slip_base_, slip_gain_, friction_;
  Vec2 goal_, nominal_object_;
  int num_rays_;
  double ray_range_, visible_range_;
};

}  // namespace riskrl
