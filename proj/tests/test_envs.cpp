#include <gtest/gtest.h>

#include "riskrl/envs/factory.hpp"

using namespace riskrl;

namespace {

EnvConfig cliff_config(double p_slip) {
  EnvConfig c = default_env_config(Task::cliffslip);
  c.params["p_slip"] = p_slip;
  return c;
}

std::vector<double> act(int a) { return {static_cast<double>(a)}; }

}  // namespace

TEST(CliffSlip, SafePathIsDeterministicWithoutSlip) {
  auto env = make_env(cliff_config(0.0));
  env->reset();
  const auto& w = env->config().reward_weights;
  // up, right x3, down: 5 steps to the goal along the row above the cliff
  double ret = 0.0;
  StepResult r;
  for (int a : {0, 1, 1, 1, 2}) {
    ASSERT_FALSE(env->terminated());
    r = env->step(act(a));
    ret += r.reward_total;
  }
  EXPECT_TRUE(env->terminated());
  EXPECT_TRUE(r.success);
  EXPECT_EQ(r.cause, TerminationCause::goal);
  EXPECT_DOUBLE_EQ(ret, 5 * w.at("step") + w.at("goal"));
}

TEST(CliffSlip, HandSimulatedRewards) {
  auto env = make_env(cliff_config(0.0));
  env->reset();
  // action 0 (up) forever: up, then bumps the top wall until timeout
  const double step = env->config().weight("step");
  int n = 0;
  while (!env->terminated()) {
    const auto r = env->step(act(0));
    EXPECT_DOUBLE_EQ(r.reward_total, step);
    EXPECT_EQ(r.reward_terms.at("cliff"), 0.0);
    ++n;
  }
  EXPECT_EQ(n, env->config().horizon);
  EXPECT_EQ(env->episode_outcome(), Outcome::failure);
}

TEST(CliffSlip, CliffTerminates) {
  auto env = make_env(cliff_config(0.0));
  env->reset();
  const auto r = env->step(act(1));
  EXPECT_TRUE(r.terminated);
  EXPECT_EQ(r.cause, TerminationCause::collision);
  EXPECT_DOUBLE_EQ(r.reward_total, env->config().weight("step") + env->config().weight("cliff"));
  EXPECT_THROW(env->step(act(1)), ContractViolation);
}

TEST(CliffSlip, SlipFrequency) {
  // From (0,1) commanding "up": a slip picks one of 4 moves uniformly, so the
  // agent leaves the intended cell with probability 3/4 * p_slip.
  auto cfg = cliff_config(0.4);
  CliffSlip m(cfg);
  Rng rng(17);
  int off = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    CliffSlip::State s;
    s.y = 1;
    const auto [next, r] = m.step(s, act(0), rng);
    off += !(next.x == 0 && next.y == 2);
  }
  EXPECT_NEAR(off / static_cast<double>(n), 0.75 * 0.4, 4e-3);
}

TEST(CliffSlip, ObservationsAndValidation) {
  auto env = make_env(cliff_config(0.1));
  env->reset();
  const auto o = env->observe_teacher(0.3);
  EXPECT_EQ(o.exteroceptive.size(), 12u);
  EXPECT_EQ(o.exteroceptive[0], 1.0);
  EXPECT_EQ(o.beta, 0.3);
  const auto s = env->observe_student(0.0);
  // up: 2 free cells; right: cliff; down/left: wall
  EXPECT_EQ(s.exteroceptive, (std::vector<double>{2, 0, 0, 0}));
  EXPECT_THROW(env->step(act(4)), ConfigError);
  EXPECT_THROW(env->reset_at_level(1), ConfigError);
  auto bad = cliff_config(1.5);
  EXPECT_THROW(make_env(bad), ConfigError);
}

TEST(Curriculum, ScriptedOutcomes) {
  EXPECT_EQ(curriculum_update(3, Outcome::success, 9), 4);
  EXPECT_EQ(curriculum_update(3, Outcome::failure, 9), 2);
  EXPECT_EQ(curriculum_update(0, Outcome::failure, 9), 0);
  EXPECT_EQ(curriculum_update(9, Outcome::success, 9), 9);

  auto env = make_env(default_env_config(Task::riskynav));
  const std::vector<Outcome> script{Outcome::success, Outcome::success, Outcome::failure, Outcome::success};
  int expected = 0;
  for (Outcome o : script) {
    env->record_outcome(o);
    expected = o == Outcome::success ? expected + 1 : expected - 1;
    EXPECT_EQ(env->tracked_level(), expected);
  }
  env->pin_level(true);
  env->record_outcome(Outcome::failure);
  EXPECT_EQ(env->tracked_level(), expected);
}

TEST(Curriculum, UniformAtMax) {
  auto env = make_env(default_env_config(Task::riskynav));
  env->set_tracked_level(9);
  std::vector<int> counts(10, 0);
  for (int i = 0; i < 5000; ++i) {
    env->reset();
    ++counts[env->episode_level()];
  }
  for (int c : counts) EXPECT_NEAR(c / 5000.0, 0.1, 0.025);
}

TEST(RiskyNav, ActionScaledIntoUnitDisc) {
  RiskyNav m(default_env_config(Task::riskynav));
  Rng rng(1);
  auto s = m.reset(0, rng);
  const double v = m.config().param("v_max");
  const std::vector<double> big{3.0, 4.0};
  const auto [n, r] = m.step(s, big, rng);
  EXPECT_NEAR(n.velocity.x(), 0.6 * v, 1e-12);
  EXPECT_NEAR(n.velocity.y(), 0.8 * v, 1e-12);
  const std::vector<double> small{0.3, -0.2};
  const auto [n2, r2] = m.step(s, small, rng);
  EXPECT_NEAR(n2.velocity.x(), 0.3 * v, 1e-12);
  const std::vector<double> nan{std::nan(""), 0.0};
  EXPECT_THROW(m.step(s, nan, rng), NumericError);
}

TEST(RiskyNav, ProgressAndTerminations) {
  RiskyNav m(default_env_config(Task::riskynav));
  Rng rng(2);
  RiskyNav::State s = m.reset(3, rng);
  s.statics.clear();
  s.obstacle = s.obstacle_anchor = Vec2(2.5, 2.5);
  s.goal = Vec2(0.5, 0.0);
  Rng frozen(0);
  const std::vector<double> right{1.0, 0.0};
  auto [n, r] = m.step(s, right, frozen);
  const double dt = m.config().dt;
  EXPECT_NEAR(r.reward_terms.at("progress"), m.config().weight("progress") * dt, 1e-12);
  EXPECT_FALSE(r.terminated);
  while (!r.terminated) std::tie(n, r) = m.step(n, right, frozen);
  EXPECT_EQ(r.cause, TerminationCause::goal);
  EXPECT_TRUE(r.success);

  // driving into the dynamic disc collides and pads the remaining alive penalty
  RiskyNav::State c = s;
  c.obstacle = c.obstacle_anchor = Vec2(0.4, 0.0);
  c.goal = Vec2(2.0, 0.0);
  EnvConfig still = m.config();
  still.params["obstacle_step"] = 0.0;
  RiskyNav ms(still);
  std::tie(n, r) = ms.step(c, right, frozen);
  while (!r.terminated) std::tie(n, r) = ms.step(n, right, frozen);
  EXPECT_EQ(r.cause, TerminationCause::collision);
  EXPECT_DOUBLE_EQ(r.reward_terms.at("termination"), still.weight("termination"));
  EXPECT_DOUBLE_EQ(r.reward_terms.at("padded_alive"), still.weight("padded_alive") * (still.horizon - n.t));
  EXPECT_EQ(r.reward_terms.at("alive"), 0.0);
}

TEST(RiskyNav, RewardTotalIsSumOfTerms) {
  auto env = make_env(default_env_config(Task::riskynav), 3);
  env->reset_at_level(9);
  Rng rng(9);
  while (!env->terminated()) {
    const std::vector<double> a{uniform(rng, -1, 1), uniform(rng, -1, 1)};
    const auto r = env->step(a);
    EXPECT_DOUBLE_EQ(r.reward_total, sum_terms(r.reward_terms));
  }
}

// Dynamics, reset and noise streams are separate: extra noisy observations on
// one copy must not perturb the obstacle walk or the reset sampling.
TEST(RiskyNav, StreamsAreIndependent) {
  const EnvConfig c = default_env_config(Task::riskynav);
  auto a = make_env(c, 0);
  auto b = make_env(c, 0);
  for (int i = 0; i < 7; ++i) (void)b->observe_teacher(0.0);
  a->reset_at_level(5);
  b->reset_at_level(5);
  EXPECT_EQ(a->layout(), b->layout());
  for (int i = 0; i < 20 && !a->terminated(); ++i) {
    const std::vector<double> act{0.5, 0.1};
    for (int k = 0; k < 3; ++k) (void)b->observe_student(0.0);
    a->step(act);
    b->step(act);
    EXPECT_EQ(a->geometry(), b->geometry());
  }

  // noisy observations differ across noise seeds only through the noise channel
  EnvConfig n = default_env_config(Task::riskynav);
  auto x = make_env(n, 0);
  x->reset_at_level(2);
  const json layout = x->layout();
  auto y = make_env(n, 1);
  y->reset_to_layout(layout, 5);
  x->reset_to_layout(layout, 5);
  EXPECT_EQ(x->observe_teacher(0.0).shared, y->observe_teacher(0.0).shared);
}

TEST(RiskyNav, LayoutRoundTrip) {
  auto env = make_env(default_env_config(Task::riskynav), 4);
  env->reset_at_level(7);
  const json l = env->layout();
  auto other = make_env(default_env_config(Task::riskynav), 9);
  other->reset_to_layout(l, 1);
  EXPECT_EQ(other->layout(), l);
  EXPECT_EQ(other->episode_level(), 7);
}

TEST(RiskyNav, RayScanAgainstGeometry) {
  RiskyNav m(default_env_config(Task::riskynav));
  Rng rng(3);
  RiskyNav::State s = m.reset(0, rng);
  s.agent = Vec2(0.0, 0.0);
  s.statics.clear();
  s.obstacle = Vec2(1.0, 0.0);
  const auto scan = m.ray_scan(s);
  EXPECT_NEAR(scan[0], 1.0 - m.config().param("obstacle_radius"), 1e-12);  // +x hits the disc
  EXPECT_NEAR(scan[4], std::min(3.0, m.arena_half()), 1e-12);             // +y hits the wall
}

TEST(GrabHold, GraspCarryAndHoldDoesNotTerminate) {
  EnvConfig c = default_env_config(Task::grabhold);
  c.params["slip_gain"] = 0.0;
  GrabHold m(c);
  Rng rng(4);
  GrabHold::State s = m.reset(0, rng);
  EXPECT_EQ(s.effector, s.object);
  const std::vector<double> grip{0.0, 0.0, 1.0};
  auto [n, r] = m.step(s, grip, rng);
  EXPECT_TRUE(n.attached);
  // carry slowly towards the goal (slow enough not to slip)
  for (int i = 0; i < 40 && !r.terminated; ++i) {
    const Vec2 d = n.goal - n.effector;
    const double speed = std::min(0.3, d.norm() / (m.config().param("v_max") * m.config().dt));
    const Vec2 v = d.norm() > 1e-9 ? Vec2(d.normalized() * speed) : Vec2::Zero();
    const std::vector<double> a{v.x(), v.y(), 1.0};
    std::tie(n, r) = m.step(n, a, rng);
  }
  EXPECT_FALSE(r.terminated);
  EXPECT_TRUE(n.attached);
  EXPECT_GT(r.reward_terms.at("hold"), 0.0);
}

TEST(GrabHold, ObjectOverEdgeTerminates) {
  GrabHold m(default_env_config(Task::grabhold));
  Rng rng(5);
  GrabHold::State s = m.reset(0, rng);
  s.object = Vec2(m.edge_x() - 0.01, 0.0);
  s.object_velocity = Vec2(1.0, 0.0);
  s.effector = Vec2(-0.5, 0.0);
  const std::vector<double> idle{0.0, 0.0, 0.0};
  auto [n, r] = m.step(s, idle, rng);
  EXPECT_TRUE(r.terminated);
  EXPECT_EQ(r.cause, TerminationCause::object_lost);
  EXPECT_LT(r.reward_terms.at("termination"), 0.0);
}

TEST(Factory, DimsAndTaskNames) {
  for (Task t : {Task::cliffslip, Task::riskynav, Task::grabhold}) {
    EXPECT_EQ(task_from_string(to_string(t)), t);
    auto env = make_env(default_env_config(t));
    const auto d = env_dims(env->config());
    env->reset();
    const auto o = env->observe_teacher(0.0);
    EXPECT_EQ(static_cast<int>(o.exteroceptive.size()), d.teacher_ext);
    EXPECT_EQ(static_cast<int>(o.shared.size()), d.shared);
    EXPECT_EQ(static_cast<int>(env->observe_student(0.0).exteroceptive.size()), d.student_ext);
    EXPECT_EQ(static_cast<int>(env->observe_critic().size()), d.critic);
  }
  EXPECT_THROW(task_from_string("maze"), ConfigError);
}
