#pragma once

// Run configuration shared by every CLI subcommand.
//
// Schema (all keys optional, unknown keys rejected):
//   {"format_version": 1, "task": str, "metric": str, "seed": int, "output_dir": str,
//    "env": {...}, "trainer": {...}, "distill": {...}, "eval": {...}, "oracle": {...}}
// Section seeds default to the master seed; modules fan them out into named streams.

#include <filesystem>

#include "riskrl/checkpoint.hpp"
#include "riskrl/distill.hpp"
#include "riskrl/eval.hpp"

namespace riskrl {

struct EvalSettings {
  int num_envs = 32;
  int level = -1;  // -1: the task's max level
  int rollouts_per_env = 25;
  std::vector<double> betas;  // empty: the metric's default sweep
  double alpha = 0.2;
  int bootstrap_iters = 2000;
  double confidence = 0.95;
  std::optional<std::uint64_t> seed;
};

struct OracleSettings {
  double beta = 0.0;
  int horizon = -1;  // -1: the env horizon
  double gamma = 0.95;
};

struct RunConfig {
  Task task = Task::riskynav;
  RiskMetric metric = RiskMetric::wang;
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  EnvConfig env = default_env_config(Task::riskynav);
  TrainerConfig trainer;
  DistillConfig distill;
  EvalSettings eval;
  OracleSettings oracle;
};

inline json to_json(const DistillConfig& c) {
  return {{"warmup_episodes", c.warmup_episodes}, {"rounds", c.rounds},
          {"steps_per_round", c.steps_per_round}, {"num_envs", c.num_envs},
          {"lr", c.lr},                           {"minibatch", c.minibatch},
          {"updates_per_round", c.updates_per_round}, {"buffer_capacity", c.buffer_capacity},
          {"validation_envs", c.validation_envs}, {"validation_steps", c.validation_steps},
          {"encoder_hidden", c.encoder_hidden},   {"phase_b", c.phase_b},
          {"seed", c.seed}};
}

inline void read_distill_config(const json& j, const std::string& path, DistillConfig& c) {
  ObjectReader r(j, path);
  r.read("warmup_episodes", c.warmup_episodes);
  r.read("rounds", c.rounds);
  r.read("steps_per_round", c.steps_per_round);
  r.read("num_envs", c.num_envs);
  r.read("lr", c.lr);
  r.read("minibatch", c.minibatch);
  r.read("updates_per_round", c.updates_per_round);
  r.read("buffer_capacity", c.buffer_capacity);
  r.read("validation_envs", c.validation_envs);
  r.read("validation_steps", c.validation_steps);
  r.read("encoder_hidden", c.encoder_hidden);
  r.read("phase_b", c.phase_b);
  r.read("seed", c.seed);
  r.finish();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

inline json to_json(const EvalSettings& e) {
  json j = {{"num_envs", e.num_envs}, {"level", e.level},
            {"rollouts_per_env", e.rollouts_per_env}, {"betas", e.betas},
            {"alpha", e.alpha}, {"bootstrap_iters", e.bootstrap_iters},
            {"confidence", e.confidence}};
  if (e.seed) j["seed"] = *e.seed;
  return j;
}

inline void read_eval_settings(const json& j, const std::string& path, EvalSettings& e) {
  ObjectReader r(j, path);
  r.read("num_envs", e.num_envs);
  r.read("level", e.level);
  r.read("rollouts_per_env", e.rollouts_per_env);
  r.read("betas", e.betas);
  r.read("alpha", e.alpha);
  r.read("bootstrap_iters", e.bootstrap_iters);
  r.read("confidence", e.confidence);
  std::uint64_t seed = 0;
  if (r.read("seed", seed)) e.seed = seed;
  r.finish();
  if (e.num_envs < 1) throw ConfigError(r.child("num_envs") + ": must be >= 1");
}

inline json to_json(const OracleSettings& o) {
  return {{"beta", o.beta}, {"horizon", o.horizon}, {"gamma", o.gamma}};
}

inline void read_oracle_settings(const json& j, const std::string& path, OracleSettings& o) {
  ObjectReader r(j, path);
  r.read("beta", o.beta);
  r.read("horizon", o.horizon);
  r.read("gamma", o.gamma);
  r.finish();
  if (!(o.gamma > 0.0 && o.gamma <= 1.0)) throw ConfigError(r.child("gamma") + ": must lie in (0, 1]");
}

inline json to_json(const RunConfig& c) {
  return {{"format_version", kFormatVersion},
          {"task", to_string(c.task)},
          {"metric", to_string(c.metric)},
          {"seed", c.seed},
          {"output_dir", c.output_dir},
          {"env", to_json(c.env)},
          {"trainer", to_json(c.trainer)},
          {"distill", to_json(c.distill)},
          {"eval", to_json(c.eval)},
          {"oracle", to_json(c.oracle)}};
}

/// Strict parse; every error names its key path ("config.trainer.lr: ...").
inline RunConfig run_config_from_json(const json& j) {
  const std::string root = "config";
  ObjectReader r(j, root);
  RunConfig c;
  int version = kFormatVersion;
  if (r.read("format_version", version) && version != kFormatVersion)
    throw ConfigError(r.child("format_version") + ": unsupported version " + std::to_string(version));
  std::string s;
  if (r.read("task", s)) {
    try {
      c.task = task_from_string(s);
    } catch (const ConfigError&) {
      throw ConfigError(r.child("task") + ": unknown task '" + s + "'");
    }
  }
  if (r.read("metric", s)) {
    try {
      c.metric = metric_from_string(s);
    } catch (const ConfigError&) {
      throw ConfigError(r.child("metric") + ": unknown metric '" + s + "'");
    }
  }
  r.read("seed", c.seed);
  r.read("output_dir", c.output_dir);
  c.trainer.seed = c.seed;
  c.distill.seed = c.seed;
  c.env = default_env_config(c.task);
  c.env.seed = c.seed;

  json env = json::object();
  if (auto* e = r.object("env")) env = *e;
  if (!env.is_object()) throw ConfigError(r.child("env") + ": expected an object");
  if (env.contains("task") && env["task"] != to_string(c.task))
    throw ConfigError(r.child("env") + ".task: conflicts with task '" + to_string(c.task) + "'");
  if (!env.contains("seed")) env["seed"] = c.seed;
  env["task"] = to_string(c.task);
  try {
    c.env = env_config_from_json(env, r.child("env"), c.task);
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    throw ConfigError(msg.rfind(root, 0) == 0 ? msg : r.child("env") + ": " + msg);
  }
  if (auto* t = r.object("trainer")) read_trainer_config(*t, r.child("trainer"), c.trainer);
  if (auto* d = r.object("distill")) read_distill_config(*d, r.child("distill"), c.distill);
  if (auto* e = r.object("eval")) read_eval_settings(*e, r.child("eval"), c.eval);
  if (auto* o = r.object("oracle")) read_oracle_settings(*o, r.child("oracle"), c.oracle);
  r.finish();
  return c;
}

/// Sets `value` at a dotted key path, creating objects on the way ("trainer.lr").
inline void set_path(json& j, const std::string& dotted, json value) {
  json* node = &j;
  std::size_t start = 0;
  for (;;) {
    const auto dot = dotted.find('.', start);
    const std::string key = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("override '" + dotted + "': empty key");
    if (!node->is_object()) throw ConfigError("override '" + dotted + "': '" + key + "' is not inside an object");
    if (dot == std::string::npos) {
      (*node)[key] = std::move(value);
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

/// Parses "path=value"; the value is read as JSON, falling back to a plain string.
inline void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "': expected key=value");
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  set_path(j, assignment.substr(0, eq), std::move(value));
}

/// Precedence: overrides > file > defaults.
inline RunConfig resolve_config(const std::string& file, const std::vector<std::string>& overrides) {
  json j = json::object();
  if (!file.empty()) {
    if (!std::filesystem::exists(file)) throw ConfigError("config: file '" + file + "' not found");
    j = read_json_file(file);
    if (!j.is_object()) throw ConfigError("config: expected an object");
  }
  for (const auto& o : overrides) apply_override(j, o);
  return run_config_from_json(j);
}

inline EvalProtocol make_protocol(const RunConfig& c, const Checkpoint& ck) {
  EvalProtocol p;
  p.env = ck.env;
  p.metric = ck.metric;
  p.rollouts_per_env = c.eval.rollouts_per_env;
  p.betas = c.eval.betas.empty() ? default_betas(ck.metric) : c.eval.betas;
  p.alpha = c.eval.alpha;
  p.bootstrap_iters = c.eval.bootstrap_iters;
  p.confidence = c.eval.confidence;
  p.seed = c.eval.seed ? *c.eval.seed : c.seed;
  p.layouts = make_layouts(p.env, c.eval.num_envs, c.eval.level, p.seed);
  return p;
}

}  // namespace riskrl
