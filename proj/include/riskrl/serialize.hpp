#pragma once

// JSON encoding of configs, specs and parameters. Readers reject unknown keys
// and report the offending path.

#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "riskrl/envs/factory.hpp"
#include "riskrl/ppo.hpp"

namespace riskrl {

inline constexpr int kFormatVersion = 1;

/// Reads fields of one JSON object, remembering which keys were consumed.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  const std::string& path() const { return path_; }
  std::string child(const std::string& key) const { return path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key); }

  template <class T>
  bool read(const std::string& key, T& out) {
    if (!j_.contains(key)) return false;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(child(key) + ": wrong type");
    }
    return true;
  }

  template <class T>
  T require(const std::string& key) {
    T out{};
    if (!read(key, out)) throw ConfigError(child(key) + ": missing");
    return out;
  }

  const json* object(const std::string& key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError(child(k) + ": unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

/// Reads a map of number values, rejecting names not present in `allowed` (when non-empty).
inline void read_number_map(const json& j, const std::string& path, const std::map<std::string, double>& allowed,
                            std::map<std::string, double>& out) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.empty() && !allowed.count(k)) throw ConfigError(path + "." + k + ": unknown key");
    if (!v.is_number()) throw ConfigError(path + "." + k + ": wrong type");
    out[k] = v.get<double>();
  }
}

// ---------------------------------------------------------------------------
// Environment config

inline json to_json(const EnvConfig& c) {
  return {{"task", to_string(c.task)}, {"horizon", c.horizon},   {"dt", c.dt},
          {"seed", c.seed},            {"noise", c.noise},       {"reward_weights", c.reward_weights},
          {"reward_scale", c.reward_scale}, {"params", c.params}};
}

/// Overlays `j` on the task defaults. The task comes from `j` when present.
inline EnvConfig env_config_from_json(const json& j, const std::string& path, Task default_task) {
  ObjectReader r(j, path);
  std::string task = to_string(default_task);
  r.read("task", task);
  EnvConfig c = default_env_config(task_from_string(task));
  r.read("horizon", c.horizon);
  r.read("dt", c.dt);
  r.read("seed", c.seed);
  r.read("reward_scale", c.reward_scale);
  const auto defaults = default_env_config(c.task);
  if (auto* n = r.object("noise")) read_number_map(*n, r.child("noise"), {}, c.noise);
  if (auto* w = r.object("reward_weights")) read_number_map(*w, r.child("reward_weights"), defaults.reward_weights, c.reward_weights);
  if (auto* p = r.object("params")) read_number_map(*p, r.child("params"), defaults.params, c.params);
  r.finish();
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Trainer config

inline json to_json(const ScheduleEntry& e) { return {{"iteration", e.iteration}, {"weights", e.weights}}; }

inline json to_json(const TrainerConfig& c) {
  json sched = json::array();
  for (const auto& e : c.reward_schedule) sched.push_back(to_json(e));
  return {{"lr", c.lr},
          {"gamma", c.gamma},
          {"lambda", c.lambda},
          {"target_lambda", c.target_lambda},
          {"clip", c.clip},
          {"entropy_coef", c.entropy_coef},
          {"value_coef", c.value_coef},
          {"max_grad_norm", c.max_grad_norm},
          {"target_kl", c.target_kl},
          {"adaptive_lr", c.adaptive_lr},
          {"epochs", c.epochs},
          {"minibatch", c.minibatch},
          {"num_envs", c.num_envs},
          {"steps", c.steps},
          {"iterations", c.iterations},
          {"num_quantiles", c.num_quantiles},
          {"kappa", c.kappa},
          {"stack", c.stack},
          {"embed_dim", c.embed_dim},
          {"encoder_hidden", c.encoder_hidden},
          {"actor_hidden", c.actor_hidden},
          {"critic_hidden", c.critic_hidden},
          {"activation", to_string(c.activation)},
          {"init_log_std", c.init_log_std},
          {"reward_schedule", sched},
          {"seed", c.seed}};
}

inline void read_trainer_config(const json& j, const std::string& path, TrainerConfig& c) {
  ObjectReader r(j, path);
  r.read("lr", c.lr);
  r.read("gamma", c.gamma);
  r.read("lambda", c.lambda);
  r.read("target_lambda", c.target_lambda);
  r.read("clip", c.clip);
  r.read("entropy_coef", c.entropy_coef);
  r.read("value_coef", c.value_coef);
  r.read("max_grad_norm", c.max_grad_norm);
  r.read("target_kl", c.target_kl);
  r.read("adaptive_lr", c.adaptive_lr);
  r.read("epochs", c.epochs);
  r.read("minibatch", c.minibatch);
  r.read("num_envs", c.num_envs);
  r.read("steps", c.steps);
  r.read("iterations", c.iterations);
  r.read("num_quantiles", c.num_quantiles);
  r.read("kappa", c.kappa);
  r.read("stack", c.stack);
  r.read("embed_dim", c.embed_dim);
  r.read("encoder_hidden", c.encoder_hidden);
  r.read("actor_hidden", c.actor_hidden);
  r.read("critic_hidden", c.critic_hidden);
  std::string act = to_string(c.activation);
  if (r.read("activation", act)) {
    try {
      c.activation = activation_from_string(act);
    } catch (const ConfigError&) {
      throw ConfigError(r.child("activation") + ": must be tanh or relu");
    }
  }
  r.read("init_log_std", c.init_log_std);
  r.read("seed", c.seed);
  if (auto* s = r.object("reward_schedule")) {
    if (!s->is_array()) throw ConfigError(r.child("reward_schedule") + ": expected an array");
    c.reward_schedule.clear();
    for (std::size_t i = 0; i < s->size(); ++i) {
      const std::string p = r.child("reward_schedule") + "[" + std::to_string(i) + "]";
      ObjectReader er((*s)[i], p);
      ScheduleEntry e;
      e.iteration = er.require<int>("iteration");
      if (auto* w = er.object("weights")) read_number_map(*w, er.child("weights"), {}, e.weights);
      er.finish();
      c.reward_schedule.push_back(std::move(e));
    }
  }
  r.finish();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Networks

inline json to_json(const MlpSpec& s) { return {{"layer_widths", s.layer_widths}, {"activation", to_string(s.activation)}}; }

inline MlpSpec mlp_spec_from_json(const json& j) {
  MlpSpec s{j.at("layer_widths").get<std::vector<int>>(), activation_from_string(j.at("activation").get<std::string>())};
  s.validate();
  return s;
}

inline json layers_to_json(const std::vector<Layer>& layers) {
  json arr = json::array();
  for (const auto& l : layers) {
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(l.weight.size()));
    for (int r = 0; r < l.weight.rows(); ++r)
      for (int c = 0; c < l.weight.cols(); ++c) w.push_back(l.weight(r, c));
    arr.push_back({{"shape", {l.weight.rows(), l.weight.cols()}},
                   {"weight", w},
                   {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
  }
  return arr;
}

inline std::vector<Layer> layers_from_json(const json& arr, const MlpSpec& spec) {
  if (!arr.is_array() || arr.size() != spec.num_layers()) throw ConfigError("checkpoint: layer count mismatch");
  std::vector<Layer> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto shape = arr[i].at("shape").get<std::vector<int>>();
    if (shape.size() != 2 || shape[0] != spec.layer_widths[i + 1] || shape[1] != spec.layer_widths[i])
      throw ConfigError("checkpoint: layer " + std::to_string(i) + " shape mismatch");
    const auto w = arr[i].at("weight").get<std::vector<double>>();
    const auto b = arr[i].at("bias").get<std::vector<double>>();
    if (w.size() != static_cast<std::size_t>(shape[0] * shape[1]) || b.size() != static_cast<std::size_t>(shape[0]))
      throw ConfigError("checkpoint: layer " + std::to_string(i) + " size mismatch");
    Layer l{Matrix(shape[0], shape[1]), Vector(shape[0])};
    std::size_t k = 0;
    for (int r = 0; r < shape[0]; ++r)
      for (int c = 0; c < shape[1]; ++c) l.weight(r, c) = w[k++];
    for (int r = 0; r < shape[0]; ++r) l.bias(r) = b[r];
    out.push_back(std::move(l));
  }
  return out;
}

inline json to_json(const ParamSet& p) {
  return {{"spec", to_json(p.spec)},
          {"params", layers_to_json(p.layers)},
          {"adam_m", layers_to_json(p.adam_m)},
          {"adam_v", layers_to_json(p.adam_v)},
          {"step_count", p.step_count}};
}

inline ParamSet param_set_from_json(const json& j) {
  ParamSet p;
  p.spec = mlp_spec_from_json(j.at("spec"));
  p.layers = layers_from_json(j.at("params"), p.spec);
  p.adam_m = layers_from_json(j.at("adam_m"), p.spec);
  p.adam_v = layers_from_json(j.at("adam_v"), p.spec);
  p.step_count = j.at("step_count").get<std::int64_t>();
  return p;
}

inline std::vector<double> to_std(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }
inline Vector to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline json to_json(const ParamVector& p) {
  return {{"value", to_std(p.value)}, {"adam_m", to_std(p.adam_m)}, {"adam_v", to_std(p.adam_v)},
          {"step_count", p.step_count}};
}

inline ParamVector param_vector_from_json(const json& j) {
  ParamVector p;
  p.value = to_eigen(j.at("value").get<std::vector<double>>());
  p.adam_m = to_eigen(j.at("adam_m").get<std::vector<double>>());
  p.adam_v = to_eigen(j.at("adam_v").get<std::vector<double>>());
  p.step_count = j.at("step_count").get<std::int64_t>();
  return p;
}

inline json to_json(const ActorSpec& s) {
  return {{"ext_dim", s.ext_dim},
          {"shared_dim", s.shared_dim},
          {"stack", s.stack},
          {"embed_dim", s.embed_dim},
          {"encoder_hidden", s.encoder_hidden},
          {"trunk_hidden", s.trunk_hidden},
          {"activation", to_string(s.activation)},
          {"head", s.head == HeadKind::gaussian ? "gaussian" : "categorical"},
          {"action_dim", s.action_dim},
          {"init_log_std", s.init_log_std}};
}

inline ActorSpec actor_spec_from_json(const json& j) {
  ActorSpec s;
  s.ext_dim = j.at("ext_dim").get<int>();
  s.shared_dim = j.at("shared_dim").get<int>();
  s.stack = j.at("stack").get<int>();
  s.embed_dim = j.at("embed_dim").get<int>();
  s.encoder_hidden = j.at("encoder_hidden").get<std::vector<int>>();
  s.trunk_hidden = j.at("trunk_hidden").get<std::vector<int>>();
  s.activation = activation_from_string(j.at("activation").get<std::string>());
  const auto head = j.at("head").get<std::string>();
  if (head != "gaussian" && head != "categorical") throw ConfigError("checkpoint: unknown head '" + head + "'");
  s.head = head == "gaussian" ? HeadKind::gaussian : HeadKind::categorical;
  s.action_dim = j.at("action_dim").get<int>();
  s.init_log_std = j.at("init_log_std").get<double>();
  return s;
}

inline json to_json(const Actor& a) {
  json j = {{"spec", to_json(a.spec)}, {"encoder", to_json(a.encoder)}, {"trunk", to_json(a.trunk)}};
  if (a.spec.head == HeadKind::gaussian) j["log_std"] = to_json(a.log_std);
  return j;
}

inline Actor actor_from_json(const json& j) {
  Actor a;
  a.spec = actor_spec_from_json(j.at("spec"));
  a.encoder = param_set_from_json(j.at("encoder"));
  a.trunk = param_set_from_json(j.at("trunk"));
  if (!(a.encoder.spec == a.spec.encoder_mlp()) || !(a.trunk.spec == a.spec.trunk_mlp()))
    throw ConfigError("checkpoint: actor network specs disagree with the actor spec");
  if (a.spec.head == HeadKind::gaussian) {
    a.log_std = param_vector_from_json(j.at("log_std"));
    if (a.log_std.value.size() != a.spec.action_dim) throw ConfigError("checkpoint: log_std size mismatch");
  }
  return a;
}

inline json to_json(const CriticSpec& s) {
  return {{"input_dim", s.input_dim}, {"hidden", s.hidden}, {"num_quantiles", s.num_quantiles},
          {"activation", to_string(s.activation)}};
}

inline json to_json(const Critic& c) { return {{"spec", to_json(c.spec)}, {"net", to_json(c.net)}}; }

inline Critic critic_from_json(const json& j) {
  Critic c;
  const json& s = j.at("spec");
  c.spec.input_dim = s.at("input_dim").get<int>();
  c.spec.hidden = s.at("hidden").get<std::vector<int>>();
  c.spec.num_quantiles = s.at("num_quantiles").get<int>();
  c.spec.activation = activation_from_string(s.at("activation").get<std::string>());
  c.net = param_set_from_json(j.at("net"));
  if (!(c.net.spec == c.spec.mlp())) throw ConfigError("checkpoint: critic network spec mismatch");
  return c;
}

// ---------------------------------------------------------------------------
// Files

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFound("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

inline void write_json_file(const std::string& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

}  // namespace riskrl
