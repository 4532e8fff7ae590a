#pragma once

// Versioned JSON checkpoints for teachers (actor + critic) and students (actor).

#include <cstdio>
#include <optional>
#include <sstream>
#include <string>

#include "riskrl/serialize.hpp"

namespace riskrl {

enum class CheckpointKind { teacher, student };

struct Checkpoint {
  CheckpointKind kind = CheckpointKind::teacher;
  Task task = Task::cliffslip;
  RiskMetric metric = RiskMetric::neutral;
  std::uint64_t seed = 0;
  int iteration = 0;
  EnvConfig env;
  Actor actor;
  std::optional<Critic> critic;
  json trainer;  // resolved training config of the run that produced it
  std::string teacher_hash;  // students only

  ObsMode obs_mode() const { return kind == CheckpointKind::teacher ? ObsMode::teacher : ObsMode::student; }
};

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string content_hash(const std::string& bytes) { return hex64(detail::fnv1a(bytes)); }

inline json to_json(const Checkpoint& c) {
  const auto range = beta_range(c.metric);
  json meta = {{"task", to_string(c.task)},
               {"metric", to_string(c.metric)},
               {"beta_range", {range.lo, range.hi}},
               {"seed", c.seed},
               {"iteration", c.iteration}};
  json j = {{"format_version", kFormatVersion},
            {"kind", c.kind == CheckpointKind::teacher ? "teacher" : "student"},
            {"metadata", meta},
            {"env", to_json(c.env)},
            {"trainer", c.trainer},
            {"actor", to_json(c.actor)}};
  if (c.critic) j["critic"] = to_json(*c.critic);
  if (c.kind == CheckpointKind::student) j["provenance"] = {{"teacher_hash", c.teacher_hash}};
  return j;
}

inline Checkpoint checkpoint_from_json(const json& j) {
  try {
    if (j.at("format_version").get<int>() != kFormatVersion)
      throw ConfigError("checkpoint: unsupported format_version");
    Checkpoint c;
    const auto kind = j.at("kind").get<std::string>();
    if (kind != "teacher" && kind != "student") throw ConfigError("checkpoint: unknown kind '" + kind + "'");
    c.kind = kind == "teacher" ? CheckpointKind::teacher : CheckpointKind::student;
    const json& meta = j.at("metadata");
    c.task = task_from_string(meta.at("task").get<std::string>());
    c.metric = metric_from_string(meta.at("metric").get<std::string>());
    c.seed = meta.at("seed").get<std::uint64_t>();
    c.iteration = meta.at("iteration").get<int>();
    c.env = env_config_from_json(j.at("env"), "env", c.task);
    c.trainer = j.value("trainer", json::object());
    c.actor = actor_from_json(j.at("actor"));
    if (j.contains("critic")) c.critic = critic_from_json(j.at("critic"));
    if (c.kind == CheckpointKind::student) c.teacher_hash = j.at("provenance").at("teacher_hash").get<std::string>();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("checkpoint: malformed (") + e.what() + ")");
  }
}

inline std::string serialize_checkpoint(const Checkpoint& c) { return to_json(c).dump() + "\n"; }

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  write_text_file(path, serialize_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::string& path) { return checkpoint_from_json(read_json_file(path)); }

inline std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return content_hash(ss.str());
}

inline Checkpoint make_teacher_checkpoint(const TeacherTrainer& t) {
  Checkpoint c;
  c.kind = CheckpointKind::teacher;
  c.task = t.env_config().task;
  c.metric = t.metric();
  c.seed = t.config().seed;
  c.iteration = t.iteration();
  c.env = t.env_config();
  c.actor = t.actor();
  c.critic = t.critic();
  c.trainer = to_json(t.config());
  return c;
}

}  // namespace riskrl
