#pragma once

#include <memory>

#include "riskrl/envs/cliffslip.hpp"
#include "riskrl/envs/env.hpp"
#include "riskrl/envs/grabhold.hpp"
#include "riskrl/envs/riskynav.hpp"

namespace riskrl {

inline EnvConfig default_env_config(Task task) {
  switch (task) {
    case Task::cliffslip: return CliffSlip::default_config();
    case Task::riskynav: return RiskyNav::default_config();
    case Task::grabhold: return GrabHold::default_config();
  }
  return CliffSlip::default_config();
}

/// Environment `index` of a pool; its streams derive from (config.seed, stream name, index).
inline std::unique_ptr<EnvInstance> make_env(const EnvConfig& cfg, std::uint64_t index = 0) {
  switch (cfg.task) {
    case Task::cliffslip: return std::make_unique<BasicEnvInstance<CliffSlip>>(cfg, index);
    case Task::riskynav: return std::make_unique<BasicEnvInstance<RiskyNav>>(cfg, index);
    case Task::grabhold: return std::make_unique<BasicEnvInstance<GrabHold>>(cfg, index);
  }
  throw ConfigError("unknown task");
}

inline ObsDims env_dims(const EnvConfig& cfg) {
  switch (cfg.task) {
    case Task::cliffslip: return CliffSlip(cfg).dims();
    case Task::riskynav: return RiskyNav(cfg).dims();
    case Task::grabhold: return GrabHold(cfg).dims();
  }
  throw ConfigError("unknown task");
}

}  // namespace riskrl
