// riskrl: train | distill | eval | oracle | serve | gradcheck
//
// Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or input.
// Failures print one JSON line on stderr: {"error":{"code":N,"kind":"...","message":"..."}}

#include <malloc.h>
#include <signal.h>

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "riskrl/config.hpp"
#include "riskrl/gradcheck.hpp"
#include "riskrl/oracle.hpp"
#include "riskrl/serve.hpp"

using namespace riskrl;
namespace fs = std::filesystem;

namespace {

struct Failure {
  int code;
  std::string kind;
  std::string message;
};

int fail(const Failure& f) {
  std::cerr << json{{"error", {{"code", f.code}, {"kind", f.kind}, {"message", f.message}}}}.dump() << std::endl;
  return f.code;
}

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out, task, metric;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON run config");
  app->add_option("--set", c.overrides, "Override a config key, e.g. --set trainer.lr=3e-4 (repeatable)");
  app->add_option("--seed", c.seed, "Master seed");
  app->add_option("--out", c.out, "Output directory");
  app->add_option("--task", c.task, "cliffslip | riskynav | grabhold");
  app->add_option("--metric", c.metric, "neutral | wang | cvar");
}

// Flags are applied last, so they win over the file.
RunConfig resolve(const Common& c, std::vector<std::string> extra = {}) {
  std::vector<std::string> o = c.overrides;
  if (c.seed) o.push_back("seed=" + std::to_string(*c.seed));
  if (!c.out.empty()) o.push_back("output_dir=" + json(c.out).dump());
  if (!c.task.empty()) o.push_back("task=" + json(c.task).dump());
  if (!c.metric.empty()) o.push_back("metric=" + json(c.metric).dump());
  o.insert(o.end(), extra.begin(), extra.end());
  return resolve_config(c.config, o);
}

fs::path prepare_output(const RunConfig& c) {
  const fs::path dir(c.output_dir);
  fs::create_directories(dir);
  write_json_file((dir / "resolved_config.json").string(), to_json(c));
  return dir;
}

int cmd_train(const Common& common, std::optional<int> iterations, bool quiet) {
  std::vector<std::string> extra;
  if (iterations) extra.push_back("trainer.iterations=" + std::to_string(*iterations));
  const RunConfig c = resolve(common, extra);
  TeacherTrainer trainer(c.trainer, c.env, c.metric);
  const fs::path dir = prepare_output(c);
  std::ofstream metrics(dir / "metrics.jsonl", std::ios::trunc);
  for (int i = 0; i < c.trainer.iterations; ++i) {
    const IterationStats s = trainer.step();
    metrics << to_json(s).dump() << "\n";
    if (!quiet && (i % 10 == 0 || i + 1 == c.trainer.iterations))
      std::cerr << "iter " << i << " return " << s.mean_return << " success " << s.success_rate << " level "
                << s.mean_level << "\n";
  }
  const fs::path ck = dir / "teacher.json";
  save_checkpoint(ck.string(), make_teacher_checkpoint(trainer));
  std::cout << json{{"checkpoint", ck.string()}, {"hash", file_hash(ck.string())}}.dump() << std::endl;
  return 0;
}

int cmd_distill(const Common& common, const std::string& teacher_path, bool phase_a_only, bool quiet) {
  std::vector<std::string> extra;
  if (phase_a_only) extra.push_back("distill.phase_b=false");
  const RunConfig c = resolve(common, extra);
  const Checkpoint teacher = load_checkpoint(teacher_path);
  Distiller d(c.distill, teacher, file_hash(teacher_path));
  const fs::path dir = prepare_output(c);
  std::ofstream metrics(dir / "distill_metrics.jsonl", std::ios::trunc);
  d.run([&](const DistillRoundStats& s) {
    metrics << to_json(s).dump() << "\n";
    if (!quiet) std::cerr << "round " << s.round << " phase " << s.phase << " val_mse " << s.validation_mse << "\n";
  });
  const fs::path ck = dir / "student.json";
  save_checkpoint(ck.string(), d.student_checkpoint());
  std::cout << json{{"checkpoint", ck.string()}, {"hash", file_hash(ck.string())}}.dump() << std::endl;
  return 0;
}

int cmd_eval(const Common& common, const std::string& checkpoint_path) {
  const RunConfig c = resolve(common);
  const Checkpoint ck = load_checkpoint(checkpoint_path);
  const EvalProtocol p = make_protocol(c, ck);
  p.validate();
  const EvalReport rep = run_eval(p, ck);
  const fs::path dir = prepare_output(c);
  write_json_file((dir / "protocol.json").string(), to_json(p));
  export_report(rep, (dir / "report").string());
  std::cout << json{{"report", (dir / "report").string()}}.dump() << std::endl;
  return 0;
}

int cmd_oracle(const Common& common, std::optional<double> beta) {
  std::vector<std::string> extra;
  if (beta) extra.push_back("oracle.beta=" + json(*beta).dump());
  const RunConfig c = resolve(common, extra);
  if (c.task != Task::cliffslip) throw ConfigError("config.task: the oracle needs the tabular cliffslip task");
  const RiskSpec spec(c.metric, c.oracle.beta);
  try {
    spec.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config.oracle.beta: ") + e.what());
  }
  const int horizon = c.oracle.horizon > 0 ? c.oracle.horizon : c.env.horizon;
  const TabularMdp m = env_to_mdp(c.env, c.oracle.gamma);
  const RiskVIResult vi = risk_value_iteration(m, spec, horizon);
  const auto policy = vi.as_policy();
  const auto dist = distributional_eval(m, policy, horizon);
  const auto path = nominal_path(c.env, policy, horizon);
  json out = {{"format_version", kFormatVersion},
              {"task", "cliffslip"},
              {"metric", to_string(c.metric)},
              {"beta", spec.beta},
              {"horizon", horizon},
              {"gamma", c.oracle.gamma},
              {"width", static_cast<int>(c.env.param("width"))},
              {"height", static_cast<int>(c.env.param("height"))},
              {"start", m.start},
              {"greedy_policy", vi.policy.front()},
              {"values", vi.values.front()},
              {"policy_table", vi.policy},
              {"fall_probability", hazard_entry_probability(m, policy, horizon, m.start, cliff_cells(c.env))},
              {"nominal_path", path},
              {"min_cliff_distance", min_cliff_distance(c.env, path)},
              {"start_return_distribution", to_json(dist.front()[m.start])}};
  const fs::path dir = prepare_output(c);
  write_json_file((dir / "oracle.json").string(), out);
  std::cout << out.dump() << std::endl;
  return 0;
}

int cmd_gradcheck(int specs, std::uint64_t seed) {
  const GradSuiteResult r = gradient_suite(specs, seed);
  json j = to_json(r);
  j["tolerance"] = 1e-4;
  j["pass"] = r.max_error() < 1e-4;
  std::cout << j.dump() << std::endl;
  return r.max_error() < 1e-4 ? 0 : 1;
}

int cmd_serve(const Common& common, const std::string& checkpoints, const std::string& host, int port) {
  const RunConfig c = resolve(common);
  if (port < 0 || port > 65535) throw ConfigError("--port: must lie in [0, 65535]");
  SessionManager sessions(CheckpointStore::from_directory(checkpoints), c.seed);

  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);  // inherited by server threads

  Server server(sessions);
  const unsigned short bound = server.start(host, static_cast<unsigned short>(port));
  std::cout << json{{"listening", host + ":" + std::to_string(bound)}, {"port", bound}}.dump() << std::endl;
  int sig = 0;
  sigwait(&set, &sig);
  server.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  // Training allocates and frees many short-lived large matrices; keep them off mmap.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);

  CLI::App app{"Risk-aware distributional actor-critic: training, distillation, evaluation, oracle, serving"};
  app.require_subcommand(1);
  Common common;
  bool quiet = false;

  auto* train = app.add_subcommand("train", "Train a beta-conditioned teacher; writes teacher.json and metrics.jsonl");
  add_common(train, common);
  std::optional<int> iterations;
  train->add_option("--iterations", iterations, "PPO iterations (trainer.iterations)");
  train->add_flag("--quiet", quiet, "No progress lines");

  auto* distill = app.add_subcommand("distill", "Distil a teacher into a student; writes student.json");
  add_common(distill, common);
  std::string teacher_path;
  bool phase_a_only = false;
  distill->add_option("--teacher", teacher_path, "Teacher checkpoint")->required();
  distill->add_flag("--phase-a-only", phase_a_only, "Skip the student-driven phase (ablation)");
  distill->add_flag("--quiet", quiet, "No progress lines");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint over a beta sweep; writes report/");
  add_common(eval, common);
  std::string checkpoint_path;
  eval->add_option("--checkpoint", checkpoint_path, "Teacher or student checkpoint")->required();

  auto* oracle = app.add_subcommand("oracle", "Exact risk-sensitive value iteration on cliffslip; prints JSON");
  add_common(oracle, common);
  std::optional<double> beta;
  oracle->add_option("--beta", beta, "Risk parameter (oracle.beta)");

  auto* serve = app.add_subcommand("serve", "Live rollout service (HTTP control, WebSocket frames)");
  add_common(serve, common);
  std::string checkpoints = ".", host = "127.0.0.1";
  int port = 8080;
  serve->add_option("--checkpoints", checkpoints, "Directory of checkpoint JSON files");
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Bind port (0 picks a free port)");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of MLP and quantile-loss gradients");
  int specs = 50;
  std::uint64_t grad_seed = 0;
  gradcheck->add_option("--specs", specs, "Randomized cases");
  gradcheck->add_option("--seed", grad_seed, "Seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail({2, "usage", e.what()});
  }

  try {
    if (*train) return cmd_train(common, iterations, quiet);
    if (*distill) return cmd_distill(common, teacher_path, phase_a_only, quiet);
    if (*eval) return cmd_eval(common, checkpoint_path);
    if (*oracle) return cmd_oracle(common, beta);
    if (*serve) return cmd_serve(common, checkpoints, host, port);
    if (*gradcheck) return cmd_gradcheck(specs, grad_seed);
  } catch (const ConfigError& e) {
    return fail({2, "config", e.what()});
  } catch (const NotFound& e) {
    return fail({2, "not_found", e.what()});
  } catch (const json::exception& e) {
    return fail({2, "config", std::string("malformed JSON: ") + e.what()});
  } catch (const NumericError& e) {
    return fail({1, "numeric", e.what()});
  } catch (const std::exception& e) {
    return fail({1, "runtime", e.what()});
  }
  return 0;
}
