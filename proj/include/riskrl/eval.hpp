#pragma once

// Evaluation over beta sweeps: deterministic rollouts on serialized layouts,
// rates, returns, empirical CVaR, bootstrap intervals and report export.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "riskrl/checkpoint.hpp"

namespace riskrl {

/// Mean of the floor(alpha * M) smallest samples (at least one).
inline double empirical_cvar(std::vector<double> samples, double alpha) {
  if (samples.empty()) throw ConfigError("empirical_cvar: empty sample");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("empirical_cvar: alpha must lie in (0, 1]");
  std::sort(samples.begin(), samples.end());
  const std::size_t k =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(alpha * static_cast<double>(samples.size()) + 1e-9)));
  double s = 0.0;
  for (std::size_t i = 0; i < k; ++i) s += samples[i];
  return s / static_cast<double>(k);
}

inline double sample_mean(const std::vector<double>& v) {
  if (v.empty()) return std::nan("");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

/// Ranks starting at 1; tied values share their average rank.
inline std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = 0.5 * static_cast<double>(i + j) + 1.0;
    i = j + 1;
  }
  return r;
}

/// Pearson correlation of the average ranks; NaN when either side is constant.
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw ConfigError("spearman: need two equal-length samples of size >= 2");
  const auto ra = average_ranks(a), rb = average_ranks(b);
  const double ma = sample_mean(ra), mb = sample_mean(rb);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::nan("");
  return sab / std::sqrt(saa * sbb);
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

using Statistic = std::function<double(const std::vector<double>&)>;

/// Percentile bootstrap. When `strata` is non-empty, resampling draws with
/// replacement within each stratum, keeping stratum sizes.
inline Interval bootstrap_ci(const std::vector<double>& samples, const std::vector<int>& strata,
                             const Statistic& stat, int iters, double confidence, Rng& rng) {
  if (samples.empty()) throw ConfigError("bootstrap_ci: empty sample");
  if (iters < 100) throw ConfigError("bootstrap_ci: at least 100 resamples required");
  if (!(confidence > 0.0 && confidence < 1.0)) throw ConfigError("bootstrap_ci: confidence must lie in (0, 1)");
  if (!strata.empty() && strata.size() != samples.size()) throw ConfigError("bootstrap_ci: strata size mismatch");
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < samples.size(); ++i) groups[strata.empty() ? 0 : strata[i]].push_back(i);
  std::vector<double> stats(iters);
  std::vector<double> resample(samples.size());
  for (int b = 0; b < iters; ++b) {
    std::size_t k = 0;
    for (const auto& [g, idx] : groups) {
      std::uniform_int_distribution<std::size_t> pick(0, idx.size() - 1);
      for (std::size_t j = 0; j < idx.size(); ++j) resample[k++] = samples[idx[pick(rng)]];
    }
    stats[b] = stat(resample);
  }
  std::sort(stats.begin(), stats.end());
  const double a = 0.5 * (1.0 - confidence);
  auto at = [&](double q) {
    const auto i = static_cast<std::size_t>(std::floor(q * static_cast<double>(iters - 1) + 1e-9));
    return stats[std::min(i, stats.size() - 1)];
  };
  return {at(a), at(1.0 - a)};
}

// ---------------------------------------------------------------------------
// Protocol and rollouts

struct EvalProtocol {
  EnvConfig env;
  json layouts = json::array();
  int rollouts_per_env = 25;
  std::vector<double> betas;
  RiskMetric metric = RiskMetric::wang;
  double alpha = 0.2;
  int bootstrap_iters = 2000;
  double confidence = 0.95;
  std::uint64_t seed = 0;

  int num_envs() const { return static_cast<int>(layouts.size()); }

  void validate() const {
    if (rollouts_per_env < 1) throw ConfigError("eval.rollouts_per_env must be >= 1");
    if (layouts.empty()) throw ConfigError("eval.num_envs must be >= 1");
    if (betas.empty()) throw ConfigError("eval.betas must not be empty");
    for (double b : betas) {
      if (!beta_in_range(metric, b)) throw ConfigError("eval.betas: beta outside the metric's range");
      if (metric == RiskMetric::cvar && b < 0.05) throw ConfigError("eval.betas: cvar sweeps require beta >= 0.05");
    }
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("eval.alpha must lie in (0, 1]");
    if (bootstrap_iters < 100) throw ConfigError("eval.bootstrap_iters must be >= 100");
    if (!(confidence > 0.0 && confidence < 1.0)) throw ConfigError("eval.confidence must lie in (0, 1)");
  }
};

inline std::vector<double> default_betas(RiskMetric m) {
  switch (m) {
    case RiskMetric::wang: return {-1.0, -0.5, 0.0, 0.5, 1.0};
    case RiskMetric::cvar: return {0.05, 0.15, 0.25, 0.5, 1.0};
    case RiskMetric::neutral: return {0.0};
  }
  return {0.0};
}

/// Samples `num_envs` layouts at `level` (max level when negative).
inline json make_layouts(const EnvConfig& env, int num_envs, int level, std::uint64_t seed) {
  json out = json::array();
  for (int i = 0; i < num_envs; ++i) {
    EnvConfig c = env;
    c.seed = derive_seed(seed, "layout", static_cast<std::uint64_t>(i));
    auto inst = make_env(c, 0);
    inst->reset_at_level(level < 0 ? inst->num_levels() - 1 : level);
    out.push_back(inst->layout());
  }
  return out;
}

struct RolloutRecord {
  int env_id = 0;
  int rollout_id = 0;
  double beta = 0.0;
  double ret = 0.0;
  int length = 0;
  TerminationCause cause = TerminationCause::none;
  bool success = false;
  RewardTerms terms;

  bool failure() const { return cause == TerminationCause::collision || cause == TerminationCause::object_lost; }
};

/// Maps a batch of stacked observations to env-facing actions (one column each).
using BatchPolicy = std::function<Matrix(const ActorInput&)>;

inline BatchPolicy deterministic_policy(const Actor& actor) {
  return [&actor](const ActorInput& in) {
    const Matrix out = actor_forward(actor, in).out;
    Matrix acts(actor.spec.env_action_dim(), out.cols());
    for (Eigen::Index i = 0; i < out.cols(); ++i) acts.col(i) = mean_action(actor, out.col(i));
    return acts;
  };
}

/// Uniform random actions in [-1, 1] (or uniform categories), seeded.
inline BatchPolicy random_policy(const ActorSpec& spec, std::uint64_t seed) {
  auto rng = std::make_shared<Rng>(make_rng(seed, "random_policy"));
  return [spec, rng](const ActorInput& in) {
    Matrix acts(spec.env_action_dim(), in.ext.cols());
    for (Eigen::Index i = 0; i < acts.cols(); ++i)
      for (Eigen::Index d = 0; d < acts.rows(); ++d)
        acts(d, i) = spec.head == HeadKind::categorical
                         ? static_cast<double>(std::uniform_int_distribution<int>(0, spec.action_dim - 1)(*rng))
                         : uniform(*rng, -1.0, 1.0);
    return acts;
  };
}

inline std::uint64_t rollout_stream_seed(const EvalProtocol& p, int env_id, int rollout_id) {
  return derive_seed(p.seed, "rollout", static_cast<std::uint64_t>(env_id) * 100000 + rollout_id);
}

/// Runs every (layout, rollout) pair once at `beta`, all episodes stepped as one batch.
/// Rollout streams depend only on (seed, env, rollout) so betas share noise.
inline std::vector<RolloutRecord> run_rollouts(const EvalProtocol& p, const ActorSpec& spec, ObsMode mode,
                                               const BatchPolicy& policy, double beta) {
  const int n = p.num_envs() * p.rollouts_per_env;
  std::vector<std::unique_ptr<EnvInstance>> envs;
  std::vector<ObsHistory> hist;
  std::vector<RolloutRecord> recs(n);
  auto observe = [&](int k) {
    return mode == ObsMode::teacher ? envs[k]->observe_teacher(beta) : envs[k]->observe_student(beta);
  };
  for (int e = 0; e < p.num_envs(); ++e)
    for (int r = 0; r < p.rollouts_per_env; ++r) {
      const int k = e * p.rollouts_per_env + r;
      envs.push_back(make_env(p.env, 0));
      envs.back()->reset_to_layout(p.layouts[e], rollout_stream_seed(p, e, r));
      hist.emplace_back(spec.stack);
      hist.back().reset(observe(k));
      recs[k].env_id = e;
      recs[k].rollout_id = r;
      recs[k].beta = beta;
    }
  std::vector<int> alive(n);
  std::iota(alive.begin(), alive.end(), 0);
  while (!alive.empty()) {
    ActorInput in = make_actor_input(spec, static_cast<Eigen::Index>(alive.size()));
    for (std::size_t j = 0; j < alive.size(); ++j) hist[alive[j]].write(in, static_cast<Eigen::Index>(j));
    const Matrix acts = policy(in);
    std::vector<int> still;
    for (std::size_t j = 0; j < alive.size(); ++j) {
      const int k = alive[j];
      const Vector a = acts.col(static_cast<Eigen::Index>(j));
      const StepResult s = envs[k]->step(std::span<const double>(a.data(), a.size()));
      auto& rec = recs[k];
      rec.ret += s.reward_total;
      rec.length += 1;
      for (const auto& [name, v] : s.reward_terms) rec.terms[name] += v;
      if (s.success) rec.success = true;
      if (s.terminated) {
        rec.cause = s.cause;
      } else {
        hist[k].push(observe(k));
        still.push_back(k);
      }
    }
    alive = std::move(still);
  }
  return recs;
}

// ---------------------------------------------------------------------------
// Aggregation

struct Estimate {
  double value = std::nan("");
  std::optional<Interval> ci;
};

struct BetaSummary {
  double beta = 0.0;
  int n = 0;
  std::map<std::string, Estimate> metrics;  // success_rate, failure_rate, ...
  std::map<std::string, Estimate> terms;    // mean cumulative reward per term
};

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"success_rate",    "failure_rate",     "timeout_rate",
                                              "mean_return",     "cvar_return",      "time_to_success",
                                              "time_to_failure"};
  return names;
}

struct EvalReport {
  std::string task;
  std::string metric;
  double alpha = 0.2;
  double confidence = 0.95;
  std::vector<BetaSummary> per_beta;
  std::vector<RolloutRecord> raw;

  const BetaSummary& at(double beta) const {
    for (const auto& b : per_beta)
      if (b.beta == beta) return b;
    throw NotFound("no summary for beta " + std::to_string(beta));
  }
};

inline Estimate estimate(const std::vector<double>& x, const std::vector<int>& strata, const Statistic& stat,
                         const EvalProtocol& p, Rng& rng) {
  Estimate e;
  if (x.empty()) return e;
  e.value = stat(x);
  e.ci = bootstrap_ci(x, strata, stat, p.bootstrap_iters, p.confidence, rng);
  return e;
}

inline BetaSummary summarize(const std::vector<RolloutRecord>& recs, double beta, const EvalProtocol& p, Rng& rng) {
  BetaSummary s;
  s.beta = beta;
  s.n = static_cast<int>(recs.size());
  std::vector<double> succ, fail, tout, ret, tts, ttf;
  std::vector<int> strata, strata_s, strata_f;
  std::map<std::string, std::vector<double>> terms;
  for (const auto& r : recs) {
    succ.push_back(r.success ? 1.0 : 0.0);
    fail.push_back(r.failure() ? 1.0 : 0.0);
    tout.push_back(r.cause == TerminationCause::timeout ? 1.0 : 0.0);
    ret.push_back(r.ret);
    strata.push_back(r.env_id);
    if (r.cause == TerminationCause::goal) {
      tts.push_back(r.length);
      strata_s.push_back(r.env_id);
    }
    if (r.failure()) {
      ttf.push_back(r.length);
      strata_f.push_back(r.env_id);
    }
    for (const auto& [k, v] : r.terms) terms[k].push_back(v);
  }
  const Statistic mean = sample_mean;
  const Statistic cvar = [a = p.alpha](const std::vector<double>& v) { return empirical_cvar(v, a); };
  s.metrics["success_rate"] = estimate(succ, strata, mean, p, rng);
  s.metrics["failure_rate"] = estimate(fail, strata, mean, p, rng);
  s.metrics["timeout_rate"] = estimate(tout, strata, mean, p, rng);
  s.metrics["mean_return"] = estimate(ret, strata, mean, p, rng);
  s.metrics["cvar_return"] = estimate(ret, strata, cvar, p, rng);
  s.metrics["time_to_success"] = estimate(tts, strata_s, mean, p, rng);
  s.metrics["time_to_failure"] = estimate(ttf, strata_f, mean, p, rng);
  for (const auto& [k, v] : terms) s.terms[k] = estimate(v, strata, mean, p, rng);
  return s;
}

inline EvalReport run_eval(const EvalProtocol& p, const ActorSpec& spec, ObsMode mode, const BatchPolicy& policy) {
  p.validate();
  EvalReport rep;
  rep.task = to_string(p.env.task);
  rep.metric = to_string(p.metric);
  rep.alpha = p.alpha;
  rep.confidence = p.confidence;
  for (std::size_t i = 0; i < p.betas.size(); ++i) {
    const double beta = p.betas[i];
    auto recs = run_rollouts(p, spec, mode, policy, beta);
    Rng rng = make_rng(p.seed, "bootstrap", i);
    rep.per_beta.push_back(summarize(recs, beta, p, rng));
    rep.raw.insert(rep.raw.end(), recs.begin(), recs.end());
  }
  return rep;
}

inline EvalReport run_eval(const EvalProtocol& p, const Checkpoint& ck) {
  if (ck.task != p.env.task) throw ConfigError("eval: checkpoint task does not match the protocol");
  if (ck.metric != p.metric) throw ConfigError("eval: checkpoint metric does not match the protocol");
  return run_eval(p, ck.actor.spec, ck.obs_mode(), deterministic_policy(ck.actor));
}

// ---------------------------------------------------------------------------
// Teacher-student reward-term differences

struct TermDifference {
  std::map<double, double> by_beta;  // mean cumulative teacher - student
  double scale = 0.0;                 // mean |teacher cumulative| over betas
  std::optional<double> flatness;     // (max - min over beta) / scale; absent for one beta
};

inline std::map<std::string, TermDifference> reward_term_difference(const EvalReport& teacher,
                                                                    const EvalReport& student) {
  std::map<std::string, TermDifference> out;
  for (const auto& tb : teacher.per_beta) {
    const auto& sb = student.at(tb.beta);
    for (const auto& [term, est] : tb.terms) {
      auto it = sb.terms.find(term);
      if (it == sb.terms.end()) continue;
      auto& d = out[term];
      d.by_beta[tb.beta] = est.value - it->second.value;
      d.scale += std::abs(est.value) / static_cast<double>(teacher.per_beta.size());
    }
  }
  for (auto& [term, d] : out) {
    if (d.by_beta.size() < 2) continue;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& [b, v] : d.by_beta) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    d.flatness = d.scale > 0.0 ? (hi - lo) / d.scale : std::optional<double>();
    if (d.scale == 0.0 && hi == lo) d.flatness = 0.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Export

inline json to_json(const Estimate& e) {
  json j = {{"value", std::isfinite(e.value) ? json(e.value) : json(nullptr)}};
  if (e.ci) j["ci"] = {e.ci->lo, e.ci->hi};
  else j["ci"] = nullptr;
  return j;
}

inline json to_json(const RolloutRecord& r) {
  return {{"env_id", r.env_id},   {"rollout_id", r.rollout_id},    {"beta", r.beta},
          {"return", r.ret},      {"length", r.length},            {"cause", to_string(r.cause)},
          {"success", r.success}, {"reward_terms", r.terms}};
}

inline json to_json(const EvalReport& r) {
  json betas = json::array();
  for (const auto& b : r.per_beta) {
    json m = json::object(), t = json::object();
    for (const auto& [k, e] : b.metrics) m[k] = to_json(e);
    for (const auto& [k, e] : b.terms) t[k] = to_json(e);
    betas.push_back({{"beta", b.beta}, {"n", b.n}, {"metrics", m}, {"reward_terms", t}});
  }
  return {{"format_version", kFormatVersion}, {"task", r.task},   {"metric", r.metric},
          {"alpha", r.alpha},                 {"confidence", r.confidence}, {"per_beta", betas}};
}

inline Estimate estimate_from_json(const json& j) {
  Estimate e;
  if (!j.at("value").is_null()) e.value = j.at("value").get<double>();
  if (!j.at("ci").is_null()) e.ci = Interval{j.at("ci")[0].get<double>(), j.at("ci")[1].get<double>()};
  return e;
}

inline EvalReport report_from_json(const json& j) {
  EvalReport r;
  r.task = j.at("task").get<std::string>();
  r.metric = j.at("metric").get<std::string>();
  r.alpha = j.at("alpha").get<double>();
  r.confidence = j.at("confidence").get<double>();
  for (const auto& b : j.at("per_beta")) {
    BetaSummary s;
    s.beta = b.at("beta").get<double>();
    s.n = b.at("n").get<int>();
    for (const auto& [k, v] : b.at("metrics").items()) s.metrics[k] = estimate_from_json(v);
    for (const auto& [k, v] : b.at("reward_terms").items()) s.terms[k] = estimate_from_json(v);
    r.per_beta.push_back(std::move(s));
  }
  return r;
}

/// Shortest round-trip decimal form; empty for NaN.
inline std::string format_number(double v) {
  if (!std::isfinite(v)) return "";
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string metrics_csv(const EvalReport& r) {
  std::ostringstream out;
  out << "beta,n";
  for (const auto& m : metric_names()) out << "," << m << "," << m << "_lo," << m << "_hi";
  out << "\n";
  for (const auto& b : r.per_beta) {
    out << format_number(b.beta) << "," << b.n;
    for (const auto& m : metric_names()) {
      const auto it = b.metrics.find(m);
      const Estimate e = it == b.metrics.end() ? Estimate{} : it->second;
      out << "," << format_number(e.value) << "," << (e.ci ? format_number(e.ci->lo) : "") << ","
          << (e.ci ? format_number(e.ci->hi) : "");
    }
    out << "\n";
  }
  return out.str();
}

/// Self-contained line chart of one metric against beta with its interval band.
inline std::string metric_chart_svg(const EvalReport& r, const std::string& metric) {
  const double w = 480, h = 300, ml = 60, mr = 20, mt = 30, mb = 45;
  std::vector<double> xs, ys, lo, hi;
  for (const auto& b : r.per_beta) {
    const auto it = b.metrics.find(metric);
    if (it == b.metrics.end() || !std::isfinite(it->second.value)) continue;
    xs.push_back(b.beta);
    ys.push_back(it->second.value);
    lo.push_back(it->second.ci ? it->second.ci->lo : it->second.value);
    hi.push_back(it->second.ci ? it->second.ci->hi : it->second.value);
  }
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
    << " " << h << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << w / 2 << "\" y=\"18\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
    << metric << " vs beta (" << r.metric << ")</text>\n";
  if (!xs.empty()) {
    double x0 = *std::min_element(xs.begin(), xs.end()), x1 = *std::max_element(xs.begin(), xs.end());
    double y0 = *std::min_element(lo.begin(), lo.end()), y1 = *std::max_element(hi.begin(), hi.end());
    if (x1 == x0) { x0 -= 0.5; x1 += 0.5; }
    if (y1 == y0) { y0 -= 0.5; y1 += 0.5; }
    auto px = [&](double x) { return ml + (x - x0) / (x1 - x0) * (w - ml - mr); };
    auto py = [&](double y) { return h - mb - (y - y0) / (y1 - y0) * (h - mt - mb); };
    s << "<polygon fill=\"#9ecae1\" fill-opacity=\"0.5\" points=\"";
    for (std::size_t i = 0; i < xs.size(); ++i) s << px(xs[i]) << "," << py(hi[i]) << " ";
    for (std::size_t i = xs.size(); i-- > 0;) s << px(xs[i]) << "," << py(lo[i]) << " ";
    s << "\"/>\n<polyline fill=\"none\" stroke=\"#08519c\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < xs.size(); ++i) s << px(xs[i]) << "," << py(ys[i]) << " ";
    s << "\"/>\n";
    for (std::size_t i = 0; i < xs.size(); ++i)
      s << "<circle cx=\"" << px(xs[i]) << "\" cy=\"" << py(ys[i]) << "\" r=\"3\" fill=\"#08519c\"/>\n";
    s << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr << "\" y2=\"" << h - mb
      << "\" stroke=\"black\"/>\n<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << h - mb
      << "\" stroke=\"black\"/>\n";
    for (double x : xs)
      s << "<text x=\"" << px(x) << "\" y=\"" << h - mb + 16 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        << "font-size=\"11\">" << format_number(x) << "</text>\n";
    s << "<text x=\"" << ml - 6 << "\" y=\"" << py(y0) << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
      << "font-size=\"11\">" << format_number(std::round(y0 * 1000) / 1000) << "</text>\n";
    s << "<text x=\"" << ml - 6 << "\" y=\"" << py(y1) + 10 << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
      << "font-size=\"11\">" << format_number(std::round(y1 * 1000) / 1000) << "</text>\n";
  }
  s << "<text x=\"" << w / 2 << "\" y=\"" << h - 8 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
    << "font-size=\"12\">beta</text>\n</svg>\n";
  return s.str();
}

/// Writes report.json, metrics.csv, raw_rollouts.jsonl and charts/<metric>.svg.
inline void export_report(const EvalReport& r, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "charts", ec);
  if (ec) throw std::runtime_error("cannot create report directory '" + dir + "': " + ec.message());
  write_json_file((fs::path(dir) / "report.json").string(), to_json(r));
  write_text_file((fs::path(dir) / "metrics.csv").string(), metrics_csv(r));
  std::string raw;
  for (const auto& rec : r.raw) raw += to_json(rec).dump() + "\n";
  write_text_file((fs::path(dir) / "raw_rollouts.jsonl").string(), raw);
  for (const auto& m : metric_names())
    write_text_file((fs::path(dir) / "charts" / (m + ".svg")).string(), metric_chart_svg(r, m));
}

inline json to_json(const EvalProtocol& p) {
  return {{"env", to_json(p.env)},         {"layouts", p.layouts},       {"rollouts_per_env", p.rollouts_per_env},
          {"betas", p.betas},              {"metric", to_string(p.metric)}, {"alpha", p.alpha},
          {"bootstrap_iters", p.bootstrap_iters}, {"confidence", p.confidence}, {"seed", p.seed}};
}

}  // namespace riskrl
