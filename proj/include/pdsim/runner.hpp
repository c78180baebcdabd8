#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pdsim/dvfs.hpp"
#include "pdsim/errors.hpp"
#include "pdsim/metrics.hpp"
#include "pdsim/perfmodel.hpp"
#include "pdsim/placement.hpp"
#include "pdsim/simulator.hpp"
#include "pdsim/slo.hpp"
#include "pdsim/workload.hpp"

namespace pdsim {

enum class Policy { maxfreq_distserve, place_only, two_tier };

inline const char* policy_name(Policy p) {
  switch (p) {
    case Policy::maxfreq_distserve: return "maxfreq-distserve";
    case Policy::place_only: return "place-only";
    case Policy::two_tier: return "two-tier";
  }
  return "?";
}

inline Policy policy_from_name(const std::string& s) {
  if (s == "maxfreq-distserve") return Policy::maxfreq_distserve;
  if (s == "place-only") return Policy::place_only;
  if (s == "two-tier") return Policy::two_tier;
  throw ParameterError("unknown policy: " + s);
}

struct RunnerConfig {
  SLOSpec slo;
  int total_gpus = 8;
  std::vector<int> tp_options = {1};
  FrequencyLadder ladder;
  SchedulerPolicy scheduler;
  PlanOptions plan;
  double rampup_s = 30.0;
  double switch_latency_ms = 30.0;
  int mpc_horizon_k = 8;
  int mpc_ladder_n = 7;
  double mpc_margin = 0.05;
  double kv_threshold = 0.9;
  double decode_margin = 0.05;

  MpcConfig mpc_config() const {
    MpcConfig c;
    c.horizon_K = mpc_horizon_k;
    c.ladder_N = mpc_ladder_n;
    c.ladder = ladder;
    c.slo = slo;
    c.switch_latency_ms = switch_latency_ms;
    c.margin = mpc_margin;
    return c;
  }

  DecodePolicyConfig decode_config() const {
    DecodePolicyConfig c;
    c.tbt_slo_ms = slo.tpot_ms;
    c.kv_threshold = kv_threshold;
    c.ladder = ladder;
    c.margin = decode_margin;
    return c;
  }

  void validate() const {
    slo.validate();
    ladder.validate();
    scheduler.validate();
    if (total_gpus <= 0) throw ParameterError("total_gpus must be positive");
    if (tp_options.empty()) throw ParameterError("tp_options must not be empty");
    for (int tp : tp_options)
      if (tp <= 0) throw ParameterError("tp options must be positive");
    if (rampup_s < 0.0) throw ParameterError("rampup_s must be >= 0");
    mpc_config().validate();
    decode_config().validate();
  }
};

// Plans for one window share a single config table so the two placements
// stay comparable.
struct WindowPlans {
  double target_rps = 0.0;
  std::vector<ConfigTableEntry> table;
  PlacementPlan ilp;       // place-only and two-tier
  PlacementPlan maxfreq;   // maxfreq-distserve baseline
};

inline WindowPlans plan_window_policies(const Trace& history, const RunnerConfig& cfg, const ModelSet& models) {
  cfg.validate();
  WindowPlans out;
  WindowPlanResult wp = plan_window(history, cfg.total_gpus, cfg.slo, models, cfg.ladder, cfg.tp_options, cfg.plan);
  out.target_rps = wp.predicted_peak_rps;
  out.table = wp.table;
  out.ilp = wp.plan;
  PlacementProblem p;
  p.table = out.table;
  p.total_gpus = cfg.total_gpus;
  p.target_rps = out.target_rps;
  p.alpha = cfg.plan.alpha;
  out.maxfreq = solve_max_throughput(p, cfg.ladder.max_mhz());
  return out;
}

inline SimResult run_policy(const Trace& window, const PlacementPlan& plan, Policy policy, const RunnerConfig& cfg,
                            const ModelSet& models) {
  ClusterSpec cluster = plan.to_cluster();
  SimOptions opts;
  opts.switch_latency_ms = cfg.switch_latency_ms;
  if (policy == Policy::two_tier) {
    TwoTierFactory factory(cfg.mpc_config(), cfg.decode_config(), models, cfg.scheduler);
    return simulate_cluster(window, cluster, cfg.scheduler, models, &factory, opts);
  }
  return simulate_cluster(window, cluster, cfg.scheduler, models, nullptr, opts);
}

struct WindowRun {
  int window_index = 0;
  Policy policy = Policy::maxfreq_distserve;
  PlacementPlan plan;
  SimResult sim;
  MetricsReport report;
  bool slo_pass = false;
};

inline WindowRun run_window_policy(const Trace& window, int window_index, Policy policy, const WindowPlans& plans,
                                   const RunnerConfig& cfg, const ModelSet& models) {
  WindowRun run;
  run.window_index = window_index;
  run.policy = policy;
  run.plan = policy == Policy::maxfreq_distserve ? plans.maxfreq : plans.ilp;
  run.sim = run_policy(window, run.plan, policy, cfg, models);
  TrimmedResult view = trim_steady_state(run.sim, cfg.rampup_s);
  run.report = make_report(view, cfg.slo, "w" + std::to_string(window_index), policy_name(policy));
  run.slo_pass = (!run.report.p99_ttft_ms || *run.report.p99_ttft_ms <= cfg.slo.ttft_ms) &&
                 (!run.report.p99_mean_tpot_ms || *run.report.p99_mean_tpot_ms <= cfg.slo.tpot_ms);
  return run;
}

struct ExperimentResult {
  std::vector<WindowRun> runs;
  std::vector<MetricsReport> reports;
  bool two_tier_slo_pass = true;
};

// Window w is planned from window w-1 (identity next-window predictor);
// the first window plans from itself.
inline ExperimentResult run_experiment(const Trace& trace, double window_ms, const std::vector<Policy>& policies,
                                       const RunnerConfig& cfg, const ModelSet& models) {
  cfg.validate();
  if (policies.empty()) throw ParameterError("no policies selected");
  std::vector<Trace> windows = split_windows(trace, window_ms);
  ExperimentResult out;
  for (std::size_t w = 0; w < windows.size(); ++w) {
    const Trace& history = w == 0 ? windows[0] : windows[w - 1];
    WindowPlans plans = plan_window_policies(history, cfg, models);
    for (Policy pol : policies) {
      WindowRun run = run_window_policy(windows[w], static_cast<int>(w), pol, plans, cfg, models);
      if (pol == Policy::two_tier && !run.slo_pass) out.two_tier_slo_pass = false;
      out.reports.push_back(run.report);
      out.runs.push_back(std::move(run));
    }
  }
  return out;
}

}  // namespace pdsim
