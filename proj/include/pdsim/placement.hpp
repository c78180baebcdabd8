#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pdsim/errors.hpp"
#include "pdsim/perfmodel.hpp"
#include "pdsim/rng.hpp"
#include "pdsim/simulator.hpp"
#include "pdsim/slo.hpp"
#include "pdsim/workload.hpp"

namespace pdsim {

struct ConfigTableEntry {
  InstanceConfig config;
  double r_c = 0.0;             // max SLO-feasible goodput, requests/s
  std::optional<double> e_c;    // energy per request at that goodput, J
  int g_c = 0;                  // GPUs = tp
  bool saturated = false;       // feasible even at the full probe trace
  std::string error;            // nonempty when the candidate could not be evaluated

  bool usable() const { return error.empty() && r_c > 0.0 && e_c.has_value(); }
};

struct PlacementProblem {
  std::vector<ConfigTableEntry> table;
  int total_gpus = 0;
  double target_rps = 0.0;
  double alpha = 0.05;

  void validate() const {
    if (total_gpus < 1) throw ParameterError("placement: total_gpus must be >= 1");
    if (target_rps <= 0.0) throw ParameterError("placement: target_rps must be > 0");
    if (alpha < 0.0) throw ParameterError("placement: alpha must be >= 0");
    for (const auto& e : table) {
      if (e.g_c != e.config.tp) throw ParameterError("placement: G_c must equal tp");
      if (e.r_c < 0.0) throw ParameterError("placement: R_c must be >= 0");
      if (e.r_c > 0.0 && e.e_c && *e.e_c <= 0.0) throw ParameterError("placement: E_c must be > 0");
    }
  }
};

struct PlacementPlan {
  std::vector<std::int64_t> counts;  // aligned with the problem's table
  std::vector<ConfigTableEntry> table;
  double objective_w = 0.0;  // sum n_c * E_c * R_c
  double target_rps = 0.0;
  double alpha = 0.0;
  int total_gpus = 0;
  int gpus_used = 0;
  std::vector<ClusterInstance> instances;  // expanded, with routing weights

  ClusterSpec to_cluster() const {
    ClusterSpec s;
    s.instances = instances;
    return s;
  }

  double phase_capacity_rps(Phase p) const {
    double r = 0.0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      if (table[i].config.phase == p) r += static_cast<double>(counts[i]) * table[i].r_c;
    }
    return r;
  }

  void validate() const {
    if (counts.size() != table.size()) throw ConfigError("plan: count/table size mismatch");
    int gpus = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      if (counts[i] < 0) throw ConfigError("plan: negative count");
      gpus += static_cast<int>(counts[i]) * table[i].g_c;
    }
    if (gpus != gpus_used) throw ConfigError("plan: gpus_used mismatch");
    if (gpus > total_gpus) throw ConfigError("plan: GPU capacity exceeded");
    double need = (1.0 + alpha) * target_rps;
    for (Phase p : {Phase::prefill, Phase::decode}) {
      if (phase_capacity_rps(p) < need - 1e-9) {
        throw ConfigError(std::string("plan: ") + phase_name(p) + " goodput constraint violated");
      }
    }
    for (Phase p : {Phase::prefill, Phase::decode}) {
      double sum = 0.0;
      for (const auto& inst : instances) {
        if (inst.config.phase != p) continue;
        if (inst.weight <= 0.0) throw ConfigError("plan: weights must be positive");
        sum += inst.weight;
      }
      if (std::abs(sum - 1.0) > 1e-9) throw ConfigError(std::string("plan: ") + phase_name(p) + " weights must sum to 1");
    }
  }
};

// --- Goodput search ------------------------------------------------------------

struct GoodputSearch {
  double tolerance_rps = 0.25;  // rate grid step
  int probe_count = 1;          // down-sample replicates per probe; all must pass
  std::uint64_t seed = 0x9e3779b97f4a7c15ull;
};

struct GoodputResult {
  double r_c = 0.0;
  std::int64_t k_star = 0;  // r_c = k_star * tolerance
  bool saturated = false;
};

inline bool sim_meets_slo(const SimResult& sim, Phase phase, const SLOSpec& slo) {
  for (const auto& r : sim.requests) {
    if (!r.completed) return false;
    if (phase == Phase::prefill) {
      auto t = r.ttft_ms();
      if (!t || *t > slo.ttft_ms) return false;
    } else {
      auto t = r.max_tbt_ms();
      if (!t || *t > slo.tpot_ms) return false;
    }
  }
  return true;
}

namespace detail {

inline std::uint64_t probe_seed(const GoodputSearch& s, std::int64_t k, int replicate) {
  std::uint64_t h = fnv1a64("goodput-probe", s.seed);
  h = fnv1a64(&k, sizeof(k), h);
  h = fnv1a64(&replicate, sizeof(replicate), h);
  return h;
}

}  // namespace detail

// Down-sampled probe trace targeting rate k * tolerance.
inline Trace goodput_probe_trace(const Trace& base, const GoodputSearch& search, std::int64_t k, int replicate = 0) {
  double base_rate = base.mean_rps();
  double keep = std::min(1.0, static_cast<double>(k) * search.tolerance_rps / base_rate);
  return downsample_trace(base, keep, detail::probe_seed(search, k, replicate));
}

// Binary search over down-sampled copies of the base trace: returns the
// highest rate k*tol that passes every request's SLO, with k*tol + tol
// failing (re-checkable by direct simulation of the same probe traces).
inline GoodputResult max_goodput(const InstanceConfig& cfg, const Trace& base, const SLOSpec& slo,
                                 const ModelSet& models, const SchedulerPolicy& policy,
                                 const GoodputSearch& search) {
  base.validate();
  slo.validate();
  if (search.tolerance_rps <= 0.0) throw ParameterError("goodput: tolerance must be > 0");
  if (search.probe_count < 1) throw ParameterError("goodput: probe_count must be >= 1");
  double base_rate = base.mean_rps();
  std::int64_t k_max = static_cast<std::int64_t>(std::floor(base_rate / search.tolerance_rps));
  GoodputResult res;
  if (k_max < 1) return res;

  auto feasible = [&](std::int64_t k) {
    for (int j = 0; j < search.probe_count; ++j) {
      Trace probe = goodput_probe_trace(base, search, k, j);
      if (probe.requests.empty()) continue;
      try {
        SimResult sim = simulate_instance(probe, cfg, policy, models);
        if (!sim_meets_slo(sim, cfg.phase, slo)) return false;
      } catch (const SimulationError&) {
        return false;
      }
    }
    return true;
  };

  if (feasible(k_max)) {
    res.k_star = k_max;
    res.r_c = static_cast<double>(k_max) * search.tolerance_rps;
    res.saturated = true;
    return res;
  }
  if (!feasible(1)) return res;  // unusable at the minimum probe
  std::int64_t lo = 1, hi = k_max;
  while (hi - lo > 1) {
    std::int64_t mid = lo + (hi - lo) / 2;
    if (feasible(mid)) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  res.k_star = lo;
  res.r_c = static_cast<double>(lo) * search.tolerance_rps;
  return res;
}

// --- Energy per request ---------------------------------------------------------

// Prefill instances charge idle time to E_c; decode instances count busy
// energy only (idle accounting optional).
inline std::optional<double> energy_per_request(const SimResult& sim, std::optional<bool> include_idle = std::nullopt) {
  if (sim.completed_requests < 1) return std::nullopt;
  if (sim.instances.empty()) throw ParameterError("energy_per_request: no instance");
  Phase phase = sim.instances.front().phase;
  bool idle = include_idle.value_or(phase == Phase::prefill);
  double e = sim.busy_energy_j();
  if (idle) e += sim.idle_energy_j();
  return e / static_cast<double>(sim.completed_requests);
}

// --- Config table ---------------------------------------------------------------

inline ConfigTableEntry evaluate_candidate(const InstanceConfig& cfg, const Trace& base, const SLOSpec& slo,
                                           const ModelSet& models, const SchedulerPolicy& policy,
                                           const GoodputSearch& search) {
  ConfigTableEntry e;
  e.config = cfg;
  e.g_c = cfg.tp;
  try {
    GoodputResult g = max_goodput(cfg, base, slo, models, policy, search);
    e.r_c = g.r_c;
    e.saturated = g.saturated;
    if (g.r_c > 0.0) {
      Trace at_rc = goodput_probe_trace(base, search, g.k_star, 0);
      SimResult sim = simulate_instance(at_rc, cfg, policy, models);
      e.e_c = energy_per_request(sim);
      if (!e.e_c) e.error = "no completed request at R_c";
    }
  } catch (const ModelError& ex) {
    e.error = ex.what();
    e.r_c = 0.0;
  }
  return e;
}

inline std::vector<ConfigTableEntry> build_config_table(const std::vector<InstanceConfig>& candidates,
                                                        const Trace& base, const SLOSpec& slo,
                                                        const ModelSet& models, const SchedulerPolicy& policy,
                                                        const GoodputSearch& search, bool parallel = true) {
  if (candidates.empty()) throw ParameterError("config table: no candidates");
  std::vector<ConfigTableEntry> table(candidates.size());
  if (parallel && candidates.size() > 1) {
    std::vector<std::future<ConfigTableEntry>> futs;
    futs.reserve(candidates.size());
    for (const auto& c : candidates) {
      futs.push_back(std::async(std::launch::async,
                                [&, c]() { return evaluate_candidate(c, base, slo, models, policy, search); }));
    }
    for (std::size_t i = 0; i < futs.size(); ++i) table[i] = futs[i].get();
  } else {
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      table[i] = evaluate_candidate(candidates[i], base, slo, models, policy, search);
    }
  }
  return table;
}

// --- Routing weights ------------------------------------------------------------

inline std::vector<ClusterInstance> derive_routing_weights(const std::vector<std::int64_t>& counts,
                                                           const std::vector<ConfigTableEntry>& table) {
  if (counts.size() != table.size()) throw ParameterError("weights: count/table size mismatch");
  double phase_r[2] = {0.0, 0.0};
  for (std::size_t i = 0; i < counts.size(); ++i) {
    int p = table[i].config.phase == Phase::prefill ? 0 : 1;
    phase_r[p] += static_cast<double>(counts[i]) * table[i].r_c;
  }
  std::vector<ClusterInstance> out;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    int p = table[i].config.phase == Phase::prefill ? 0 : 1;
    for (std::int64_t n = 0; n < counts[i]; ++n) {
      out.push_back(ClusterInstance{table[i].config, table[i].r_c / phase_r[p]});
    }
  }
  return out;
}

// --- ILP solver -----------------------------------------------------------------

namespace detail {

struct SolverCtx {
  const PlacementProblem* p;
  double need;  // (1 + alpha) * R per phase
  std::vector<std::int64_t> counts;
  std::vector<std::int64_t> best_counts;
  double best_cost = kInf;
  bool found = false;
  // suffix minima over usable entries
  std::vector<double> min_e_prefill, min_e_decode;       // cheapest J/request from entry i onward
  std::vector<double> max_rpg_prefill, max_rpg_decode;   // best R_c/G_c from entry i onward

  void dfs(std::size_t i, int gpus_left, double cost, double r_prefill, double r_decode) {
    // cost lower bound from outstanding goodput deficits
    double def_p = std::max(0.0, need - r_prefill);
    double def_d = std::max(0.0, need - r_decode);
    if (def_p > 0.0 && min_e_prefill[i] == kInf) return;
    if (def_d > 0.0 && min_e_decode[i] == kInf) return;
    double lb = cost;
    if (def_p > 0.0) lb += def_p * min_e_prefill[i];
    if (def_d > 0.0) lb += def_d * min_e_decode[i];
    if (lb >= best_cost && found) return;
    // GPU lower bound
    double gpus_needed = 0.0;
    if (def_p > 0.0) gpus_needed += def_p / max_rpg_prefill[i];
    if (def_d > 0.0) gpus_needed += def_d / max_rpg_decode[i];
    if (gpus_needed > static_cast<double>(gpus_left) + 1e-9) return;

    if (i == p->table.size()) {
      if (def_p > 1e-9 || def_d > 1e-9) return;
      if (!found || cost < best_cost) {
        found = true;
        best_cost = cost;
        best_counts = counts;
      }
      return;
    }
    const ConfigTableEntry& e = p->table[i];
    std::int64_t max_n = e.usable() ? gpus_left / e.g_c : 0;
    const double ec = e.e_c.value_or(0.0);
    for (std::int64_t n = 0; n <= max_n; ++n) {
      counts[i] = n;
      double add_r = static_cast<double>(n) * e.r_c;
      double add_cost = static_cast<double>(n) * ec * e.r_c;
      dfs(i + 1, gpus_left - static_cast<int>(n) * e.g_c, cost + add_cost,
          r_prefill + (e.config.phase == Phase::prefill ? add_r : 0.0),
          r_decode + (e.config.phase == Phase::decode ? add_r : 0.0));
    }
    counts[i] = 0;
  }
};

// Minimum GPUs needed to reach `need` goodput using one phase's usable
// entries, by DP over GPU budget; -1 when unreachable within budget.
inline int min_gpus_for_phase(const PlacementProblem& p, Phase phase, double need, int budget) {
  std::vector<double> best(static_cast<std::size_t>(budget) + 1, 0.0);
  for (int g = 1; g <= budget; ++g) {
    double v = 0.0;
    for (const auto& e : p.table) {
      if (e.config.phase != phase || !e.usable() || e.g_c > g) continue;
      v = std::max(v, best[static_cast<std::size_t>(g - e.g_c)] + e.r_c);
    }
    best[static_cast<std::size_t>(g)] = std::max(best[static_cast<std::size_t>(g - 1)], v);
    if (best[static_cast<std::size_t>(g)] >= need - 1e-9) return g;
  }
  return -1;
}

}  // namespace detail

// Exact branch-and-bound over integer counts; deterministic tie-break by the
// lexicographically smallest count vector among optima.
inline PlacementPlan solve_placement(const PlacementProblem& p) {
  p.validate();
  bool has_prefill = false, has_decode = false;
  for (const auto& e : p.table) {
    if (!e.usable()) continue;
    (e.config.phase == Phase::prefill ? has_prefill : has_decode) = true;
  }
  if (!has_prefill) throw InfeasibleError("goodput-prefill", "no usable prefill configuration in the table");
  if (!has_decode) throw InfeasibleError("goodput-decode", "no usable decode configuration in the table");

  detail::SolverCtx ctx;
  ctx.p = &p;
  ctx.need = (1.0 + p.alpha) * p.target_rps;
  ctx.counts.assign(p.table.size(), 0);
  const std::size_t n = p.table.size();
  ctx.min_e_prefill.assign(n + 1, detail::kInf);
  ctx.min_e_decode.assign(n + 1, detail::kInf);
  ctx.max_rpg_prefill.assign(n + 1, 0.0);
  ctx.max_rpg_decode.assign(n + 1, 0.0);
  for (std::size_t i = n; i-- > 0;) {
    ctx.min_e_prefill[i] = ctx.min_e_prefill[i + 1];
    ctx.min_e_decode[i] = ctx.min_e_decode[i + 1];
    ctx.max_rpg_prefill[i] = ctx.max_rpg_prefill[i + 1];
    ctx.max_rpg_decode[i] = ctx.max_rpg_decode[i + 1];
    const ConfigTableEntry& e = p.table[i];
    if (!e.usable()) continue;
    if (e.config.phase == Phase::prefill) {
      ctx.min_e_prefill[i] = std::min(ctx.min_e_prefill[i], *e.e_c);
      ctx.max_rpg_prefill[i] = std::max(ctx.max_rpg_prefill[i], e.r_c / e.g_c);
    } else {
      ctx.min_e_decode[i] = std::min(ctx.min_e_decode[i], *e.e_c);
      ctx.max_rpg_decode[i] = std::max(ctx.max_rpg_decode[i], e.r_c / e.g_c);
    }
  }
  ctx.dfs(0, p.total_gpus, 0.0, 0.0, 0.0);

  if (!ctx.found) {
    int gp = detail::min_gpus_for_phase(p, Phase::prefill, ctx.need, p.total_gpus);
    int gd = detail::min_gpus_for_phase(p, Phase::decode, ctx.need, p.total_gpus);
    std::string detail_msg = "prefill needs " + (gp < 0 ? std::string(">" + std::to_string(p.total_gpus)) : std::to_string(gp)) +
                             " GPUs, decode needs " +
                             (gd < 0 ? std::string(">" + std::to_string(p.total_gpus)) : std::to_string(gd)) +
                             ", available " + std::to_string(p.total_gpus);
    throw InfeasibleError("capacity", detail_msg);
  }

  PlacementPlan plan;
  plan.counts = ctx.best_counts;
  plan.table = p.table;
  plan.objective_w = ctx.best_cost;
  plan.target_rps = p.target_rps;
  plan.alpha = p.alpha;
  plan.total_gpus = p.total_gpus;
  for (std::size_t i = 0; i < plan.counts.size(); ++i) {
    plan.gpus_used += static_cast<int>(plan.counts[i]) * p.table[i].g_c;
  }
  plan.instances = derive_routing_weights(plan.counts, p.table);
  plan.validate();
  return plan;
}

// DistServe-style baseline: max-frequency entries only; among plans meeting
// the same constraints, maximize the bottleneck phase capacity per GPU used,
// then prefer fewer GPUs, then the lexicographically smallest counts.
inline PlacementPlan solve_max_throughput(const PlacementProblem& p, double max_freq_mhz) {
  p.validate();
  PlacementProblem restricted = p;
  for (auto& e : restricted.table) {
    if (e.config.base_freq_mhz != max_freq_mhz) {
      e.r_c = 0.0;
      e.e_c.reset();
      e.error = "below maximum frequency";
    }
  }
  bool has_prefill = false, has_decode = false;
  for (const auto& e : restricted.table) {
    if (!e.usable()) continue;
    (e.config.phase == Phase::prefill ? has_prefill : has_decode) = true;
  }
  if (!has_prefill) throw InfeasibleError("goodput-prefill", "no usable max-frequency prefill configuration");
  if (!has_decode) throw InfeasibleError("goodput-decode", "no usable max-frequency decode configuration");

  const double need = (1.0 + restricted.alpha) * restricted.target_rps;
  const std::size_t n = restricted.table.size();
  std::vector<std::int64_t> counts(n, 0), best_counts;
  bool found = false;
  double best_score = -1.0;
  int best_gpus = 0;

  // exhaustive enumeration; desk-scale tables keep this tiny
  std::function<void(std::size_t, int, double, double)> rec = [&](std::size_t i, int gpus_left, double rp, double rd) {
    if (i == n) {
      if (rp < need - 1e-9 || rd < need - 1e-9) return;
      int used = restricted.total_gpus - gpus_left;
      if (used <= 0) return;
      double score = std::min(rp, rd) / static_cast<double>(used);
      bool better = !found || score > best_score + 1e-12 ||
                    (std::abs(score - best_score) <= 1e-12 && used < best_gpus);
      if (better) {
        found = true;
        best_score = score;
        best_gpus = used;
        best_counts = counts;
      }
      return;
    }
    const ConfigTableEntry& e = restricted.table[i];
    std::int64_t max_n = e.usable() ? gpus_left / e.g_c : 0;
    for (std::int64_t c = 0; c <= max_n; ++c) {
      counts[i] = c;
      rec(i + 1, gpus_left - static_cast<int>(c) * e.g_c,
          rp + (e.config.phase == Phase::prefill ? static_cast<double>(c) * e.r_c : 0.0),
          rd + (e.config.phase == Phase::decode ? static_cast<double>(c) * e.r_c : 0.0));
    }
    counts[i] = 0;
  };
  rec(0, restricted.total_gpus, 0.0, 0.0);
  if (!found) {
    int gp = detail::min_gpus_for_phase(restricted, Phase::prefill, need, restricted.total_gpus);
    int gd = detail::min_gpus_for_phase(restricted, Phase::decode, need, restricted.total_gpus);
    std::string detail_msg = "prefill needs " + (gp < 0 ? std::string(">" + std::to_string(p.total_gpus)) : std::to_string(gp)) +
                             " GPUs, decode needs " +
                             (gd < 0 ? std::string(">" + std::to_string(p.total_gpus)) : std::to_string(gd)) +
                             ", available " + std::to_string(p.total_gpus);
    throw InfeasibleError("capacity", detail_msg);
  }

  PlacementPlan plan;
  plan.counts = best_counts;
  plan.table = restricted.table;
  plan.target_rps = restricted.target_rps;
  plan.alpha = restricted.alpha;
  plan.total_gpus = restricted.total_gpus;
  for (std::size_t i = 0; i < best_counts.size(); ++i) {
    plan.gpus_used += static_cast<int>(best_counts[i]) * restricted.table[i].g_c;
    if (restricted.table[i].e_c) {
      plan.objective_w += static_cast<double>(best_counts[i]) * (*restricted.table[i].e_c) * restricted.table[i].r_c;
    }
  }
  plan.instances = derive_routing_weights(best_counts, restricted.table);
  plan.validate();
  return plan;
}

// --- Window planning -------------------------------------------------------------

struct PlanOptions {
  double alpha = 0.05;
  double peak_subwindow_s = 10.0;
  GoodputSearch search;
  SchedulerPolicy policy;
  std::optional<Trace> probe_trace;  // defaults to the history trace
  bool parallel_table = true;
  std::string cache_path;  // empty disables the config-table cache
};

inline double peak_rps(const Trace& t, double subwindow_s) {
  if (t.requests.empty()) throw ParameterError("peak_rps: empty trace");
  if (subwindow_s <= 0.0) throw ParameterError("peak_rps: subwindow must be > 0");
  double w_ms = subwindow_s * 1000.0;
  std::int64_t n_windows = static_cast<std::int64_t>(t.duration_ms / w_ms);
  if (n_windows < 1) return t.mean_rps();
  std::vector<std::int64_t> counts(static_cast<std::size_t>(n_windows), 0);
  for (const auto& r : t.requests) {
    std::int64_t idx = static_cast<std::int64_t>(r.arrival_ms / w_ms);
    if (idx >= n_windows) continue;  // spill past the last full sub-window
    counts[static_cast<std::size_t>(idx)] += 1;
  }
  std::int64_t peak = *std::max_element(counts.begin(), counts.end());
  return static_cast<double>(peak) / subwindow_s;
}

struct WindowPlanResult {
  PlacementPlan plan;
  double predicted_peak_rps = 0.0;
  std::vector<ConfigTableEntry> table;
};

inline std::vector<InstanceConfig> enumerate_candidates(const FrequencyLadder& ladder,
                                                        const std::vector<int>& tp_options) {
  ladder.validate();
  if (tp_options.empty()) throw ParameterError("candidates: tp_options empty");
  std::vector<InstanceConfig> out;
  for (Phase phase : {Phase::prefill, Phase::decode}) {
    for (int tp : tp_options) {
      for (double f : ladder.freqs_mhz) {
        out.push_back(InstanceConfig{phase, tp, f});
      }
    }
  }
  return out;
}

inline std::uint64_t config_table_cache_key(const ModelSet& models, const Trace& probe, const SLOSpec& slo,
                                            const SchedulerPolicy& policy, const GoodputSearch& search,
                                            const std::vector<InstanceConfig>& candidates);
inline std::optional<std::vector<ConfigTableEntry>> config_table_cache_lookup(const std::string& path,
                                                                              std::uint64_t key);
inline void config_table_cache_store(const std::string& path, std::uint64_t key,
                                     const std::vector<ConfigTableEntry>& table);

inline WindowPlanResult plan_window(const Trace& history, int total_gpus, const SLOSpec& slo, const ModelSet& models,
                                    const FrequencyLadder& ladder, const std::vector<int>& tp_options,
                                    const PlanOptions& opts = {}) {
  history.validate();
  if (history.requests.empty()) throw ParameterError("plan_window: empty history");
  Trace predicted = predict_next_window(history);
  WindowPlanResult res;
  res.predicted_peak_rps = peak_rps(predicted, opts.peak_subwindow_s);
  const Trace& probe = opts.probe_trace ? *opts.probe_trace : predicted;
  std::vector<InstanceConfig> candidates = enumerate_candidates(ladder, tp_options);
  std::optional<std::uint64_t> cache_key;
  if (!opts.cache_path.empty()) {
    cache_key = config_table_cache_key(models, probe, slo, opts.policy, opts.search, candidates);
    if (auto hit = config_table_cache_lookup(opts.cache_path, *cache_key)) {
      res.table = std::move(*hit);
    }
  }
  if (res.table.empty()) {
    res.table = build_config_table(candidates, probe, slo, models, opts.policy, opts.search, opts.parallel_table);
    if (cache_key) config_table_cache_store(opts.cache_path, *cache_key, res.table);
  }
  PlacementProblem problem{res.table, total_gpus, res.predicted_peak_rps, opts.alpha};
  res.plan = solve_placement(problem);
  return res;
}

// --- Plan file -------------------------------------------------------------------

inline constexpr int kPlanFileVersion = 1;

inline void save_plan_json(const PlacementPlan& plan, const std::string& path) {
  nlohmann::json insts = nlohmann::json::array();
  for (const auto& inst : plan.instances) {
    insts.push_back({{"phase", phase_name(inst.config.phase)},
                     {"tp", inst.config.tp},
                     {"freq_mhz", inst.config.base_freq_mhz},
                     {"weight", inst.weight}});
  }
  nlohmann::json j = {{"version", kPlanFileVersion}, {"target_rps", plan.target_rps}, {"alpha", plan.alpha},
                      {"objective_w", plan.objective_w}, {"total_gpus", plan.total_gpus},
                      {"gpus_used", plan.gpus_used},    {"instances", insts}};
  detail::write_json_file(j, path);
}

struct PlanFile {
  double target_rps = 0.0;
  double alpha = 0.0;
  double objective_w = 0.0;
  int total_gpus = 0;
  int gpus_used = 0;
  std::vector<ClusterInstance> instances;

  ClusterSpec to_cluster() const {
    ClusterSpec s;
    s.instances = instances;
    return s;
  }
};

inline PlanFile load_plan_json(const std::string& path) {
  nlohmann::json j = detail::load_json_file(path);
  detail::check_version(j, path);
  PlanFile f;
  f.target_rps = j.value("target_rps", 0.0);
  f.alpha = j.value("alpha", 0.0);
  f.objective_w = j.value("objective_w", 0.0);
  f.total_gpus = j.value("total_gpus", 0);
  f.gpus_used = j.value("gpus_used", 0);
  for (const auto& ji : j.at("instances")) {
    ClusterInstance inst;
    inst.config.phase = phase_from_name(ji.at("phase").get<std::string>());
    inst.config.tp = ji.at("tp").get<int>();
    inst.config.base_freq_mhz = ji.at("freq_mhz").get<double>();
    inst.weight = ji.at("weight").get<double>();
    f.instances.push_back(inst);
  }
  return f;
}

// --- Config-table cache ------------------------------------------------------------

inline std::uint64_t trace_hash(const Trace& t) {
  std::uint64_t h = fnv1a64("trace", 0xcbf29ce484222325ull);
  for (const auto& r : t.requests) {
    h = fnv1a64(&r.id, sizeof(r.id), h);
    h = fnv1a64(&r.arrival_ms, sizeof(r.arrival_ms), h);
    h = fnv1a64(&r.input_len, sizeof(r.input_len), h);
    h = fnv1a64(&r.output_len, sizeof(r.output_len), h);
  }
  h = fnv1a64(&t.duration_ms, sizeof(t.duration_ms), h);
  return h;
}

inline std::uint64_t config_table_cache_key(const ModelSet& models, const Trace& probe, const SLOSpec& slo,
                                            const SchedulerPolicy& policy, const GoodputSearch& search,
                                            const std::vector<InstanceConfig>& candidates) {
  std::uint64_t h = model_set_hash(models);
  std::uint64_t th = trace_hash(probe);
  h = fnv1a64(&th, sizeof(th), h);
  h = fnv1a64(&slo.ttft_ms, sizeof(double), h);
  h = fnv1a64(&slo.tpot_ms, sizeof(double), h);
  h = fnv1a64(&slo.percentile, sizeof(double), h);
  h = fnv1a64(&policy.max_batch_tokens, sizeof(policy.max_batch_tokens), h);
  h = fnv1a64(&policy.max_batch_requests, sizeof(policy.max_batch_requests), h);
  h = fnv1a64(&policy.kv_capacity_tokens, sizeof(policy.kv_capacity_tokens), h);
  int chunk = policy.chunking ? 1 : 0;
  h = fnv1a64(&chunk, sizeof(chunk), h);
  h = fnv1a64(&search.tolerance_rps, sizeof(double), h);
  h = fnv1a64(&search.probe_count, sizeof(search.probe_count), h);
  h = fnv1a64(&search.seed, sizeof(search.seed), h);
  for (const auto& c : candidates) {
    int ph = c.phase == Phase::prefill ? 0 : 1;
    h = fnv1a64(&ph, sizeof(ph), h);
    h = fnv1a64(&c.tp, sizeof(c.tp), h);
    h = fnv1a64(&c.base_freq_mhz, sizeof(double), h);
  }
  return h;
}

namespace detail {

inline nlohmann::json entry_to_json(const ConfigTableEntry& e) {
  nlohmann::json j = {{"phase", phase_name(e.config.phase)}, {"tp", e.config.tp},
                      {"freq_mhz", e.config.base_freq_mhz},  {"r_c", e.r_c},
                      {"g_c", e.g_c},                        {"saturated", e.saturated},
                      {"error", e.error}};
  if (e.e_c) j["e_c"] = *e.e_c;
  return j;
}

inline ConfigTableEntry entry_from_json(const nlohmann::json& j) {
  ConfigTableEntry e;
  e.config.phase = phase_from_name(j.at("phase").get<std::string>());
  e.config.tp = j.at("tp").get<int>();
  e.config.base_freq_mhz = j.at("freq_mhz").get<double>();
  e.r_c = j.at("r_c").get<double>();
  e.g_c = j.at("g_c").get<int>();
  e.saturated = j.value("saturated", false);
  e.error = j.value("error", std::string());
  if (j.contains("e_c")) e.e_c = j.at("e_c").get<double>();
  return e;
}

}  // namespace detail

inline std::optional<std::vector<ConfigTableEntry>> config_table_cache_lookup(const std::string& path,
                                                                              std::uint64_t key) {
  std::ifstream is(path);
  if (!is) return std::nullopt;
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;  // unreadable cache is just a miss
  }
  char keybuf[17];
  std::snprintf(keybuf, sizeof(keybuf), "%016llx", static_cast<unsigned long long>(key));
  if (!j.contains("tables") || !j["tables"].contains(keybuf)) return std::nullopt;
  std::vector<ConfigTableEntry> out;
  for (const auto& je : j["tables"][keybuf]) out.push_back(detail::entry_from_json(je));
  return out;
}

inline void config_table_cache_store(const std::string& path, std::uint64_t key,
                                     const std::vector<ConfigTableEntry>& table) {
  nlohmann::json j;
  {
    std::ifstream is(path);
    if (is) {
      try {
        is >> j;
      } catch (const nlohmann::json::exception&) {
        j = nlohmann::json::object();
      }
    }
  }
  if (!j.is_object()) j = nlohmann::json::object();
  j["version"] = 1;
  char keybuf[17];
  std::snprintf(keybuf, sizeof(keybuf), "%016llx", static_cast<unsigned long long>(key));
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : table) arr.push_back(detail::entry_to_json(e));
  j["tables"][keybuf] = arr;
  detail::write_json_file(j, path);
}

}  // namespace pdsim
