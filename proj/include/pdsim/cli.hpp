#pragma once

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pdsim/errors.hpp"
#include "pdsim/metrics.hpp"
#include "pdsim/perfmodel.hpp"
#include "pdsim/placement.hpp"
#include "pdsim/runner.hpp"
#include "pdsim/workload.hpp"

namespace pdsim::cli {

inline constexpr const char* kToolVersion = "0.1.0";

// Exit codes: 0 success, 2 bad parameters or inputs, 3 I/O failure,
// 4 infeasible placement, 5 SLO attainment failure in `run`.
inline constexpr int kExitOk = 0;
inline constexpr int kExitParameter = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitInfeasible = 4;
inline constexpr int kExitSlo = 5;

namespace detail {

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ParameterError("config " + key + ": not a number: '" + v + "'");
  }
}

inline long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    long long d = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ParameterError("config " + key + ": not an integer: '" + v + "'");
  }
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ParameterError("config " + key + ": not a boolean: '" + v + "'");
}

inline std::vector<double> to_double_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const std::string& part : split(v, ',')) {
    std::string p = trim(part);
    if (p.empty()) continue;
    out.push_back(to_double(key, p));
  }
  if (out.empty()) throw ParameterError("config " + key + ": empty list");
  return out;
}

inline std::vector<int> to_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (const std::string& part : split(v, ',')) {
    std::string p = trim(part);
    if (p.empty()) continue;
    out.push_back(static_cast<int>(to_int(key, p)));
  }
  if (out.empty()) throw ParameterError("config " + key + ": empty list");
  return out;
}

}  // namespace detail

// Everything `plan` and `run` need, assembled from a key=value config file
// plus command-line overrides. Keys are listed in the README.
struct Settings {
  std::string trace_path;
  std::string model_dir;
  std::string out_path;  // directory for run, file for plan
  std::string probe_trace_path;
  std::string cache_path;
  double window_ms = 300000.0;
  std::vector<Policy> policies{Policy::maxfreq_distserve, Policy::place_only, Policy::two_tier};
  RunnerConfig runner;
  std::map<std::string, std::string> raw;  // merged key=value view, hashed into the manifest

  void apply(const std::string& key, const std::string& value) {
    raw[key] = value;
    if (key == "trace") {
      trace_path = value;
    } else if (key == "models") {
      model_dir = value;
    } else if (key == "out") {
      out_path = value;
    } else if (key == "probe_trace") {
      probe_trace_path = value;
    } else if (key == "cache") {
      cache_path = value;
    } else if (key == "window_ms") {
      window_ms = detail::to_double(key, value);
    } else if (key == "policies") {
      policies.clear();
      for (const std::string& p : detail::split(value, ',')) {
        std::string t = detail::trim(p);
        if (!t.empty()) policies.push_back(policy_from_name(t));
      }
      if (policies.empty()) throw ParameterError("config policies: empty list");
    } else if (key == "gpus") {
      runner.total_gpus = static_cast<int>(detail::to_int(key, value));
    } else if (key == "tps") {
      runner.tp_options = detail::to_int_list(key, value);
    } else if (key == "ladder") {
      runner.ladder.freqs_mhz = detail::to_double_list(key, value);
    } else if (key == "slo_ttft_ms") {
      runner.slo.ttft_ms = detail::to_double(key, value);
    } else if (key == "slo_tpot_ms") {
      runner.slo.tpot_ms = detail::to_double(key, value);
    } else if (key == "percentile") {
      runner.slo.percentile = detail::to_double(key, value);
    } else if (key == "alpha") {
      runner.plan.alpha = detail::to_double(key, value);
    } else if (key == "tolerance_rps") {
      runner.plan.search.tolerance_rps = detail::to_double(key, value);
    } else if (key == "probe_count") {
      runner.plan.search.probe_count = static_cast<int>(detail::to_int(key, value));
    } else if (key == "search_seed") {
      runner.plan.search.seed = static_cast<std::uint64_t>(detail::to_int(key, value));
    } else if (key == "peak_subwindow_s") {
      runner.plan.peak_subwindow_s = detail::to_double(key, value);
    } else if (key == "parallel_table") {
      runner.plan.parallel_table = detail::to_bool(key, value);
    } else if (key == "rampup_s") {
      runner.rampup_s = detail::to_double(key, value);
    } else if (key == "switch_latency_ms") {
      runner.switch_latency_ms = detail::to_double(key, value);
    } else if (key == "mpc_k") {
      runner.mpc_horizon_k = static_cast<int>(detail::to_int(key, value));
    } else if (key == "mpc_n") {
      runner.mpc_ladder_n = static_cast<int>(detail::to_int(key, value));
    } else if (key == "mpc_margin") {
      runner.mpc_margin = detail::to_double(key, value);
    } else if (key == "kv_threshold") {
      runner.kv_threshold = detail::to_double(key, value);
    } else if (key == "decode_margin") {
      runner.decode_margin = detail::to_double(key, value);
    } else if (key == "max_batch_tokens") {
      runner.scheduler.max_batch_tokens = detail::to_int(key, value);
    } else if (key == "max_batch_requests") {
      runner.scheduler.max_batch_requests = detail::to_int(key, value);
    } else if (key == "chunking") {
      runner.scheduler.chunking = detail::to_bool(key, value);
    } else if (key == "kv_capacity") {
      runner.scheduler.kv_capacity_tokens = detail::to_int(key, value);
    } else {
      throw ParameterError("unknown config key: " + key);
    }
  }

  void load_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      std::string t = detail::trim(line);
      if (t.empty() || t[0] == '#') continue;
      std::size_t eq = t.find('=');
      if (eq == std::string::npos) {
        throw ParameterError("config " + path + ":" + std::to_string(lineno) + ": expected key=value");
      }
      apply(detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
    }
  }

  void apply_defines(const std::vector<std::string>& defines) {
    for (const std::string& d : defines) {
      std::size_t eq = d.find('=');
      if (eq == std::string::npos) throw ParameterError("-D expects key=value, got '" + d + "'");
      apply(detail::trim(d.substr(0, eq)), detail::trim(d.substr(eq + 1)));
    }
  }

  // Resolves cross-field plumbing after all keys are applied.
  void finalize() {
    if (runner.ladder.freqs_mhz.empty()) throw ParameterError("config: ladder is required");
    runner.plan.policy = runner.scheduler;
    runner.plan.cache_path = cache_path;
    if (!probe_trace_path.empty()) runner.plan.probe_trace = load_trace(probe_trace_path);
    runner.validate();
  }

  std::uint64_t config_hash() const {
    std::uint64_t h = fnv1a64("experiment", 0xcbf29ce484222325ull);
    for (const auto& [k, v] : raw) {
      h = fnv1a64(k, h);
      h = fnv1a64(v, h);
    }
    return h;
  }
};

namespace detail {

struct GenTraceOpts {
  std::string out;
  std::string from;
  std::string lengths_file;
  double mean_rps = 10.0;
  double duration_s = 600.0;
  double shape = 1.0;
  double keep_prob = 1.0;
  std::uint64_t seed = 1;
  double input_mu = 6.0, input_sigma = 0.5;
  double output_mu = 4.5, output_sigma = 0.5;
};

inline int cmd_gen_trace(const GenTraceOpts& o) {
  Trace t;
  if (!o.from.empty()) {
    t = downsample_trace(load_trace(o.from), o.keep_prob, o.seed);
  } else {
    LengthDistribution lengths;
    if (!o.lengths_file.empty()) {
      lengths = load_length_samples(o.lengths_file);
    } else {
      lengths.lognormal = LengthDistribution::Lognormal{o.input_mu, o.input_sigma, o.output_mu, o.output_sigma};
    }
    t = gen_gamma_trace(o.mean_rps, o.shape, o.duration_s * 1000.0, lengths, o.seed);
  }
  save_trace(t, o.out);
  std::cout << "wrote " << t.requests.size() << " requests over " << t.duration_s() << " s to " << o.out << "\n";
  return kExitOk;
}

struct SynthModelOpts {
  std::string out_dir;
  std::string family = "compute-bound";
  std::string ladder = "500,750,1000,1250,1500,1750,2000";
  std::string tps = "1";
  double prefill_lat_coef = 40.0;
  double decode_lat_coef = 10.0;
  double power_a = 1e-7;
  double power_b = 10.0;
  double knee_mhz = 1200.0;
  double idle_frac = 0.35;
};

inline int cmd_synth_model(const SynthModelOpts& o) {
  FrequencyLadder ladder{to_double_list("ladder", o.ladder)};
  std::vector<int> tps = to_int_list("tps", o.tps);
  SynthOptions pre, dec;
  pre.lat_coef = o.prefill_lat_coef;
  dec.lat_coef = o.decode_lat_coef;
  for (SynthOptions* s : {&pre, &dec}) {
    s->power_a = o.power_a;
    s->power_b = o.power_b;
    s->mem_knee_mhz = o.knee_mhz;
    s->idle_frac = o.idle_frac;
  }
  ModelSet set = synth_model_set(synth_family_from_name(o.family), ladder, tps, pre, dec);
  std::filesystem::create_directories(o.out_dir);
  save_model_set(set, o.out_dir);
  std::cout << "wrote model set (" << o.family << ", " << ladder.freqs_mhz.size() << " frequencies, " << tps.size()
            << " tp options) to " << o.out_dir << "\n";
  return kExitOk;
}

struct PlanOpts {
  std::string config;
  std::vector<std::string> defines;
  int window_index = 0;
  std::string policy = "two-tier";
};

inline int cmd_plan(const PlanOpts& o) {
  Settings s;
  if (!o.config.empty()) s.load_file(o.config);
  s.apply_defines(o.defines);
  if (s.trace_path.empty()) throw ParameterError("plan: trace is required");
  if (s.model_dir.empty()) throw ParameterError("plan: models is required");
  if (s.out_path.empty()) throw ParameterError("plan: out is required");
  s.finalize();
  ModelSet models = load_model_set(s.model_dir);
  Trace trace = load_trace(s.trace_path);
  std::vector<Trace> windows = split_windows(trace, s.window_ms);
  if (o.window_index < 0 || o.window_index >= static_cast<int>(windows.size())) {
    throw ParameterError("plan: window index out of range (trace has " + std::to_string(windows.size()) +
                         " windows)");
  }
  WindowPlans plans = plan_window_policies(windows[static_cast<std::size_t>(o.window_index)], s.runner, models);
  Policy pol = policy_from_name(o.policy);
  const PlacementPlan& plan = pol == Policy::maxfreq_distserve ? plans.maxfreq : plans.ilp;
  save_plan_json(plan, s.out_path);
  char buf[256];
  std::snprintf(buf, sizeof(buf), "target %.3f rps, objective %.3f W, %d/%d gpus", plan.target_rps,
                plan.objective_w, plan.gpus_used, plan.total_gpus);
  std::cout << buf << "\n";
  for (Phase p : {Phase::prefill, Phase::decode}) {
    double cap = plan.phase_capacity_rps(p);
    double need = (1.0 + plan.alpha) * plan.target_rps;
    std::snprintf(buf, sizeof(buf), "  %s capacity %.3f rps (slack %.3f)", phase_name(p), cap, cap - need);
    std::cout << buf << "\n";
  }
  std::cout << "wrote plan to " << s.out_path << "\n";
  return kExitOk;
}

struct RunOpts {
  std::string config;
  std::vector<std::string> defines;
};

inline int cmd_run(const RunOpts& o) {
  Settings s;
  if (!o.config.empty()) s.load_file(o.config);
  s.apply_defines(o.defines);
  if (s.trace_path.empty()) throw ParameterError("run: trace is required");
  if (s.model_dir.empty()) throw ParameterError("run: models is required");
  if (s.out_path.empty()) throw ParameterError("run: out is required");
  s.finalize();
  ModelSet models = load_model_set(s.model_dir);
  Trace trace = load_trace(s.trace_path);
  std::filesystem::create_directories(s.out_path);

  ExperimentResult result = run_experiment(trace, s.window_ms, s.policies, s.runner, models);

  std::vector<std::string> outputs;
  auto out_file = [&](const std::string& name) {
    outputs.push_back(name);
    return s.out_path + "/" + name;
  };
  for (const WindowRun& run : result.runs) {
    std::string tag = "w" + std::to_string(run.window_index) + "_" + policy_name(run.policy);
    save_plan_json(run.plan, out_file("plan_" + tag + ".json"));
    save_request_csv(run.sim, out_file("requests_" + tag + ".csv"));
    save_batch_csv(run.sim, out_file("batches_" + tag + ".csv"));
    save_decision_log_csv(run.sim.decisions, out_file("decisions_" + tag + ".csv"));
  }
  save_report_csv(result.reports, out_file("report.csv"));

  bool have_baseline = false;
  for (Policy p : s.policies) have_baseline |= p == Policy::maxfreq_distserve;
  if (have_baseline && s.policies.size() > 1) {
    std::size_t per_window = s.policies.size();
    for (std::size_t w = 0; w * per_window < result.reports.size(); ++w) {
      std::vector<MetricsReport> group(result.reports.begin() + static_cast<std::ptrdiff_t>(w * per_window),
                                       result.reports.begin() + static_cast<std::ptrdiff_t>((w + 1) * per_window));
      ComparisonTable cmp = compare_runs(group, policy_name(Policy::maxfreq_distserve), s.runner.slo);
      for (const ComparisonRow& row : cmp.rows) {
        if (row.system == cmp.baseline) continue;
        char buf[256];
        if (row.energy_delta_pct) {
          std::snprintf(buf, sizeof(buf), "%s %s %s energy %+.2f%% vs %s, slo %s", cmp.window_id.c_str(),
                        row.system.c_str(), phase_name(row.phase), *row.energy_delta_pct, cmp.baseline.c_str(),
                        row.slo_pass ? "pass" : "FAIL");
        } else {
          std::snprintf(buf, sizeof(buf), "%s %s %s energy NA vs %s, slo %s", cmp.window_id.c_str(),
                        row.system.c_str(), phase_name(row.phase), cmp.baseline.c_str(),
                        row.slo_pass ? "pass" : "FAIL");
        }
        std::cout << buf << "\n";
      }
    }
  }

  // Manifest is written last so its presence marks a complete output set.
  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["tool_version"] = kToolVersion;
  char hashbuf[17];
  std::snprintf(hashbuf, sizeof(hashbuf), "%016llx", static_cast<unsigned long long>(s.config_hash()));
  manifest["config_hash"] = hashbuf;
  manifest["windows"] = result.runs.empty() ? 0 : result.runs.back().window_index + 1;
  nlohmann::json pols = nlohmann::json::array();
  for (Policy p : s.policies) pols.push_back(policy_name(p));
  manifest["policies"] = pols;
  manifest["outputs"] = outputs;
  {
    std::ofstream os(s.out_path + "/manifest.json", std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + s.out_path + "/manifest.json");
    os << manifest.dump(2) << "\n";
    if (!os.good()) throw IoError("write failed: " + s.out_path + "/manifest.json");
  }

  bool ran_two_tier = false;
  for (Policy p : s.policies) ran_two_tier |= p == Policy::two_tier;
  if (ran_two_tier && !result.two_tier_slo_pass) {
    std::cout << "two-tier SLO attainment FAILED\n";
    return kExitSlo;
  }
  return kExitOk;
}

struct AnalyzeOpts {
  std::string trace;
  std::string out;
  double min_window_s = 0.1;
  double max_window_s = 10000.0;
};

// 1-2-5 steps per decade, inclusive of the endpoints' decades.
inline std::vector<double> log_window_grid(double min_s, double max_s) {
  if (min_s <= 0.0 || max_s < min_s) throw ParameterError("analyze: bad window range");
  std::vector<double> grid;
  double decade = std::pow(10.0, std::floor(std::log10(min_s)));
  for (; decade <= max_s; decade *= 10.0) {
    for (double m : {1.0, 2.0, 5.0}) {
      double w = m * decade;
      if (w >= min_s - 1e-12 && w <= max_s + 1e-12) grid.push_back(w);
    }
  }
  return grid;
}

inline int cmd_analyze(const AnalyzeOpts& o) {
  Trace t = load_trace(o.trace);
  std::vector<double> grid = log_window_grid(o.min_window_s, o.max_window_s);
  std::vector<double> eligible;
  for (double w : grid) {
    if (w <= t.duration_s()) eligible.push_back(w);
  }
  VarianceTimeCurve curve;
  if (!eligible.empty()) curve = variance_time_curve(t, eligible);
  std::ofstream os(o.out, std::ios::binary);
  if (!os) throw IoError("cannot open for write: " + o.out);
  os << "window_s,normalized_variance\n";
  std::size_t j = 0;
  char buf[96];
  for (double w : grid) {
    if (j < curve.window_sizes_s.size() && curve.window_sizes_s[j] == w) {
      if (curve.normalized_variance[j]) {
        std::snprintf(buf, sizeof(buf), "%.6f,%.9f\n", w, *curve.normalized_variance[j]);
      } else {
        std::snprintf(buf, sizeof(buf), "%.6f,NA\n", w);
      }
      ++j;
    } else {
      std::snprintf(buf, sizeof(buf), "%.6f,NA\n", w);  // window exceeds the trace
    }
    os << buf;
  }
  if (!os.good()) throw IoError("write failed: " + o.out);
  std::cout << "wrote " << grid.size() << " window sizes to " << o.out << "\n";
  return kExitOk;
}

}  // namespace detail

inline int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"energy-aware placement and DVFS simulator for disaggregated inference"};
  app.require_subcommand(1);

  detail::GenTraceOpts gen;
  CLI::App* c_gen = app.add_subcommand("gen-trace", "generate or rescale an arrival trace");
  c_gen->add_option("--out", gen.out, "output trace path (.csv or .jsonl)")->required();
  c_gen->add_option("--from", gen.from, "rescale this trace instead of synthesizing");
  c_gen->add_option("--keep-prob", gen.keep_prob, "per-request keep probability for --from");
  c_gen->add_option("--mean-rps", gen.mean_rps, "mean arrival rate");
  c_gen->add_option("--duration-s", gen.duration_s, "trace duration in seconds");
  c_gen->add_option("--shape", gen.shape, "gamma shape for inter-arrival gaps (1 = Poisson)");
  c_gen->add_option("--seed", gen.seed, "rng seed");
  c_gen->add_option("--lengths-file", gen.lengths_file, "csv of input_len,output_len samples");
  c_gen->add_option("--input-mu", gen.input_mu, "lognormal mu of input length");
  c_gen->add_option("--input-sigma", gen.input_sigma, "lognormal sigma of input length");
  c_gen->add_option("--output-mu", gen.output_mu, "lognormal mu of output length");
  c_gen->add_option("--output-sigma", gen.output_sigma, "lognormal sigma of output length");

  detail::SynthModelOpts synth;
  CLI::App* c_synth = app.add_subcommand("synth-model", "write a synthetic performance model set");
  c_synth->add_option("--out-dir", synth.out_dir, "output directory")->required();
  c_synth->add_option("--family", synth.family, "compute-bound or memory-bound");
  c_synth->add_option("--ladder", synth.ladder, "comma-separated frequencies in MHz");
  c_synth->add_option("--tps", synth.tps, "comma-separated tensor-parallel degrees");
  c_synth->add_option("--prefill-lat-coef", synth.prefill_lat_coef, "prefill latency coefficient");
  c_synth->add_option("--decode-lat-coef", synth.decode_lat_coef, "decode latency coefficient");
  c_synth->add_option("--power-a", synth.power_a, "frequency-dependent power coefficient");
  c_synth->add_option("--power-b", synth.power_b, "power floor per gpu");
  c_synth->add_option("--knee-mhz", synth.knee_mhz, "memory-bound latency knee");
  c_synth->add_option("--idle-frac", synth.idle_frac, "idle power fraction");

  detail::PlanOpts plan;
  CLI::App* c_plan = app.add_subcommand("plan", "solve placement for one trace window");
  c_plan->add_option("--config", plan.config, "key=value config file");
  c_plan->add_option("-D,--define", plan.defines, "config override key=value");
  c_plan->add_option("--window-index", plan.window_index, "which window of the trace to plan from");
  c_plan->add_option("--policy", plan.policy, "two-tier, place-only, or maxfreq-distserve");

  detail::RunOpts run;
  CLI::App* c_run = app.add_subcommand("run", "simulate policies over trace windows");
  c_run->add_option("--config", run.config, "key=value config file");
  c_run->add_option("-D,--define", run.defines, "config override key=value");

  detail::AnalyzeOpts analyze;
  CLI::App* c_analyze = app.add_subcommand("analyze", "variance-time curve of a trace");
  c_analyze->add_option("--trace", analyze.trace, "input trace")->required();
  c_analyze->add_option("--out", analyze.out, "output csv")->required();
  c_analyze->add_option("--min-window-s", analyze.min_window_s, "smallest window size");
  c_analyze->add_option("--max-window-s", analyze.max_window_s, "largest window size");

  try {
    std::vector<const char*> argv;
    argv.push_back("pdsim");
    for (const std::string& a : args) argv.push_back(a.c_str());
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitParameter;
  }

  try {
    if (c_gen->parsed()) return detail::cmd_gen_trace(gen);
    if (c_synth->parsed()) return detail::cmd_synth_model(synth);
    if (c_plan->parsed()) return detail::cmd_plan(plan);
    if (c_run->parsed()) return detail::cmd_run(run);
    if (c_analyze->parsed()) return detail::cmd_analyze(analyze);
  } catch (const InfeasibleError& e) {
    std::cerr << "infeasible: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitParameter;
  }
  return kExitParameter;
}

}  // namespace pdsim::cli
