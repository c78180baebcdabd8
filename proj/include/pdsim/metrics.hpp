#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "pdsim/errors.hpp"
#include "pdsim/simulator.hpp"
#include "pdsim/slo.hpp"

namespace pdsim {

// Nearest-rank percentile: the ceil(p*n)-th order statistic.
inline double nearest_rank(std::vector<double> values, double p) {
  if (values.empty()) throw ParameterError("percentile of empty sample");
  if (p <= 0.0 || p > 1.0) throw ParameterError("percentile must be in (0,1]");
  std::sort(values.begin(), values.end());
  std::size_t rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(values.size())));
  rank = std::max<std::size_t>(rank, 1);
  rank = std::min(rank, values.size());
  return values[rank - 1];
}

// Steady-state view of a SimResult: requests arriving after ramp-up and
// before the end of issuance, energy clipped to the same span.
struct TrimmedResult {
  const SimResult* sim = nullptr;
  double span_start_ms = 0.0;
  double span_end_ms = 0.0;
  std::vector<const RequestRecord*> requests;

  bool empty() const { return requests.empty() || span_end_ms <= span_start_ms; }

  double span_ms() const { return std::max(0.0, span_end_ms - span_start_ms); }

  double busy_energy_j(std::optional<Phase> phase = std::nullopt) const {
    double e = 0.0;
    for (const auto& b : sim->batches) {
      if (phase && b.phase != *phase) continue;
      e += clip_energy(b.start_ms, b.end_ms, b.energy_j);
    }
    return e;
  }

  double idle_energy_j(std::optional<Phase> phase = std::nullopt) const {
    double e = 0.0;
    for (const auto& r : sim->idles) {
      if (phase && r.phase != *phase) continue;
      e += clip_energy(r.start_ms, r.end_ms, r.energy_j);
    }
    return e;
  }

  double phase_energy_j(Phase p) const { return busy_energy_j(p) + idle_energy_j(p); }

  double total_energy_j() const { return busy_energy_j() + idle_energy_j(); }

 private:
  double clip_energy(double start, double end, double energy) const {
    double a = std::max(start, span_start_ms);
    double b = std::min(end, span_end_ms);
    if (b <= a) return 0.0;
    return energy * (b - a) / (end - start);
  }
};

inline TrimmedResult trim_steady_state(const SimResult& sim, double rampup_s = 30.0,
                                       std::optional<double> span_end_ms = std::nullopt) {
  if (rampup_s < 0.0) throw ParameterError("trim: rampup_s must be >= 0");
  TrimmedResult v;
  v.sim = &sim;
  v.span_start_ms = rampup_s * 1000.0;
  double issuance_end = 0.0;
  for (const auto& r : sim.requests) issuance_end = std::max(issuance_end, r.arrival_ms);
  v.span_end_ms = span_end_ms.value_or(issuance_end);
  if (span_end_ms && *span_end_ms <= v.span_start_ms) throw ParameterError("trim: span ends before ramp-up does");
  for (const auto& r : sim.requests) {
    if (r.arrival_ms >= v.span_start_ms && r.arrival_ms <= v.span_end_ms) v.requests.push_back(&r);
  }
  return v;
}

inline std::optional<double> p99_ttft(const TrimmedResult& view, double percentile = 0.99) {
  std::vector<double> vals;
  for (const RequestRecord* r : view.requests) {
    if (auto t = r->ttft_ms()) vals.push_back(*t);
  }
  if (vals.empty()) return std::nullopt;
  return nearest_rank(std::move(vals), percentile);
}

inline std::optional<double> p99_mean_tpot(const TrimmedResult& view, double percentile = 0.99) {
  std::vector<double> vals;
  for (const RequestRecord* r : view.requests) {
    if (auto t = r->tpot_ms()) vals.push_back(*t);
  }
  if (vals.empty()) return std::nullopt;
  return nearest_rank(std::move(vals), percentile);
}

struct MetricsReport {
  std::string window_id;
  std::string system;
  std::optional<double> p99_ttft_ms;
  std::optional<double> p99_mean_tpot_ms;
  std::optional<double> energy_per_first_token_j;   // prefill pool energy / completed requests
  std::optional<double> energy_per_output_token_j;  // decode pool energy / generated tokens
  double avg_power_prefill_w = 0.0;
  double avg_power_decode_w = 0.0;
  double prefill_energy_j = 0.0;
  double decode_energy_j = 0.0;
  double span_ms = 0.0;
  std::int64_t completed_requests = 0;
  std::int64_t generated_tokens = 0;
  std::int64_t ttft_violations = 0;
  std::int64_t tpot_violations = 0;

  std::int64_t slo_violation_count() const { return ttft_violations + tpot_violations; }
};

inline MetricsReport make_report(const TrimmedResult& view, const SLOSpec& slo, const std::string& window_id,
                                 const std::string& system) {
  slo.validate();
  MetricsReport rep;
  rep.window_id = window_id;
  rep.system = system;
  rep.span_ms = view.span_ms();
  if (view.empty()) return rep;
  rep.p99_ttft_ms = p99_ttft(view, slo.percentile);
  rep.p99_mean_tpot_ms = p99_mean_tpot(view, slo.percentile);
  rep.prefill_energy_j = view.phase_energy_j(Phase::prefill);
  rep.decode_energy_j = view.phase_energy_j(Phase::decode);
  if (rep.span_ms > 0.0) {
    rep.avg_power_prefill_w = rep.prefill_energy_j / (rep.span_ms / 1000.0);
    rep.avg_power_decode_w = rep.decode_energy_j / (rep.span_ms / 1000.0);
  }
  for (const RequestRecord* r : view.requests) {
    if (r->completed) {
      rep.completed_requests += 1;
      rep.generated_tokens += static_cast<std::int64_t>(r->token_times_ms.size());
    }
    if (auto t = r->ttft_ms(); t && *t > slo.ttft_ms) rep.ttft_violations += 1;
    if (auto t = r->tpot_ms(); t && *t > slo.tpot_ms) rep.tpot_violations += 1;
  }
  if (rep.completed_requests > 0) {
    rep.energy_per_first_token_j = rep.prefill_energy_j / static_cast<double>(rep.completed_requests);
  }
  if (rep.generated_tokens > 0) {
    rep.energy_per_output_token_j = rep.decode_energy_j / static_cast<double>(rep.generated_tokens);
  }
  return rep;
}

struct ComparisonRow {
  std::string system;
  Phase phase = Phase::prefill;
  std::optional<double> energy_delta_pct;  // vs the baseline, negative is a saving
  bool slo_pass = false;
};

struct ComparisonTable {
  std::string window_id;
  std::string baseline;
  std::vector<ComparisonRow> rows;
};

inline ComparisonTable compare_runs(const std::vector<MetricsReport>& reports, const std::string& baseline_system,
                                    const SLOSpec& slo) {
  if (reports.size() < 2) throw ComparisonError("compare_runs: need at least two reports");
  const MetricsReport* base = nullptr;
  for (const auto& r : reports) {
    if (r.window_id != reports.front().window_id) throw ComparisonError("compare_runs: mismatched windows");
    if (r.system == baseline_system) base = &r;
  }
  if (!base) throw ComparisonError("compare_runs: baseline '" + baseline_system + "' not present");
  ComparisonTable table;
  table.window_id = reports.front().window_id;
  table.baseline = baseline_system;
  for (const auto& r : reports) {
    bool pass = (!r.p99_ttft_ms || *r.p99_ttft_ms <= slo.ttft_ms) &&
                (!r.p99_mean_tpot_ms || *r.p99_mean_tpot_ms <= slo.tpot_ms);
    for (Phase p : {Phase::prefill, Phase::decode}) {
      ComparisonRow row;
      row.system = r.system;
      row.phase = p;
      double mine = p == Phase::prefill ? r.prefill_energy_j : r.decode_energy_j;
      double theirs = p == Phase::prefill ? base->prefill_energy_j : base->decode_energy_j;
      if (theirs > 0.0) row.energy_delta_pct = (mine - theirs) / theirs * 100.0;
      row.slo_pass = pass;
      table.rows.push_back(row);
    }
  }
  return table;
}

// One row per (window, system, phase); column order is part of the public
// output contract.
inline constexpr const char* kReportHeader =
    "window,system,phase,p99_ttft_ms,p99_mean_tpot_ms,energy_j,avg_power_w,energy_per_first_token_j,"
    "energy_per_output_token_j,completed_requests,generated_tokens,slo_violations,span_ms";

namespace detail {

inline void csv_opt(std::string& line, const std::optional<double>& v, const char* fmt = "%.6f") {
  if (v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), fmt, *v);
    line += buf;
  } else {
    line += "NA";
  }
  line += ',';
}

}  // namespace detail

inline void append_report_rows(std::string& out, const MetricsReport& r) {
  for (Phase p : {Phase::prefill, Phase::decode}) {
    std::string line = r.window_id + "," + r.system + "," + phase_name(p) + ",";
    bool prefill = p == Phase::prefill;
    detail::csv_opt(line, prefill ? r.p99_ttft_ms : std::nullopt);
    detail::csv_opt(line, prefill ? std::nullopt : r.p99_mean_tpot_ms);
    detail::csv_opt(line, prefill ? r.prefill_energy_j : r.decode_energy_j, "%.9f");
    detail::csv_opt(line, prefill ? r.avg_power_prefill_w : r.avg_power_decode_w);
    detail::csv_opt(line, prefill ? r.energy_per_first_token_j : std::nullopt, "%.9f");
    detail::csv_opt(line, prefill ? std::nullopt : r.energy_per_output_token_j, "%.9f");
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%lld,%lld,%lld,%.6f\n", static_cast<long long>(r.completed_requests),
                  static_cast<long long>(r.generated_tokens),
                  static_cast<long long>(prefill ? r.ttft_violations : r.tpot_violations), r.span_ms);
    line += buf;
    out += line;
  }
}

inline void save_report_csv(const std::vector<MetricsReport>& reports, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for write: " + path);
  std::string out(kReportHeader);
  out += '\n';
  for (const auto& r : reports) append_report_rows(out, r);
  os << out;
  if (!os.good()) throw IoError("write failed: " + path);
}

}  // namespace pdsim
