#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "pdsim/controller.hpp"
#include "pdsim/errors.hpp"
#include "pdsim/perfmodel.hpp"
#include "pdsim/scheduler.hpp"
#include "pdsim/slo.hpp"

namespace pdsim {

struct MpcConfig {
  int horizon_K = 8;
  int ladder_N = 7;
  FrequencyLadder ladder;
  SLOSpec slo;
  double switch_latency_ms = 30.0;
  double margin = 0.05;

  void validate() const {
    if (horizon_K < 1) throw ParameterError("mpc: horizon_K must be >= 1");
    if (ladder_N < 1) throw ParameterError("mpc: ladder_N must be >= 1");
    ladder.validate();
    slo.validate();
    if (margin < 0.0) throw ParameterError("mpc: margin must be >= 0");
  }

  FrequencyLadder candidates() const { return ladder.select(static_cast<std::size_t>(ladder_N)); }
};

struct DecodePolicyConfig {
  double tbt_slo_ms = 100.0;
  double kv_threshold = 0.9;
  FrequencyLadder ladder;
  double margin = 0.0;

  void validate() const {
    if (tbt_slo_ms <= 0.0) throw ParameterError("decode policy: tbt_slo_ms must be > 0");
    if (kv_threshold <= 0.0 || kv_threshold >= 1.0) throw ParameterError("decode policy: kv_threshold in (0,1)");
    ladder.validate();
    if (margin < 0.0) throw ParameterError("decode policy: margin must be >= 0");
  }
};

struct FrequencyAssignment {
  std::vector<double> freqs;  // one per projected batch
};

struct ProjectedBatch {
  BatchFeatures features;
  double work_fraction = 1.0;  // < 1 for the in-flight batch
  std::vector<std::int64_t> completing_ids;
  std::vector<double> completing_arrivals_ms;
};

// Replays the prefill scheduler over the frozen queue: no new arrivals, the
// in-flight batch (if any) runs out first.
inline std::vector<ProjectedBatch> project_batches(const QueueSnapshot& q, const SchedulerPolicy& policy,
                                                   int horizon_K) {
  std::vector<ProjectedBatch> out;
  if (horizon_K < 1) throw ParameterError("project_batches: horizon_K must be >= 1");
  if (q.running.active) {
    ProjectedBatch b;
    b.features = q.running.features;
    b.work_fraction = q.running.work_remaining;
    for (std::size_t i = 0; i < q.running.ids.size(); ++i) {
      if (q.running.completes[i]) {
        b.completing_ids.push_back(q.running.ids[i]);
        b.completing_arrivals_ms.push_back(q.running.arrivals_ms[i]);
      }
    }
    out.push_back(std::move(b));
  }
  std::vector<PrefillQueueEntry> queue;
  queue.reserve(q.waiting.size());
  for (const auto& w : q.waiting) queue.push_back(PrefillQueueEntry{w.id, w.arrival_ms, w.total_len, w.remaining_len});
  while (!queue.empty() && static_cast<int>(out.size()) < horizon_K) {
    std::vector<PrefillPick> picks = form_prefill_batch(queue, policy);
    ProjectedBatch b;
    b.features = prefill_batch_features(picks);
    std::size_t consumed = 0;
    for (const auto& p : picks) {
      PrefillQueueEntry& e = queue[p.queue_index];
      if (p.completes) {
        b.completing_ids.push_back(e.id);
        b.completing_arrivals_ms.push_back(e.arrival_ms);
      }
      e.remaining_len -= p.tokens;
      if (e.remaining_len == 0) ++consumed;
    }
    queue.erase(queue.begin(), queue.begin() + static_cast<std::ptrdiff_t>(consumed));
    out.push_back(std::move(b));
  }
  return out;
}

// TTFT feasibility of one frequency assignment over the projection. Switch
// latency is charged whenever the frequency changes between consecutive
// batches (the first batch compares against the frequency now in force).
inline bool meets_slo(const FrequencyAssignment& a, const std::vector<ProjectedBatch>& projection,
                      const QueueSnapshot& q, const ModelSet& models, const MpcConfig& cfg) {
  if (a.freqs.size() != projection.size()) throw ParameterError("meets_slo: assignment length mismatch");
  double t = q.now_ms;
  double prev = q.current_freq_mhz;
  for (std::size_t k = 0; k < projection.size(); ++k) {
    double f = a.freqs[k];
    double lat = projection[k].work_fraction *
                 predict_latency(models.latency(Phase::prefill), projection[k].features, q.tp, f);
    if (f != prev) lat += cfg.switch_latency_ms;
    t += lat * (1.0 + cfg.margin);
    for (std::size_t i = 0; i < projection[k].completing_ids.size(); ++i) {
      if (t - projection[k].completing_arrivals_ms[i] > cfg.slo.ttft_ms) return false;
    }
    prev = f;
  }
  return true;
}

struct GreedyLevelStats {
  int level = 0;            // 1-based expansion step
  double replaced_mhz = 0.0;
  int k_prime = 0;          // occurrences replaced at this level
  std::int64_t mutations = 0;
  std::int64_t feasible_mutations = 0;
  bool accepted = false;
};

struct GreedyResult {
  FrequencyAssignment assignment;
  bool feasible = true;          // all-max initialization met the SLO
  std::int64_t eval_count = 0;   // assignments tested against meets_slo
  double objective_w = 0.0;      // time-weighted average power of the result
  std::vector<GreedyLevelStats> levels;
};

namespace detail {

struct MpcEvaluator {
  const std::vector<ProjectedBatch>& projection;
  const QueueSnapshot& q;
  const ModelSet& models;
  const MpcConfig& cfg;
  mutable std::map<std::pair<std::size_t, double>, std::pair<double, double>> memo;  // (k, f) -> (lat, pow)

  std::pair<double, double> eval(std::size_t k, double f) const {
    auto key = std::make_pair(k, f);
    auto it = memo.find(key);
    if (it != memo.end()) return it->second;
    double lat = projection[k].work_fraction *
                 predict_latency(models.latency(Phase::prefill), projection[k].features, q.tp, f);
    double pow = predict_power(models.power(Phase::prefill), projection[k].features, q.tp, f);
    auto val = std::make_pair(lat, pow);
    memo.emplace(key, val);
    return val;
  }

  // Search objective: sum(latency * power) / sum(latency).
  double time_weighted_power(const FrequencyAssignment& a) const {
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < a.freqs.size(); ++k) {
      auto [lat, pow] = eval(k, a.freqs[k]);
      num += lat * pow;
      den += lat;
    }
    return den > 0.0 ? num / den : 0.0;
  }
};

inline bool lex_less(const std::vector<double>& a, const std::vector<double>& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

}  // namespace detail

// Algorithm: start all batches at the highest candidate frequency; per level,
// admit the next two lower frequencies and enumerate every replacement of the
// previous level's frequency (3^K' - 1 mutations); keep the feasible mutation
// with the lowest time-weighted power; stop when none is feasible or none
// improves.
inline GreedyResult greedy_freq_select(const QueueSnapshot& q, const MpcConfig& cfg, const ModelSet& models,
                                       const SchedulerPolicy& policy) {
  cfg.validate();
  FrequencyLadder cand = cfg.candidates();
  std::vector<double> avail(cand.freqs_mhz.rbegin(), cand.freqs_mhz.rend());  // descending
  const std::size_t N = avail.size();

  std::vector<ProjectedBatch> projection = project_batches(q, policy, cfg.horizon_K);
  GreedyResult res;
  if (projection.empty()) {
    res.feasible = true;
    return res;
  }
  const std::size_t K = projection.size();
  detail::MpcEvaluator ev{projection, q, models, cfg, {}};

  res.assignment.freqs.assign(K, avail[0]);
  res.eval_count = 1;
  res.feasible = meets_slo(res.assignment, projection, q, models, cfg);
  res.objective_w = ev.time_weighted_power(res.assignment);
  if (!res.feasible || N == 1) return res;

  // level l replaces occurrences of avail[l-1] with avail[l] (and avail[l+1]
  // when the ladder is deep enough for the two-step expansion)
  const std::size_t last_level = N >= 3 ? N - 2 : 1;
  for (std::size_t l = 1; l <= last_level; ++l) {
    const double target = avail[l - 1];
    std::vector<double> repl = {avail[l]};
    if (l + 1 < N) repl.push_back(avail[l + 1]);
    std::vector<std::size_t> pos;
    for (std::size_t k = 0; k < K; ++k) {
      if (res.assignment.freqs[k] == target) pos.push_back(k);
    }
    GreedyLevelStats stats;
    stats.level = static_cast<int>(l);
    stats.replaced_mhz = target;
    stats.k_prime = static_cast<int>(pos.size());
    if (pos.empty()) break;

    const std::size_t base = repl.size() + 1;
    std::size_t combos = 1;
    for (std::size_t i = 0; i < pos.size(); ++i) combos *= base;

    std::optional<FrequencyAssignment> best;
    double best_power = 0.0;
    for (std::size_t code = 1; code < combos; ++code) {
      FrequencyAssignment mut = res.assignment;
      std::size_t c = code;
      for (std::size_t i = 0; i < pos.size(); ++i) {
        std::size_t digit = c % base;
        c /= base;
        if (digit > 0) mut.freqs[pos[i]] = repl[digit - 1];
      }
      stats.mutations += 1;
      res.eval_count += 1;
      if (!meets_slo(mut, projection, q, models, cfg)) continue;
      stats.feasible_mutations += 1;
      double p = ev.time_weighted_power(mut);
      if (!best || p < best_power || (p == best_power && detail::lex_less(mut.freqs, best->freqs))) {
        best = std::move(mut);
        best_power = p;
      }
    }
    bool improved = best && (best_power < res.objective_w ||
                             (best_power == res.objective_w && detail::lex_less(best->freqs, res.assignment.freqs)));
    if (improved) {
      res.assignment = std::move(*best);
      res.objective_w = best_power;
      stats.accepted = true;
    }
    res.levels.push_back(stats);
    if (!stats.accepted) break;
  }
  return res;
}

// Same contract as greedy_freq_select, invoked mid-batch; the snapshot's
// running entry carries the remaining-work fraction.
inline GreedyResult on_arrival_trigger(const QueueSnapshot& q, const MpcConfig& cfg, const ModelSet& models,
                                       const SchedulerPolicy& policy) {
  return greedy_freq_select(q, cfg, models, policy);
}

struct DecodeDecision {
  double freq_mhz = 0.0;
  std::int64_t eval_count = 0;
  bool kv_override = false;
};

inline DecodeDecision select_decode_freq_ex(const BatchFeatures& batch, const KVCacheState& kv,
                                            const DecodePolicyConfig& cfg, const ModelSet& models, int tp) {
  cfg.validate();
  DecodeDecision d;
  if (kv.utilization() > cfg.kv_threshold) {
    d.freq_mhz = cfg.ladder.max_mhz();
    d.kv_override = true;
    return d;
  }
  for (double f : cfg.ladder.freqs_mhz) {
    d.eval_count += 1;
    double lat = predict_latency(models.latency(Phase::decode), batch, tp, f) * (1.0 + cfg.margin);
    if (lat <= cfg.tbt_slo_ms) {
      d.freq_mhz = f;
      return d;
    }
  }
  d.freq_mhz = cfg.ladder.max_mhz();
  return d;
}

inline double select_decode_freq(const BatchFeatures& batch, const KVCacheState& kv, const DecodePolicyConfig& cfg,
                                 const ModelSet& models, int tp) {
  return select_decode_freq_ex(batch, kv, cfg, models, tp).freq_mhz;
}

// --- Controllers ---------------------------------------------------------------

class PrefillMpcController : public FreqController {
 public:
  PrefillMpcController(MpcConfig cfg, const ModelSet& models, SchedulerPolicy policy)
      : cfg_(std::move(cfg)), models_(&models), policy_(policy) {
    cfg_.validate();
    policy_.validate();
    max_mhz_ = cfg_.candidates().max_mhz();
  }

  FreqDecision decide(const QueueSnapshot& q) override { return run(q); }

  bool reacts_to_arrivals() const override { return true; }

  std::optional<FreqDecision> on_arrival(const QueueSnapshot& q) override { return run(q); }

  double predicted_latency_ms(const BatchFeatures& f, Phase phase, int tp, double freq_mhz) const override {
    return predict_latency(models_->latency(phase), f, tp, freq_mhz);
  }

  double safety_margin() const override { return cfg_.margin; }
  double max_freq_mhz() const override { return max_mhz_; }

 private:
  FreqDecision run(const QueueSnapshot& q) const {
    GreedyResult g = greedy_freq_select(q, cfg_, *models_, policy_);
    FreqDecision d;
    d.freq_mhz = g.assignment.freqs.empty() ? (q.target_freq_mhz > 0 ? q.target_freq_mhz : max_mhz_)
                                            : g.assignment.freqs.front();
    d.feasible = g.feasible;
    d.eval_count = g.eval_count;
    return d;
  }

  MpcConfig cfg_;
  const ModelSet* models_;
  SchedulerPolicy policy_;
  double max_mhz_ = 0.0;
};

class DecodePolicyController : public FreqController {
 public:
  DecodePolicyController(DecodePolicyConfig cfg, const ModelSet& models) : cfg_(std::move(cfg)), models_(&models) {
    cfg_.validate();
  }

  FreqDecision decide(const QueueSnapshot& q) override {
    DecodeDecision d = select_decode_freq_ex(q.decode_batch, q.kv, cfg_, *models_, q.tp);
    return FreqDecision{d.freq_mhz, true, d.eval_count};
  }

  double predicted_latency_ms(const BatchFeatures& f, Phase phase, int tp, double freq_mhz) const override {
    return predict_latency(models_->latency(phase), f, tp, freq_mhz);
  }

  double safety_margin() const override { return safety_margin_; }
  double max_freq_mhz() const override { return cfg_.ladder.max_mhz(); }

  void set_safety_margin(double m) { safety_margin_ = m; }

 private:
  DecodePolicyConfig cfg_;
  const ModelSet* models_;
  double safety_margin_ = 0.05;
};

// Tier-2 wiring for a whole cluster: MPC on prefill instances, the TBT
// policy on decode instances. The controller may be given its own model set
// (e.g. a miscalibrated one) distinct from the simulator's ground truth.
class TwoTierFactory : public ControllerFactory {
 public:
  TwoTierFactory(MpcConfig mpc, DecodePolicyConfig decode, const ModelSet& controller_models,
                 SchedulerPolicy policy)
      : mpc_(std::move(mpc)), decode_(std::move(decode)), models_(&controller_models), policy_(policy) {}

  std::unique_ptr<FreqController> make(Phase phase, int tp, double base_freq_mhz) override {
    (void)tp;
    (void)base_freq_mhz;
    if (phase == Phase::prefill) return std::make_unique<PrefillMpcController>(mpc_, *models_, policy_);
    auto ctl = std::make_unique<DecodePolicyController>(decode_, *models_);
    ctl->set_safety_margin(decode_.margin > 0.0 ? decode_.margin : 0.05);
    return ctl;
  }

 private:
  MpcConfig mpc_;
  DecodePolicyConfig decode_;
  const ModelSet* models_;
  SchedulerPolicy policy_;
};

}  // namespace pdsim
