#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pdsim/controller.hpp"
#include "pdsim/errors.hpp"
#include "pdsim/perfmodel.hpp"
#include "pdsim/scheduler.hpp"
#include "pdsim/workload.hpp"

namespace pdsim {

struct InstanceConfig {
  Phase phase = Phase::prefill;
  int tp = 1;
  double base_freq_mhz = 0.0;

  void validate() const {
    if (tp < 1) throw ParameterError("instance: tp must be >= 1");
    if (base_freq_mhz <= 0.0) throw ParameterError("instance: base_freq_mhz must be > 0");
  }
};

struct BatchRecord {
  int instance = 0;
  Phase phase = Phase::prefill;
  std::int64_t batch_seq = 0;  // segments of one batch share this
  double start_ms = 0.0;
  double end_ms = 0.0;
  BatchFeatures features;
  double freq_mhz = 0.0;
  double power_w = 0.0;
  double energy_j = 0.0;  // power_w * (end - start) / 1000
  std::vector<std::int64_t> member_ids;
};

struct IdleRecord {
  int instance = 0;
  Phase phase = Phase::prefill;
  double start_ms = 0.0;
  double end_ms = 0.0;
  double freq_mhz = 0.0;
  double power_w = 0.0;
  double energy_j = 0.0;
};

struct RequestRecord {
  std::int64_t id = -1;
  double arrival_ms = 0.0;
  std::int64_t input_len = 0;
  std::int64_t output_len = 0;
  int prefill_instance = -1;
  int decode_instance = -1;
  std::optional<double> prefill_done_ms;
  std::optional<double> decode_join_ms;
  std::optional<double> decode_first_start_ms;  // queueing before the first decode iteration, kept out of TTFT/TPOT
  std::vector<double> token_times_ms;           // decode emissions, one per iteration
  bool completed = false;

  std::optional<double> ttft_ms() const {
    if (!prefill_done_ms) return std::nullopt;
    return *prefill_done_ms - arrival_ms;
  }

  std::optional<double> tpot_ms() const {
    if (output_len < 2 || token_times_ms.size() < 2) return std::nullopt;
    return (token_times_ms.back() - token_times_ms.front()) / static_cast<double>(output_len - 1);
  }

  // Worst token gap, counting the handoff gap into decode; stability proxy
  // for the goodput search.
  std::optional<double> max_tbt_ms() const {
    if (token_times_ms.empty()) return std::nullopt;
    double anchor = decode_join_ms ? *decode_join_ms : arrival_ms;
    double worst = token_times_ms.front() - anchor;
    for (std::size_t i = 1; i < token_times_ms.size(); ++i) {
      worst = std::max(worst, token_times_ms[i] - token_times_ms[i - 1]);
    }
    return worst;
  }

  std::optional<double> decode_queue_delay_ms() const {
    if (!decode_first_start_ms || !decode_join_ms) return std::nullopt;
    return *decode_first_start_ms - *decode_join_ms;
  }
};

struct SimResult {
  std::vector<RequestRecord> requests;  // ordered by id
  std::vector<BatchRecord> batches;
  std::vector<IdleRecord> idles;
  DecisionLog decisions;
  std::vector<InstanceConfig> instances;  // index = instance id
  double horizon_ms = 0.0;                // end of the accounted span
  std::int64_t completed_requests = 0;
  std::int64_t generated_tokens = 0;
  std::uint64_t model_clamp_events = 0;

  double busy_energy_j(std::optional<Phase> phase = std::nullopt) const {
    double e = 0.0;
    for (const auto& b : batches) {
      if (!phase || b.phase == *phase) e += b.energy_j;
    }
    return e;
  }

  double idle_energy_j(std::optional<Phase> phase = std::nullopt) const {
    double e = 0.0;
    for (const auto& r : idles) {
      if (!phase || r.phase == *phase) e += r.energy_j;
    }
    return e;
  }

  double total_energy_j() const { return busy_energy_j() + idle_energy_j(); }
};

struct SimOptions {
  double switch_latency_ms = 30.0;
  // Energy-accounting horizon; <0 extends to max(trace duration, last event).
  double horizon_ms = -1.0;
};

namespace detail {

struct FreqBook {
  double in_force = 0.0;
  std::optional<std::pair<double, double>> pending;  // {activate_ms, freq}

  double target() const { return pending ? pending->second : in_force; }

  // Request a switch at `now`; switching to the in-force frequency cancels
  // any pending request instead of scheduling a no-op.
  void request(double now, double to, double latency_ms) {
    if (to == target()) return;
    if (to == in_force) {
      pending.reset();
    } else {
      pending = {now + latency_ms, to};
    }
  }

  double next_activation() const {
    return pending ? pending->first : std::numeric_limits<double>::infinity();
  }

  void activate() {
    in_force = pending->second;
    pending.reset();
  }
};

constexpr double kInf = std::numeric_limits<double>::infinity();

inline std::uint64_t clamp_count(const ModelSet& m) {
  return m.latency_prefill.grid.clamp_events.value.load() + m.latency_decode.grid.clamp_events.value.load() +
         m.power_prefill.grid.clamp_events.value.load() + m.power_decode.grid.clamp_events.value.load();
}

// One simulated instance; shared bookkeeping for both phases.
struct InstanceSim {
  const InstanceConfig& cfg;
  const SchedulerPolicy& policy;
  const ModelSet& models;
  FreqController* controller;
  const SimOptions& opts;
  int instance_id;

  FreqBook freq;
  double now = 0.0;
  std::int64_t batch_seq = -1;
  SafetyState safety;
  double safety_deadline = kInf;

  std::vector<BatchRecord> batches;
  std::vector<IdleRecord> idles;
  DecisionLog decisions;

  InstanceSim(const InstanceConfig& cfg_, const SchedulerPolicy& policy_, const ModelSet& models_,
              FreqController* controller_, const SimOptions& opts_, int id_)
      : cfg(cfg_), policy(policy_), models(models_), controller(controller_), opts(opts_), instance_id(id_) {
    cfg.validate();
    policy.validate();
    freq.in_force = cfg.base_freq_mhz;
    if (controller) safety.margin = controller->safety_margin();
  }

  double exec_latency(const BatchFeatures& f) const {
    return predict_latency(models.latency(cfg.phase), f, cfg.tp, freq.in_force);
  }

  double exec_power(const BatchFeatures& f) const {
    return predict_power(models.power(cfg.phase), f, cfg.tp, freq.in_force);
  }

  double idle_power() const { return predict_idle_power(models.idle, cfg.tp, freq.in_force); }

  void record_idle(double from, double to) {
    if (to <= from) return;
    double p = idle_power();
    idles.push_back(IdleRecord{instance_id, cfg.phase, from, to, freq.in_force, p, p * (to - from) / 1000.0});
  }

  void record_segment(double from, double to, const BatchFeatures& f, const std::vector<std::int64_t>& ids) {
    if (to <= from) return;
    double p = exec_power(f);
    BatchRecord r;
    r.instance = instance_id;
    r.phase = cfg.phase;
    r.batch_seq = batch_seq;
    r.start_ms = from;
    r.end_ms = to;
    r.features = f;
    r.freq_mhz = freq.in_force;
    r.power_w = p;
    r.energy_j = p * (to - from) / 1000.0;
    r.member_ids = ids;
    batches.push_back(std::move(r));
  }

  void arm_safety(double at, const BatchFeatures& f, double decided_freq, double work_fraction) {
    if (!controller) return;
    double pred = work_fraction * controller->predicted_latency_ms(f, cfg.phase, cfg.tp, decided_freq);
    double sw = decided_freq != freq.in_force ? opts.switch_latency_ms : 0.0;
    safety_deadline = at + (pred + sw) * (1.0 + safety.margin);
  }

  // Projected completion exceeded the armed deadline; log and go to max.
  void fire_safety(double at, double projected_elapsed_ms, double predicted_ms) {
    FreqAction act = apply_safety_overrides(projected_elapsed_ms, predicted_ms, safety);
    if (!act.switch_to_max) return;
    double fmax = controller->max_freq_mhz();
    decisions.add(at, instance_id, Trigger::safety, FreqDecision{fmax, true, 0});
    freq.request(at, fmax, opts.switch_latency_ms);
  }

  // Fill idle through `to`, honoring pending switch activations on the way.
  void idle_until(double to) {
    while (freq.next_activation() < to) {
      double t = freq.next_activation();
      record_idle(now, t);
      freq.activate();
      now = t;
    }
    record_idle(now, to);
    now = to;
  }
};

struct PrefillDone {
  std::int64_t id = -1;
  double done_ms = 0.0;
};

struct RunningPrefill {
  bool active = false;
  double started_ms = 0.0;
  double seg_start = 0.0;
  double work_remaining = 0.0;
  double decided_freq = 0.0;
  BatchFeatures features;
  std::vector<std::int64_t> ids;
  std::vector<std::int64_t> chunks;
  std::vector<bool> completes;
  std::vector<double> arrivals;
};

// Requests must be sorted by (arrival, id).
inline void simulate_prefill_instance(InstanceSim& sim, const std::vector<Request>& requests,
                                      std::vector<PrefillDone>& done_out) {
  std::vector<PrefillQueueEntry> queue;
  std::size_t arr_idx = 0;
  RunningPrefill run;

  auto build_snapshot = [&](double at) {
    QueueSnapshot q;
    q.now_ms = at;
    q.phase = Phase::prefill;
    q.tp = sim.cfg.tp;
    q.current_freq_mhz = sim.freq.in_force;
    q.target_freq_mhz = sim.freq.target();
    for (const auto& e : queue) q.waiting.push_back(SnapshotWaiting{e.id, e.arrival_ms, e.total_len, e.remaining_len});
    if (run.active) {
      q.running.active = true;
      q.running.ids = run.ids;
      q.running.chunk_lens = run.chunks;
      q.running.completes = run.completes;
      q.running.arrivals_ms = run.arrivals;
      double live = run.work_remaining - (at - run.seg_start) / sim.exec_latency(run.features);
      q.running.work_remaining = std::max(0.0, live);
      q.running.elapsed_ms = at - run.started_ms;
      q.running.features = run.features;
    }
    return q;
  };

  auto start_batch = [&](double at) {
    double decided = sim.freq.target();
    if (sim.controller) {
      FreqDecision d = sim.controller->decide(build_snapshot(at));
      sim.decisions.add(at, sim.instance_id, Trigger::boundary, d);
      sim.freq.request(at, d.freq_mhz, sim.opts.switch_latency_ms);
      decided = d.freq_mhz;
    }
    std::vector<PrefillPick> picks = form_prefill_batch(queue, sim.policy);
    run.active = true;
    run.started_ms = at;
    run.seg_start = at;
    run.work_remaining = 1.0;
    run.decided_freq = decided;
    run.features = prefill_batch_features(picks);
    run.ids.clear();
    run.chunks.clear();
    run.completes.clear();
    run.arrivals.clear();
    std::size_t consumed = 0;
    for (const auto& p : picks) {
      PrefillQueueEntry& e = queue[p.queue_index];
      run.ids.push_back(e.id);
      run.chunks.push_back(p.tokens);
      run.completes.push_back(p.completes);
      run.arrivals.push_back(e.arrival_ms);
      e.remaining_len -= p.tokens;
      if (e.remaining_len == 0) ++consumed;
    }
    queue.erase(queue.begin(), queue.begin() + static_cast<std::ptrdiff_t>(consumed));
    ++sim.batch_seq;
    sim.safety.fired = false;
    sim.arm_safety(at, run.features, decided, 1.0);
  };

  auto close_segment = [&](double to) {
    sim.record_segment(run.seg_start, to, run.features, run.ids);
    run.work_remaining -= (to - run.seg_start) / sim.exec_latency(run.features);
    run.seg_start = to;
  };

  while (arr_idx < requests.size() || !queue.empty() || run.active) {
    if (!run.active && !queue.empty()) {
      // everything that has arrived by now joins this batch's queue
      while (arr_idx < requests.size() && requests[arr_idx].arrival_ms <= sim.now) {
        const Request& r = requests[arr_idx++];
        queue.push_back(PrefillQueueEntry{r.id, r.arrival_ms, r.input_len, r.input_len});
      }
      start_batch(sim.now);
      continue;
    }
    double t_arr = arr_idx < requests.size() ? std::max(requests[arr_idx].arrival_ms, sim.now) : kInf;
    double t_sw = sim.freq.next_activation();
    double t_done = kInf;
    double t_safety = kInf;
    if (run.active) {
      t_done = run.seg_start + run.work_remaining * sim.exec_latency(run.features);
      if (sim.controller && !sim.safety.fired) t_safety = sim.safety_deadline;
    }

    if (run.active && t_done <= t_sw && t_done <= t_safety && t_done <= t_arr) {
      close_segment(t_done);
      for (std::size_t i = 0; i < run.ids.size(); ++i) {
        if (run.completes[i]) done_out.push_back(PrefillDone{run.ids[i], t_done});
      }
      run.active = false;
      sim.safety_deadline = kInf;
      sim.now = t_done;
      continue;
    }
    if (t_sw <= t_safety && t_sw <= t_arr) {
      if (run.active) {
        close_segment(t_sw);
      } else {
        sim.record_idle(sim.now, t_sw);
      }
      sim.freq.activate();
      sim.now = t_sw;
      continue;
    }
    if (run.active && t_safety <= t_arr) {
      double projected = run.seg_start + run.work_remaining * sim.exec_latency(run.features) - run.started_ms;
      double pred = (sim.safety_deadline - run.started_ms) / (1.0 + sim.safety.margin);
      sim.fire_safety(t_safety, projected, pred);
      sim.now = t_safety;
      continue;
    }
    if (t_arr == kInf) break;
    // arrival
    if (!run.active) sim.record_idle(sim.now, t_arr);
    sim.now = std::max(sim.now, t_arr);
    const Request& r = requests[arr_idx++];
    queue.push_back(PrefillQueueEntry{r.id, r.arrival_ms, r.input_len, r.input_len});
    if (run.active && sim.controller && sim.controller->reacts_to_arrivals() && !sim.safety.fired) {
      QueueSnapshot q = build_snapshot(sim.now);
      if (auto d = sim.controller->on_arrival(q)) {
        sim.decisions.add(sim.now, sim.instance_id, Trigger::arrival, *d);
        sim.freq.request(sim.now, d->freq_mhz, sim.opts.switch_latency_ms);
        run.decided_freq = d->freq_mhz;
        sim.arm_safety(sim.now, run.features, d->freq_mhz, q.running.work_remaining);
      }
    }
  }
}

struct DecodeArrival {
  std::int64_t id = -1;
  double join_ms = 0.0;
  std::int64_t input_len = 0;
  std::int64_t output_len = 0;
};

struct DecodeResident {
  std::int64_t id = -1;
  std::int64_t input_len = 0;
  std::int64_t output_len = 0;
  std::int64_t generated = 0;
};

struct DecodeEmission {
  std::int64_t id = -1;
  double time_ms = 0.0;
  bool first_start = false;  // time_ms is the request's first iteration start
};

struct RunningDecode {
  bool active = false;
  double started_ms = 0.0;
  double seg_start = 0.0;
  double work_remaining = 0.0;
  BatchFeatures features;
  std::vector<std::int64_t> ids;
};

// Arrivals must be sorted by (join_ms, id).
inline void simulate_decode_instance(InstanceSim& sim, const std::vector<DecodeArrival>& arrivals,
                                     std::vector<DecodeEmission>& emissions) {
  std::deque<DecodeArrival> waiting;
  std::vector<DecodeResident> residents;
  std::size_t arr_idx = 0;
  std::int64_t reserved = 0;
  RunningDecode run;

  auto kv_used = [&]() {
    std::int64_t used = 0;
    for (const auto& r : residents) used += r.input_len + r.generated;
    return used;
  };

  auto admit = [&](double at) {
    while (!waiting.empty()) {
      const DecodeArrival& head = waiting.front();
      std::int64_t need = head.input_len + head.output_len;
      if (need > sim.policy.kv_capacity_tokens) {
        throw SimulationError("decode: request " + std::to_string(head.id) + " needs " + std::to_string(need) +
                              " KV tokens, capacity " + std::to_string(sim.policy.kv_capacity_tokens));
      }
      if (static_cast<std::int64_t>(residents.size()) >= sim.policy.max_batch_requests) break;
      if (reserved + need > sim.policy.kv_capacity_tokens) break;
      residents.push_back(DecodeResident{head.id, head.input_len, head.output_len, 0});
      reserved += need;
      emissions.push_back(DecodeEmission{head.id, at, true});
      waiting.pop_front();
    }
  };

  auto start_iteration = [&](double at) {
    std::vector<std::int64_t> contexts;
    contexts.reserve(residents.size());
    run.ids.clear();
    for (const auto& r : residents) {
      contexts.push_back(r.input_len + r.generated);
      run.ids.push_back(r.id);
    }
    run.features = BatchFeatures::from_lengths(contexts);
    run.active = true;
    run.started_ms = at;
    run.seg_start = at;
    run.work_remaining = 1.0;
    double decided = sim.freq.target();
    if (sim.controller) {
      QueueSnapshot q;
      q.now_ms = at;
      q.phase = Phase::decode;
      q.tp = sim.cfg.tp;
      q.current_freq_mhz = sim.freq.in_force;
      q.target_freq_mhz = sim.freq.target();
      q.decode_batch = run.features;
      q.kv.capacity_tokens = sim.policy.kv_capacity_tokens;
      q.kv.used_tokens = kv_used();
      for (const auto& w : waiting) q.waiting.push_back(SnapshotWaiting{w.id, w.join_ms, w.input_len, w.input_len});
      FreqDecision d = sim.controller->decide(q);
      sim.decisions.add(at, sim.instance_id, Trigger::boundary, d);
      sim.freq.request(at, d.freq_mhz, sim.opts.switch_latency_ms);
      decided = d.freq_mhz;
    }
    ++sim.batch_seq;
    sim.safety.fired = false;
    sim.arm_safety(at, run.features, decided, 1.0);
  };

  auto close_segment = [&](double to) {
    sim.record_segment(run.seg_start, to, run.features, run.ids);
    run.work_remaining -= (to - run.seg_start) / sim.exec_latency(run.features);
    run.seg_start = to;
  };

  while (arr_idx < arrivals.size() || !waiting.empty() || !residents.empty()) {
    if (!run.active) {
      // pull in everything that has arrived by now
      while (arr_idx < arrivals.size() && arrivals[arr_idx].join_ms <= sim.now) {
        waiting.push_back(arrivals[arr_idx++]);
      }
      admit(sim.now);
      if (residents.empty()) {
        if (arr_idx >= arrivals.size() && waiting.empty()) break;
        if (!waiting.empty()) {
          // head blocked with an empty batch can only mean oversized request,
          // which admit() already threw on; here the queue head just arrived
          throw SimulationError("decode: admission stalled with empty batch");
        }
        double t_next = std::max(arrivals[arr_idx].join_ms, sim.now);
        sim.idle_until(t_next);
        continue;
      }
      start_iteration(sim.now);
      continue;
    }

    double t_arr = arr_idx < arrivals.size() ? std::max(arrivals[arr_idx].join_ms, sim.now) : kInf;
    double t_sw = sim.freq.next_activation();
    double t_done = run.seg_start + run.work_remaining * sim.exec_latency(run.features);
    double t_safety = sim.controller && !sim.safety.fired ? sim.safety_deadline : kInf;

    if (t_done <= t_sw && t_done <= t_safety && t_done <= t_arr) {
      close_segment(t_done);
      for (auto& r : residents) {
        r.generated += 1;
        emissions.push_back(DecodeEmission{r.id, t_done, false});
      }
      std::vector<DecodeResident> keep;
      keep.reserve(residents.size());
      for (const auto& r : residents) {
        if (r.generated >= r.output_len) {
          reserved -= r.input_len + r.output_len;
        } else {
          keep.push_back(r);
        }
      }
      residents.swap(keep);
      run.active = false;
      sim.safety_deadline = kInf;
      sim.now = t_done;
      continue;
    }
    if (t_sw <= t_safety && t_sw <= t_arr) {
      close_segment(t_sw);
      sim.freq.activate();
      sim.now = t_sw;
      continue;
    }
    if (t_safety <= t_arr) {
      double projected = run.seg_start + run.work_remaining * sim.exec_latency(run.features) - run.started_ms;
      double pred = (sim.safety_deadline - run.started_ms) / (1.0 + sim.safety.margin);
      sim.fire_safety(t_safety, projected, pred);
      sim.now = t_safety;
      continue;
    }
    if (t_arr == kInf) throw SimulationError("decode: event starvation");
    waiting.push_back(arrivals[arr_idx++]);
    sim.now = t_arr;
  }
}

}  // namespace detail

// --- Routing -----------------------------------------------------------------

struct RouterState {
  std::vector<double> weights;  // positive, sum 1
  std::vector<double> assigned;
  double total = 0.0;

  void validate() const {
    if (weights.empty()) throw ParameterError("router: no instances");
    double sum = 0.0;
    for (double w : weights) {
      if (w <= 0.0) throw ParameterError("router: weights must be positive");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ParameterError("router: weights must sum to 1");
  }
};

inline RouterState make_router(std::vector<double> weights) {
  RouterState st;
  st.weights = std::move(weights);
  st.assigned.assign(st.weights.size(), 0.0);
  st.validate();
  return st;
}

// Deterministic weighted deficit: prefill load is the prompt length, decode
// load is one request. Largest deficit wins; ties go to the lowest id.
inline int route_request(const Request& r, Phase phase, RouterState& st) {
  double load = phase == Phase::prefill ? static_cast<double>(r.input_len) : 1.0;
  st.total += load;
  int best = 0;
  double best_deficit = -detail::kInf;
  for (std::size_t i = 0; i < st.weights.size(); ++i) {
    double deficit = st.weights[i] * st.total - st.assigned[i];
    if (deficit > best_deficit) {
      best_deficit = deficit;
      best = static_cast<int>(i);
    }
  }
  st.assigned[static_cast<std::size_t>(best)] += load;
  return best;
}

// --- Energy accounting --------------------------------------------------------

struct EnergyBreakdown {
  double busy_j = 0.0;
  double idle_j = 0.0;
  double total_j = 0.0;
};

inline EnergyBreakdown account_energy(const std::vector<BatchRecord>& records, double idle_power_w,
                                      double span_start_ms, double span_end_ms) {
  if (span_end_ms < span_start_ms) throw ParameterError("account_energy: span end before start");
  std::vector<const BatchRecord*> sorted;
  sorted.reserve(records.size());
  for (const auto& r : records) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(),
            [](const BatchRecord* a, const BatchRecord* b) { return a->start_ms < b->start_ms; });
  EnergyBreakdown e;
  double busy_ms = 0.0;
  double prev_end = -detail::kInf;
  for (const BatchRecord* r : sorted) {
    if (r->end_ms <= r->start_ms) throw AccountingError("account_energy: empty or inverted record");
    if (r->start_ms < span_start_ms - 1e-9 || r->end_ms > span_end_ms + 1e-9) {
      throw AccountingError("account_energy: record outside span");
    }
    if (r->start_ms < prev_end - 1e-9) throw AccountingError("account_energy: overlapping records");
    prev_end = r->end_ms;
    e.busy_j += r->power_w * (r->end_ms - r->start_ms) / 1000.0;
    busy_ms += r->end_ms - r->start_ms;
  }
  e.idle_j = idle_power_w * (span_end_ms - span_start_ms - busy_ms) / 1000.0;
  e.total_j = e.busy_j + e.idle_j;
  return e;
}

inline EnergyBreakdown account_energy(const std::vector<BatchRecord>& records, const IdlePowerModel& idle_model,
                                      int tp, double freq_mhz, double span_start_ms, double span_end_ms) {
  return account_energy(records, predict_idle_power(idle_model, tp, freq_mhz), span_start_ms, span_end_ms);
}

// --- Instance and cluster simulation -------------------------------------------

inline SimResult simulate_instance(const Trace& trace, const InstanceConfig& cfg, const SchedulerPolicy& policy,
                                   const ModelSet& models, FreqController* controller = nullptr,
                                   const SimOptions& opts = {}) {
  trace.validate();
  std::uint64_t clamp0 = detail::clamp_count(models);
  detail::InstanceSim sim(cfg, policy, models, controller, opts, 0);

  SimResult res;
  res.instances = {cfg};
  res.requests.reserve(trace.requests.size());
  for (const Request& r : trace.requests) {
    RequestRecord rec;
    rec.id = r.id;
    rec.arrival_ms = r.arrival_ms;
    rec.input_len = r.input_len;
    rec.output_len = r.output_len;
    res.requests.push_back(std::move(rec));
  }
  std::sort(res.requests.begin(), res.requests.end(),
            [](const RequestRecord& a, const RequestRecord& b) { return a.id < b.id; });
  auto find = [&res](std::int64_t id) -> RequestRecord& {
    auto it = std::lower_bound(res.requests.begin(), res.requests.end(), id,
                               [](const RequestRecord& r, std::int64_t v) { return r.id < v; });
    if (it == res.requests.end() || it->id != id) throw SimulationError("unknown request id in simulation");
    return *it;
  };

  if (cfg.phase == Phase::prefill) {
    std::vector<detail::PrefillDone> done;
    detail::simulate_prefill_instance(sim, trace.requests, done);
    for (const auto& d : done) {
      RequestRecord& rec = find(d.id);
      rec.prefill_instance = 0;
      rec.prefill_done_ms = d.done_ms;
      rec.completed = true;
      res.completed_requests += 1;
    }
  } else {
    std::vector<detail::DecodeArrival> arrivals;
    arrivals.reserve(trace.requests.size());
    for (const Request& r : trace.requests) {
      arrivals.push_back(detail::DecodeArrival{r.id, r.arrival_ms, r.input_len, r.output_len});
    }
    std::vector<detail::DecodeEmission> emissions;
    detail::simulate_decode_instance(sim, arrivals, emissions);
    for (const auto& e : emissions) {
      RequestRecord& rec = find(e.id);
      rec.decode_instance = 0;
      if (!rec.decode_join_ms) rec.decode_join_ms = rec.arrival_ms;
      if (e.first_start) {
        rec.decode_first_start_ms = e.time_ms;
      } else {
        rec.token_times_ms.push_back(e.time_ms);
        res.generated_tokens += 1;
      }
    }
    for (auto& rec : res.requests) {
      if (static_cast<std::int64_t>(rec.token_times_ms.size()) == rec.output_len) {
        rec.completed = true;
        res.completed_requests += 1;
      }
    }
  }

  res.horizon_ms = std::max(trace.duration_ms, sim.now);
  if (opts.horizon_ms >= 0) res.horizon_ms = std::max(res.horizon_ms, opts.horizon_ms);
  sim.idle_until(res.horizon_ms);
  res.batches = std::move(sim.batches);
  res.idles = std::move(sim.idles);
  res.decisions = std::move(sim.decisions);
  res.model_clamp_events = detail::clamp_count(models) - clamp0;
  return res;
}

struct ClusterInstance {
  InstanceConfig config;
  double weight = 0.0;  // routing weight within its phase
};

struct ClusterSpec {
  std::vector<ClusterInstance> instances;

  std::vector<int> phase_members(Phase p) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < instances.size(); ++i) {
      if (instances[i].config.phase == p) out.push_back(static_cast<int>(i));
    }
    return out;
  }
};

inline SimResult simulate_cluster(const Trace& trace, const ClusterSpec& cluster, const SchedulerPolicy& policy,
                                  const ModelSet& models, ControllerFactory* controllers = nullptr,
                                  const SimOptions& opts = {}) {
  trace.validate();
  std::vector<int> prefills = cluster.phase_members(Phase::prefill);
  std::vector<int> decodes = cluster.phase_members(Phase::decode);
  if (prefills.empty()) throw ConfigError("cluster: no prefill instance");
  if (decodes.empty()) throw ConfigError("cluster: no decode instance");
  std::uint64_t clamp0 = detail::clamp_count(models);

  SimResult res;
  for (const auto& ci : cluster.instances) res.instances.push_back(ci.config);
  res.requests.reserve(trace.requests.size());
  for (const Request& r : trace.requests) {
    RequestRecord rec;
    rec.id = r.id;
    rec.arrival_ms = r.arrival_ms;
    rec.input_len = r.input_len;
    rec.output_len = r.output_len;
    res.requests.push_back(std::move(rec));
  }
  std::sort(res.requests.begin(), res.requests.end(),
            [](const RequestRecord& a, const RequestRecord& b) { return a.id < b.id; });
  auto find = [&res](std::int64_t id) -> RequestRecord& {
    auto it = std::lower_bound(res.requests.begin(), res.requests.end(), id,
                               [](const RequestRecord& r, std::int64_t v) { return r.id < v; });
    if (it == res.requests.end() || it->id != id) throw SimulationError("unknown request id in simulation");
    return *it;
  };

  auto weights_of = [&](const std::vector<int>& members) {
    std::vector<double> w;
    for (int m : members) w.push_back(cluster.instances[static_cast<std::size_t>(m)].weight);
    return w;
  };

  // Phase 1: route arrivals to prefill instances and simulate each.
  RouterState prefill_router = make_router(weights_of(prefills));
  std::vector<std::vector<Request>> prefill_load(prefills.size());
  for (const Request& r : trace.requests) {
    int slot = route_request(r, Phase::prefill, prefill_router);
    prefill_load[static_cast<std::size_t>(slot)].push_back(r);
    find(r.id).prefill_instance = prefills[static_cast<std::size_t>(slot)];
  }

  std::vector<std::unique_ptr<FreqController>> owned;
  std::vector<detail::PrefillDone> all_done;
  std::vector<std::unique_ptr<detail::InstanceSim>> sims(cluster.instances.size());
  for (std::size_t s = 0; s < prefills.size(); ++s) {
    int inst = prefills[s];
    const InstanceConfig& cfg = cluster.instances[static_cast<std::size_t>(inst)].config;
    FreqController* ctl = nullptr;
    if (controllers) {
      owned.push_back(controllers->make(cfg.phase, cfg.tp, cfg.base_freq_mhz));
      ctl = owned.back().get();
    }
    sims[static_cast<std::size_t>(inst)] =
        std::make_unique<detail::InstanceSim>(cfg, policy, models, ctl, opts, inst);
    std::vector<detail::PrefillDone> done;
    detail::simulate_prefill_instance(*sims[static_cast<std::size_t>(inst)], prefill_load[s], done);
    all_done.insert(all_done.end(), done.begin(), done.end());
  }
  std::sort(all_done.begin(), all_done.end(), [](const detail::PrefillDone& a, const detail::PrefillDone& b) {
    return a.done_ms != b.done_ms ? a.done_ms < b.done_ms : a.id < b.id;
  });

  // Phase 2: route prefill completions into decode queues, in completion order.
  RouterState decode_router = make_router(weights_of(decodes));
  std::vector<std::vector<detail::DecodeArrival>> decode_load(decodes.size());
  for (const auto& d : all_done) {
    RequestRecord& rec = find(d.id);
    rec.prefill_done_ms = d.done_ms;
    if (rec.output_len < 1) continue;
    Request stub{d.id, d.done_ms, rec.input_len, rec.output_len};
    int slot = route_request(stub, Phase::decode, decode_router);
    decode_load[static_cast<std::size_t>(slot)].push_back(
        detail::DecodeArrival{d.id, d.done_ms, rec.input_len, rec.output_len});
    rec.decode_instance = decodes[static_cast<std::size_t>(slot)];
    rec.decode_join_ms = d.done_ms;
  }

  for (std::size_t s = 0; s < decodes.size(); ++s) {
    int inst = decodes[s];
    const InstanceConfig& cfg = cluster.instances[static_cast<std::size_t>(inst)].config;
    FreqController* ctl = nullptr;
    if (controllers) {
      owned.push_back(controllers->make(cfg.phase, cfg.tp, cfg.base_freq_mhz));
      ctl = owned.back().get();
    }
    sims[static_cast<std::size_t>(inst)] =
        std::make_unique<detail::InstanceSim>(cfg, policy, models, ctl, opts, inst);
    std::vector<detail::DecodeEmission> emissions;
    detail::simulate_decode_instance(*sims[static_cast<std::size_t>(inst)], decode_load[s], emissions);
    for (const auto& e : emissions) {
      RequestRecord& rec = find(e.id);
      if (e.first_start) {
        rec.decode_first_start_ms = e.time_ms;
      } else {
        rec.token_times_ms.push_back(e.time_ms);
        res.generated_tokens += 1;
      }
    }
  }

  for (auto& rec : res.requests) {
    bool decode_done = rec.output_len < 1 || static_cast<std::int64_t>(rec.token_times_ms.size()) == rec.output_len;
    if (rec.prefill_done_ms && decode_done) {
      rec.completed = true;
      res.completed_requests += 1;
    }
  }

  double horizon = trace.duration_ms;
  for (const auto& sim : sims) horizon = std::max(horizon, sim->now);
  if (opts.horizon_ms >= 0) horizon = std::max(horizon, opts.horizon_ms);
  res.horizon_ms = horizon;
  for (auto& sim : sims) {
    sim->idle_until(horizon);
    res.batches.insert(res.batches.end(), sim->batches.begin(), sim->batches.end());
    res.idles.insert(res.idles.end(), sim->idles.begin(), sim->idles.end());
    res.decisions.records.insert(res.decisions.records.end(), sim->decisions.records.begin(),
                                 sim->decisions.records.end());
  }
  std::stable_sort(res.batches.begin(), res.batches.end(), [](const BatchRecord& a, const BatchRecord& b) {
    return a.start_ms != b.start_ms ? a.start_ms < b.start_ms : a.instance < b.instance;
  });
  std::stable_sort(res.idles.begin(), res.idles.end(), [](const IdleRecord& a, const IdleRecord& b) {
    return a.start_ms != b.start_ms ? a.start_ms < b.start_ms : a.instance < b.instance;
  });
  std::stable_sort(res.decisions.records.begin(), res.decisions.records.end(),
                   [](const DecisionRecord& a, const DecisionRecord& b) {
                     return a.time_ms != b.time_ms ? a.time_ms < b.time_ms : a.instance < b.instance;
                   });
  res.model_clamp_events = detail::clamp_count(models) - clamp0;
  return res;
}

// --- CSV export ----------------------------------------------------------------

inline void save_request_csv(const SimResult& res, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for write: " + path);
  os << "id,arrival_ms,ttft_ms,tpot_ms\n";
  char buf[160];
  for (const auto& r : res.requests) {
    auto ttft = r.ttft_ms();
    auto tpot = r.tpot_ms();
    std::snprintf(buf, sizeof(buf), "%lld,%.6f,", static_cast<long long>(r.id), r.arrival_ms);
    os << buf;
    if (ttft) {
      std::snprintf(buf, sizeof(buf), "%.6f,", *ttft);
      os << buf;
    } else {
      os << "NA,";
    }
    if (tpot) {
      std::snprintf(buf, sizeof(buf), "%.6f\n", *tpot);
      os << buf;
    } else {
      os << "NA\n";
    }
  }
  if (!os.good()) throw IoError("write failed: " + path);
}

inline void save_batch_csv(const SimResult& res, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for write: " + path);
  os << "instance,phase,batch_seq,start_ms,end_ms,freq_mhz,power_w,energy_j,n_requests,sum_len\n";
  char buf[256];
  for (const auto& b : res.batches) {
    std::snprintf(buf, sizeof(buf), "%d,%s,%lld,%.6f,%.6f,%.3f,%.6f,%.9f,%lld,%lld\n", b.instance,
                  phase_name(b.phase), static_cast<long long>(b.batch_seq), b.start_ms, b.end_ms, b.freq_mhz,
                  b.power_w, b.energy_j, static_cast<long long>(b.features.n_requests),
                  static_cast<long long>(b.features.sum_len));
    os << buf;
  }
  if (!os.good()) throw IoError("write failed: " + path);
}

}  // namespace pdsim
