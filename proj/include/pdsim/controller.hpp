#pragma once

#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pdsim/errors.hpp"
#include "pdsim/perfmodel.hpp"
#include "pdsim/scheduler.hpp"

namespace pdsim {

struct KVCacheState {
  std::int64_t capacity_tokens = 0;
  std::int64_t used_tokens = 0;
  double threshold = 0.9;

  double utilization() const {
    return capacity_tokens > 0 ? static_cast<double>(used_tokens) / static_cast<double>(capacity_tokens) : 0.0;
  }
};

struct SnapshotWaiting {
  std::int64_t id = -1;
  double arrival_ms = 0.0;
  std::int64_t total_len = 0;
  std::int64_t remaining_len = 0;
};

struct SnapshotRunning {
  bool active = false;
  std::vector<std::int64_t> ids;
  std::vector<std::int64_t> chunk_lens;
  std::vector<bool> completes;       // prefill finishes for this member in the running batch
  std::vector<double> arrivals_ms;
  double work_remaining = 0.0;       // fraction of the batch still to execute
  double elapsed_ms = 0.0;
  BatchFeatures features;
};

// What a frequency controller sees when consulted.
struct QueueSnapshot {
  double now_ms = 0.0;
  Phase phase = Phase::prefill;
  int tp = 1;
  double current_freq_mhz = 0.0;  // in force
  double target_freq_mhz = 0.0;   // differs from current while a switch is pending
  std::vector<SnapshotWaiting> waiting;
  SnapshotRunning running;
  BatchFeatures decode_batch;  // residents of the iteration about to run
  KVCacheState kv;
};

enum class Trigger { boundary, arrival, safety };

inline const char* trigger_name(Trigger t) {
  switch (t) {
    case Trigger::boundary: return "boundary";
    case Trigger::arrival: return "arrival";
    default: return "safety";
  }
}

struct FreqDecision {
  double freq_mhz = 0.0;
  bool feasible = true;
  std::int64_t eval_count = 0;  // latency-model evaluations spent on this decision
};

class FreqController {
 public:
  virtual ~FreqController() = default;

  // Called at every batch boundary with the formed queue state.
  virtual FreqDecision decide(const QueueSnapshot& q) = 0;

  virtual bool reacts_to_arrivals() const { return false; }

  // Mid-batch re-decision on a new arrival; nullopt keeps the current target.
  virtual std::optional<FreqDecision> on_arrival(const QueueSnapshot&) { return std::nullopt; }

  // The controller's own latency estimate, used for safety deadlines.
  virtual double predicted_latency_ms(const BatchFeatures& f, Phase phase, int tp, double freq_mhz) const = 0;

  virtual double safety_margin() const { return 0.05; }
  virtual double max_freq_mhz() const = 0;
};

class ControllerFactory {
 public:
  virtual ~ControllerFactory() = default;
  // nullptr means: run this instance fixed at its base frequency.
  virtual std::unique_ptr<FreqController> make(Phase phase, int tp, double base_freq_mhz) = 0;
};

struct DecisionRecord {
  double time_ms = 0.0;
  int instance = 0;
  Trigger trigger = Trigger::boundary;
  double chosen_freq_mhz = 0.0;
  bool feasible = true;
  std::int64_t eval_count = 0;
};

struct DecisionLog {
  std::vector<DecisionRecord> records;

  void add(double time_ms, int instance, Trigger trigger, const FreqDecision& d) {
    records.push_back(DecisionRecord{time_ms, instance, trigger, d.freq_mhz, d.feasible, d.eval_count});
  }
};

inline void save_decision_log_csv(const DecisionLog& log, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for write: " + path);
  os << "time_ms,instance,trigger,chosen_freq_mhz,feasible,eval_count\n";
  char buf[160];
  for (const auto& r : log.records) {
    std::snprintf(buf, sizeof(buf), "%.6f,%d,%s,%.3f,%d,%lld\n", r.time_ms, r.instance, trigger_name(r.trigger),
                  r.chosen_freq_mhz, r.feasible ? 1 : 0, static_cast<long long>(r.eval_count));
    os << buf;
  }
  if (!os.good()) throw IoError("write failed: " + path);
}

// Latched per batch: fires once when observed elapsed time breaches the
// controller's prediction by more than the margin; the caller clears it at
// the next boundary.
struct SafetyState {
  double margin = 0.05;
  bool fired = false;
};

struct FreqAction {
  bool switch_to_max = false;
};

inline FreqAction apply_safety_overrides(double observed_elapsed_ms, double predicted_latency_ms,
                                         SafetyState& state) {
  FreqAction a;
  if (state.fired) return a;
  if (observed_elapsed_ms > predicted_latency_ms * (1.0 + state.margin)) {
    state.fired = true;
    a.switch_to_max = true;
  }
  return a;
}

}  // namespace pdsim
