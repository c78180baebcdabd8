#pragma once

#include <cstdint>
#include <vector>

#include "pdsim/errors.hpp"
#include "pdsim/perfmodel.hpp"

namespace pdsim {

struct SchedulerPolicy {
  std::int64_t max_batch_tokens = 8192;   // prefill token budget
  std::int64_t max_batch_requests = 256;  // decode residency cap
  bool chunking = true;
  std::int64_t kv_capacity_tokens = 1000000;

  void validate() const {
    if (max_batch_tokens < 1) throw ParameterError("scheduler: max_batch_tokens must be >= 1");
    if (max_batch_requests < 1) throw ParameterError("scheduler: max_batch_requests must be >= 1");
    if (kv_capacity_tokens < 1) throw ParameterError("scheduler: kv_capacity_tokens must be >= 1");
  }
};

struct PrefillQueueEntry {
  std::int64_t id = -1;
  double arrival_ms = 0.0;
  std::int64_t total_len = 0;
  std::int64_t remaining_len = 0;
};

struct PrefillPick {
  std::size_t queue_index = 0;
  std::int64_t tokens = 0;
  bool completes = false;  // this chunk finishes the request's prefill
};

// FCFS under the token budget. No skipping: the head of the queue blocks.
// With chunking, a long prompt spills into later batches and a partial head
// chunk fills the batch. Without it, an over-budget prompt runs alone.
inline std::vector<PrefillPick> form_prefill_batch(const std::vector<PrefillQueueEntry>& queue,
                                                   const SchedulerPolicy& policy) {
  std::vector<PrefillPick> picks;
  std::int64_t tokens = 0;
  for (std::size_t i = 0; i < queue.size(); ++i) {
    if (static_cast<std::int64_t>(picks.size()) >= policy.max_batch_requests) break;
    const std::int64_t rem = queue[i].remaining_len;
    if (rem <= 0) throw SimulationError("scheduler: queued request with no remaining tokens");
    if (policy.chunking) {
      const std::int64_t room = policy.max_batch_tokens - tokens;
      if (room <= 0) break;
      const std::int64_t take = std::min(rem, room);
      picks.push_back(PrefillPick{i, take, take == rem});
      tokens += take;
      if (take < rem) break;
    } else {
      if (rem > policy.max_batch_tokens) {
        if (picks.empty()) picks.push_back(PrefillPick{i, rem, true});
        break;
      }
      if (tokens + rem > policy.max_batch_tokens) break;
      picks.push_back(PrefillPick{i, rem, true});
      tokens += rem;
    }
  }
  return picks;
}

inline BatchFeatures prefill_batch_features(const std::vector<PrefillPick>& picks) {
  std::vector<std::int64_t> lens;
  lens.reserve(picks.size());
  for (const auto& p : picks) lens.push_back(p.tokens);
  return BatchFeatures::from_lengths(lens);
}

}  // namespace pdsim
