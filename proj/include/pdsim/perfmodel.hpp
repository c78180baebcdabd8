#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pdsim/errors.hpp"
#include "pdsim/rng.hpp"

namespace pdsim {

enum class Phase { prefill, decode };

inline const char* phase_name(Phase p) { return p == Phase::prefill ? "prefill" : "decode"; }

inline Phase phase_from_name(const std::string& s) {
  if (s == "prefill") return Phase::prefill;
  if (s == "decode") return Phase::decode;
  throw ParameterError("unknown phase: " + s);
}

struct BatchFeatures {
  std::int64_t n_requests = 0;
  std::int64_t sum_len = 0;
  double mean_len = 0.0;
  double std_len = 0.0;  // population std; 0 for a single request

  static BatchFeatures from_lengths(const std::vector<std::int64_t>& lengths) {
    BatchFeatures f;
    f.n_requests = static_cast<std::int64_t>(lengths.size());
    for (auto l : lengths) f.sum_len += l;
    if (f.n_requests > 0) {
      f.mean_len = static_cast<double>(f.sum_len) / static_cast<double>(f.n_requests);
      double ss = 0.0;
      for (auto l : lengths) {
        double d = static_cast<double>(l) - f.mean_len;
        ss += d * d;
      }
      f.std_len = std::sqrt(ss / static_cast<double>(f.n_requests));
    }
    return f;
  }
};

struct FrequencyLadder {
  std::vector<double> freqs_mhz;  // strictly increasing

  void validate() const {
    if (freqs_mhz.empty()) throw ParameterError("frequency ladder: empty");
    double prev = 0.0;
    for (double f : freqs_mhz) {
      if (f <= prev) throw ParameterError("frequency ladder: must be strictly increasing and > 0");
      prev = f;
    }
  }

  double min_mhz() const { return freqs_mhz.front(); }
  double max_mhz() const { return freqs_mhz.back(); }

  bool contains(double f) const {
    for (double g : freqs_mhz) {
      if (g == f) return true;
    }
    return false;
  }

  // N evenly spaced rungs including both endpoints.
  FrequencyLadder select(std::size_t n) const {
    validate();
    if (n == 0) throw ParameterError("frequency ladder: select(0)");
    if (n >= freqs_mhz.size()) return *this;
    FrequencyLadder out;
    if (n == 1) {
      out.freqs_mhz.push_back(freqs_mhz.back());
      return out;
    }
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t idx = (i * (freqs_mhz.size() - 1)) / (n - 1);
      out.freqs_mhz.push_back(freqs_mhz[idx]);
    }
    out.freqs_mhz.erase(std::unique(out.freqs_mhz.begin(), out.freqs_mhz.end()), out.freqs_mhz.end());
    return out;
  }
};

namespace detail {

// atomic counter that survives copying tables by value
struct CopyableCounter {
  std::atomic<std::uint64_t> value{0};
  CopyableCounter() = default;
  CopyableCounter(const CopyableCounter& other) : value(other.value.load()) {}
  CopyableCounter& operator=(const CopyableCounter& other) {
    value.store(other.value.load());
    return *this;
  }
};

}  // namespace detail

struct Axis {
  std::string name;
  std::vector<double> knots;  // strictly increasing
};

// Row-major grid with multilinear interpolation. Out-of-range queries clamp
// to the boundary and bump clamp_events.
struct NdGrid {
  std::vector<Axis> axes;
  std::vector<double> values;
  mutable detail::CopyableCounter clamp_events;

  std::size_t expected_size() const {
    std::size_t n = 1;
    for (const Axis& a : axes) n *= a.knots.size();
    return n;
  }

  void validate_structure() const {
    if (axes.empty()) throw ModelError("grid: no axes");
    for (const Axis& a : axes) {
      if (a.knots.empty()) throw ModelError("grid: axis '" + a.name + "' has no knots");
      for (std::size_t i = 1; i < a.knots.size(); ++i) {
        if (a.knots[i] <= a.knots[i - 1]) {
          throw ModelError("grid: axis '" + a.name + "' knots not strictly increasing");
        }
      }
    }
    if (values.size() != expected_size()) throw ModelError("grid: value count does not match axes");
  }

  std::size_t flat_index(const std::vector<std::size_t>& idx) const {
    std::size_t flat = 0;
    for (std::size_t d = 0; d < axes.size(); ++d) {
      flat = flat * axes[d].knots.size() + idx[d];
    }
    return flat;
  }

  double at(const std::vector<std::size_t>& idx) const { return values[flat_index(idx)]; }

  double interpolate(const std::vector<double>& coords) const {
    if (coords.size() != axes.size()) throw ModelError("grid: coordinate rank mismatch");
    const std::size_t dims = axes.size();
    // Per-axis bracketing cell and blend weight.
    std::vector<std::size_t> lo(dims);
    std::vector<double> frac(dims);
    for (std::size_t d = 0; d < dims; ++d) {
      const auto& knots = axes[d].knots;
      double x = coords[d];
      if (x < knots.front() || x > knots.back()) {
        clamp_events.value.fetch_add(1, std::memory_order_relaxed);
        x = std::clamp(x, knots.front(), knots.back());
      }
      if (knots.size() == 1) {
        lo[d] = 0;
        frac[d] = 0.0;
        continue;
      }
      auto it = std::upper_bound(knots.begin(), knots.end(), x);
      std::size_t hi = static_cast<std::size_t>(it - knots.begin());
      hi = std::clamp<std::size_t>(hi, 1, knots.size() - 1);
      lo[d] = hi - 1;
      frac[d] = (x - knots[lo[d]]) / (knots[hi] - knots[lo[d]]);
    }
    // Blend the 2^d cell corners.
    double acc = 0.0;
    std::vector<std::size_t> corner(dims);
    const std::size_t corners = std::size_t{1} << dims;
    for (std::size_t mask = 0; mask < corners; ++mask) {
      double weight = 1.0;
      for (std::size_t d = 0; d < dims; ++d) {
        bool high = (mask >> d) & 1;
        double f = frac[d];
        if (high && axes[d].knots.size() == 1) {
          weight = 0.0;
          break;
        }
        weight *= high ? f : (1.0 - f);
        corner[d] = lo[d] + (high ? 1 : 0);
      }
      if (weight != 0.0) acc += weight * at(corner);
    }
    return acc;
  }

  int axis_index(const std::string& name) const {
    for (std::size_t d = 0; d < axes.size(); ++d) {
      if (axes[d].name == name) return static_cast<int>(d);
    }
    return -1;
  }
};

// Axis names used across all tables.
inline constexpr const char* kAxisSumLen = "sum_len";
inline constexpr const char* kAxisNumRequests = "n_requests";
inline constexpr const char* kAxisTp = "tp";
inline constexpr const char* kAxisFreq = "freq_mhz";

struct SynthMetadata {
  std::string family;
  double lat_coef = 0.0;
  double power_a = 0.0;
  double power_b = 0.0;
  double mem_knee_mhz = 0.0;  // memory-bound only
  double idle_frac = 0.0;
};

struct LatencyTable {
  Phase phase = Phase::prefill;
  NdGrid grid;  // axes: sum_len, n_requests, tp, freq_mhz
  std::optional<SynthMetadata> synth;
};

struct PowerTable {
  Phase phase = Phase::prefill;
  NdGrid grid;  // prefill: (sum_len, tp, freq_mhz); decode: (sum_len, n_requests, tp, freq_mhz)
  std::optional<SynthMetadata> synth;
};

struct IdlePowerModel {
  struct TpEntry {
    int tp = 1;
    std::vector<double> freqs_mhz;
    std::vector<double> idle_w;
  };
  std::vector<TpEntry> entries;
};

namespace detail {

inline std::vector<double> query_coords(const NdGrid& grid, const BatchFeatures& f, int tp, double freq_mhz) {
  std::vector<double> coords(grid.axes.size());
  for (std::size_t d = 0; d < grid.axes.size(); ++d) {
    const std::string& name = grid.axes[d].name;
    if (name == kAxisSumLen) {
      coords[d] = static_cast<double>(f.sum_len);
    } else if (name == kAxisNumRequests) {
      coords[d] = static_cast<double>(f.n_requests);
    } else if (name == kAxisTp) {
      coords[d] = static_cast<double>(tp);
    } else if (name == kAxisFreq) {
      coords[d] = freq_mhz;
    } else {
      throw ModelError("grid: unknown axis '" + name + "'");
    }
  }
  return coords;
}

}  // namespace detail

inline double predict_latency(const LatencyTable& table, const BatchFeatures& f, int tp, double freq_mhz) {
  double v = table.grid.interpolate(detail::query_coords(table.grid, f, tp, freq_mhz));
  if (!(v > 0.0) || !std::isfinite(v)) throw ModelError("latency model returned non-positive value");
  return v;
}

inline double predict_power(const PowerTable& table, const BatchFeatures& f, int tp, double freq_mhz) {
  double v = table.grid.interpolate(detail::query_coords(table.grid, f, tp, freq_mhz));
  if (!(v > 0.0) || !std::isfinite(v)) throw ModelError("power model returned non-positive value");
  return v;
}

inline double predict_idle_power(const IdlePowerModel& m, int tp, double freq_mhz) {
  for (const auto& e : m.entries) {
    if (e.tp != tp) continue;
    if (e.freqs_mhz.empty()) throw ModelError("idle model: empty frequency set");
    double x = std::clamp(freq_mhz, e.freqs_mhz.front(), e.freqs_mhz.back());
    auto it = std::upper_bound(e.freqs_mhz.begin(), e.freqs_mhz.end(), x);
    std::size_t hi = std::clamp<std::size_t>(static_cast<std::size_t>(it - e.freqs_mhz.begin()), 1,
                                             e.freqs_mhz.size() - 1);
    if (e.freqs_mhz.size() == 1) return e.idle_w[0];
    std::size_t lo = hi - 1;
    double t = (x - e.freqs_mhz[lo]) / (e.freqs_mhz[hi] - e.freqs_mhz[lo]);
    return e.idle_w[lo] + t * (e.idle_w[hi] - e.idle_w[lo]);
  }
  throw ModelError("idle model: tp " + std::to_string(tp) + " not present");
}

// --- Validation --------------------------------------------------------------

struct ModelViolation {
  std::string kind;                // "positivity" | "monotonicity" | "structure"
  std::vector<std::size_t> index;  // grid index of the offending value (empty for structure)
};

namespace detail {

// Walks every freq-adjacent pair; `increasing` selects the required direction.
inline void check_freq_monotone(const NdGrid& grid, bool increasing, std::vector<ModelViolation>& out) {
  int freq_axis = grid.axis_index(kAxisFreq);
  if (freq_axis < 0) return;
  const std::size_t dims = grid.axes.size();
  std::vector<std::size_t> idx(dims, 0);
  for (;;) {
    if (idx[static_cast<std::size_t>(freq_axis)] + 1 < grid.axes[static_cast<std::size_t>(freq_axis)].knots.size()) {
      std::vector<std::size_t> next = idx;
      next[static_cast<std::size_t>(freq_axis)]++;
      double a = grid.at(idx);
      double b = grid.at(next);
      bool ok = increasing ? (b >= a) : (b <= a);
      if (!ok) out.push_back(ModelViolation{"monotonicity", next});
    }
    // odometer increment
    std::size_t d = dims;
    while (d > 0) {
      --d;
      if (++idx[d] < grid.axes[d].knots.size()) break;
      idx[d] = 0;
      if (d == 0) return;
    }
  }
}

inline void check_positive(const NdGrid& grid, std::vector<ModelViolation>& out) {
  const std::size_t dims = grid.axes.size();
  std::vector<std::size_t> idx(dims, 0);
  for (std::size_t flat = 0; flat < grid.values.size(); ++flat) {
    if (!(grid.values[flat] > 0.0) || !std::isfinite(grid.values[flat])) {
      std::vector<std::size_t> where(dims);
      std::size_t rem = flat;
      for (std::size_t d = dims; d-- > 0;) {
        where[d] = rem % grid.axes[d].knots.size();
        rem /= grid.axes[d].knots.size();
      }
      out.push_back(ModelViolation{"positivity", where});
    }
  }
}

inline bool check_structure(const NdGrid& grid, std::vector<ModelViolation>& out) {
  try {
    grid.validate_structure();
  } catch (const ModelError&) {
    out.push_back(ModelViolation{"structure", {}});
    return false;
  }
  return true;
}

}  // namespace detail

inline std::vector<ModelViolation> validate_model(const LatencyTable& table) {
  std::vector<ModelViolation> out;
  if (!detail::check_structure(table.grid, out)) return out;
  detail::check_positive(table.grid, out);
  detail::check_freq_monotone(table.grid, /*increasing=*/false, out);
  return out;
}

inline std::vector<ModelViolation> validate_model(const PowerTable& table) {
  std::vector<ModelViolation> out;
  if (!detail::check_structure(table.grid, out)) return out;
  detail::check_positive(table.grid, out);
  detail::check_freq_monotone(table.grid, /*increasing=*/true, out);
  return out;
}

// --- Synthetic families ------------------------------------------------------

enum class SynthFamily { compute_bound, memory_bound };

inline SynthFamily synth_family_from_name(const std::string& s) {
  if (s == "compute-bound") return SynthFamily::compute_bound;
  if (s == "memory-bound") return SynthFamily::memory_bound;
  throw ParameterError("unknown synthetic model family: " + s);
}

struct SynthOptions {
  double lat_coef = 40.0;      // ms * MHz per token (per TP shard)
  double power_a = 1e-7;       // W / MHz^3 (compute) or W / MHz (memory), per GPU
  double power_b = 10.0;       // W floor per GPU
  double mem_knee_mhz = 1200;  // memory-bound: latency flat above this
  double idle_frac = 0.35;     // idle power as a fraction of busy power
  std::vector<double> sum_len_knots = {16, 64, 256, 1024, 4096, 16384};
  std::vector<double> n_request_knots = {1, 2, 4, 8, 16, 32, 64, 128, 256};
};

struct SynthModel {
  LatencyTable latency;
  PowerTable power;
  IdlePowerModel idle;
};

namespace detail {

inline double synth_latency_ms(SynthFamily family, const SynthOptions& opt, double sum_len, double tp,
                               double freq_mhz) {
  double per_shard = sum_len / tp;
  if (family == SynthFamily::compute_bound) {
    return opt.lat_coef * per_shard / freq_mhz;
  }
  double eff = std::min(freq_mhz, opt.mem_knee_mhz);
  return opt.lat_coef * per_shard / eff;
}

inline double synth_power_w(SynthFamily family, const SynthOptions& opt, double tp, double freq_mhz) {
  double per_gpu = family == SynthFamily::compute_bound
                       ? opt.power_a * freq_mhz * freq_mhz * freq_mhz + opt.power_b
                       : opt.power_a * freq_mhz + opt.power_b;
  return per_gpu * tp;
}

}  // namespace detail

// Grids populated from the closed forms above; the parameters ride along in
// metadata so tests can recompute expectations.
inline SynthModel synth_model(SynthFamily family, Phase phase, const FrequencyLadder& ladder,
                              const std::vector<int>& tp_list, const SynthOptions& opt = {}) {
  ladder.validate();
  if (tp_list.empty()) throw ParameterError("synth_model: tp_list empty");
  for (int tp : tp_list) {
    if (tp < 1) throw ParameterError("synth_model: tp must be >= 1");
  }
  std::vector<double> tp_knots(tp_list.begin(), tp_list.end());
  std::sort(tp_knots.begin(), tp_knots.end());
  tp_knots.erase(std::unique(tp_knots.begin(), tp_knots.end()), tp_knots.end());

  SynthMetadata meta;
  meta.family = family == SynthFamily::compute_bound ? "compute-bound" : "memory-bound";
  meta.lat_coef = opt.lat_coef;
  meta.power_a = opt.power_a;
  meta.power_b = opt.power_b;
  meta.mem_knee_mhz = family == SynthFamily::memory_bound ? opt.mem_knee_mhz : 0.0;
  meta.idle_frac = opt.idle_frac;

  SynthModel m;
  m.latency.phase = phase;
  m.latency.synth = meta;
  m.latency.grid.axes = {Axis{kAxisSumLen, opt.sum_len_knots}, Axis{kAxisNumRequests, opt.n_request_knots},
                         Axis{kAxisTp, tp_knots}, Axis{kAxisFreq, ladder.freqs_mhz}};
  for (double s : opt.sum_len_knots) {
    for (std::size_t i = 0; i < opt.n_request_knots.size(); ++i) {
      for (double tp : tp_knots) {
        for (double f : ladder.freqs_mhz) {
          m.latency.grid.values.push_back(detail::synth_latency_ms(family, opt, s, tp, f));
        }
      }
    }
  }

  m.power.phase = phase;
  m.power.synth = meta;
  if (phase == Phase::prefill) {
    m.power.grid.axes = {Axis{kAxisSumLen, opt.sum_len_knots}, Axis{kAxisTp, tp_knots},
                         Axis{kAxisFreq, ladder.freqs_mhz}};
    for (std::size_t i = 0; i < opt.sum_len_knots.size(); ++i) {
      for (double tp : tp_knots) {
        for (double f : ladder.freqs_mhz) {
          m.power.grid.values.push_back(detail::synth_power_w(family, opt, tp, f));
        }
      }
    }
  } else {
    m.power.grid.axes = {Axis{kAxisSumLen, opt.sum_len_knots}, Axis{kAxisNumRequests, opt.n_request_knots},
                         Axis{kAxisTp, tp_knots}, Axis{kAxisFreq, ladder.freqs_mhz}};
    for (std::size_t i = 0; i < opt.sum_len_knots.size(); ++i) {
      for (std::size_t j = 0; j < opt.n_request_knots.size(); ++j) {
        for (double tp : tp_knots) {
          for (double f : ladder.freqs_mhz) {
            m.power.grid.values.push_back(detail::synth_power_w(family, opt, tp, f));
          }
        }
      }
    }
  }

  for (double tp : tp_knots) {
    IdlePowerModel::TpEntry e;
    e.tp = static_cast<int>(tp);
    e.freqs_mhz = ladder.freqs_mhz;
    for (double f : ladder.freqs_mhz) {
      e.idle_w.push_back(opt.idle_frac * detail::synth_power_w(family, opt, tp, f));
    }
    m.idle.entries.push_back(e);
  }

  m.latency.grid.validate_structure();
  m.power.grid.validate_structure();
  return m;
}

// Everything the simulator needs for one (LLM, GPU) pair.
struct ModelSet {
  LatencyTable latency_prefill;
  LatencyTable latency_decode;
  PowerTable power_prefill;
  PowerTable power_decode;
  IdlePowerModel idle;

  const LatencyTable& latency(Phase p) const { return p == Phase::prefill ? latency_prefill : latency_decode; }
  const PowerTable& power(Phase p) const { return p == Phase::prefill ? power_prefill : power_decode; }
};

inline ModelSet synth_model_set(SynthFamily family, const FrequencyLadder& ladder, const std::vector<int>& tp_list,
                                const SynthOptions& prefill_opt = {}, const SynthOptions& decode_opt = {}) {
  SynthModel pre = synth_model(family, Phase::prefill, ladder, tp_list, prefill_opt);
  SynthModel dec = synth_model(family, Phase::decode, ladder, tp_list, decode_opt);
  ModelSet set;
  set.latency_prefill = std::move(pre.latency);
  set.power_prefill = std::move(pre.power);
  set.latency_decode = std::move(dec.latency);
  set.power_decode = std::move(dec.power);
  set.idle = std::move(pre.idle);
  return set;
}

// --- Model files -------------------------------------------------------------

inline constexpr int kModelFileVersion = 1;

namespace detail {

inline nlohmann::json grid_to_json(const NdGrid& grid) {
  nlohmann::json axes = nlohmann::json::array();
  for (const Axis& a : grid.axes) {
    axes.push_back({{"name", a.name}, {"knots", a.knots}});
  }
  return {{"axes", axes}, {"values", grid.values}};
}

inline NdGrid grid_from_json(const nlohmann::json& j) {
  NdGrid grid;
  for (const auto& ja : j.at("axes")) {
    Axis a;
    a.name = ja.at("name").get<std::string>();
    a.knots = ja.at("knots").get<std::vector<double>>();
    grid.axes.push_back(std::move(a));
  }
  grid.values = j.at("values").get<std::vector<double>>();
  grid.validate_structure();
  return grid;
}

inline nlohmann::json synth_meta_to_json(const SynthMetadata& m) {
  return {{"family", m.family}, {"lat_coef", m.lat_coef},       {"power_a", m.power_a},
          {"power_b", m.power_b}, {"mem_knee_mhz", m.mem_knee_mhz}, {"idle_frac", m.idle_frac}};
}

inline SynthMetadata synth_meta_from_json(const nlohmann::json& j) {
  SynthMetadata m;
  m.family = j.at("family").get<std::string>();
  m.lat_coef = j.at("lat_coef").get<double>();
  m.power_a = j.at("power_a").get<double>();
  m.power_b = j.at("power_b").get<double>();
  m.mem_knee_mhz = j.value("mem_knee_mhz", 0.0);
  m.idle_frac = j.value("idle_frac", 0.0);
  return m;
}

inline void check_version(const nlohmann::json& j, const std::string& path) {
  if (!j.contains("version")) throw IoError("model file missing version field: " + path);
  if (j.at("version").get<int>() != kModelFileVersion) {
    throw IoError("unsupported model file version in " + path);
  }
}

inline nlohmann::json load_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open model file: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed model file " + path + ": " + e.what());
  }
  return j;
}

inline void write_json_file(const nlohmann::json& j, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for write: " + path);
  os << j.dump(1) << '\n';
  if (!os.good()) throw IoError("write failed: " + path);
}

template <typename Table>
nlohmann::json table_to_json(const Table& t, const char* kind) {
  nlohmann::json j = grid_to_json(t.grid);
  j["version"] = kModelFileVersion;
  j["kind"] = kind;
  j["phase"] = phase_name(t.phase);
  if (t.synth) j["metadata"] = synth_meta_to_json(*t.synth);
  return j;
}

template <typename Table>
Table table_from_json(const nlohmann::json& j, const char* kind, const std::string& path) {
  check_version(j, path);
  if (j.at("kind").get<std::string>() != kind) {
    throw IoError("model file " + path + " is not a " + kind + " table");
  }
  Table t;
  t.phase = phase_from_name(j.at("phase").get<std::string>());
  t.grid = grid_from_json(j);
  if (j.contains("metadata")) t.synth = synth_meta_from_json(j.at("metadata"));
  return t;
}

}  // namespace detail

inline void save_latency_table(const LatencyTable& t, const std::string& path) {
  detail::write_json_file(detail::table_to_json(t, "latency"), path);
}

inline LatencyTable load_latency_table(const std::string& path) {
  return detail::table_from_json<LatencyTable>(detail::load_json_file(path), "latency", path);
}

inline void save_power_table(const PowerTable& t, const std::string& path) {
  detail::write_json_file(detail::table_to_json(t, "power"), path);
}

inline PowerTable load_power_table(const std::string& path) {
  return detail::table_from_json<PowerTable>(detail::load_json_file(path), "power", path);
}

inline void save_idle_model(const IdlePowerModel& m, const std::string& path) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : m.entries) {
    entries.push_back({{"tp", e.tp}, {"freqs_mhz", e.freqs_mhz}, {"idle_w", e.idle_w}});
  }
  detail::write_json_file({{"version", kModelFileVersion}, {"kind", "idle"}, {"entries", entries}}, path);
}

inline IdlePowerModel load_idle_model(const std::string& path) {
  nlohmann::json j = detail::load_json_file(path);
  detail::check_version(j, path);
  if (j.at("kind").get<std::string>() != "idle") throw IoError("model file " + path + " is not an idle model");
  IdlePowerModel m;
  for (const auto& je : j.at("entries")) {
    IdlePowerModel::TpEntry e;
    e.tp = je.at("tp").get<int>();
    e.freqs_mhz = je.at("freqs_mhz").get<std::vector<double>>();
    e.idle_w = je.at("idle_w").get<std::vector<double>>();
    if (e.freqs_mhz.size() != e.idle_w.size()) throw IoError("idle model " + path + ": ragged entry");
    m.entries.push_back(std::move(e));
  }
  return m;
}

// Directory layout shared by the CLI and tests.
inline void save_model_set(const ModelSet& set, const std::string& dir) {
  save_latency_table(set.latency_prefill, dir + "/latency_prefill.json");
  save_latency_table(set.latency_decode, dir + "/latency_decode.json");
  save_power_table(set.power_prefill, dir + "/power_prefill.json");
  save_power_table(set.power_decode, dir + "/power_decode.json");
  save_idle_model(set.idle, dir + "/idle_power.json");
}

inline ModelSet load_model_set(const std::string& dir) {
  ModelSet set;
  set.latency_prefill = load_latency_table(dir + "/latency_prefill.json");
  set.latency_decode = load_latency_table(dir + "/latency_decode.json");
  set.power_prefill = load_power_table(dir + "/power_prefill.json");
  set.power_decode = load_power_table(dir + "/power_decode.json");
  set.idle = load_idle_model(dir + "/idle_power.json");
  return set;
}

// Stable content hash for config-table cache keys.
inline std::uint64_t model_set_hash(const ModelSet& set) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix_grid = [&h](const NdGrid& g) {
    for (const Axis& a : g.axes) {
      h = fnv1a64(a.name, h);
      h = fnv1a64(a.knots.data(), a.knots.size() * sizeof(double), h);
    }
    h = fnv1a64(g.values.data(), g.values.size() * sizeof(double), h);
  };
  mix_grid(set.latency_prefill.grid);
  mix_grid(set.latency_decode.grid);
  mix_grid(set.power_prefill.grid);
  mix_grid(set.power_decode.grid);
  for (const auto& e : set.idle.entries) {
    h = fnv1a64(&e.tp, sizeof(e.tp), h);
    h = fnv1a64(e.freqs_mhz.data(), e.freqs_mhz.size() * sizeof(double), h);
    h = fnv1a64(e.idle_w.data(), e.idle_w.size() * sizeof(double), h);
  }
  return h;
}

}  // namespace pdsim
