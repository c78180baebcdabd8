#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pdsim/errors.hpp"
#include "pdsim/rng.hpp"

namespace pdsim {

struct Request {
  std::int64_t id = 0;
  double arrival_ms = 0.0;
  std::int64_t input_len = 1;   // prompt tokens
  std::int64_t output_len = 1;  // generation tokens
};

struct Trace {
  std::vector<Request> requests;  // sorted by arrival
  double duration_ms = 0.0;
  std::optional<std::uint64_t> seed;

  double duration_s() const { return duration_ms / 1000.0; }

  double mean_rps() const {
    if (duration_ms <= 0.0) return 0.0;
    return static_cast<double>(requests.size()) / duration_s();
  }

  void validate() const {
    double prev = 0.0;
    for (std::size_t i = 0; i < requests.size(); ++i) {
      const Request& r = requests[i];
      if (r.arrival_ms < 0.0) throw ParameterError("trace: negative arrival");
      if (r.input_len < 1 || r.output_len < 1) throw ParameterError("trace: lengths must be >= 1");
      if (r.arrival_ms < prev) throw ParameterError("trace: arrivals not sorted");
      prev = r.arrival_ms;
    }
    if (!requests.empty() && duration_ms < requests.back().arrival_ms) {
      throw ParameterError("trace: duration shorter than last arrival");
    }
  }
};

// Either an empirical pool of (input, output) pairs or a lognormal form with
// log-space mu/sigma per dimension. Sampled lengths are clamped to >= 1.
struct LengthDistribution {
  std::vector<std::pair<std::int64_t, std::int64_t>> samples;

  struct Lognormal {
    double input_mu = 6.0;
    double input_sigma = 0.5;
    double output_mu = 4.5;
    double output_sigma = 0.5;
  };
  std::optional<Lognormal> lognormal;

  static LengthDistribution fixed(std::int64_t input_len, std::int64_t output_len) {
    LengthDistribution d;
    d.samples.emplace_back(input_len, output_len);
    return d;
  }

  std::pair<std::int64_t, std::int64_t> sample(Rng& rng) const {
    if (!samples.empty()) {
      return samples[rng.uniform_index(samples.size())];
    }
    if (lognormal) {
      auto draw = [&rng](double mu, double sigma) {
        double v = std::round(rng.lognormal(mu, sigma));
        return std::max<std::int64_t>(1, static_cast<std::int64_t>(v));
      };
      return {draw(lognormal->input_mu, lognormal->input_sigma),
              draw(lognormal->output_mu, lognormal->output_sigma)};
    }
    throw ParameterError("length distribution: no samples and no parametric form");
  }
};

struct VarianceTimeCurve {
  std::vector<double> window_sizes_s;
  // Missing value = window size had fewer than 2 full windows.
  std::vector<std::optional<double>> normalized_variance;
};

// Inter-arrival gaps ~ Gamma(shape, scale = 1/(shape * mean_rps) seconds),
// so the mean gap is 1/mean_rps regardless of shape.
inline Trace gen_gamma_trace(double mean_rps, double shape, double duration_ms,
                             const LengthDistribution& lengths, std::uint64_t seed) {
  if (mean_rps <= 0.0) throw ParameterError("gen_gamma_trace: mean_rps must be > 0");
  if (shape <= 0.0) throw ParameterError("gen_gamma_trace: shape must be > 0");
  if (duration_ms <= 0.0) throw ParameterError("gen_gamma_trace: duration_ms must be > 0");

  Rng rng(seed);
  double scale_s = 1.0 / (shape * mean_rps);

  Trace t;
  t.duration_ms = duration_ms;
  t.seed = seed;
  double now_ms = 0.0;
  std::int64_t next_id = 0;
  for (;;) {
    now_ms += rng.gamma(shape, scale_s) * 1000.0;
    if (now_ms >= duration_ms) break;
    auto [in_len, out_len] = lengths.sample(rng);
    t.requests.push_back(Request{next_id++, now_ms, in_len, out_len});
  }
  return t;
}

// Keeps each request independently with probability keep_prob. Arrivals,
// lengths, ids, and ordering are untouched.
inline Trace downsample_trace(const Trace& t, double keep_prob, std::uint64_t seed) {
  if (!(keep_prob > 0.0) || keep_prob > 1.0) {
    throw ParameterError("downsample_trace: keep_prob must be in (0, 1]");
  }
  Trace out;
  out.duration_ms = t.duration_ms;
  out.seed = seed;
  Rng rng(seed);
  for (const Request& r : t.requests) {
    if (rng.uniform01() < keep_prob) out.requests.push_back(r);
  }
  return out;
}

inline Trace time_dilate(const Trace& t, double factor) {
  if (factor <= 0.0) throw ParameterError("time_dilate: factor must be > 0");
  Trace out = t;
  out.duration_ms = t.duration_ms * factor;
  for (Request& r : out.requests) r.arrival_ms *= factor;
  return out;
}

// Normalized variance (variance/mean) of per-window RPS, one value per
// window size. Only full windows count; sizes with fewer than 2 full
// windows report a missing value.
inline VarianceTimeCurve variance_time_curve(const Trace& t, const std::vector<double>& window_sizes_s) {
  VarianceTimeCurve curve;
  for (double w : window_sizes_s) {
    if (w <= 0.0) throw ParameterError("variance_time_curve: window size must be > 0");
    if (w > t.duration_s()) throw ParameterError("variance_time_curve: window size exceeds trace duration");
  }
  for (double w_s : window_sizes_s) {
    double w_ms = w_s * 1000.0;
    auto n_windows = static_cast<std::size_t>(t.duration_ms / w_ms);
    curve.window_sizes_s.push_back(w_s);
    if (n_windows < 2) {
      curve.normalized_variance.push_back(std::nullopt);
      continue;
    }
    std::vector<double> counts(n_windows, 0.0);
    for (const Request& r : t.requests) {
      auto idx = static_cast<std::size_t>(r.arrival_ms / w_ms);
      if (idx < n_windows) counts[idx] += 1.0;
    }
    double mean = 0.0;
    for (double c : counts) mean += c / w_s;
    mean /= static_cast<double>(n_windows);
    double var = 0.0;
    for (double c : counts) {
      double rps = c / w_s;
      var += (rps - mean) * (rps - mean);
    }
    var /= static_cast<double>(n_windows - 1);
    if (mean <= 0.0) {
      curve.normalized_variance.push_back(std::nullopt);
    } else {
      curve.normalized_variance.push_back(var / mean);
    }
  }
  return curve;
}

// Half-open windows [k*window_ms, (k+1)*window_ms); arrivals re-based to the
// window start. A request at exactly the trace end falls into the last window.
inline std::vector<Trace> split_windows(const Trace& t, double window_ms) {
  if (window_ms <= 0.0) throw ParameterError("split_windows: window_ms must be > 0");
  std::size_t n = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(t.duration_ms / window_ms)));
  std::vector<Trace> windows(n);
  for (std::size_t i = 0; i < n; ++i) {
    double start = static_cast<double>(i) * window_ms;
    windows[i].duration_ms = std::min(window_ms, t.duration_ms - start);
    windows[i].seed = t.seed;
  }
  for (const Request& r : t.requests) {
    auto idx = static_cast<std::size_t>(r.arrival_ms / window_ms);
    if (idx >= n) idx = n - 1;
    Request shifted = r;
    shifted.arrival_ms = r.arrival_ms - static_cast<double>(idx) * window_ms;
    windows[idx].requests.push_back(shifted);
  }
  return windows;
}

// Identity predictor: the previous window, already on its own zero-based
// clock, is the forecast for the next one.
inline Trace predict_next_window(const Trace& history) {
  if (history.requests.empty()) throw ParameterError("predict_next_window: empty history");
  return history;
}

// --- Trace files -----------------------------------------------------------
//
// CSV: header "arrival_ms,input_len,output_len", one request per line.
// JSONL: {"arrival_ms":..., "input_len":..., "output_len":...} per line.
// Ids are assigned from line order on load.

namespace detail {

inline bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace detail

inline void save_trace_csv(const Trace& t, std::ostream& os) {
  os << "arrival_ms,input_len,output_len\n";
  char buf[128];
  for (const Request& r : t.requests) {
    std::snprintf(buf, sizeof(buf), "%.6f,%lld,%lld\n", r.arrival_ms,
                  static_cast<long long>(r.input_len), static_cast<long long>(r.output_len));
    os << buf;
  }
}

inline Trace load_trace_csv(std::istream& is) {
  Trace t;
  std::string line;
  if (!std::getline(is, line)) throw IoError("trace csv: empty file");
  if (line.find("arrival_ms") == std::string::npos) {
    throw IoError("trace csv: missing header");
  }
  std::int64_t id = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string field;
    Request r;
    r.id = id++;
    if (!std::getline(ls, field, ',')) throw IoError("trace csv: bad row");
    r.arrival_ms = std::stod(field);
    if (!std::getline(ls, field, ',')) throw IoError("trace csv: bad row");
    r.input_len = std::stoll(field);
    if (!std::getline(ls, field, ',')) throw IoError("trace csv: bad row");
    r.output_len = std::stoll(field);
    t.requests.push_back(r);
  }
  if (!t.requests.empty()) t.duration_ms = t.requests.back().arrival_ms;
  t.validate();
  return t;
}

inline void save_trace_jsonl(const Trace& t, std::ostream& os) {
  char buf[160];
  for (const Request& r : t.requests) {
    std::snprintf(buf, sizeof(buf), "{\"arrival_ms\":%.6f,\"input_len\":%lld,\"output_len\":%lld}\n",
                  r.arrival_ms, static_cast<long long>(r.input_len), static_cast<long long>(r.output_len));
    os << buf;
  }
}

inline Trace load_trace_jsonl(std::istream& is) {
  Trace t;
  std::string line;
  std::int64_t id = 0;
  auto field = [](const std::string& l, const char* key) {
    auto pos = l.find(key);
    if (pos == std::string::npos) throw IoError(std::string("trace jsonl: missing ") + key);
    pos = l.find(':', pos);
    if (pos == std::string::npos) throw IoError("trace jsonl: malformed line");
    return std::stod(l.substr(pos + 1));
  };
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    Request r;
    r.id = id++;
    r.arrival_ms = field(line, "\"arrival_ms\"");
    r.input_len = static_cast<std::int64_t>(field(line, "\"input_len\""));
    r.output_len = static_cast<std::int64_t>(field(line, "\"output_len\""));
    t.requests.push_back(r);
  }
  if (!t.requests.empty()) t.duration_ms = t.requests.back().arrival_ms;
  t.validate();
  return t;
}

inline void save_trace(const Trace& t, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for write: " + path);
  if (detail::ends_with(path, ".jsonl")) {
    save_trace_jsonl(t, os);
  } else {
    save_trace_csv(t, os);
  }
  if (!os.good()) throw IoError("write failed: " + path);
}

inline Trace load_trace(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open trace: " + path);
  if (detail::ends_with(path, ".jsonl")) return load_trace_jsonl(is);
  return load_trace_csv(is);
}

// Empirical length pool file: CSV with header "input_len,output_len".
inline LengthDistribution load_length_samples(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open length samples: " + path);
  std::string line;
  if (!std::getline(is, line)) throw IoError("length samples: empty file");
  LengthDistribution d;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string a, b;
    if (!std::getline(ls, a, ',') || !std::getline(ls, b, ',')) {
      throw IoError("length samples: bad row");
    }
    d.samples.emplace_back(std::stoll(a), std::stoll(b));
  }
  if (d.samples.empty()) throw IoError("length samples: no rows");
  for (auto& [in_len, out_len] : d.samples) {
    if (in_len < 1 || out_len < 1) throw ParameterError("length samples: lengths must be >= 1");
  }
  return d;
}

}  // namespace pdsim
