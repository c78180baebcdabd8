#pragma once

#include "pdsim/errors.hpp"

namespace pdsim {

struct SLOSpec {
  double ttft_ms = 600.0;
  double tpot_ms = 100.0;
  double percentile = 0.99;

  void validate() const {
    if (ttft_ms <= 0.0 || tpot_ms <= 0.0) throw ParameterError("slo: bounds must be > 0");
    if (percentile <= 0.0 || percentile > 1.0) throw ParameterError("slo: percentile must be in (0,1]");
  }
};

}  // namespace pdsim
