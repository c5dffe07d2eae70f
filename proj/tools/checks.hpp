#pragma once

#include <functional>
#include <string>
#include <vector>

namespace ssvd::checks {

struct Outcome {
  bool pass = true;
  std::string detail;
};

struct Check {
  std::string module;
  std::string name;
  std::function<Outcome()> run;
};

struct CheckResult {
  std::string module;
  std::string name;
  Outcome outcome;
  double seconds = 0.0;
};

// Individual oracles, also used by the acceptance runner.
Outcome deform_zero_offsets(int cases = 100);
Outcome warp_zero_identity();
Outcome bilinear_fixture();
Outcome gradient_check(int min_coordinates = 1000);
Outcome nms_enumeration(int trials = 100);
Outcome seq_nms_exhaustive(int trials = 100);
Outcome ap_fixture();
Outcome speed_fixture();
Outcome anchor_geometry();
Outcome offset_channels();

/// Every module's invariant suite. A non-empty `weights` path adds a check
/// that the checkpoint loads.
std::vector<Check> selfcheck_suite(const std::string& weights = {});

std::vector<CheckResult> run_checks(const std::vector<Check>& checks);

}  // namespace ssvd::checks
