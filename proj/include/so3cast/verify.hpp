#pragma once

#include <string>
#include <vector>

namespace so3cast::verify {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

/// Runs the named invariant/property checks of every module. When ckpt_path
/// is non-empty the checkpoint is additionally loaded and validated for
/// finite parameters.
std::vector<CheckResult> run_all(const std::string& ckpt_path = "");

/// Finite-difference gradient validation of the tiny (w = 8) model, with the
/// per-block worst relative errors exposed for the acceptance suite. The
/// 3-point window covers the parameter blocks; the 5-point window also
/// exercises the weight gradient through the closed-form solve.
struct GradCheckResult {
  bool pass = false;
  double param_rel_err_3pt = 0.0;
  double param_rel_err_5pt = 0.0;
  double sg_rel_err = 0.0;
  std::string detail;
};
GradCheckResult gradient_check_detail();

std::string format_table(const std::vector<CheckResult>& results);
bool all_passed(const std::vector<CheckResult>& results);

}  // namespace so3cast::verify
