#pragma once

#include <functional>
#include <string>
#include <vector>

namespace dpsolve {

enum class VerifyLevel { kQuick, kFull };

struct CriterionResult {
  int id = 0;
  std::string name;
  bool pass = false;
  /// Measured worst-case quantities, or the first violated invariant.
  std::string detail;
  double seconds = 0.0;
  double time_limit = 0.0;
};

/// Criterion ids run at each level; full runs all twelve.
std::vector<int> criteria_for(VerifyLevel level);

/// Runs one criterion (1–12). A criterion also fails when it exceeds its
/// time limit.
CriterionResult run_criterion(int id);

struct VerifyOptions {
  VerifyLevel level = VerifyLevel::kQuick;
  /// Negates every null-space projection for the whole run.
  bool inject_null_sign_flip = false;
  std::function<void(const CriterionResult&)> on_result;
};

std::vector<CriterionResult> run_verification(const VerifyOptions& options);

/// "PASS  3 variance identities (…) [0.12 s]"
std::string format_result(const CriterionResult& result);

}  // namespace dpsolve
