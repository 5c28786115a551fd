#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dpsolve {

enum class ErrorCode {
  kDimensionMismatch,
  kInfeasibleConstraint,
  kDegenerateConstraint,
  kBadSpectrum,
  kInfeasibleRates,
  kDisconnectedGraph,
  kMismatchedDims,
  kNoConvergence,
  kInfeasiblePoint,
  kGapViolation,
  kStepTooLarge,
  kNonFiniteIterate,
  kDeltaOutOfRange,
  kThetaOutOfRange,
  kDomainError,
  kMonotonicityViolation,
  kInvalidArgument,
  kConfigError,
  kEmptySweep,
  kSnapshotFormat,
};

std::string_view to_string(ErrorCode code);

/// Library exception carrying an ErrorCode.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace dpsolve
