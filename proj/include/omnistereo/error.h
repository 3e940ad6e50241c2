#pragma once

#include <stdexcept>
#include <string>

namespace omni {

enum class ErrorCode {
  kDegeneratePoint,
  kOutsideModelDomain,
  kNoConvergence,
  kTiltHorizon,
  kParseError,
  kInvariantViolation,
  kIoError,
  kDegenerateGeometry,
  kInitFailure,
  kNonConvergence,
  kInsufficientShared,
  kInconsistentRig,
  kDimensionMismatch,
  kDegenerateCloud,
  kExhaustedSampling,
  kDigestMismatch,
};

const char* ErrorCodeName(ErrorCode code);

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace omni
