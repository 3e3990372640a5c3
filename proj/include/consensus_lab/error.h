#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace consensus_lab {

enum class ErrorCode {
  kDimensionMismatch,
  kRankDeficientB,
  kOutOfRange,
  kInvalidWeights,
  kInvalidTopology,
  kDisconnected,
  kEigenFailure,
  kSingularBracket,
  kNotStabilizable,
  kSingularP,
  kHistoryLengthMismatch,
  kSynthesisFailed,
  kPreconditionViolated,
  kCheckFailed,
  kParseError,
};

std::string_view to_string(ErrorCode code);

/// Every recoverable failure in the library is reported through this type;
/// callers branch on code() rather than on the message text.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace consensus_lab
