#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace a2pm {

enum class ErrorCode {
  kDegenerateDenominator,
  kEmptySet,
  kInsufficientMatches,
  kDegenerateConfiguration,
  kNoConsensus,
  kCheiralityTie,
  kOutOfBounds,
  kInvalidArgument,
  kMatcherFailure,
  kMatcherTimeout,
  kProtocolViolation,
  kInsufficientCovisibility,
  kTooFewAreas,
  kAllAssignmentsInvalid,
  kNoValidPoints,
  kEmptyAfterValidity,
  kNoOverlap,
  kUnknownFixture,
  kIo,
  kParse,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDegenerateDenominator: return "degenerate-denominator";
    case ErrorCode::kEmptySet: return "empty-set";
    case ErrorCode::kInsufficientMatches: return "insufficient-matches";
    case ErrorCode::kDegenerateConfiguration: return "degenerate-configuration";
    case ErrorCode::kNoConsensus: return "no-consensus";
    case ErrorCode::kCheiralityTie: return "cheirality-tie";
    case ErrorCode::kOutOfBounds: return "out-of-bounds";
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kMatcherFailure: return "matcher-failure";
    case ErrorCode::kMatcherTimeout: return "matcher-timeout";
    case ErrorCode::kProtocolViolation: return "protocol-violation";
    case ErrorCode::kInsufficientCovisibility: return "insufficient-covisibility";
    case ErrorCode::kTooFewAreas: return "too-few-areas";
    case ErrorCode::kAllAssignmentsInvalid: return "all-assignments-invalid";
    case ErrorCode::kNoValidPoints: return "no-valid-points";
    case ErrorCode::kEmptyAfterValidity: return "empty-after-validity";
    case ErrorCode::kNoOverlap: return "no-overlap";
    case ErrorCode::kUnknownFixture: return "unknown-fixture";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kParse: return "parse";
  }
  return "unknown";
}

/// Library-wide exception. The code is stable and is what callers branch on;
/// the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  /// Matcher-side failures are recoverable per area in the pipeline.
  bool is_matcher_error() const noexcept {
    return code_ == ErrorCode::kMatcherFailure ||
           code_ == ErrorCode::kMatcherTimeout ||
           code_ == ErrorCode::kProtocolViolation ||
           code_ == ErrorCode::kInsufficientCovisibility;
  }

 private:
  ErrorCode code_;
};

}  // namespace a2pm
