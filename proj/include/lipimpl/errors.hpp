#pragma once

#include <stdexcept>
#include <string>

namespace lipimpl {

enum class ErrorCode {
  InvalidArgument,
  OutsideBall,
  SingularJacobian,
  NoContraction,
  MaxIterExceeded,
  LeftBall,
  EmptySamples,
  NoRootInBall,
  AllPairsDegenerate,
  StickDetected,
  MaxEventsExceeded,
  NoZeroInBracket,
  MultipleZerosInBracket,
  DeltaBallUnknown,
};

[[nodiscard]] constexpr const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::OutsideBall: return "OutsideBall";
    case ErrorCode::SingularJacobian: return "SingularJacobian";
    case ErrorCode::NoContraction: return "NoContraction";
    case ErrorCode::MaxIterExceeded: return "MaxIterExceeded";
    case ErrorCode::LeftBall: return "LeftBall";
    case ErrorCode::EmptySamples: return "EmptySamples";
    case ErrorCode::NoRootInBall: return "NoRootInBall";
    case ErrorCode::AllPairsDegenerate: return "AllPairsDegenerate";
    case ErrorCode::StickDetected: return "StickDetected";
    case ErrorCode::MaxEventsExceeded: return "MaxEventsExceeded";
    case ErrorCode::NoZeroInBracket: return "NoZeroInBracket";
    case ErrorCode::MultipleZerosInBracket: return "MultipleZerosInBracket";
    case ErrorCode::DeltaBallUnknown: return "DeltaBallUnknown";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (notably the CLI exit-status mapping) can branch on it.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace lipimpl
