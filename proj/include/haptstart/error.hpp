#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace haptstart {

enum class ErrorKind {
  InvalidRange,
  NegativeResult,
  UnknownDevice,
  DuplicateDevice,
  PressBeforeStart,
  NoOnset,
  TraceTooShort,
  NoStartChannel,
  IllegalTransition,
  InvalidProfile,
  InvalidPlan,
  TooFewSamples,
  TooFewGroups,
  DegenerateGroup,
  OutOfRange,
  SchemaViolation,
  IoFailure,
  CorruptLine,
  InvalidConfig,
  UnknownSession,
  SessionClosed,
  UnknownTrial,
  AlreadyRetried,
  BadRequest,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidRange: return "InvalidRange";
    case ErrorKind::NegativeResult: return "NegativeResult";
    case ErrorKind::UnknownDevice: return "UnknownDevice";
    case ErrorKind::DuplicateDevice: return "DuplicateDevice";
    case ErrorKind::PressBeforeStart: return "PressBeforeStart";
    case ErrorKind::NoOnset: return "NoOnset";
    case ErrorKind::TraceTooShort: return "TraceTooShort";
    case ErrorKind::NoStartChannel: return "NoStartChannel";
    case ErrorKind::IllegalTransition: return "IllegalTransition";
    case ErrorKind::InvalidProfile: return "InvalidProfile";
    case ErrorKind::InvalidPlan: return "InvalidPlan";
    case ErrorKind::TooFewSamples: return "TooFewSamples";
    case ErrorKind::TooFewGroups: return "TooFewGroups";
    case ErrorKind::DegenerateGroup: return "DegenerateGroup";
    case ErrorKind::OutOfRange: return "OutOfRange";
    case ErrorKind::SchemaViolation: return "SchemaViolation";
    case ErrorKind::IoFailure: return "IoFailure";
    case ErrorKind::CorruptLine: return "CorruptLine";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::UnknownSession: return "UnknownSession";
    case ErrorKind::SessionClosed: return "SessionClosed";
    case ErrorKind::UnknownTrial: return "UnknownTrial";
    case ErrorKind::AlreadyRetried: return "AlreadyRetried";
    case ErrorKind::BadRequest: return "BadRequest";
  }
  return "Unknown";
}

/// Every failure in the library surfaces as this exception; `kind()` is the
/// stable machine-readable category that also travels over the wire.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Positional parse failure; `line()` is 1-based.
class CorruptLineError : public Error {
 public:
  CorruptLineError(std::size_t line, const std::string& message)
      : Error(ErrorKind::CorruptLine, "line " + std::to_string(line) + ": " + message), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace haptstart
