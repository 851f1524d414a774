#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace timflow {

enum class ErrorKind {
  InvalidPattern,
  OutOfBounds,
  NonPositiveGap,
  TargetTooSmall,
  MassOverflow,
  NonFiniteInput,
  NonConvergence,
  ShapeMismatch,
  EmptyDataset,
  DivergedLoss,
  GenerationStalled,
  IoError,
  FormatError,
  ZeroReference,
  EmptyList,
  EmptyRegion,
  InvalidArgument,
  SubjectFailed,
};

/// Stable identifier of an error kind, e.g. "MassOverflow".
std::string_view error_name(ErrorKind kind) noexcept;

/// Every failure raised by the library carries one of the kinds above so
/// callers (CLI, HTTP facade) can map it without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }
  std::string_view name() const noexcept { return error_name(kind_); }

 private:
  ErrorKind kind_;
};

}  // namespace timflow
