#include "timflow/error.hpp"

namespace timflow {

std::string_view error_name(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidPattern: return "InvalidPattern";
    case ErrorKind::OutOfBounds: return "OutOfBounds";
    case ErrorKind::NonPositiveGap: return "NonPositiveGap";
    case ErrorKind::TargetTooSmall: return "TargetTooSmall";
    case ErrorKind::MassOverflow: return "MassOverflow";
    case ErrorKind::NonFiniteInput: return "NonFiniteInput";
    case ErrorKind::NonConvergence: return "NonConvergence";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::DivergedLoss: return "DivergedLoss";
    case ErrorKind::GenerationStalled: return "GenerationStalled";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::FormatError: return "FormatError";
    case ErrorKind::ZeroReference: return "ZeroReference";
    case ErrorKind::EmptyList: return "EmptyList";
    case ErrorKind::EmptyRegion: return "EmptyRegion";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::SubjectFailed: return "SubjectFailed";
  }
  return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(error_name(kind)) + ": " + message), kind_(kind) {}

}  // namespace timflow
