#include "d3/error.hpp"

namespace d3 {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NonFiniteWeight: return "NonFiniteWeight";
    case ErrorCode::TokenOutOfRange: return "TokenOutOfRange";
    case ErrorCode::LayerOutOfRange: return "LayerOutOfRange";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::SequenceTooLong: return "SequenceTooLong";
    case ErrorCode::AlphaOutOfRange: return "AlphaOutOfRange";
    case ErrorCode::StartOutOfRange: return "StartOutOfRange";
    case ErrorCode::InvalidSchedule: return "InvalidSchedule";
    case ErrorCode::PositionOverflow: return "PositionOverflow";
    case ErrorCode::DoubleWrite: return "DoubleWrite";
    case ErrorCode::MissingState: return "MissingState";
    case ErrorCode::ReprojectStateUnavailable: return "ReprojectStateUnavailable";
    case ErrorCode::EmptyPrompt: return "EmptyPrompt";
    case ErrorCode::NonPositiveProbability: return "NonPositiveProbability";
    case ErrorCode::EmptyTrace: return "EmptyTrace";
    case ErrorCode::EmptyGrid: return "EmptyGrid";
    case ErrorCode::EmptySplit: return "EmptySplit";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

bool is_config_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::AlphaOutOfRange:
    case ErrorCode::StartOutOfRange:
    case ErrorCode::InvalidSchedule:
    case ErrorCode::EmptyGrid:
    case ErrorCode::EmptySplit:
    case ErrorCode::ConfigInvalid:
      return true;
    default:
      return false;
  }
}

}  // namespace d3
