#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace d3 {

enum class ErrorCode {
  // model / weight file
  BadMagic,
  TruncatedFile,
  DimensionMismatch,
  NonFiniteWeight,
  TokenOutOfRange,
  LayerOutOfRange,
  ShapeMismatch,
  SequenceTooLong,
  // schedule
  AlphaOutOfRange,
  StartOutOfRange,
  InvalidSchedule,
  // kv cache
  PositionOverflow,
  DoubleWrite,
  MissingState,
  ReprojectStateUnavailable,
  // engine / analysis
  EmptyPrompt,
  NonPositiveProbability,
  EmptyTrace,
  // harness
  EmptyGrid,
  EmptySplit,
  ConfigInvalid,
  Io,
};

std::string_view to_string(ErrorCode code);

// Configuration errors map to CLI exit code 2, everything else to 3.
bool is_config_error(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace d3
