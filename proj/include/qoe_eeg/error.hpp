#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace qoe {

enum class ErrorCode {
  // ingest
  MissingChannel,
  MalformedRow,
  BadMetadata,
  InvalidRating,
  PairMismatch,
  InvalidSpec,
  Io,
  // dsp
  InvalidBand,
  UnstableDesign,
  TooShort,
  SegmentTooShort,
  BandOutOfRange,
  // dataset
  OutOfRange,
  ShapeMismatch,
  MissingFactor,
  EmptyTrainSet,
  EmptyClass,
  TooFewExamples,
  // nn
  DegenerateBatch,
  InvalidConfig,
  BadCheckpoint,
  // train
  EmptyEvalSet,
  EmptyAxis,
  InvalidKind,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingChannel: return "MissingChannel";
    case ErrorCode::MalformedRow: return "MalformedRow";
    case ErrorCode::BadMetadata: return "BadMetadata";
    case ErrorCode::InvalidRating: return "InvalidRating";
    case ErrorCode::PairMismatch: return "PairMismatch";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::Io: return "Io";
    case ErrorCode::InvalidBand: return "InvalidBand";
    case ErrorCode::UnstableDesign: return "UnstableDesign";
    case ErrorCode::TooShort: return "TooShort";
    case ErrorCode::SegmentTooShort: return "SegmentTooShort";
    case ErrorCode::BandOutOfRange: return "BandOutOfRange";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::MissingFactor: return "MissingFactor";
    case ErrorCode::EmptyTrainSet: return "EmptyTrainSet";
    case ErrorCode::EmptyClass: return "EmptyClass";
    case ErrorCode::TooFewExamples: return "TooFewExamples";
    case ErrorCode::DegenerateBatch: return "DegenerateBatch";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::BadCheckpoint: return "BadCheckpoint";
    case ErrorCode::EmptyEvalSet: return "EmptyEvalSet";
    case ErrorCode::EmptyAxis: return "EmptyAxis";
    case ErrorCode::InvalidKind: return "InvalidKind";
  }
  return "Unknown";
}

/// Every failure in the library is reported as an Error carrying the module
/// that raised it and a machine-checkable code. what() reads
/// "<module>: <Code>: <detail>".
class Error : public std::runtime_error {
 public:
  Error(std::string_view module, ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(module) + ": " + std::string(to_string(code)) + ": " + detail),
        module_(module),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& module() const noexcept { return module_; }

 private:
  std::string module_;
  ErrorCode code_;
};

}  // namespace qoe
