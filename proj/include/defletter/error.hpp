#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace defletter {

enum class ErrorCode {
  MissingGlyph,
  EmptyGlyph,
  UnparseableFont,
  InsufficientFonts,
  IoFailure,
  CorruptDataset,
  DivergedTraining,
  EmptySplit,
  NotCorrectlyClassified,
  EmptyLog,
  JoinFailure,
  EmptyClass,
  StaleArtifact,
  MissingArtifact,
  InvalidArgument,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingGlyph: return "MissingGlyph";
    case ErrorCode::EmptyGlyph: return "EmptyGlyph";
    case ErrorCode::UnparseableFont: return "UnparseableFont";
    case ErrorCode::InsufficientFonts: return "InsufficientFonts";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::CorruptDataset: return "CorruptDataset";
    case ErrorCode::DivergedTraining: return "DivergedTraining";
    case ErrorCode::EmptySplit: return "EmptySplit";
    case ErrorCode::NotCorrectlyClassified: return "NotCorrectlyClassified";
    case ErrorCode::EmptyLog: return "EmptyLog";
    case ErrorCode::JoinFailure: return "JoinFailure";
    case ErrorCode::EmptyClass: return "EmptyClass";
    case ErrorCode::StaleArtifact: return "StaleArtifact";
    case ErrorCode::MissingArtifact: return "MissingArtifact";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Every failure raised by the toolkit carries one of the codes above so the
/// CLI can map it onto an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace defletter
