#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace transrec {

enum class ErrorCode {
  // corpus
  MalformedRecord,
  DuplicateItemId,
  TokenOutOfRange,
  BadImageShape,
  UnknownItemRef,
  EmptyDataset,
  SequenceTooShort,
  BadFraction,
  ConfigInvalid,
  // encoders / user model
  EmptyTokenList,
  IndexOutOfRange,
  UnconfiguredModality,
  UnknownFeature,
  SequenceTooLong,
  MaskShapeMismatch,
  DimMismatch,
  // objectives
  CatalogExhausted,
  LabelOutOfRange,
  // pipeline
  DataTooSmall,
  DivergedLoss,
  ShapeMismatch,
  MissingCheckpoint,
  IoFailure,
  VersionUnsupported,
  ConfigHashMismatch,
  ToleranceExceeded,
  // eval
  UnencodableItem,
  EmptySplit,
  MismatchedReports,
  ZeroBaseline,
  MissingHistory,
};

std::string_view to_string(ErrorCode code);

/// Coarse category used by the command-line tool to pick an exit code.
enum class ErrorCategory { Config = 1, Data = 2, Divergence = 3, Verification = 4 };

ErrorCategory category_of(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  ErrorCategory category() const noexcept { return category_of(code_); }

 private:
  ErrorCode code_;
};

}  // namespace transrec
