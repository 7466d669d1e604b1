#include "transrec/error.hpp"

namespace transrec {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedRecord: return "MalformedRecord";
    case ErrorCode::DuplicateItemId: return "DuplicateItemId";
    case ErrorCode::TokenOutOfRange: return "TokenOutOfRange";
    case ErrorCode::BadImageShape: return "BadImageShape";
    case ErrorCode::UnknownItemRef: return "UnknownItemRef";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::SequenceTooShort: return "SequenceTooShort";
    case ErrorCode::BadFraction: return "BadFraction";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::EmptyTokenList: return "EmptyTokenList";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::UnconfiguredModality: return "UnconfiguredModality";
    case ErrorCode::UnknownFeature: return "UnknownFeature";
    case ErrorCode::SequenceTooLong: return "SequenceTooLong";
    case ErrorCode::MaskShapeMismatch: return "MaskShapeMismatch";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::CatalogExhausted: return "CatalogExhausted";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::DataTooSmall: return "DataTooSmall";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::MissingCheckpoint: return "MissingCheckpoint";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::VersionUnsupported: return "VersionUnsupported";
    case ErrorCode::ConfigHashMismatch: return "ConfigHashMismatch";
    case ErrorCode::ToleranceExceeded: return "ToleranceExceeded";
    case ErrorCode::UnencodableItem: return "UnencodableItem";
    case ErrorCode::EmptySplit: return "EmptySplit";
    case ErrorCode::MismatchedReports: return "MismatchedReports";
    case ErrorCode::ZeroBaseline: return "ZeroBaseline";
    case ErrorCode::MissingHistory: return "MissingHistory";
  }
  return "Unknown";
}

ErrorCategory category_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigInvalid:
    case ErrorCode::MissingCheckpoint:
    case ErrorCode::ConfigHashMismatch:
    case ErrorCode::ShapeMismatch:
    case ErrorCode::VersionUnsupported:
    case ErrorCode::UnconfiguredModality:
    case ErrorCode::MismatchedReports:
    case ErrorCode::ZeroBaseline:
      return ErrorCategory::Config;
    case ErrorCode::DivergedLoss:
      return ErrorCategory::Divergence;
    case ErrorCode::ToleranceExceeded:
      return ErrorCategory::Verification;
    default:
      return ErrorCategory::Data;
  }
}

}  // namespace transrec
