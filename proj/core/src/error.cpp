#include "bl/error.hpp"

namespace bl {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::AxisOutOfRange: return "AxisOutOfRange";
    case ErrorCode::NotScalar: return "NotScalar";
    case ErrorCode::GraphConsumed: return "GraphConsumed";
    case ErrorCode::OutOfGrid: return "OutOfGrid";
    case ErrorCode::ConfigMismatch: return "ConfigMismatch";
    case ErrorCode::IndivisibleResolution: return "IndivisibleResolution";
    case ErrorCode::ManifestMissing: return "ManifestMissing";
    case ErrorCode::CorruptTensorFile: return "CorruptTensorFile";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::UnknownKey: return "UnknownKey";
    case ErrorCode::EmptyCategory: return "EmptyCategory";
    case ErrorCode::DuplicateCategory: return "DuplicateCategory";
    case ErrorCode::StageMismatch: return "StageMismatch";
    case ErrorCode::NonPositiveTau: return "NonPositiveTau";
    case ErrorCode::BadFoldIndex: return "BadFoldIndex";
    case ErrorCode::BadUniverse: return "BadUniverse";
    case ErrorCode::UnknownLabel: return "UnknownLabel";
    case ErrorCode::EmptyEvaluation: return "EmptyEvaluation";
    case ErrorCode::BadConfig: return "BadConfig";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::LeakedTestCategory: return "LeakedTestCategory";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::CategoryMismatch: return "CategoryMismatch";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

}  // namespace bl
