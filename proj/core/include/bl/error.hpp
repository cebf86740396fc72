#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bl {

enum class ErrorCode {
  ShapeMismatch,
  NonFinite,
  AxisOutOfRange,
  NotScalar,
  GraphConsumed,
  OutOfGrid,
  ConfigMismatch,
  IndivisibleResolution,
  ManifestMissing,
  CorruptTensorFile,
  DimensionMismatch,
  UnknownKey,
  EmptyCategory,
  DuplicateCategory,
  StageMismatch,
  NonPositiveTau,
  BadFoldIndex,
  BadUniverse,
  UnknownLabel,
  EmptyEvaluation,
  BadConfig,
  EmptyDataset,
  LeakedTestCategory,
  DivergedLoss,
  CategoryMismatch,
  IoError,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries one of the codes above so
/// callers (and the CLI's exit-code mapping) can branch without parsing text.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace bl
