#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fliptest {

/// Broad failure classes. The CLI maps them onto exit codes 2, 3 and 4.
enum class ErrorCategory { kConfig, kData, kNumeric };

enum class Errc {
  kBadConfig,
  kParse,
  kConstantFeature,
  kNonFinite,
  kDimensionMismatch,
  kShapeMismatch,
  kSchemaMismatch,
  kUnequalSizes,
  kEmptyDataset,
  kTooLarge,
  kKTooLarge,
  kBadParams,
  kMissingLabels,
  kEmptyStratum,
  kEmptyFlipset,
  kEmptySample,
  kSingularDesign,
  kNonFiniteLoss,
  kDiverged,
};

inline std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::kBadConfig: return "BadConfig";
    case Errc::kParse: return "Parse";
    case Errc::kConstantFeature: return "ConstantFeature";
    case Errc::kNonFinite: return "NonFinite";
    case Errc::kDimensionMismatch: return "DimensionMismatch";
    case Errc::kShapeMismatch: return "ShapeMismatch";
    case Errc::kSchemaMismatch: return "SchemaMismatch";
    case Errc::kUnequalSizes: return "UnequalSizes";
    case Errc::kEmptyDataset: return "EmptyDataset";
    case Errc::kTooLarge: return "TooLarge";
    case Errc::kKTooLarge: return "KTooLarge";
    case Errc::kBadParams: return "BadParams";
    case Errc::kMissingLabels: return "MissingLabels";
    case Errc::kEmptyStratum: return "EmptyStratum";
    case Errc::kEmptyFlipset: return "EmptyFlipset";
    case Errc::kEmptySample: return "EmptySample";
    case Errc::kSingularDesign: return "SingularDesign";
    case Errc::kNonFiniteLoss: return "NonFiniteLoss";
    case Errc::kDiverged: return "Diverged";
  }
  return "Unknown";
}

inline ErrorCategory errc_category(Errc code) {
  switch (code) {
    case Errc::kBadConfig:
    case Errc::kBadParams:
    case Errc::kTooLarge:
    case Errc::kKTooLarge:
      return ErrorCategory::kConfig;
    case Errc::kSingularDesign:
    case Errc::kNonFiniteLoss:
    case Errc::kDiverged:
      return ErrorCategory::kNumeric;
    default:
      return ErrorCategory::kData;
  }
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message),
        code_(code) {}

  Errc code() const noexcept { return code_; }
  ErrorCategory category() const noexcept { return errc_category(code_); }

 private:
  Errc code_;
};

}  // namespace fliptest
