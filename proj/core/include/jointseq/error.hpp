#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace jointseq {

enum class ErrorCode {
  kNonTextToken,
  kNonLocationToken,
  kOutOfRange,
  kUnknownTask,
  kMissingInstanceText,
  kUnexpectedInstanceText,
  kInvalidVariant,
  kAmbiguousReferent,
  kSequenceTooLong,
  kInvalidHyper,
  kShapeMismatch,
  kEmptyTarget,
  kStaleTape,
  kEmptyDataset,
  kNonFiniteLoss,
  kEmptyLabelSet,
  kInvalidPrefix,
  kDegenerateBox,
  kEmptyCorpus,
  kZeroVector,
  kConfigError,
  kManifestMismatch,
  kIoError,
};

std::string_view error_code_name(ErrorCode code);

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace jointseq
