#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rehab {

enum class ErrorCode {
  kInvalidArgument,
  kParseError,
  kMissingRequiredLandmark,
  kDegenerateLandmarks,
  kDegeneratePoints,
  kAlignmentGap,
  kInsufficientFrames,
  kTooFewSamples,
  kRankDeficientFit,
  kEmptyInput,
  kConfigError,
};

const char* to_string(ErrorCode code);

/// Single exception type for the library; `code()` identifies the failure class.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Raised when a required landmark is absent (or confidence-gated) on a frame.
class MissingLandmarkError : public Error {
 public:
  MissingLandmarkError(std::size_t frame_index, std::string landmark)
      : Error(ErrorCode::kMissingRequiredLandmark,
              "frame " + std::to_string(frame_index) + " lacks '" + landmark + "'"),
        frame_index_(frame_index),
        landmark_(std::move(landmark)) {}

  std::size_t frame_index() const noexcept { return frame_index_; }
  const std::string& landmark() const noexcept { return landmark_; }

 private:
  std::size_t frame_index_;
  std::string landmark_;
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kParseError: return "parse-error";
    case ErrorCode::kMissingRequiredLandmark: return "missing-required-landmark";
    case ErrorCode::kDegenerateLandmarks: return "degenerate-landmarks";
    case ErrorCode::kDegeneratePoints: return "degenerate-points";
    case ErrorCode::kAlignmentGap: return "alignment-gap";
    case ErrorCode::kInsufficientFrames: return "insufficient-frames";
    case ErrorCode::kTooFewSamples: return "too-few-samples";
    case ErrorCode::kRankDeficientFit: return "rank-deficient-fit";
    case ErrorCode::kEmptyInput: return "empty-input";
    case ErrorCode::kConfigError: return "config-error";
  }
  return "unknown";
}

}  // namespace rehab
