#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace evrep {

enum class Errc {
  TruncatedRecord,
  CoordinateOutOfRange,
  MalformedRow,
  UnsortedTimestamps,
  InvalidWindow,
  ClassTooSmall,
  EmptyResolution,
  IOFailure,
  InvalidConfig,
  ShapeMismatch,
  ChecksumMismatch,
  ConfigMismatch,
  InvalidWeights,
  Timeout,
  HTTPError,
  ReplayMiss,
  RateLimited,
  BackendFailure,
  Precondition,
  MissingRGBPair,
  MissingCheckpoint,
  MissingExternalFrames,
  EmptyRecords,
};

constexpr std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::TruncatedRecord: return "TruncatedRecord";
    case Errc::CoordinateOutOfRange: return "CoordinateOutOfRange";
    case Errc::MalformedRow: return "MalformedRow";
    case Errc::UnsortedTimestamps: return "UnsortedTimestamps";
    case Errc::InvalidWindow: return "InvalidWindow";
    case Errc::ClassTooSmall: return "ClassTooSmall";
    case Errc::EmptyResolution: return "EmptyResolution";
    case Errc::IOFailure: return "IOFailure";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::ChecksumMismatch: return "ChecksumMismatch";
    case Errc::ConfigMismatch: return "ConfigMismatch";
    case Errc::InvalidWeights: return "InvalidWeights";
    case Errc::Timeout: return "Timeout";
    case Errc::HTTPError: return "HTTPError";
    case Errc::ReplayMiss: return "ReplayMiss";
    case Errc::RateLimited: return "RateLimited";
    case Errc::BackendFailure: return "BackendFailure";
    case Errc::Precondition: return "Precondition";
    case Errc::MissingRGBPair: return "MissingRGBPair";
    case Errc::MissingCheckpoint: return "MissingCheckpoint";
    case Errc::MissingExternalFrames: return "MissingExternalFrames";
    case Errc::EmptyRecords: return "EmptyRecords";
  }
  return "Unknown";
}

/// Every failure in the library is reported as an Error carrying a stable code.
/// The message is prefixed with the code name so logs stay greppable.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code), detail_(what) {}

  Errc code() const noexcept { return code_; }
  /// The message without the code prefix.
  const std::string& detail() const noexcept { return detail_; }

  /// Transport-level failures a caller may retry or record per sample.
  bool is_backend_failure() const noexcept {
    return code_ == Errc::Timeout || code_ == Errc::HTTPError || code_ == Errc::ReplayMiss ||
           code_ == Errc::RateLimited || code_ == Errc::BackendFailure;
  }

 private:
  Errc code_;
  std::string detail_;
};

}  // namespace evrep
