// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rppg {

enum class ErrorCode {
  InvalidConfig,
  TooShortInput,
  InvalidBand,
  LengthMismatch,
  ZeroMeanChannel,
  WindowTooLong,
  ShapeMismatch,
  InvalidVariant,
  ClipLongerThanSource,
  IndivisiblePatchSize,
  BadMagic,
  VersionMismatch,
  TruncatedFile,
  IoError,
  NonScalarLoss,
  NanGradient,
  EmptyMask,
  HrOutOfRange,
  LabelLengthMismatch,
  EmptySide,
  TooFewBeats,
  CheckpointMismatch,
};

/// Stable snake-case identifier, used in machine-readable error output.
std::string_view error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace rppg
