// SPDX-License-Identifier: Apache-2.0
#include "rppg/error.hpp"

namespace rppg {

std::string_view error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidConfig: return "invalid_config";
    case ErrorCode::TooShortInput: return "too_short_input";
    case ErrorCode::InvalidBand: return "invalid_band";
    case ErrorCode::LengthMismatch: return "length_mismatch";
    case ErrorCode::ZeroMeanChannel: return "zero_mean_channel";
    case ErrorCode::WindowTooLong: return "window_too_long";
    case ErrorCode::ShapeMismatch: return "shape_mismatch";
    case ErrorCode::InvalidVariant: return "invalid_variant";
    case ErrorCode::ClipLongerThanSource: return "clip_longer_than_source";
    case ErrorCode::IndivisiblePatchSize: return "indivisible_patch_size";
    case ErrorCode::BadMagic: return "bad_magic";
    case ErrorCode::VersionMismatch: return "version_mismatch";
    case ErrorCode::TruncatedFile: return "truncated_file";
    case ErrorCode::IoError: return "io_error";
    case ErrorCode::NonScalarLoss: return "non_scalar_loss";
    case ErrorCode::NanGradient: return "nan_gradient";
    case ErrorCode::EmptyMask: return "empty_mask";
    case ErrorCode::HrOutOfRange: return "hr_out_of_range";
    case ErrorCode::LabelLengthMismatch: return "label_length_mismatch";
    case ErrorCode::EmptySide: return "empty_side";
    case ErrorCode::TooFewBeats: return "too_few_beats";
    case ErrorCode::CheckpointMismatch: return "checkpoint_mismatch";
  }
  return "unknown";
}

}  // namespace rppg
