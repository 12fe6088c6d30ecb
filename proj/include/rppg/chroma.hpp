// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string_view>
#include <vector>

// Chrominance pulse projections. Every function takes one ROI's trace as a
// row-major [3][T] array with channel order R, G, B.
namespace rppg::chroma {

enum class ChromaKind { Green, Chrom, Pos, YuvU, YuvV };

std::string_view to_string(ChromaKind kind);

inline constexpr double kPosWindowSeconds = 1.6;

/// BT.601: rows of the result are Y, U, V.
std::vector<double> rgb_to_yuv(std::span<const double> rgb);
std::vector<double> yuv_to_rgb(std::span<const double> yuv);

std::vector<double> chrom_project(std::span<const double> rgb);
std::vector<double> pos_project(std::span<const double> rgb, double fs, double win_s = kPosWindowSeconds);
/// G channel with its mean removed.
std::vector<double> green_channel(std::span<const double> rgb);

/// Dispatch by kind; `fs` is only used by Pos.
std::vector<double> project(ChromaKind kind, std::span<const double> rgb, double fs);

}  // namespace rppg::chroma
