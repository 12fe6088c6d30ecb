// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rppg/synthgen.hpp"

namespace rppg::stmap {

enum class Variant : std::uint32_t { Original, Chrom, Pos, Filtered, OC, OP, OF, PC, CF, PF };

inline constexpr std::size_t kVariantCount = 10;

std::string_view to_string(Variant v);
/// Accepts the short names ("PC") and "PC-STMap"-style spellings, case-insensitive.
std::optional<Variant> parse_variant(std::string_view name);
bool is_base(Variant v);
std::size_t channels_of(Variant v);
/// Base components of a combined variant, e.g. PC -> {Pos, Chrom}.
std::pair<Variant, Variant> components(Variant combined);

/// Companion channels next to the POS/CHROM channel: raw (R, G) or (U, V).
enum class AugChannels { Eq1, Yuv };

struct BuildOptions {
  AugChannels aug_channels = AugChannels::Eq1;
  double band_lo_hz = 0.6;
  double band_hi_hz = 3.0;
  int filter_order = 4;
  double pos_window_s = 1.6;
};

/// Row-major [row][col][channel]; rows are ROIs (or resized rows), cols are frames.
struct STMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  double fs = 30.0;
  Variant variant = Variant::Original;
  std::vector<float> data;

  STMap() = default;
  STMap(std::size_t h, std::size_t w, std::size_t c, double rate, Variant v);

  float& at(std::size_t row, std::size_t col, std::size_t ch) { return data[(row * width + col) * channels + ch]; }
  float at(std::size_t row, std::size_t col, std::size_t ch) const {
    return data[(row * width + col) * channels + ch];
  }
  /// One channel of one row as doubles.
  std::vector<double> row(std::size_t r, std::size_t ch) const;
  /// Mean over all rows and channels of each column.
  std::vector<double> column_mean() const;

  bool operator==(const STMap&) const = default;
};

struct StmapClipSet {
  std::vector<STMap> clips;
  std::string source_id;
  std::vector<std::vector<double>> labels;  // aligned BVP segments, empty when unlabeled
  std::vector<std::size_t> starts;          // first source column of each clip
};

struct MaskPlan {
  std::size_t patch_size = 0;
  std::size_t grid = 0;
  std::vector<std::size_t> kept_indices;
  std::vector<std::size_t> masked_indices;
  std::uint64_t seed = 0;

  std::size_t patch_count() const { return grid * grid; }
  /// A plan keeping every patch in canonical order (fine-tuning / probing input).
  static MaskPlan full(std::size_t grid, std::size_t patch_size);
};

/// Dense [rows][cols] double matrix used for patch tables.
struct PatchMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }
  std::span<double> row(std::size_t r) { return {values.data() + r * cols, cols}; }
};

/// Kept-patch count floor((1 - mask_ratio) * patch_count).
std::size_t kept_count(double mask_ratio, std::size_t patch_count);

STMap build_base_stmap(const synth::RoiTraceSet& traces, Variant variant, const BuildOptions& opts = {});
STMap build_combined_stmap(const STMap& a, const STMap& b);
/// Any of the ten variants straight from traces.
STMap build_stmap(const synth::RoiTraceSet& traces, Variant variant, const BuildOptions& opts = {});

/// Min-max each (row, channel) to [0, 1]; constant rows become 0.5.
void normalize_rows(STMap& map);

StmapClipSet crop_windows(const STMap& large, std::size_t clip_len, std::size_t step);
/// Same windows applied to a label signal aligned with the map columns.
std::vector<std::vector<double>> crop_label(std::span<const double> label, std::size_t clip_len, std::size_t step);
/// Bilinear (align-corners) resize along the row axis to `rows` rows; rows defaults to the width.
STMap resize_rows(const STMap& clip, std::size_t rows = 0);

MaskPlan make_mask_plan(std::size_t height, std::size_t patch_size, double mask_ratio, std::uint64_t seed);

PatchMatrix patchify(const STMap& map, std::size_t patch_size);
STMap unpatchify(const PatchMatrix& patches, std::size_t height, std::size_t width, std::size_t channels,
                 std::size_t patch_size, double fs = 30.0, Variant variant = Variant::Original);

// File formats (little-endian).
void write_stmap(const std::string& path, const STMap& map);
STMap read_stmap(const std::string& path);
void write_traces(const std::string& path, const synth::RoiTraceSet& traces);
synth::RoiTraceSet read_traces(const std::string& path);

std::vector<std::uint8_t> encode_stmap(const STMap& map);
STMap decode_stmap(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_traces(const synth::RoiTraceSet& traces);
synth::RoiTraceSet decode_traces(std::span<const std::uint8_t> bytes);

}  // namespace rppg::stmap
