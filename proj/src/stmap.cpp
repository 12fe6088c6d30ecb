// SPDX-License-Identifier: Apache-2.0
#include "rppg/stmap.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <numeric>
#include <random>

#include "rppg/binary_io.hpp"
#include "rppg/chroma.hpp"
#include "rppg/dsp.hpp"
#include "rppg/error.hpp"

namespace rppg::stmap {

namespace {

constexpr std::array<std::string_view, kVariantCount> kNames = {"Original", "Chrom", "Pos", "Filtered", "OC",
                                                                "OP",       "OF",    "PC",  "CF",       "PF"};

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string shape_str(const STMap& m) {
  return std::to_string(m.height) + "x" + std::to_string(m.width) + "x" + std::to_string(m.channels);
}

}  // namespace

std::string_view to_string(Variant v) { return kNames[static_cast<std::size_t>(v)]; }

std::optional<Variant> parse_variant(std::string_view name) {
  std::string key = lower(name);
  for (std::string_view suffix : {"-stmap", "_stmap"}) {
    if (key.size() > suffix.size() && key.ends_with(suffix)) key.resize(key.size() - suffix.size());
  }
  for (std::size_t i = 0; i < kVariantCount; ++i) {
    if (lower(kNames[i]) == key) return static_cast<Variant>(i);
  }
  return std::nullopt;
}

bool is_base(Variant v) { return static_cast<std::uint32_t>(v) <= static_cast<std::uint32_t>(Variant::Filtered); }

std::size_t channels_of(Variant v) { return is_base(v) ? 3 : 6; }

std::pair<Variant, Variant> components(Variant combined) {
  switch (combined) {
    case Variant::OC: return {Variant::Original, Variant::Chrom};
    case Variant::OP: return {Variant::Original, Variant::Pos};
    case Variant::OF: return {Variant::Original, Variant::Filtered};
    case Variant::PC: return {Variant::Pos, Variant::Chrom};
    case Variant::CF: return {Variant::Chrom, Variant::Filtered};
    case Variant::PF: return {Variant::Pos, Variant::Filtered};
    default: break;
  }
  fail(ErrorCode::InvalidVariant, std::string(to_string(combined)) + " is not a combined variant");
}

STMap::STMap(std::size_t h, std::size_t w, std::size_t c, double rate, Variant v)
    : height(h), width(w), channels(c), fs(rate), variant(v), data(h * w * c, 0.0f) {}

std::vector<double> STMap::row(std::size_t r, std::size_t ch) const {
  std::vector<double> out(width);
  for (std::size_t col = 0; col < width; ++col) out[col] = at(r, col, ch);
  return out;
}

std::vector<double> STMap::column_mean() const {
  std::vector<double> out(width, 0.0);
  for (std::size_t r = 0; r < height; ++r)
    for (std::size_t col = 0; col < width; ++col)
      for (std::size_t ch = 0; ch < channels; ++ch) out[col] += at(r, col, ch);
  const auto n = static_cast<double>(height * channels);
  for (double& v : out) v /= n;
  return out;
}

MaskPlan MaskPlan::full(std::size_t grid, std::size_t patch_size) {
  MaskPlan p;
  p.grid = grid;
  p.patch_size = patch_size;
  p.kept_indices.resize(grid * grid);
  std::iota(p.kept_indices.begin(), p.kept_indices.end(), std::size_t{0});
  return p;
}

std::size_t kept_count(double mask_ratio, std::size_t patch_count) {
  // The epsilon keeps exact products such as 0.1 * 100 from flooring to 9.
  return static_cast<std::size_t>(std::floor((1.0 - mask_ratio) * static_cast<double>(patch_count) + 1e-9));
}

namespace {

// Min-max scales one strided row; rows with negligible variance become 0.5.
template <class Get, class Put>
void scale_row(std::size_t width, Get get, Put put) {
  double lo = get(0), hi = lo, sum = 0.0;
  for (std::size_t col = 0; col < width; ++col) {
    const double v = get(col);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    sum += v;
  }
  const double m = sum / static_cast<double>(width);
  double var = 0.0;
  for (std::size_t col = 0; col < width; ++col) var += (get(col) - m) * (get(col) - m);
  var /= static_cast<double>(width);
  const bool flat = var < dsp::kVarianceEpsilon || hi - lo <= 0.0;
  for (std::size_t col = 0; col < width; ++col) {
    put(col, flat ? 0.5f : static_cast<float>((get(col) - lo) / (hi - lo)));
  }
}

}  // namespace

void normalize_rows(STMap& map) {
  for (std::size_t r = 0; r < map.height; ++r) {
    for (std::size_t ch = 0; ch < map.channels; ++ch) {
      std::vector<double> row(map.width);
      for (std::size_t col = 0; col < map.width; ++col) row[col] = map.at(r, col, ch);
      scale_row(map.width, [&](std::size_t col) { return row[col]; },
                [&](std::size_t col, float v) { map.at(r, col, ch) = v; });
    }
  }
}

STMap build_base_stmap(const synth::RoiTraceSet& traces, Variant variant, const BuildOptions& opts) {
  if (!is_base(variant)) {
    fail(ErrorCode::InvalidVariant, std::string(to_string(variant)) + " is not a base STMap variant");
  }
  const std::size_t n = traces.n_rois, t = traces.frames;
  STMap map(n, t, 3, traces.fs, variant);
  // Intermediate rows stay in double precision; only the normalized result is stored as f32.
  std::vector<double> staged(n * t * 3);
  auto put = [&](std::size_t roi, std::size_t ch, std::span<const double> v) {
    for (std::size_t col = 0; col < t; ++col) staged[(roi * t + col) * 3 + ch] = v[col];
  };
  for (std::size_t roi = 0; roi < n; ++roi) {
    const auto rgb = traces.roi_rgb(roi);
    const std::span<const double> r(rgb.data(), t), g(rgb.data() + t, t), b(rgb.data() + 2 * t, t);
    switch (variant) {
      case Variant::Original:
        put(roi, 0, b);
        put(roi, 1, r);
        put(roi, 2, g);
        break;
      case Variant::Chrom:
      case Variant::Pos: {
        const auto pulse = variant == Variant::Chrom ? chroma::chrom_project(rgb)
                                                     : chroma::pos_project(rgb, traces.fs, opts.pos_window_s);
        put(roi, 0, pulse);
        if (opts.aug_channels == AugChannels::Eq1) {
          put(roi, 1, r);
          put(roi, 2, g);
        } else {
          const auto yuv = chroma::rgb_to_yuv(rgb);
          put(roi, 1, std::span<const double>(yuv.data() + t, t));
          put(roi, 2, std::span<const double>(yuv.data() + 2 * t, t));
        }
        break;
      }
      case Variant::Filtered:
        for (std::size_t ch = 0; ch < 3; ++ch) {
          const std::span<const double> src(rgb.data() + ch * t, t);
          put(roi, ch, dsp::butterworth_bandpass(src, traces.fs, opts.band_lo_hz, opts.band_hi_hz, opts.filter_order));
        }
        break;
      default: break;
    }
  }
  for (std::size_t roi = 0; roi < n; ++roi) {
    for (std::size_t ch = 0; ch < 3; ++ch) {
      scale_row(t, [&](std::size_t col) { return staged[(roi * t + col) * 3 + ch]; },
                [&](std::size_t col, float v) { map.at(roi, col, ch) = v; });
    }
  }
  return map;
}

STMap build_combined_stmap(const STMap& a, const STMap& b) {
  if (a.height != b.height || a.width != b.width || a.fs != b.fs) {
    fail(ErrorCode::ShapeMismatch, "cannot concatenate " + shape_str(a) + " with " + shape_str(b));
  }
  if (a.channels != 3 || b.channels != 3) fail(ErrorCode::ShapeMismatch, "combined maps need two 3-channel maps");
  std::optional<Variant> combined;
  for (Variant v : {Variant::OC, Variant::OP, Variant::OF, Variant::PC, Variant::CF, Variant::PF}) {
    if (components(v) == std::pair{a.variant, b.variant}) combined = v;
  }
  if (!combined) {
    fail(ErrorCode::InvalidVariant, "no combined STMap is defined for (" + std::string(to_string(a.variant)) + ", " +
                                        std::string(to_string(b.variant)) + ")");
  }
  STMap out(a.height, a.width, 6, a.fs, *combined);
  for (std::size_t r = 0; r < a.height; ++r) {
    for (std::size_t col = 0; col < a.width; ++col) {
      for (std::size_t ch = 0; ch < 3; ++ch) {
        out.at(r, col, ch) = a.at(r, col, ch);
        out.at(r, col, ch + 3) = b.at(r, col, ch);
      }
    }
  }
  return out;
}

STMap build_stmap(const synth::RoiTraceSet& traces, Variant variant, const BuildOptions& opts) {
  if (is_base(variant)) return build_base_stmap(traces, variant, opts);
  const auto [first, second] = components(variant);
  return build_combined_stmap(build_base_stmap(traces, first, opts), build_base_stmap(traces, second, opts));
}

StmapClipSet crop_windows(const STMap& large, std::size_t clip_len, std::size_t step) {
  if (step < 1) fail(ErrorCode::InvalidConfig, "crop step must be >= 1");
  if (clip_len < 1 || clip_len > large.width) {
    fail(ErrorCode::ClipLongerThanSource, "clip length " + std::to_string(clip_len) + " exceeds source length " +
                                              std::to_string(large.width));
  }
  StmapClipSet set;
  const std::size_t count = (large.width - clip_len) / step + 1;
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t start = k * step;
    STMap clip(large.height, clip_len, large.channels, large.fs, large.variant);
    for (std::size_t r = 0; r < large.height; ++r)
      for (std::size_t col = 0; col < clip_len; ++col)
        for (std::size_t ch = 0; ch < large.channels; ++ch) clip.at(r, col, ch) = large.at(r, start + col, ch);
    set.clips.push_back(std::move(clip));
    set.starts.push_back(start);
  }
  return set;
}

std::vector<std::vector<double>> crop_label(std::span<const double> label, std::size_t clip_len, std::size_t step) {
  if (step < 1) fail(ErrorCode::InvalidConfig, "crop step must be >= 1");
  if (clip_len < 1 || clip_len > label.size()) {
    fail(ErrorCode::ClipLongerThanSource, "clip length exceeds label length");
  }
  std::vector<std::vector<double>> out;
  for (std::size_t start = 0; start + clip_len <= label.size(); start += step) {
    out.emplace_back(label.begin() + static_cast<std::ptrdiff_t>(start),
                     label.begin() + static_cast<std::ptrdiff_t>(start + clip_len));
  }
  return out;
}

STMap resize_rows(const STMap& clip, std::size_t rows) {
  if (rows == 0) rows = clip.width;
  if (clip.height < 2) fail(ErrorCode::TooShortInput, "row resize needs at least 2 source rows");
  STMap out(rows, clip.width, clip.channels, clip.fs, clip.variant);
  const double scale = rows > 1 ? static_cast<double>(clip.height - 1) / static_cast<double>(rows - 1) : 0.0;
  for (std::size_t j = 0; j < rows; ++j) {
    const double pos = static_cast<double>(j) * scale;
    const auto lo = std::min(static_cast<std::size_t>(pos), clip.height - 2);
    const double frac = pos - static_cast<double>(lo);
    for (std::size_t col = 0; col < clip.width; ++col) {
      for (std::size_t ch = 0; ch < clip.channels; ++ch) {
        const double a = clip.at(lo, col, ch), b = clip.at(lo + 1, col, ch);
        out.at(j, col, ch) = static_cast<float>(a + frac * (b - a));
      }
    }
  }
  return out;
}

MaskPlan make_mask_plan(std::size_t height, std::size_t patch_size, double mask_ratio, std::uint64_t seed) {
  if (patch_size == 0 || height % patch_size != 0) {
    fail(ErrorCode::IndivisiblePatchSize,
         "map side " + std::to_string(height) + " is not divisible by patch size " + std::to_string(patch_size));
  }
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) fail(ErrorCode::InvalidConfig, "mask_ratio must lie in (0, 1)");
  MaskPlan plan;
  plan.patch_size = patch_size;
  plan.grid = height / patch_size;
  plan.seed = seed;
  const std::size_t n = plan.grid * plan.grid;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i-- > 1;) {
    std::uniform_int_distribution<std::size_t> pick(0, i);
    std::swap(order[i], order[pick(rng)]);
  }
  const std::size_t keep = kept_count(mask_ratio, n);
  plan.kept_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep));
  plan.masked_indices.assign(order.begin() + static_cast<std::ptrdiff_t>(keep), order.end());
  return plan;
}

PatchMatrix patchify(const STMap& map, std::size_t patch_size) {
  if (patch_size == 0 || map.height % patch_size != 0 || map.width % patch_size != 0) {
    fail(ErrorCode::IndivisiblePatchSize,
         "map " + shape_str(map) + " is not divisible by patch size " + std::to_string(patch_size));
  }
  const std::size_t gh = map.height / patch_size, gw = map.width / patch_size;
  PatchMatrix out{gh * gw, patch_size * patch_size * map.channels, {}};
  out.values.resize(out.rows * out.cols);
  for (std::size_t py = 0; py < gh; ++py) {
    for (std::size_t px = 0; px < gw; ++px) {
      auto dst = out.row(py * gw + px);
      std::size_t k = 0;
      for (std::size_t dy = 0; dy < patch_size; ++dy)
        for (std::size_t dx = 0; dx < patch_size; ++dx)
          for (std::size_t ch = 0; ch < map.channels; ++ch)
            dst[k++] = map.at(py * patch_size + dy, px * patch_size + dx, ch);
    }
  }
  return out;
}

STMap unpatchify(const PatchMatrix& patches, std::size_t height, std::size_t width, std::size_t channels,
                 std::size_t patch_size, double fs, Variant variant) {
  if (patch_size == 0 || height % patch_size != 0 || width % patch_size != 0) {
    fail(ErrorCode::IndivisiblePatchSize, "unpatchify: shape not divisible by patch size");
  }
  const std::size_t gh = height / patch_size, gw = width / patch_size;
  if (patches.rows != gh * gw || patches.cols != patch_size * patch_size * channels) {
    fail(ErrorCode::ShapeMismatch, "unpatchify: patch table has the wrong shape");
  }
  STMap map(height, width, channels, fs, variant);
  for (std::size_t py = 0; py < gh; ++py) {
    for (std::size_t px = 0; px < gw; ++px) {
      const auto src = patches.row(py * gw + px);
      std::size_t k = 0;
      for (std::size_t dy = 0; dy < patch_size; ++dy)
        for (std::size_t dx = 0; dx < patch_size; ++dx)
          for (std::size_t ch = 0; ch < channels; ++ch)
            map.at(py * patch_size + dy, px * patch_size + dx, ch) = static_cast<float>(src[k++]);
    }
  }
  return map;
}

// ---------------------------------------------------------------------------
// File formats

std::vector<std::uint8_t> encode_stmap(const STMap& map) {
  io::ByteWriter w;
  w.magic("STMP");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(map.height));
  w.u32(static_cast<std::uint32_t>(map.width));
  w.u32(static_cast<std::uint32_t>(map.channels));
  w.u32(static_cast<std::uint32_t>(map.variant));
  w.f32(static_cast<float>(map.fs));
  for (float v : map.data) w.f32(v);
  return w.take();
}

STMap decode_stmap(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "STMap file");
  r.expect_magic("STMP");
  const std::uint32_t version = r.u32();
  if (version != 1) fail(ErrorCode::VersionMismatch, "STMap file version " + std::to_string(version) + " != 1");
  STMap map;
  map.height = r.u32();
  map.width = r.u32();
  map.channels = r.u32();
  const std::uint32_t tag = r.u32();
  if (tag >= kVariantCount) fail(ErrorCode::InvalidVariant, "STMap file has unknown variant tag");
  map.variant = static_cast<Variant>(tag);
  map.fs = r.f32();
  map.data = r.f32_array(map.height * map.width * map.channels);
  return map;
}

std::vector<std::uint8_t> encode_traces(const synth::RoiTraceSet& traces) {
  io::ByteWriter w;
  w.magic("ROIT");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(traces.n_rois));
  w.u32(static_cast<std::uint32_t>(traces.frames));
  w.f32(static_cast<float>(traces.fs));
  w.u8(traces.label ? 1 : 0);
  for (float v : traces.values) w.f32(v);
  if (traces.label) {
    w.u32(static_cast<std::uint32_t>(traces.label->samples.size()));
    for (double v : traces.label->samples) w.f32(static_cast<float>(v));
    w.f32(static_cast<float>(traces.label->hr_gt));
    w.f32(static_cast<float>(traces.label->rf_gt));
  }
  return w.take();
}

synth::RoiTraceSet decode_traces(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "trace file");
  r.expect_magic("ROIT");
  const std::uint32_t version = r.u32();
  if (version != 1) fail(ErrorCode::VersionMismatch, "trace file version " + std::to_string(version) + " != 1");
  synth::RoiTraceSet set;
  set.n_rois = r.u32();
  set.frames = r.u32();
  set.fs = r.f32();
  const bool has_label = r.u8() != 0;
  set.values = r.f32_array(set.n_rois * 3 * set.frames);
  if (has_label) {
    synth::BvpSignal bvp;
    const std::uint32_t len = r.u32();
    const auto samples = r.f32_array(len);
    bvp.samples.assign(samples.begin(), samples.end());
    bvp.hr_gt = r.f32();
    bvp.rf_gt = r.f32();
    bvp.fs = set.fs;
    set.label = std::move(bvp);
  }
  return set;
}

void write_stmap(const std::string& path, const STMap& map) { io::write_file(path, encode_stmap(map)); }
STMap read_stmap(const std::string& path) { return decode_stmap(io::read_file(path)); }
void write_traces(const std::string& path, const synth::RoiTraceSet& traces) {
  io::write_file(path, encode_traces(traces));
}
synth::RoiTraceSet read_traces(const std::string& path) { return decode_traces(io::read_file(path)); }

}  // namespace rppg::stmap
