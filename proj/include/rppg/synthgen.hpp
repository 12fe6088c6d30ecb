// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace rppg::synth {

struct BvpSignal {
  std::vector<double> samples;
  double fs = 30.0;
  double hr_gt = 72.0;  // bpm
  double rf_gt = 0.25;  // Hz
};

struct SynthConfig {
  double hr_bpm = 72.0;
  double rf_hz = 0.25;
  double duration_s = 10.0;
  double fs = 30.0;
  std::size_t n_rois = 25;
  std::array<double, 3> pulse_amp_rgb{0.4, 1.0, 0.5};
  double illum_drift_amp = 0.0;
  double motion_noise_std = 0.0;
  double white_noise_std = 0.0;
  /// Fractional heart-rate modulation at rf_hz (respiratory sinus arrhythmia); 0 gives regular beats.
  double rsa_depth = 0.05;
  std::uint64_t seed = 1;

  std::size_t frames() const;
};

/// Throws InvalidConfig naming the offending field.
void validate(const SynthConfig& cfg);

/// Per-ROI color traces, stored ROI-major as [roi][channel R,G,B][frame].
struct RoiTraceSet {
  std::size_t n_rois = 0;
  std::size_t frames = 0;
  double fs = 30.0;
  std::vector<float> values;
  std::optional<BvpSignal> label;

  RoiTraceSet() = default;
  RoiTraceSet(std::size_t rois, std::size_t t, double rate);

  std::span<float> trace(std::size_t roi, std::size_t channel);
  std::span<const float> trace(std::size_t roi, std::size_t channel) const;
  /// One ROI's three channels as doubles, [3][T] row-major.
  std::vector<double> roi_rgb(std::size_t roi) const;
};

inline constexpr double kBaseline = 128.0;
inline constexpr double kMotionClip = 25.0;

BvpSignal gen_bvp(const SynthConfig& cfg);
RoiTraceSet gen_roi_traces(const BvpSignal& bvp, const SynthConfig& cfg);

/// SplitMix64 step, used to derive independent stream seeds from one user seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace rppg::synth
