// SPDX-License-Identifier: Apache-2.0
#include "rppg/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "rppg/dsp.hpp"
#include "rppg/error.hpp"

namespace rppg::synth {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kHarmonicAmp = 0.3;
constexpr double kRespAmDepth = 0.1;

void require(bool ok, const char* field, const std::string& what) {
  if (!ok) fail(ErrorCode::InvalidConfig, std::string(field) + ": " + what);
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::size_t SynthConfig::frames() const {
  return static_cast<std::size_t>(std::llround(duration_s * fs));
}

void validate(const SynthConfig& cfg) {
  require(cfg.hr_bpm >= 36.0 && cfg.hr_bpm <= 180.0, "hr_bpm", "must lie in [36, 180] bpm");
  require(cfg.rf_hz >= 0.1 && cfg.rf_hz <= 0.5, "rf_hz", "must lie in [0.1, 0.5] Hz");
  require(cfg.fs > 0.0 && std::isfinite(cfg.fs), "fs", "must be positive");
  require(cfg.duration_s >= 2.0 && std::isfinite(cfg.duration_s), "duration_s", "must be at least 2 s");
  require(cfg.n_rois >= 1, "n_rois", "must be at least 1");
  for (double a : cfg.pulse_amp_rgb) require(a >= 0.0, "pulse_amp_rgb", "amplitudes must be >= 0");
  require(cfg.illum_drift_amp >= 0.0, "illum_drift_amp", "must be >= 0");
  require(cfg.motion_noise_std >= 0.0, "motion_noise_std", "must be >= 0");
  require(cfg.white_noise_std >= 0.0, "white_noise_std", "must be >= 0");
  require(cfg.rsa_depth >= 0.0 && cfg.rsa_depth < 0.5, "rsa_depth", "must lie in [0, 0.5)");
}

RoiTraceSet::RoiTraceSet(std::size_t rois, std::size_t t, double rate)
    : n_rois(rois), frames(t), fs(rate), values(rois * 3 * t, 0.0f) {}

std::span<float> RoiTraceSet::trace(std::size_t roi, std::size_t channel) {
  return {values.data() + (roi * 3 + channel) * frames, frames};
}

std::span<const float> RoiTraceSet::trace(std::size_t roi, std::size_t channel) const {
  return {values.data() + (roi * 3 + channel) * frames, frames};
}

std::vector<double> RoiTraceSet::roi_rgb(std::size_t roi) const {
  const auto first = values.begin() + static_cast<std::ptrdiff_t>(roi * 3 * frames);
  return {first, first + static_cast<std::ptrdiff_t>(3 * frames)};
}

BvpSignal gen_bvp(const SynthConfig& cfg) {
  validate(cfg);
  std::mt19937_64 rng(mix_seed(cfg.seed, 0));
  std::uniform_real_distribution<double> phase(0.0, kTwoPi);
  const double phi0 = phase(rng);
  const double phi_resp = phase(rng);

  const double f_hr = cfg.hr_bpm / 60.0;
  const std::size_t n = cfg.frames();
  BvpSignal out;
  out.fs = cfg.fs;
  out.hr_gt = cfg.hr_bpm;
  out.rf_gt = cfg.rf_hz;
  out.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / cfg.fs;
    const double resp = kTwoPi * cfg.rf_hz * t + phi_resp;
    // Integrated instantaneous frequency f_hr * (1 + rsa * sin(resp)).
    const double theta = kTwoPi * f_hr * t + phi0 - (f_hr * cfg.rsa_depth / cfg.rf_hz) * std::cos(resp);
    const double pulse = std::sin(theta) + kHarmonicAmp * std::sin(2.0 * theta);
    out.samples[i] = (1.0 + kRespAmDepth * std::sin(resp)) * pulse;
  }
  const double m = dsp::mean(out.samples);
  const double s = dsp::stddev(out.samples);
  for (double& v : out.samples) v = (v - m) / s;
  return out;
}

RoiTraceSet gen_roi_traces(const BvpSignal& bvp, const SynthConfig& cfg) {
  validate(cfg);
  if (bvp.fs != cfg.fs) fail(ErrorCode::InvalidConfig, "fs: BVP sample rate differs from config");
  const std::size_t n = bvp.samples.size();
  RoiTraceSet set(cfg.n_rois, n, cfg.fs);
  std::mt19937_64 rng(mix_seed(cfg.seed, 1));

  // Common illumination drift: three slow tones below 0.2 Hz, peak magnitude <= 1.
  std::uniform_real_distribution<double> drift_freq(0.02, 0.15);
  std::uniform_real_distribution<double> phase(0.0, kTwoPi);
  std::array<double, 3> df{}, dp{};
  for (std::size_t k = 0; k < 3; ++k) {
    df[k] = drift_freq(rng);
    dp[k] = phase(rng);
  }
  std::vector<double> drift(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / cfg.fs;
    double d = 0.0;
    for (std::size_t k = 0; k < 3; ++k) d += std::sin(kTwoPi * df[k] * t + dp[k]);
    // Gain proportional to the channel baseline; all channels share kBaseline here.
    drift[i] = cfg.illum_drift_amp * (kBaseline / 128.0) * d / 3.0;
  }

  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> walk(n);
  for (std::size_t roi = 0; roi < cfg.n_rois; ++roi) {
    double w = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (i > 0) w = std::clamp(w + cfg.motion_noise_std * gauss(rng), -kMotionClip, kMotionClip);
      walk[i] = w;
    }
    for (std::size_t c = 0; c < 3; ++c) {
      auto tr = set.trace(roi, c);
      for (std::size_t i = 0; i < n; ++i) {
        const double eps = cfg.white_noise_std > 0.0 ? cfg.white_noise_std * gauss(rng) : 0.0;
        const double v = kBaseline + cfg.pulse_amp_rgb[c] * bvp.samples[i] + drift[i] + walk[i] + eps;
        tr[i] = static_cast<float>(std::clamp(v, 0.0, 255.0));
      }
    }
  }
  set.label = bvp;
  return set;
}

}  // namespace rppg::synth
