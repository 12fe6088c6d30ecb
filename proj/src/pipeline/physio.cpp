// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <numeric>

#include "rppg/dsp.hpp"
#include "rppg/pipeline.hpp"

namespace rppg::pipe {

namespace {

constexpr double kBandLo = 0.6, kBandHi = 3.0;
constexpr double kLfLo = 0.04, kLfHi = 0.15, kHfHi = 0.4;
constexpr double kIbiRate = 4.0;
// Beat-interval spread below this fraction of the mean interval counts as regular.
constexpr double kRegularCv = 0.005;

// Sub-sample peak position from the parabola through three neighbours.
double refine(std::span<const double> x, std::size_t i) {
  if (i == 0 || i + 1 >= x.size()) return double(i);
  const double a = x[i - 1], b = x[i], c = x[i + 1];
  const double den = a - 2 * b + c;
  if (den >= 0.0) return double(i);
  return double(i) + 0.5 * (a - c) / den;
}

}  // namespace

double estimate_hr(std::span<const double> signal, double fs) {
  if (!(fs > 0.0)) fail(ErrorCode::InvalidConfig, "sampling rate must be positive");
  if (double(signal.size()) < 5.0 * fs) {
    fail(ErrorCode::TooShortInput, "HR estimation needs at least 5 s, got " +
                                       std::to_string(double(signal.size()) / fs) + " s");
  }
  const auto filtered = dsp::butterworth_bandpass(signal, fs, kBandLo, kBandHi);
  return 60.0 * dsp::psd(filtered, fs).peak_frequency(kBandLo, kBandHi);
}

std::vector<std::size_t> find_peaks(std::span<const double> x, std::size_t min_distance, double min_prominence) {
  std::vector<std::size_t> cand;
  for (std::size_t i = 1; i + 1 < x.size(); ++i) {
    if (!(x[i] > x[i - 1])) continue;
    // Plateaus report their first sample.
    std::size_t j = i;
    while (j + 1 < x.size() && x[j + 1] == x[i]) ++j;
    if (j + 1 < x.size() && x[j + 1] < x[i]) cand.push_back(i);
    i = j;
  }
  std::vector<std::size_t> keep;
  for (std::size_t p : cand) {
    double left = x[p], right = x[p];
    for (std::size_t k = p; k-- > 0;) {
      if (x[k] > x[p]) break;
      left = std::min(left, x[k]);
    }
    for (std::size_t k = p + 1; k < x.size(); ++k) {
      if (x[k] > x[p]) break;
      right = std::min(right, x[k]);
    }
    if (x[p] - std::max(left, right) >= min_prominence) keep.push_back(p);
  }
  if (min_distance <= 1) return keep;
  // Higher peaks claim their neighbourhood first.
  std::vector<std::size_t> order(keep.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[keep[a]] > x[keep[b]]; });
  std::vector<bool> removed(keep.size(), false);
  for (std::size_t oi : order) {
    if (removed[oi]) continue;
    for (std::size_t k = 0; k < keep.size(); ++k) {
      if (k == oi || removed[k]) continue;
      const std::size_t d = keep[k] > keep[oi] ? keep[k] - keep[oi] : keep[oi] - keep[k];
      if (d < min_distance) removed[k] = true;
    }
  }
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < keep.size(); ++k)
    if (!removed[k]) out.push_back(keep[k]);
  return out;
}

PhysioEstimate estimate_hrv_rf(std::span<const double> signal, double fs) {
  if (!(fs > 0.0)) fail(ErrorCode::InvalidConfig, "sampling rate must be positive");
  if (double(signal.size()) < 30.0 * fs) {
    fail(ErrorCode::TooShortInput, "HRV analysis needs at least 30 s, got " +
                                       std::to_string(double(signal.size()) / fs) + " s");
  }
  PhysioEstimate est;
  const auto filtered = dsp::butterworth_bandpass(signal, fs, kBandLo, kBandHi);
  est.hr_bpm = 60.0 * dsp::psd(filtered, fs).peak_frequency(kBandLo, kBandHi);

  const auto distance = static_cast<std::size_t>(std::max(1.0, std::floor(60.0 / 180.0 * fs)));
  const auto peaks = find_peaks(filtered, distance, 0.3 * dsp::stddev(filtered));
  est.beats = peaks.size();
  if (peaks.size() < 10) fail(ErrorCode::TooFewBeats, "found " + std::to_string(peaks.size()) + " beats, need 10");

  std::vector<double> t(peaks.size());
  for (std::size_t i = 0; i < peaks.size(); ++i) t[i] = refine(filtered, peaks[i]) / fs;
  std::vector<double> when, ibi;
  for (std::size_t i = 1; i < t.size(); ++i) {
    when.push_back(t[i]);
    ibi.push_back(t[i] - t[i - 1]);
  }
  const double m = dsp::mean(ibi);
  if (dsp::stddev(ibi) < kRegularCv * m) {
    est.regular = true;
    return est;
  }
  const dsp::CubicSpline spline(when, ibi);
  std::vector<double> even;
  for (double s = when.front(); s <= when.back() + 1e-12; s += 1.0 / kIbiRate) even.push_back(spline(s));
  if (even.size() < 16) fail(ErrorCode::TooFewBeats, "beat series too short for spectral HRV");
  const auto spec = dsp::psd(even, kIbiRate);
  const double lf = spec.band_power(kLfLo, kLfHi);
  const double hf = spec.band_power(kLfHi, kHfHi);
  if (!(lf + hf > 0.0)) {
    est.regular = true;
    return est;
  }
  est.lf_nu = lf / (lf + hf);
  est.hf_nu = 1.0 - est.lf_nu;
  est.lf_hf = hf > 0.0 ? lf / hf : 0.0;
  est.rf_hz = spec.peak_frequency(kLfHi, kHfHi);
  return est;
}

std::vector<double> assemble_video(const std::vector<std::span<const double>>& clips,
                                   std::span<const std::size_t> starts, std::size_t frames) {
  if (clips.size() != starts.size()) fail(ErrorCode::LengthMismatch, "one start per clip required");
  std::vector<double> sum(frames, 0.0), count(frames, 0.0);
  for (std::size_t k = 0; k < clips.size(); ++k) {
    const auto& c = clips[k];
    if (starts[k] + c.size() > frames) fail(ErrorCode::ClipLongerThanSource, "clip runs past the video end");
    const double mu = dsp::mean(c), sd = dsp::stddev(c);
    const double inv = sd * sd > dsp::kVarianceEpsilon ? 1.0 / sd : 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) {
      sum[starts[k] + i] += (c[i] - mu) * inv;
      count[starts[k] + i] += 1.0;
    }
  }
  for (std::size_t i = 0; i < frames; ++i) sum[i] = count[i] > 0 ? sum[i] / count[i] : 0.0;
  return sum;
}

}  // namespace rppg::pipe
