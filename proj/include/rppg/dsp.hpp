// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace rppg::dsp {

/// Variance floor below which a signal is treated as constant.
inline constexpr double kVarianceEpsilon = 1e-12;

struct Spectrum {
  std::vector<double> freqs;  // Hz, uniform, freqs[0] == 0
  std::vector<double> power;  // one-sided, >= 0
  double fs = 0.0;

  double bin_width() const { return freqs.size() > 1 ? freqs[1] - freqs[0] : 0.0; }
  /// Index of the strongest bin with freqs in [lo, hi]; throws if the band is empty.
  std::size_t argmax_in(double lo, double hi) const;
  /// Sum of power over bins with freqs in [lo, hi].
  double band_power(double lo, double hi) const;
  /// Peak frequency in [lo, hi] refined by 3-point parabolic interpolation.
  double peak_frequency(double lo, double hi) const;
};

/// One biquad in transposed direct form II, a0 normalised to 1.
struct Biquad {
  std::array<double, 3> b{};
  std::array<double, 2> a{};  // a1, a2
};

/// Natural cubic spline through arbitrary strictly increasing knots.
class CubicSpline {
 public:
  CubicSpline(std::vector<double> x, std::vector<double> y);
  double operator()(double t) const;

 private:
  std::vector<double> x_, y_, m_;  // m_ = second derivatives at knots
};

double mean(std::span<const double> x);
/// Population standard deviation.
double stddev(std::span<const double> x);
std::vector<double> detrend_mean(std::span<const double> x);
std::size_t next_pow2(std::size_t n);

std::vector<double> resample_cubic_spline(std::span<const double> x, double fs_in, double fs_out);

/// Butterworth band-pass design; `order` is the total (even) filter order, giving order/2 sections.
std::vector<Biquad> design_butterworth_bandpass(double fs, double lo, double hi, int order = 4);
/// Single causal pass through cascaded sections starting from rest.
std::vector<double> sosfilt(std::span<const Biquad> sections, std::span<const double> x);
/// Zero-phase forward-backward Butterworth band-pass.
std::vector<double> butterworth_bandpass(std::span<const double> x, double fs, double lo, double hi,
                                         int order = 4);

/// Sample Pearson correlation; 0 when either variance is below kVarianceEpsilon.
double pearson(std::span<const double> x, std::span<const double> y);

/// Hann-windowed zero-padded periodogram; power sums to the windowed signal's mean square.
Spectrum psd(std::span<const double> x, double fs);

/// Symmetric Hann window of length n.
std::vector<double> hann(std::size_t n);

}  // namespace rppg::dsp
