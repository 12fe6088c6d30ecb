// SPDX-License-Identifier: Apache-2.0
#include "rppg/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <string>

#include <unsupported/Eigen/FFT>

#include "rppg/error.hpp"

namespace rppg::dsp {

namespace {

using cplx = std::complex<double>;

std::vector<double> odd_extend(std::span<const double> x, std::size_t pad) {
  const std::size_t n = x.size();
  std::vector<double> out;
  out.reserve(n + 2 * pad);
  for (std::size_t i = pad; i >= 1; --i) out.push_back(2.0 * x[0] - x[i]);
  out.insert(out.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= pad; ++i) out.push_back(2.0 * x[n - 1] - x[n - 1 - i]);
  return out;
}

// Steady-state section states for a constant input `u` (the response to a step).
void steady_state(std::span<const Biquad> sections, double u, std::vector<std::array<double, 2>>& z) {
  z.resize(sections.size());
  for (std::size_t s = 0; s < sections.size(); ++s) {
    const auto& q = sections[s];
    const double y = u * (q.b[0] + q.b[1] + q.b[2]) / (1.0 + q.a[0] + q.a[1]);
    z[s][1] = q.b[2] * u - q.a[1] * y;
    z[s][0] = y - q.b[0] * u;
    u = y;
  }
}

void run_sections(std::span<const Biquad> sections, std::vector<double>& x,
                  std::vector<std::array<double, 2>>& z) {
  for (std::size_t s = 0; s < sections.size(); ++s) {
    const auto& q = sections[s];
    double z1 = z[s][0], z2 = z[s][1];
    for (double& v : x) {
      const double in = v;
      const double y = q.b[0] * in + z1;
      z1 = q.b[1] * in - q.a[0] * y + z2;
      z2 = q.b[2] * in - q.a[1] * y;
      v = y;
    }
    z[s] = {z1, z2};
  }
}

cplx section_response(const Biquad& q, cplx zinv) {
  const cplx num = q.b[0] + zinv * (q.b[1] + zinv * q.b[2]);
  const cplx den = 1.0 + zinv * (q.a[0] + zinv * q.a[1]);
  return num / den;
}

}  // namespace

double mean(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

double stddev(std::span<const double> x) {
  if (x.empty()) return 0.0;
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(x.size()));
}

std::vector<double> detrend_mean(std::span<const double> x) {
  const double m = mean(x);
  std::vector<double> out(x.begin(), x.end());
  for (double& v : out) v -= m;
  return out;
}

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// ---------------------------------------------------------------------------
// Splines

CubicSpline::CubicSpline(std::vector<double> x, std::vector<double> y)
    : x_(std::move(x)), y_(std::move(y)) {
  const std::size_t n = x_.size();
  if (n != y_.size()) fail(ErrorCode::LengthMismatch, "spline knots and values differ in length");
  if (n < 2) fail(ErrorCode::TooShortInput, "spline needs at least two knots");
  for (std::size_t i = 1; i < n; ++i) {
    if (!(x_[i] > x_[i - 1])) fail(ErrorCode::InvalidConfig, "spline knots must be strictly increasing");
  }
  m_.assign(n, 0.0);
  if (n < 3) return;
  // Thomas algorithm on the interior second derivatives.
  std::vector<double> c(n, 0.0), d(n, 0.0);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double h0 = x_[i] - x_[i - 1];
    const double h1 = x_[i + 1] - x_[i];
    const double rhs = 6.0 * ((y_[i + 1] - y_[i]) / h1 - (y_[i] - y_[i - 1]) / h0);
    const double diag = 2.0 * (h0 + h1) - h0 * c[i - 1];
    c[i] = h1 / diag;
    d[i] = (rhs - h0 * d[i - 1]) / diag;
  }
  for (std::size_t i = n - 2; i >= 1; --i) {
    m_[i] = d[i] - c[i] * m_[i + 1];
  }
}

double CubicSpline::operator()(double t) const {
  const std::size_t n = x_.size();
  std::size_t hi = static_cast<std::size_t>(std::upper_bound(x_.begin(), x_.end(), t) - x_.begin());
  hi = std::clamp<std::size_t>(hi, 1, n - 1);
  const std::size_t lo = hi - 1;
  const double h = x_[hi] - x_[lo];
  const double a = (x_[hi] - t) / h;
  const double b = (t - x_[lo]) / h;
  return a * y_[lo] + b * y_[hi] + ((a * a * a - a) * m_[lo] + (b * b * b - b) * m_[hi]) * h * h / 6.0;
}

std::vector<double> resample_cubic_spline(std::span<const double> x, double fs_in, double fs_out) {
  if (x.size() < 4) fail(ErrorCode::TooShortInput, "resample needs at least 4 samples");
  if (!(fs_in > 0.0) || !(fs_out > 0.0)) fail(ErrorCode::InvalidConfig, "sample rates must be positive");
  if (fs_in == fs_out) return {x.begin(), x.end()};
  std::vector<double> knots(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) knots[i] = static_cast<double>(i) / fs_in;
  const CubicSpline spline(std::move(knots), {x.begin(), x.end()});
  const double span_s = static_cast<double>(x.size() - 1) / fs_in;
  const auto n_out = static_cast<std::size_t>(std::floor(span_s * fs_out + 1e-9)) + 1;
  std::vector<double> out(n_out);
  for (std::size_t i = 0; i < n_out; ++i) out[i] = spline(static_cast<double>(i) / fs_out);
  return out;
}

// ---------------------------------------------------------------------------
// Butterworth band-pass

std::vector<Biquad> design_butterworth_bandpass(double fs, double lo, double hi, int order) {
  if (!(lo > 0.0) || !(lo < hi) || !(hi < fs / 2.0)) {
    fail(ErrorCode::InvalidBand, "band-pass requires 0 < lo < hi < fs/2, got [" + std::to_string(lo) +
                                     ", " + std::to_string(hi) + "] at fs " + std::to_string(fs));
  }
  if (order < 2 || order % 2 != 0) fail(ErrorCode::InvalidConfig, "band-pass order must be even and >= 2");
  const int n_proto = order / 2;
  const double pi = std::numbers::pi;
  const double k = 2.0 * fs;
  const double w1 = k * std::tan(pi * lo / fs);
  const double w2 = k * std::tan(pi * hi / fs);
  const double w0 = std::sqrt(w1 * w2);
  const double bw = w2 - w1;

  std::vector<cplx> upper;  // digital poles with positive imaginary part
  std::vector<cplx> real_poles;
  for (int i = 0; i < n_proto; ++i) {
    const cplx p = std::polar(1.0, pi * (2.0 * i + n_proto + 1) / (2.0 * n_proto));
    const cplx half = p * bw / 2.0;
    const cplx root = std::sqrt(half * half - w0 * w0);
    for (const cplx s : {half + root, half - root}) {
      const cplx z = (k + s) / (k - s);
      if (std::abs(z.imag()) < 1e-12) {
        real_poles.push_back({z.real(), 0.0});
      } else if (z.imag() > 0.0) {
        upper.push_back(z);
      }
    }
  }

  std::vector<Biquad> sections;
  for (const cplx z : upper) {
    sections.push_back({{1.0, 0.0, -1.0}, {-2.0 * z.real(), std::norm(z)}});
  }
  std::sort(real_poles.begin(), real_poles.end(), [](cplx a, cplx b) { return a.real() < b.real(); });
  for (std::size_t i = 0; i + 1 < real_poles.size(); i += 2) {
    const double p0 = real_poles[i].real(), p1 = real_poles[i + 1].real();
    sections.push_back({{1.0, 0.0, -1.0}, {-(p0 + p1), p0 * p1}});
  }

  // Unity gain at the (pre-warped) geometric centre frequency.
  const double omega0 = 2.0 * std::atan(w0 / k);
  const cplx zinv = std::polar(1.0, -omega0);
  cplx h = 1.0;
  for (const auto& s : sections) h *= section_response(s, zinv);
  const double gain = 1.0 / std::abs(h);
  for (double& b : sections.front().b) b *= gain;
  return sections;
}

std::vector<double> sosfilt(std::span<const Biquad> sections, std::span<const double> x) {
  std::vector<double> y(x.begin(), x.end());
  std::vector<std::array<double, 2>> z(sections.size(), {0.0, 0.0});
  run_sections(sections, y, z);
  return y;
}

std::vector<double> butterworth_bandpass(std::span<const double> x, double fs, double lo, double hi,
                                         int order) {
  const auto sections = design_butterworth_bandpass(fs, lo, hi, order);
  const std::size_t n = x.size();
  if (n < 2) fail(ErrorCode::TooShortInput, "band-pass needs at least 2 samples");
  // Odd extension of about three low-cutoff periods keeps edge transients out of the signal.
  const auto wanted = static_cast<std::size_t>(std::lround(3.0 * fs / lo));
  const std::size_t pad = std::min(n - 1, wanted);
  std::vector<double> ext = odd_extend(x, pad);

  std::vector<std::array<double, 2>> z;
  steady_state(sections, ext.front(), z);
  run_sections(sections, ext, z);
  std::reverse(ext.begin(), ext.end());
  steady_state(sections, ext.front(), z);
  run_sections(sections, ext, z);
  std::reverse(ext.begin(), ext.end());
  return {ext.begin() + static_cast<std::ptrdiff_t>(pad), ext.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

// ---------------------------------------------------------------------------
// Correlation and spectra

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    fail(ErrorCode::LengthMismatch,
         "pearson: lengths " + std::to_string(x.size()) + " and " + std::to_string(y.size()));
  }
  if (x.size() < 2) fail(ErrorCode::TooShortInput, "pearson needs at least 2 samples");
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  const auto n = static_cast<double>(x.size());
  if (sxx / n < kVarianceEpsilon || syy / n < kVarianceEpsilon) return 0.0;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> hann(std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (n < 2) return w;
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n - 1));
  }
  return w;
}

Spectrum psd(std::span<const double> x, double fs) {
  if (x.size() < 16) fail(ErrorCode::TooShortInput, "psd needs at least 16 samples");
  const std::size_t n = x.size();
  const std::size_t nfft = next_pow2(n);
  const double m = mean(x);
  const auto w = hann(n);
  std::vector<double> buf(nfft, 0.0);
  for (std::size_t i = 0; i < n; ++i) buf[i] = (x[i] - m) * w[i];

  Eigen::FFT<double> fft;
  std::vector<cplx> spec;
  fft.fwd(spec, buf);

  Spectrum out;
  out.fs = fs;
  const std::size_t half = nfft / 2;
  out.freqs.resize(half + 1);
  out.power.resize(half + 1);
  const double scale = 1.0 / (static_cast<double>(nfft) * static_cast<double>(n));
  for (std::size_t k = 0; k <= half; ++k) {
    out.freqs[k] = static_cast<double>(k) * fs / static_cast<double>(nfft);
    const double fold = (k == 0 || k == half) ? 1.0 : 2.0;
    out.power[k] = fold * std::norm(spec[k]) * scale;
  }
  return out;
}

std::size_t Spectrum::argmax_in(double lo, double hi) const {
  std::size_t best = freqs.size();
  for (std::size_t k = 0; k < freqs.size(); ++k) {
    if (freqs[k] < lo || freqs[k] > hi) continue;
    if (best == freqs.size() || power[k] > power[best]) best = k;
  }
  if (best == freqs.size()) fail(ErrorCode::InvalidBand, "no spectral bins inside the requested band");
  return best;
}

double Spectrum::band_power(double lo, double hi) const {
  double s = 0.0;
  for (std::size_t k = 0; k < freqs.size(); ++k) {
    if (freqs[k] >= lo && freqs[k] <= hi) s += power[k];
  }
  return s;
}

double Spectrum::peak_frequency(double lo, double hi) const {
  const std::size_t k = argmax_in(lo, hi);
  if (k == 0 || k + 1 >= power.size()) return freqs[k];
  // Log-domain parabola: a Hann main lobe is close to Gaussian in log power.
  constexpr double floor = 1e-300;
  const double a = std::log(std::max(power[k - 1], floor));
  const double b = std::log(std::max(power[k], floor));
  const double c = std::log(std::max(power[k + 1], floor));
  const double den = a - 2.0 * b + c;
  double delta = 0.0;
  if (std::abs(den) > 1e-15) delta = std::clamp(0.5 * (a - c) / den, -0.5, 0.5);
  return (static_cast<double>(k) + delta) * bin_width();
}

}  // namespace rppg::dsp
