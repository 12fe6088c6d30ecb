// SPDX-License-Identifier: Apache-2.0
#include "rppg/chroma.hpp"

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "rppg/dsp.hpp"
#include "rppg/error.hpp"

namespace rppg::chroma {

namespace {

struct Rgb {
  std::span<const double> r, g, b;
};

Rgb split(std::span<const double> rgb) {
  if (rgb.size() % 3 != 0) fail(ErrorCode::ShapeMismatch, "rgb trace length must be a multiple of 3");
  const std::size_t t = rgb.size() / 3;
  return {rgb.subspan(0, t), rgb.subspan(t, t), rgb.subspan(2 * t, t)};
}

Eigen::Matrix3d yuv_matrix() {
  Eigen::Matrix3d m;
  m << 0.299, 0.587, 0.114,  //
      -0.492 * 0.299, -0.492 * 0.587, 0.492 * (1.0 - 0.114),  //
      0.877 * (1.0 - 0.299), -0.877 * 0.587, -0.877 * 0.114;
  return m;
}

std::vector<double> apply3(const Eigen::Matrix3d& m, std::span<const double> in) {
  const auto [r, g, b] = split(in);
  const std::size_t t = r.size();
  std::vector<double> out(3 * t);
  for (std::size_t i = 0; i < t; ++i) {
    const Eigen::Vector3d v = m * Eigen::Vector3d(r[i], g[i], b[i]);
    out[i] = v[0];
    out[t + i] = v[1];
    out[2 * t + i] = v[2];
  }
  return out;
}

double checked_mean(std::span<const double> x, const char* channel) {
  const double m = dsp::mean(x);
  if (m < dsp::kVarianceEpsilon) {
    fail(ErrorCode::ZeroMeanChannel, std::string("channel ") + channel + " has (near-)zero temporal mean");
  }
  return m;
}

// sigma(num)/sigma(den), or 0 when the denominator is flat.
double std_ratio(std::span<const double> num, std::span<const double> den) {
  const double sd = dsp::stddev(den);
  return sd < dsp::kVarianceEpsilon ? 0.0 : dsp::stddev(num) / sd;
}

}  // namespace

std::string_view to_string(ChromaKind kind) {
  switch (kind) {
    case ChromaKind::Green: return "green";
    case ChromaKind::Chrom: return "chrom";
    case ChromaKind::Pos: return "pos";
    case ChromaKind::YuvU: return "yuv_u";
    case ChromaKind::YuvV: return "yuv_v";
  }
  return "?";
}

std::vector<double> rgb_to_yuv(std::span<const double> rgb) { return apply3(yuv_matrix(), rgb); }

std::vector<double> yuv_to_rgb(std::span<const double> yuv) { return apply3(yuv_matrix().inverse(), yuv); }

std::vector<double> chrom_project(std::span<const double> rgb) {
  const auto [r, g, b] = split(rgb);
  const std::size_t t = r.size();
  if (t < 2) fail(ErrorCode::TooShortInput, "chrom_project needs at least 2 frames");
  const double mr = checked_mean(r, "R"), mg = checked_mean(g, "G"), mb = checked_mean(b, "B");
  std::vector<double> x(t), y(t);
  for (std::size_t i = 0; i < t; ++i) {
    const double rn = r[i] / mr, gn = g[i] / mg, bn = b[i] / mb;
    x[i] = 3.0 * rn - 2.0 * gn;
    y[i] = 1.5 * rn + gn - 1.5 * bn;
  }
  const double alpha = std_ratio(x, y);
  const double mx = dsp::mean(x), my = dsp::mean(y);
  std::vector<double> s(t);
  for (std::size_t i = 0; i < t; ++i) s[i] = (x[i] - mx) - alpha * (y[i] - my);
  return s;
}

std::vector<double> pos_project(std::span<const double> rgb, double fs, double win_s) {
  const auto [r, g, b] = split(rgb);
  const std::size_t t = r.size();
  const auto win = static_cast<std::size_t>(std::lround(win_s * fs));
  if (win < 2) fail(ErrorCode::InvalidConfig, "POS window must span at least 2 frames");
  if (win > t) {
    fail(ErrorCode::WindowTooLong,
         "POS window of " + std::to_string(win) + " frames exceeds trace length " + std::to_string(t));
  }
  std::vector<double> out(t, 0.0);
  std::vector<double> s1(win), s2(win);
  for (std::size_t start = 0; start + win <= t; ++start) {
    const double mr = checked_mean(r.subspan(start, win), "R");
    const double mg = checked_mean(g.subspan(start, win), "G");
    const double mb = checked_mean(b.subspan(start, win), "B");
    for (std::size_t i = 0; i < win; ++i) {
      const double rn = r[start + i] / mr, gn = g[start + i] / mg, bn = b[start + i] / mb;
      s1[i] = gn - bn;
      s2[i] = gn + bn - 2.0 * rn;
    }
    const double alpha = std_ratio(s1, s2);
    double hm = 0.0;
    for (std::size_t i = 0; i < win; ++i) hm += s1[i] + alpha * s2[i];
    hm /= static_cast<double>(win);
    for (std::size_t i = 0; i < win; ++i) out[start + i] += s1[i] + alpha * s2[i] - hm;
  }
  return out;
}

std::vector<double> green_channel(std::span<const double> rgb) { return dsp::detrend_mean(split(rgb).g); }

std::vector<double> project(ChromaKind kind, std::span<const double> rgb, double fs) {
  switch (kind) {
    case ChromaKind::Green: return green_channel(rgb);
    case ChromaKind::Chrom: return chrom_project(rgb);
    case ChromaKind::Pos: return pos_project(rgb, fs);
    case ChromaKind::YuvU: {
      auto yuv = rgb_to_yuv(rgb);
      const std::size_t t = rgb.size() / 3;
      return {yuv.begin() + static_cast<std::ptrdiff_t>(t), yuv.begin() + static_cast<std::ptrdiff_t>(2 * t)};
    }
    case ChromaKind::YuvV: {
      auto yuv = rgb_to_yuv(rgb);
      const std::size_t t = rgb.size() / 3;
      return {yuv.begin() + static_cast<std::ptrdiff_t>(2 * t), yuv.end()};
    }
  }
  return {};
}

}  // namespace rppg::chroma
