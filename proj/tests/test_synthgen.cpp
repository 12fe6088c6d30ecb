// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "rppg/dsp.hpp"
#include "rppg/synthgen.hpp"

using namespace rppg;
using namespace rppg::synth;
using rppg::testing::code_of;

namespace {

std::vector<double> as_double(std::span<const float> x) { return {x.begin(), x.end()}; }

}  // namespace

TEST_CASE("BVP spectrum") {
  SynthConfig cfg;
  cfg.rsa_depth = 0.0;
  const auto bvp = gen_bvp(cfg);
  REQUIRE(bvp.samples.size() == 300);
  CHECK(dsp::mean(bvp.samples) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(dsp::stddev(bvp.samples) == doctest::Approx(1.0));

  const auto s = dsp::psd(bvp.samples, cfg.fs);
  const std::size_t k1 = s.argmax_in(0.3, 15.0);
  CHECK(std::abs(s.freqs[k1] - 1.2) <= s.bin_width());
  const std::size_t k2 = s.argmax_in(1.8, 3.0);
  CHECK(std::abs(s.freqs[k2] - 2.4) <= s.bin_width());
  // Second harmonic amplitude 0.3 puts about 0.09 of the fundamental's power there.
  const double p1 = s.band_power(1.1, 1.3), p2 = s.band_power(2.3, 2.5);
  CHECK(p2 / p1 == doctest::Approx(0.09).epsilon(0.15));
}

TEST_CASE("generation is deterministic and seed dependent") {
  SynthConfig cfg;
  cfg.motion_noise_std = 1.0;
  cfg.white_noise_std = 0.5;
  cfg.illum_drift_amp = 2.0;
  const auto a = gen_roi_traces(gen_bvp(cfg), cfg);
  const auto b = gen_roi_traces(gen_bvp(cfg), cfg);
  CHECK(a.values == b.values);
  CHECK(gen_bvp(cfg).samples == gen_bvp(cfg).samples);
  cfg.seed = 2;
  CHECK(gen_roi_traces(gen_bvp(cfg), cfg).values != a.values);
}

TEST_CASE("noiseless green trace follows the pulse") {
  SynthConfig cfg;
  cfg.pulse_amp_rgb = {0.5, 1.0, 0.5};
  const auto bvp = gen_bvp(cfg);
  const auto tr = gen_roi_traces(bvp, cfg);
  const auto g = dsp::detrend_mean(as_double(tr.trace(3, 1)));
  CHECK(std::abs(dsp::pearson(g, bvp.samples)) > 0.999);
  for (std::size_t c = 0; c < 3; ++c) {
    const auto s = dsp::psd(dsp::detrend_mean(as_double(tr.trace(0, c))), cfg.fs);
    CHECK(std::abs(s.freqs[s.argmax_in(0.0, 15.0)] - 1.2) <= s.bin_width());
  }
}

TEST_CASE("illumination drift stays below the pulse band") {
  SynthConfig cfg;
  cfg.pulse_amp_rgb = {0.0, 0.0, 0.0};
  cfg.illum_drift_amp = 5.0;
  cfg.duration_s = 30.0;
  const auto tr = gen_roi_traces(gen_bvp(cfg), cfg);
  for (std::size_t c = 0; c < 3; ++c) {
    const auto s = dsp::psd(as_double(tr.trace(1, c)), cfg.fs);
    double total = 0;
    for (double p : s.power) total += p;
    CHECK(s.band_power(0.6, 3.0) < 0.05 * total);
  }
}

TEST_CASE("trace shape and range") {
  SynthConfig cfg;
  cfg.motion_noise_std = 10.0;
  cfg.white_noise_std = 40.0;
  const auto tr = gen_roi_traces(gen_bvp(cfg), cfg);
  CHECK(tr.n_rois == 25);
  CHECK(tr.frames == 300);
  CHECK(tr.values.size() == 25 * 3 * 300);
  for (float v : tr.values) {
    CHECK(std::isfinite(v));
    CHECK(v >= 0.0f);
    CHECK(v <= 255.0f);
  }
  REQUIRE(tr.label.has_value());
  CHECK(tr.label->hr_gt == 72.0);
}

TEST_CASE("motion walk is shared across channels of one ROI") {
  SynthConfig cfg;
  cfg.pulse_amp_rgb = {0.0, 0.0, 0.0};
  cfg.motion_noise_std = 1.0;
  const auto tr = gen_roi_traces(gen_bvp(cfg), cfg);
  for (std::size_t i = 0; i < tr.frames; ++i) {
    CHECK(tr.trace(4, 0)[i] == tr.trace(4, 2)[i]);
    CHECK(std::abs(tr.trace(4, 0)[i] - 128.0f) <= float(kMotionClip));
  }
  CHECK(as_double(tr.trace(4, 0)) != as_double(tr.trace(5, 0)));
}

TEST_CASE("config validation names the field") {
  SynthConfig cfg;
  cfg.hr_bpm = 30.0;
  try {
    validate(cfg);
    FAIL("expected InvalidConfig");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidConfig);
    CHECK(std::string(e.what()).find("hr_bpm") != std::string::npos);
  }
  cfg = {};
  cfg.n_rois = 0;
  CHECK(code_of([&] { validate(cfg); }) == ErrorCode::InvalidConfig);
  cfg = {};
  cfg.white_noise_std = -1;
  CHECK(code_of([&] { (void)gen_bvp(cfg); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("seed streams are distinct") {
  CHECK(mix_seed(1, 0) != mix_seed(1, 1));
  CHECK(mix_seed(1, 0) != mix_seed(2, 0));
  CHECK(mix_seed(7, 3) == mix_seed(7, 3));
}
