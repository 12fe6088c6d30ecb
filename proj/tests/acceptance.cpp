// SPDX-License-Identifier: Apache-2.0
// Acceptance checks, one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "cli.hpp"
#include "gradcheck.hpp"
#include "rppg/chroma.hpp"
#include "rppg/nn/checkpoint.hpp"
#include "rppg/nn/transformer.hpp"
#include "rppg/objectives.hpp"
#include "rppg/pipeline.hpp"
#include "rppg/stmap.hpp"
#include "rppg/synthgen.hpp"

using namespace rppg;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string sci(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---- shared desk-scale setup ---------------------------------------------

// Generator defaults: no drift, motion or sensor noise.
synth::SynthConfig desk_synth() {
  synth::SynthConfig c;
  c.duration_s = 10.0;
  return c;
}

pipe::ClipOptions desk_clips() {
  pipe::ClipOptions o;
  o.variant = stmap::Variant::PC;
  o.clip_len = 64;
  o.step = 26;
  o.rows = 64;
  return o;
}

pipe::TrainConfig desk_pretrain_cfg() {
  pipe::TrainConfig c = pipe::TrainConfig::defaults(pipe::Stage::Pretrain);
  c.epochs = 50;
  c.batch_size = 16;
  c.base_lr = 0.02;
  c.warmup_epochs = 10;
  c.mask_ratio = 0.8;
  c.lambda = 0.0;
  c.checkpoint_every = 0;
  c.seed = 6;
  return c;
}

pipe::TrainConfig desk_finetune_cfg(std::uint64_t seed) {
  pipe::TrainConfig c = pipe::TrainConfig::defaults(pipe::Stage::Finetune);
  c.epochs = 20;
  c.batch_size = 8;
  c.base_lr = 0.02;
  c.warmup_epochs = 5;
  c.checkpoint_every = 0;
  c.seed = seed;
  return c;
}

// 20 videos of 10 s cropped at T=64, s=26 give 10 clips each.
pipe::Dataset criterion6_data() {
  pipe::BenchmarkConfig b;
  b.name = "pretrain";
  b.subjects = 10;
  b.videos_per_subject = 2;
  b.base = desk_synth();
  b.seed = 6001;
  return pipe::make_dataset(b.name, pipe::synth_benchmark(b), desk_clips());
}

const pipe::TrainResult& criterion6_run() {
  static std::optional<pipe::TrainResult> run;
  if (!run) run = pipe::pretrain(criterion6_data(), pipe::ModelConfig::desk(), desk_pretrain_cfg());
  return *run;
}

// ---- 1 -------------------------------------------------------------------

Verdict gradient_oracle() {
  using TD = nn::Tensor<double>;
  using testing::grad_check;
  const pipe::ModelConfig desk = pipe::ModelConfig::desk(6);
  nn::EncoderConfig e = desk.encoder;
  e.depth = 2;
  nn::DecoderConfig d = desk.decoder;
  d.depth = 2;
  const std::size_t H = e.patch_size * e.seq_side;

  double worst = 0.0;
  std::size_t coords = 0;
  std::map<std::string, double> per_loss;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed + 77);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    stmap::STMap map(H, H, e.in_channels, 30.0, stmap::Variant::PC);
    for (auto& v : map.data) v = static_cast<float>(u01(rng));
    auto perturb = [&](nn::ParamStore<double>& store) {
      std::normal_distribution<double> n(0.0, 0.1);
      for (auto& s : store.slots())
        for (auto& v : s.tensor.mutable_values()) v += n(rng);
    };
    auto params = [](nn::ParamStore<double>& store) {
      std::vector<TD> out;
      for (auto& s : store.slots()) out.push_back(s.tensor);
      return out;
    };
    auto record = [&](const std::string& name, const testing::GradCheckResult& r) {
      worst = std::max(worst, r.max_rel_error);
      per_loss[name] = std::max(per_loss[name], r.max_rel_error);
      coords += r.checked;
    };

    {
      nn::ParamStore<double> store(seed);
      const nn::Encoder<double> enc(store, e);
      const nn::Decoder<double> dec(store, d, e.dim, true);
      perturb(store);
      obj::ReconTarget target = obj::ReconTarget::make(map, stmap::make_mask_plan(H, e.patch_size, 0.8, seed));
      const TD kept = nn::patch_rows<double>(target.gt_patches.values, target.gt_patches.cols, target.plan.kept_indices);
      auto pred = [&] { return dec(enc(kept, target.plan), target.plan); };
      record("pixel", grad_check(params(store), [&] { return obj::pixel_loss(pred(), target); }, seed, 3));
      record("rppg_recon", grad_check(params(store), [&] { return obj::rppg_recon_loss(pred(), target); }, seed, 3));
      record("pretrain", grad_check(params(store), [&] { return obj::pretrain_loss(pred(), target, {0.5}); }, seed, 3));
    }
    {
      nn::ParamStore<double> store(seed + 100);
      const nn::Encoder<double> enc(store, e);
      const nn::SignalHead<double> head(store, e, H);
      perturb(store);
      const auto patches = stmap::patchify(map, e.patch_size);
      const TD x = TD::constant(patches.rows, patches.cols, patches.values);
      const auto full = stmap::MaskPlan::full(e.seq_side, e.patch_size);
      const double hr = 60.0 + 8.0 * double(seed);
      std::vector<double> bvp(H);
      for (std::size_t t = 0; t < H; ++t)
        bvp[t] = std::sin(2 * std::numbers::pi * hr / 60.0 * double(t) / 30.0) + 0.1 * u01(rng);
      const TD gt = TD::constant(1, H, bvp);
      auto pred = [&] { return head(enc(x, full)); };
      record("neg_pearson", grad_check(params(store), [&] { return obj::negative_pearson_loss(pred(), gt); }, seed, 3));
      record("freq_ce", grad_check(params(store), [&] { return obj::frequency_ce_loss(pred(), 30.0, hr, {1.0, {}}); },
                                   seed, 3));
      record("finetune", grad_check(params(store), [&] { return obj::finetune_loss(pred(), gt, 30.0, hr, {0.5, {}}); },
                                    seed, 3));
    }
  }
  std::string detail = "max rel err " + sci(worst) + " over 10 seeds, " + std::to_string(coords) + " coordinates (";
  bool first = true;
  for (const auto& [k, v] : per_loss) {
    detail += (first ? "" : ", ") + k + " " + sci(v, 2);
    first = false;
  }
  return {worst < 1e-5, detail + ")"};
}

// ---- 2 -------------------------------------------------------------------

Verdict masking_algebra() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> pick_p(1, 16), pick_g(1, 16), pick_c(1, 9);
  std::uniform_real_distribution<double> pick_r(0.0, 1.0);
  std::size_t partition_fail = 0, count_fail = 0, identity_fail = 0, configs = 0, empty = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t P = pick_p(rng), G = pick_g(rng), H = P * G;
    double R = pick_r(rng);
    while (R <= 0.0) R = pick_r(rng);
    const std::size_t expect = static_cast<std::size_t>(std::floor((1.0 - R) * double(G * G)));
    ++configs;
    empty += expect == 0;
    const auto plan = stmap::make_mask_plan(H, P, R, std::uint64_t(i));
    if (plan.kept_indices.size() != expect) ++count_fail;
    std::vector<int> seen(G * G, 0);
    for (auto k : plan.kept_indices) k < seen.size() ? ++seen[k] : ++partition_fail;
    for (auto k : plan.masked_indices) k < seen.size() ? ++seen[k] : ++partition_fail;
    if (std::any_of(seen.begin(), seen.end(), [](int s) { return s != 1; })) ++partition_fail;
    const std::size_t C = pick_c(rng);
    stmap::STMap map(H, H, C, 30.0, stmap::Variant::Original);
    std::uniform_real_distribution<float> u(-3.0f, 3.0f);
    for (auto& v : map.data) v = u(rng);
    const auto back = stmap::unpatchify(stmap::patchify(map, P), H, H, C, P, map.fs, map.variant);
    if (back.data.size() != map.data.size() ||
        std::memcmp(back.data.data(), map.data.data(), map.data.size() * sizeof(float)) != 0)
      ++identity_fail;
  }
  const std::string detail = std::to_string(configs) + " configs (" + std::to_string(empty) +
                             " with nothing kept): partition failures " + std::to_string(partition_fail) +
                             ", count failures " + std::to_string(count_fail) + ", round-trip failures " +
                             std::to_string(identity_fail);
  return {partition_fail == 0 && count_fail == 0 && identity_fail == 0, detail};
}

// ---- 3 -------------------------------------------------------------------

Verdict chrominance_nulls() {
  std::mt19937_64 rng(33);
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> level(40.0, 220.0), gain(0.2, 5.0);
  double null_max = 0.0, scale_max = 0.0;
  const double fs = 30.0;
  const std::size_t T = 300;
  for (int w = 0; w < 100; ++w) {
    // A smooth positive intensity waveform shared by all channels.
    std::vector<double> c(T);
    const double base = level(rng);
    double walk = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      walk += 0.3 * n01(rng);
      c[t] = base + walk + 5.0 * std::sin(0.07 * double(t) + double(w));
    }
    std::vector<double> grey(3 * T);
    for (std::size_t k = 0; k < 3; ++k) std::copy(c.begin(), c.end(), grey.begin() + std::ptrdiff_t(k * T));
    for (double v : chroma::chrom_project(grey)) null_max = std::max(null_max, std::abs(v));
    for (double v : chroma::pos_project(grey, fs)) null_max = std::max(null_max, std::abs(v));

    synth::SynthConfig sc;
    sc.hr_bpm = 50.0 + double(w);
    sc.n_rois = 1;
    sc.motion_noise_std = 1.0;
    sc.white_noise_std = 0.5;
    sc.seed = 500 + std::uint64_t(w);
    const auto rgb = synth::gen_roi_traces(synth::gen_bvp(sc), sc).roi_rgb(0);
    const double k = gain(rng);
    std::vector<double> scaled(rgb);
    for (double& v : scaled) v *= k;
    const auto a1 = chroma::chrom_project(rgb), a2 = chroma::chrom_project(scaled);
    const auto b1 = chroma::pos_project(rgb, fs), b2 = chroma::pos_project(scaled, fs);
    for (std::size_t i = 0; i < a1.size(); ++i) scale_max = std::max(scale_max, std::abs(a1[i] - a2[i]));
    for (std::size_t i = 0; i < b1.size(); ++i) scale_max = std::max(scale_max, std::abs(b1[i] - b2[i]));
  }
  return {null_max <= 1e-9 && scale_max <= 1e-9,
          "grey-input max |out| " + sci(null_max) + ", scaling max change " + sci(scale_max) + " over 100 waveforms"};
}

// ---- 4 -------------------------------------------------------------------

// Plain periodogram by direct summation, mean removed, no window.
double snr_db(std::span<const double> x, double fs, double f0) {
  const std::size_t n = x.size();
  const double m = std::accumulate(x.begin(), x.end(), 0.0) / double(n);
  double in = 0.0, out = 0.0;
  for (std::size_t k = 1; k <= n / 2; ++k) {
    const double f = double(k) * fs / double(n);
    if (f < 0.6 || f > 3.0) continue;
    double re = 0.0, im = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double ph = 2.0 * std::numbers::pi * double(k) * double(t) / double(n);
      re += (x[t] - m) * std::cos(ph);
      im -= (x[t] - m) * std::sin(ph);
    }
    const double p = re * re + im * im;
    (std::abs(f - f0) <= 0.1 ? in : out) += p;
  }
  return 10.0 * std::log10(in / out);
}

Verdict noise_rejection() {
  std::vector<double> g, pos, chrom;
  std::mt19937_64 rng(44);
  std::uniform_real_distribution<double> hr(50.0, 150.0);
  for (int i = 0; i < 50; ++i) {
    synth::SynthConfig c;
    c.hr_bpm = hr(rng);
    c.n_rois = 1;
    c.motion_noise_std = 2.0;
    c.illum_drift_amp = 5.0;
    c.seed = 4000 + std::uint64_t(i);
    const auto bvp = synth::gen_bvp(c);
    const auto rgb = synth::gen_roi_traces(bvp, c).roi_rgb(0);
    const double f0 = bvp.hr_gt / 60.0;
    g.push_back(snr_db(chroma::green_channel(rgb), c.fs, f0));
    pos.push_back(snr_db(chroma::pos_project(rgb, c.fs), c.fs, f0));
    chrom.push_back(snr_db(chroma::chrom_project(rgb), c.fs, f0));
  }
  const double mg = median(g), mp = median(pos), mc = median(chrom);
  return {mp >= mg + 3.0 && mc >= mg + 3.0,
          "median SNR green " + sci(mg) + " dB, POS " + sci(mp) + " dB, CHROM " + sci(mc) + " dB"};
}

// ---- 5 -------------------------------------------------------------------

Verdict hr_estimator() {
  double worst = 0.0;
  for (double hr : {45.0, 60.0, 72.0, 95.0, 140.0}) {
    synth::SynthConfig c;
    c.hr_bpm = hr;
    c.duration_s = 10.0;
    c.fs = 30.0;
    const auto bvp = synth::gen_bvp(c);
    worst = std::max(worst, std::abs(pipe::estimate_hr(bvp.samples, bvp.fs) - hr));
  }
  std::mt19937_64 rng(55);
  std::uniform_real_distribution<double> pick(45.0, 150.0);
  std::size_t within = 0;
  double worst_map = 0.0;
  for (int i = 0; i < 50; ++i) {
    synth::SynthConfig c;
    c.hr_bpm = pick(rng);
    c.duration_s = 10.0;
    c.white_noise_std = 0.5;
    c.seed = 5000 + std::uint64_t(i);
    const auto traces = synth::gen_roi_traces(synth::gen_bvp(c), c);
    const auto map = stmap::build_base_stmap(traces, stmap::Variant::Filtered);
    std::vector<double> col(map.width, 0.0);
    for (std::size_t r = 0; r < map.height; ++r)
      for (std::size_t t = 0; t < map.width; ++t)
        for (std::size_t ch = 0; ch < map.channels; ++ch) col[t] += map.at(r, t, ch);
    const double err = std::abs(pipe::estimate_hr(col, map.fs) - c.hr_bpm);
    worst_map = std::max(worst_map, err);
    within += err <= 2.0;
  }
  return {worst <= 0.5 && within >= 45,
          "BVP worst error " + sci(worst) + " bpm; Filtered-STMap " + std::to_string(within) +
              "/50 within 2 bpm (worst " + sci(worst_map) + " bpm)"};
}

// ---- 6 -------------------------------------------------------------------

Verdict pretraining_learns() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& run = criterion6_run();
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  const auto& log = run.log;
  const double first = log.front().loss, last = log.back().loss;
  const std::size_t warmup = static_cast<std::size_t>(std::ceil(desk_pretrain_cfg().warmup_epochs));
  std::vector<double> ma;  // ma[k] averages epochs k+1 .. k+5
  for (std::size_t k = 0; k + 5 <= log.size(); ++k) {
    double s = 0.0;
    for (std::size_t j = k; j < k + 5; ++j) s += log[j].loss;
    ma.push_back(s / 5.0);
  }
  // Windows that lie entirely after warmup: first epoch > warmup.
  std::size_t rises = 0;
  double worst_rise = 0.0;
  for (std::size_t k = warmup; k + 1 < ma.size(); ++k) {
    if (ma[k + 1] > ma[k]) {
      ++rises;
      worst_rise = std::max(worst_rise, ma[k + 1] - ma[k]);
    }
  }
  const double ratio = last / first;
  return {log.size() == 50 && ratio < 0.6 && rises == 0,
          "200 clips, epoch-50/epoch-1 loss " + sci(last, 4) + "/" + sci(first, 4) + " = " + sci(ratio) +
              ", moving-average rises after warmup " + std::to_string(rises) +
              (rises ? " (largest " + sci(worst_rise) + ")" : "") + ", " + sci(minutes, 3) + " min"};
}

// ---- 7 -------------------------------------------------------------------

Verdict pretraining_helps() {
  const nn::Checkpoint& ckpt = criterion6_run().checkpoint;
  pipe::BenchmarkConfig b;
  b.name = "semi";
  b.subjects = 20;
  b.videos_per_subject = 3;
  b.base = desk_synth();
  b.seed = 7001;
  const pipe::Dataset data = pipe::make_dataset(b.name, pipe::synth_benchmark(b), desk_clips());
  const auto subjects = data.subjects();
  const auto fold = pipe::subject_folds(subjects, 5);
  std::set<std::string> held;
  for (std::size_t i = 0; i < subjects.size(); ++i)
    if (fold[i] == 0) held.insert(subjects[i]);
  const pipe::Dataset test = data.filter_subjects([&](const std::string& s) { return held.count(s) > 0; });
  const pipe::Dataset train = data.filter_subjects([&](const std::string& s) { return held.count(s) == 0; });

  int wins = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto split = pipe::semi_split(train, 0.1, seed);
    const auto cfg = desk_finetune_cfg(seed);
    const auto model = pipe::ModelConfig::desk();
    const auto warm = pipe::finetune(split.labeled, model, cfg, {pipe::InitMode::Partial, &ckpt});
    const auto cold = pipe::finetune(split.labeled, model, cfg);
    const auto ew = pipe::evaluate(warm.checkpoint, model, test, cfg.numeric_mode, true).report;
    const auto ec = pipe::evaluate(cold.checkpoint, model, test, cfg.numeric_mode, true).report;
    const bool win = ew.pearson_r > ec.pearson_r && ew.mean_ae < ec.mean_ae;
    wins += win;
    detail += (seed > 1 ? "; " : "") + std::string("seed ") + std::to_string(seed) + ": r " + sci(ew.pearson_r) +
              " vs " + sci(ec.pearson_r) + ", MAE " + sci(ew.mean_ae) + " vs " + sci(ec.mean_ae) + " bpm";
  }
  return {wins == 3, std::to_string(wins) + "/3 seed pairs favour pre-training (" + std::to_string(train.clips.size()) +
                         " train clips, " + std::to_string(test.videos.size()) + " test videos; " + detail + ")"};
}

// ---- 8 -------------------------------------------------------------------

Verdict hrv_rf() {
  double worst_rf = 0.0, worst_sum = 0.0;
  for (double hr : {60.0, 72.0, 90.0}) {
    synth::SynthConfig c;
    c.hr_bpm = hr;
    c.rf_hz = 0.25;
    c.duration_s = 60.0;
    const auto bvp = synth::gen_bvp(c);
    const auto est = pipe::estimate_hrv_rf(bvp.samples, bvp.fs);
    worst_rf = std::max(worst_rf, std::abs(est.rf_hz - 0.25));
    worst_sum = std::max(worst_sum, std::abs(est.lf_nu + est.hf_nu - 1.0));
  }
  return {worst_rf <= 0.02 && worst_sum <= 1e-9,
          "worst |rf - 0.25| " + sci(worst_rf) + " Hz, worst |lf_nu + hf_nu - 1| " + sci(worst_sum) +
              " over HR 60/72/90"};
}

// ---- 9 & 10 (through the command-line front end) ----------------------------

struct Scratch {
  fs::path root;
  explicit Scratch(const std::string& name) : root(fs::temp_directory_path() / ("rppg_acceptance_" + name)) {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Scratch() { fs::remove_all(root); }
  std::string operator/(const std::string& leaf) const { return (root / leaf).string(); }
};

int run_cli(std::vector<std::string> args, std::string* err_out = nullptr) {
  args.insert(args.begin(), "rppg");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (err_out) *err_out = err.str();
  return code;
}

std::vector<std::uint8_t> bytes_of(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

json small_run_config() {
  return json::parse(R"({
    "profile": "desk",
    "benchmark": {"subjects": 5, "videos_per_subject": 2, "base": {"duration_s": 10}},
    "pretrain": {"epochs": 2, "batch_size": 16, "base_lr": 0.02, "warmup_epochs": 1, "checkpoint_every": 1},
    "finetune": {"epochs": 2, "batch_size": 8, "base_lr": 0.02, "warmup_epochs": 1},
    "protocol": {"video_mean": true}
  })");
}

Verdict determinism_and_formats() {
  Scratch s("formats");
  {
    std::ofstream(s / "run.json") << small_run_config().dump();
  }
  const std::string cfg = s / "run.json";
  std::vector<std::string> problems;
  for (const char* run : {"a", "b"}) {
    const std::string r = run;
    if (run_cli({"--config", cfg, "synth", "--out", s / ("syn_" + r)}) != 0) problems.push_back("synth " + r);
    if (run_cli({"--config", cfg, "stmap", "--data", s / ("syn_" + r), "--out", s / ("map_" + r)}) != 0)
      problems.push_back("stmap " + r);
    if (run_cli({"--config", cfg, "pretrain", "--data", s / ("syn_" + r), "--out", s / ("pre_" + r)}) != 0)
      problems.push_back("pretrain " + r);
  }
  std::size_t compared = 0, differing = 0;
  for (const auto& [kind, dir] : {std::pair{".roit", "syn"}, std::pair{".stmp", "map"}, std::pair{".rmae", "pre"}}) {
    for (const auto& e : fs::directory_iterator(s / (std::string(dir) + "_a"))) {
      if (e.path().extension() != kind) continue;
      ++compared;
      const auto other = s / (std::string(dir) + "_b/" + e.path().filename().string());
      if (bytes_of(e.path().string()) != bytes_of(other)) ++differing;
    }
  }

  // Damaged copies of each format must raise the matching error.
  std::size_t error_cases = 0, wrong_errors = 0;
  auto expect = [&](ErrorCode want, const std::function<void()>& f) {
    ++error_cases;
    try {
      f();
      ++wrong_errors;
    } catch (const Error& e) {
      if (e.code() != want) ++wrong_errors;
    }
  };
  const auto roit = bytes_of(s / "syn_a/s000_v00.roit");
  const auto stmp = bytes_of(s / "map_a/s000_v00_0.stmp");
  const auto rmae = bytes_of(s / "pre_a/checkpoint.rmae");
  const std::vector<std::pair<std::vector<std::uint8_t>, std::function<void(std::span<const std::uint8_t>)>>> formats{
      {roit, [](auto b) { stmap::decode_traces(b); }},
      {stmp, [](auto b) { stmap::decode_stmap(b); }},
      {rmae, [](auto b) { nn::decode_checkpoint(b); }}};
  for (const auto& [good, decode] : formats) {
    if (good.size() < 16) {
      problems.push_back("missing reference file");
      continue;
    }
    auto magic = good;
    magic[0] ^= 0xFF;
    expect(ErrorCode::BadMagic, [&] { decode(magic); });
    auto version = good;
    version[4] = 0x7F;
    expect(ErrorCode::VersionMismatch, [&] { decode(version); });
    for (std::size_t cut : {std::size_t(6), good.size() / 2, good.size() - 1}) {
      const std::vector<std::uint8_t> shortened(good.begin(), good.begin() + std::ptrdiff_t(cut));
      expect(ErrorCode::TruncatedFile, [&] { decode(shortened); });
    }
  }
  std::string cli_err;
  std::ofstream(s / "junk.rmae") << "JUNKJUNKJUNK";
  const int junk_code =
      run_cli({"--config", cfg, "eval", "--data", s / "syn_a", "--checkpoint", s / "junk.rmae", "--out", s / "ev"},
              &cli_err);
  if (junk_code != 3 || cli_err.find("bad_magic") == std::string::npos) problems.push_back("eval on junk checkpoint");

  std::string detail = std::to_string(compared) + " ROIT/STMP/RMAE payloads rerun, " + std::to_string(differing) +
                       " differ; " + std::to_string(error_cases) + " damaged files, " + std::to_string(wrong_errors) +
                       " wrong or missing errors";
  for (const auto& p : problems) detail += "; failed: " + p;
  return {problems.empty() && differing == 0 && compared >= 3 && wrong_errors == 0, detail};
}

Verdict ablation_harness() {
  Scratch s("ablate");
  {
    std::ofstream(s / "run.json") << small_run_config().dump();
  }
  const std::string cfg = s / "run.json";
  std::vector<std::string> problems;
  if (run_cli({"--config", cfg, "synth", "--out", s / "syn"}) != 0) problems.push_back("synth");
  auto check_csv = [&](const std::string& path, const std::vector<std::string>& values) {
    std::ifstream in(path);
    std::vector<std::vector<std::string>> rows;
    for (std::string line; std::getline(in, line);) {
      std::vector<std::string> cells;
      std::stringstream ss(line);
      for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
      rows.push_back(cells);
    }
    if (rows.size() != values.size() + 1) return false;
    const std::size_t width = rows[0].size();
    for (std::size_t i = 1; i < rows.size(); ++i) {
      if (rows[i].size() != width || rows[i][1] != values[i - 1]) return false;
      for (std::size_t c = 2; c < width; ++c) {
        char* end = nullptr;
        const double v = std::strtod(rows[i][c].c_str(), &end);
        if (end == rows[i][c].c_str() || *end != '\0' || !std::isfinite(v)) return false;
      }
    }
    return true;
  };
  const std::vector<std::string> ratios{"0.5", "0.6", "0.7", "0.8", "0.9"};
  const std::vector<std::string> variants{"Original", "PC"};
  if (run_cli({"--config", cfg, "ablate", "--data", s / "syn", "--axis", "mask_ratio", "--values",
               "0.5,0.6,0.7,0.8,0.9", "--out", s / "ratio"}) != 0)
    problems.push_back("mask_ratio sweep exited non-zero");
  else if (!check_csv(s / "ratio/ablation_mask_ratio.csv", ratios))
    problems.push_back("mask_ratio CSV malformed");
  if (run_cli({"--config", cfg, "ablate", "--data", s / "syn", "--axis", "variant", "--values", "Original,PC", "--out",
               s / "variant"}) != 0)
    problems.push_back("variant sweep exited non-zero");
  else if (!check_csv(s / "variant/ablation_variant.csv", variants))
    problems.push_back("variant CSV malformed");
  std::string detail = "mask_ratio x5 and variant x2 sweeps";
  for (const auto& p : problems) detail += "; " + p;
  if (problems.empty()) detail += " completed with one well-formed row per grid point";
  return {problems.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, Verdict (*)()>> criteria{
      {"gradient oracle", gradient_oracle},     {"masking algebra", masking_algebra},
      {"chrominance nulls", chrominance_nulls}, {"noise rejection", noise_rejection},
      {"HR estimator", hr_estimator},           {"pre-training learns", pretraining_learns},
      {"pre-training helps", pretraining_helps}, {"HRV/RF", hrv_rf},
      {"determinism and formats", determinism_and_formats}, {"ablation harness", ablation_harness}};
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = int(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !v.pass;
    std::printf("%s criterion %d (%s): %s [%.1f s]\n", v.pass ? "PASS" : "FAIL", id, criteria[i].first,
                v.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
