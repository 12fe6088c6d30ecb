// SPDX-License-Identifier: Apache-2.0
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "rppg/binary_io.hpp"
#include "rppg/dsp.hpp"
#include "rppg/pipeline.hpp"

#ifndef RPPG_GIT_DESCRIBE
#define RPPG_GIT_DESCRIBE "unknown"
#endif

namespace rppg::pipe {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::Pretrain: return "pretrain";
    case Stage::Finetune: return "finetune";
    case Stage::Probe: return "probe";
  }
  return "?";
}

std::optional<Stage> parse_stage(std::string_view name) {
  for (Stage s : {Stage::Pretrain, Stage::Finetune, Stage::Probe})
    if (to_string(s) == name) return s;
  return std::nullopt;
}

TrainConfig TrainConfig::defaults(Stage stage) {
  TrainConfig c;
  c.stage = stage;
  switch (stage) {
    case Stage::Pretrain: break;
    case Stage::Finetune:
      c.epochs = 20;
      c.beta2 = 0.9999;
      c.warmup_epochs = 5;
      break;
    case Stage::Probe:
      c.epochs = 50;
      c.batch_size = 512;
      c.base_lr = 0.01;
      c.weight_decay = 0.0;
      c.beta2 = 0.999;
      c.warmup_epochs = 10;
      break;
  }
  return c;
}

void TrainConfig::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) fail(ErrorCode::InvalidConfig, what);
  };
  need(epochs >= 1, "epochs must be >= 1");
  need(batch_size >= 1, "batch_size must be >= 1");
  need(base_lr > 0.0 && std::isfinite(base_lr), "base_lr must be positive");
  need(warmup_epochs >= 0.0, "warmup_epochs must be >= 0");
  need(beta1 >= 0.0 && beta1 < 1.0, "betas[0] must lie in [0, 1)");
  need(beta2 >= 0.0 && beta2 < 1.0, "betas[1] must lie in [0, 1)");
  need(weight_decay >= 0.0, "weight_decay must be >= 0");
  need(layer_decay > 0.0 && layer_decay <= 1.0, "layer_decay must lie in (0, 1]");
  need(mask_ratio > 0.0 && mask_ratio < 1.0, "mask_ratio must lie in (0, 1)");
  need(lambda >= 0.0 && lambda <= 1.0, "lambda must lie in [0, 1]");
  need(gamma >= 0.0 && gamma <= 1.0, "gamma must lie in [0, 1]");
}

ModelConfig ModelConfig::base(std::size_t channels) {
  ModelConfig m;
  m.encoder.in_channels = m.decoder.in_channels = channels;
  return m;
}

ModelConfig ModelConfig::desk(std::size_t channels) {
  ModelConfig m;
  m.encoder = {4, 64, 4, 8, channels, true, 8};
  m.decoder = {2, 32, 4, 8, channels, 8};
  return m;
}

void ModelConfig::validate() const {
  encoder.validate();
  decoder.validate();
  if (encoder.patch_size != decoder.patch_size || encoder.seq_side != decoder.seq_side ||
      encoder.in_channels != decoder.in_channels) {
    fail(ErrorCode::InvalidConfig, "encoder and decoder disagree on patch size, grid or channels");
  }
}

ModelConfig fit_model(ModelConfig model, const Dataset& data) {
  if (data.clips.empty()) fail(ErrorCode::InvalidConfig, "dataset '" + data.name + "' has no clips");
  const auto& m = data.clips.front().map;
  if (m.height != m.width) {
    fail(ErrorCode::ShapeMismatch, "model input must be square, got " + std::to_string(m.height) + "x" +
                                       std::to_string(m.width));
  }
  if (m.height % model.encoder.patch_size != 0) {
    fail(ErrorCode::IndivisiblePatchSize, "map side " + std::to_string(m.height) + " is not a multiple of patch size " +
                                              std::to_string(model.encoder.patch_size));
  }
  model.encoder.in_channels = model.decoder.in_channels = m.channels;
  model.encoder.seq_side = model.decoder.seq_side = m.height / model.encoder.patch_size;
  model.decoder.patch_size = model.encoder.patch_size;
  model.validate();
  return model;
}

std::vector<std::string> Dataset::subjects() const {
  std::set<std::string> s;
  for (const auto& c : clips) s.insert(c.subject);
  return {s.begin(), s.end()};
}

Dataset Dataset::filter_subjects(const std::function<bool(const std::string&)>& keep) const {
  Dataset out;
  out.name = name;
  out.options = options;
  for (const auto& v : videos)
    if (keep(v.subject)) out.videos.push_back(v);
  for (const auto& c : clips)
    if (keep(c.subject)) out.clips.push_back(c);
  return out;
}

namespace {

std::string options_key(const ClipOptions& o) {
  const json j = {{"variant", stmap::to_string(o.variant)},
                  {"aug", o.build.aug_channels == stmap::AugChannels::Yuv ? 1 : 0},
                  {"lo", o.build.band_lo_hz},
                  {"hi", o.build.band_hi_hz},
                  {"order", o.build.filter_order},
                  {"pos", o.build.pos_window_s}};
  return j.dump();
}

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t h = 1469598103934665603ull) {
  for (auto b : bytes) {
    h ^= b;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ull) {
  return fnv1a({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()}, h);
}

std::string hex(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[i] = digits[v & 15];
  return s;
}

// Full-video map, optionally through the on-disk cache.
stmap::STMap video_map(const VideoRecord& v, const ClipOptions& opts, const std::string& cache_dir) {
  if (cache_dir.empty()) return stmap::build_stmap(v.traces, opts.variant, opts.build);
  const auto bytes = stmap::encode_traces(v.traces);
  const std::string key = hex(fnv1a(options_key(opts), fnv1a(bytes)));
  const fs::path file = fs::path(cache_dir) / (key + ".stmp");
  std::error_code ec;
  if (fs::exists(file, ec)) {
    try {
      return stmap::read_stmap(file.string());
    } catch (const Error&) {
      // Unreadable cache entries are rebuilt below.
    }
  }
  stmap::STMap map = stmap::build_stmap(v.traces, opts.variant, opts.build);
  fs::create_directories(cache_dir, ec);
  const fs::path tmp = file.string() + ".tmp";
  try {
    stmap::write_stmap(tmp.string(), map);
    fs::rename(tmp, file, ec);
  } catch (const Error&) {
    fs::remove(tmp, ec);
  }
  return map;
}

Dataset build_dataset(std::string name, std::vector<VideoRecord> videos, const ClipOptions& opts,
                      const std::string& cache_dir) {
  Dataset d;
  d.name = std::move(name);
  d.options = opts;
  for (const auto& v : videos) {
    const stmap::STMap full = video_map(v, opts, cache_dir);
    const auto set = stmap::crop_windows(full, opts.clip_len, opts.step);
    std::vector<std::vector<double>> labels;
    if (v.traces.label) labels = stmap::crop_label(v.traces.label->samples, opts.clip_len, opts.step);
    for (std::size_t k = 0; k < set.clips.size(); ++k) {
      Clip c;
      c.id = v.id + "#" + std::to_string(k);
      c.video = v.id;
      c.subject = v.subject;
      c.start = set.starts[k];
      c.video_frames = v.traces.frames;
      c.map = stmap::resize_rows(set.clips[k], opts.height());
      if (v.traces.label) {
        c.bvp = labels[k];
        c.hr_gt = v.traces.label->hr_gt;
        c.labeled = true;
      }
      d.clips.push_back(std::move(c));
    }
  }
  d.videos = std::move(videos);
  return d;
}

}  // namespace

Dataset make_dataset(std::string name, std::vector<VideoRecord> videos, const ClipOptions& opts) {
  return build_dataset(std::move(name), std::move(videos), opts, "");
}

Dataset load_dataset(const std::string& dir, const ClipOptions& opts) {
  const fs::path manifest = fs::path(dir) / "manifest.json";
  std::ifstream in(manifest);
  if (!in) fail(ErrorCode::IoError, "cannot open " + manifest.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidConfig, manifest.string() + ": " + e.what());
  }
  if (!j.contains("videos") || !j["videos"].is_array()) {
    fail(ErrorCode::InvalidConfig, manifest.string() + ": missing 'videos' array");
  }
  std::vector<VideoRecord> videos;
  for (const auto& e : j["videos"]) {
    VideoRecord v;
    try {
      v.id = e.at("id").get<std::string>();
      v.subject = e.value("subject", std::string());
      v.traces = stmap::read_traces((fs::path(dir) / e.at("file").get<std::string>()).string());
    } catch (const json::exception& ex) {
      fail(ErrorCode::InvalidConfig, manifest.string() + ": " + ex.what());
    }
    videos.push_back(std::move(v));
  }
  const char* cache = std::getenv("RPPG_LAB_CACHE");
  const std::string name = j.value("name", fs::path(dir).filename().string());
  return build_dataset(name, std::move(videos), opts, cache ? cache : "");
}

std::vector<VideoRecord> synth_benchmark(const BenchmarkConfig& cfg) {
  std::vector<VideoRecord> out;
  for (std::size_t s = 0; s < cfg.subjects; ++s) {
    std::mt19937_64 rng(synth::mix_seed(cfg.seed, s));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    // A subject keeps its skin response across videos.
    const double gain = 0.6 + 0.8 * u(rng);
    std::array<double, 3> amp = cfg.base.pulse_amp_rgb;
    for (auto& a : amp) a *= gain * (0.85 + 0.3 * u(rng));
    char sid[32];
    std::snprintf(sid, sizeof sid, "s%03zu", s);
    for (std::size_t v = 0; v < cfg.videos_per_subject; ++v) {
      synth::SynthConfig c = cfg.base;
      c.pulse_amp_rgb = amp;
      c.hr_bpm = cfg.hr_lo_bpm + (cfg.hr_hi_bpm - cfg.hr_lo_bpm) * u(rng);
      c.rf_hz = cfg.rf_lo_hz + (cfg.rf_hi_hz - cfg.rf_lo_hz) * u(rng);
      c.seed = synth::mix_seed(cfg.seed ^ 0x9e3779b97f4a7c15ull, s * 1009 + v);
      VideoRecord r;
      char vid[48];
      std::snprintf(vid, sizeof vid, "%s_v%02zu", sid, v);
      r.id = vid;
      r.subject = sid;
      r.traces = synth::gen_roi_traces(synth::gen_bvp(c), c);
      out.push_back(std::move(r));
    }
  }
  return out;
}

SemiSplit semi_split(const Dataset& data, double labeled_fraction, std::uint64_t seed) {
  if (!(labeled_fraction > 0.0 && labeled_fraction < 1.0)) {
    fail(ErrorCode::InvalidConfig, "labeled fraction must lie in (0, 1)");
  }
  bool by_subject = !data.clips.empty();
  for (const auto& c : data.clips) by_subject = by_subject && !c.subject.empty();
  std::vector<std::string> units;
  if (by_subject) {
    units = data.subjects();
  } else {
    for (const auto& c : data.clips) units.push_back(c.id);
  }
  const auto k = static_cast<std::size_t>(std::floor(labeled_fraction * double(units.size()) + 1e-9));
  if (k == 0 || k >= units.size()) {
    fail(ErrorCode::EmptySide, "labeled fraction " + std::to_string(labeled_fraction) + " of " +
                                   std::to_string(units.size()) + (by_subject ? " subjects" : " clips") +
                                   " leaves one side empty");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(units.begin(), units.end(), rng);
  const std::set<std::string> chosen(units.begin(), units.begin() + static_cast<std::ptrdiff_t>(k));
  SemiSplit out;
  out.labeled.name = data.name + "/labeled";
  out.unlabeled.name = data.name + "/unlabeled";
  out.labeled.options = out.unlabeled.options = data.options;
  for (const auto& c : data.clips) {
    const bool lab = chosen.count(by_subject ? c.subject : c.id) > 0;
    (lab ? out.labeled : out.unlabeled).clips.push_back(c);
  }
  for (const auto& v : data.videos) {
    if (by_subject) (chosen.count(v.subject) ? out.labeled : out.unlabeled).videos.push_back(v);
  }
  for (auto& c : out.unlabeled.clips) {
    c.labeled = false;
    c.bvp.clear();
  }
  return out;
}

std::vector<std::size_t> subject_folds(const std::vector<std::string>& subjects, std::size_t folds) {
  if (folds < 2) fail(ErrorCode::InvalidConfig, "need at least 2 folds");
  if (subjects.size() < folds) {
    fail(ErrorCode::EmptySide, std::to_string(subjects.size()) + " subjects cannot fill " + std::to_string(folds) +
                                   " folds");
  }
  std::vector<std::size_t> order(subjects.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto ha = fnv1a(subjects[a]), hb = fnv1a(subjects[b]);
    return ha != hb ? ha < hb : subjects[a] < subjects[b];
  });
  std::vector<std::size_t> fold(subjects.size());
  for (std::size_t r = 0; r < order.size(); ++r) fold[order[r]] = r % folds;
  return fold;
}

MetricReport compute_metrics(std::span<const double> pred, std::span<const double> gt,
                             std::span<const std::string> ids) {
  if (pred.size() != gt.size() || (!ids.empty() && ids.size() != pred.size())) {
    fail(ErrorCode::LengthMismatch, "metrics: " + std::to_string(pred.size()) + " predictions for " +
                                        std::to_string(gt.size()) + " labels");
  }
  if (pred.size() < 2) fail(ErrorCode::TooShortInput, "metrics need at least two samples");
  MetricReport r;
  std::vector<double> e(pred.size());
  double sa = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    e[i] = pred[i] - gt[i];
    sa += std::abs(e[i]);
    s2 += e[i] * e[i];
    r.rows.push_back({ids.empty() ? std::to_string(i) : ids[i], pred[i], gt[i], std::abs(e[i])});
  }
  r.mean_ae = sa / double(e.size());
  r.rmse = std::sqrt(s2 / double(e.size()));
  r.std = dsp::stddev(e);
  r.pearson_r = dsp::pearson(pred, gt);
  return r;
}

std::uint64_t parameter_digest(const nn::Checkpoint& ckpt, std::string_view prefix) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& a : ckpt.arrays) {
    if (a.name.rfind(nn::kOptimPrefix, 0) == 0 || a.name.rfind(prefix, 0) != 0) continue;
    h = fnv1a(a.name, h);
    h = fnv1a({reinterpret_cast<const std::uint8_t*>(a.data.data()), a.data.size() * sizeof(float)}, h);
  }
  return h;
}

std::string_view git_describe() { return RPPG_GIT_DESCRIBE; }

void write_report_csv(const std::string& path, const MetricReport& report) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);
  out.precision(10);
  out << "clip_id,pred_hr,gt_hr,abs_err\n";
  for (const auto& r : report.rows) out << r.id << ',' << r.pred_hr << ',' << r.gt_hr << ',' << r.abs_err << '\n';
  if (!out) fail(ErrorCode::IoError, "short write to " + path);
}

void write_loss_csv(const std::string& path, std::span<const EpochLog> log) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);
  out.precision(12);
  out << "epoch,loss,lr\n";
  for (const auto& e : log) out << e.epoch << ',' << e.loss << ',' << e.lr << '\n';
  if (!out) fail(ErrorCode::IoError, "short write to " + path);
}

}  // namespace rppg::pipe
