// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "rppg/config.hpp"
#include "rppg/dsp.hpp"

namespace rppg::cli {

namespace fs = std::filesystem;

namespace {

std::optional<pipe::InitMode> parse_init(const std::string& s) {
  if (s == "random") return pipe::InitMode::Random;
  if (s == "partial") return pipe::InitMode::Partial;
  if (s == "checkpoint") return pipe::InitMode::Checkpoint;
  return std::nullopt;
}

pipe::TrainConfig read_stage(const json* j, pipe::TrainConfig base, pipe::Stage stage, const char* key) {
  if (!j) return base;
  pipe::TrainConfig c = cfg::train_from_json(*j, base, key);
  if (c.stage != stage) {
    fail(ErrorCode::InvalidConfig, std::string(key) + ".stage must be '" + std::string(pipe::to_string(stage)) + "'");
  }
  return c;
}

}  // namespace

RunConfig parse_run_config(const json& j) {
  RunConfig c;
  cfg::StrictObject o(j, "");
  o.get("profile", c.profile);
  if (c.profile == "desk") {
    c.model = pipe::ModelConfig::desk();
    c.clips.clip_len = 64;
    c.clips.rows = 64;
    c.clips.step = 26;
  } else if (c.profile != "paper") {
    fail(ErrorCode::InvalidConfig, "profile: expected 'paper' or 'desk', got '" + c.profile + "'");
  }
  if (const json* b = o.child("benchmark")) c.benchmark = cfg::benchmark_from_json(*b, c.benchmark, "benchmark");
  if (const json* x = o.child("clips")) c.clips = cfg::clips_from_json(*x, c.clips, "clips");
  if (const json* x = o.child("model")) c.model = cfg::model_from_json(*x, c.model, "model");

  // The clip variant decides which maps are built; a stage may restate it but not contradict it.
  const std::pair<const char*, pipe::TrainConfig*> stages[] = {
      {"pretrain", &c.pretrain}, {"finetune", &c.finetune}, {"probe", &c.probe}};
  const pipe::Stage kinds[] = {pipe::Stage::Pretrain, pipe::Stage::Finetune, pipe::Stage::Probe};
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& [key, target] = stages[i];
    const json* x = o.child(key);
    *target = read_stage(x, *target, kinds[i], key);
    if (x && x->contains("stmap_variant") && target->stmap_variant != c.clips.variant) {
      fail(ErrorCode::InvalidConfig, std::string(key) + ".stmap_variant contradicts clips.variant");
    }
    target->stmap_variant = c.clips.variant;
  }

  if (const json* p = o.child("protocol")) {
    cfg::StrictObject po(*p, "protocol");
    po.get("name", c.protocol);
    po.get("folds", c.folds);
    po.get("labeled_fraction", c.labeled_fraction);
    po.get("video_mean", c.video_mean);
    po.get("axis", c.axis);
    po.get("values", c.values);
    po.finish();
  }
  if (const json* d = o.child("data")) {
    cfg::StrictObject d_o(*d, "data");
    d_o.get("train", c.train_dir);
    d_o.get("test", c.test_dir);
    d_o.finish();
  }
  o.get("checkpoint", c.checkpoint);
  o.get("init", c.init);
  o.get("out_dir", c.out_dir);
  o.get("jobs", c.jobs);
  o.get("resume", c.resume);
  o.finish();

  if (!pipe::parse_protocol(c.protocol)) fail(ErrorCode::InvalidConfig, "protocol.name: unknown '" + c.protocol + "'");
  if (!pipe::parse_axis(c.axis)) fail(ErrorCode::InvalidConfig, "protocol.axis: unknown '" + c.axis + "'");
  if (!parse_init(c.init)) fail(ErrorCode::InvalidConfig, "init: random, partial or checkpoint");
  if (c.jobs == 0) fail(ErrorCode::InvalidConfig, "jobs must be at least 1");
  c.model.validate();
  return c;
}

json to_json(const RunConfig& c) {
  return {{"profile", c.profile},
          {"benchmark", cfg::to_json(c.benchmark)},
          {"clips", cfg::to_json(c.clips)},
          {"model", cfg::to_json(c.model)},
          {"pretrain", cfg::to_json(c.pretrain)},
          {"finetune", cfg::to_json(c.finetune)},
          {"probe", cfg::to_json(c.probe)},
          {"protocol",
           {{"name", c.protocol},
            {"folds", c.folds},
            {"labeled_fraction", c.labeled_fraction},
            {"video_mean", c.video_mean},
            {"axis", c.axis},
            {"values", c.values}}},
          {"data", {{"train", c.train_dir}, {"test", c.test_dir}}},
          {"checkpoint", c.checkpoint},
          {"init", c.init},
          {"out_dir", c.out_dir},
          {"jobs", c.jobs},
          {"resume", c.resume}};
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::InvalidBand:
    case ErrorCode::WindowTooLong:
    case ErrorCode::InvalidVariant:
    case ErrorCode::IndivisiblePatchSize:
    case ErrorCode::EmptySide: return 2;
    case ErrorCode::NanGradient:
    case ErrorCode::NonScalarLoss: return 4;
    default: return 3;
  }
}

namespace {

// ---- output helpers ------------------------------------------------------

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorCode::IoError, "short write to " + path.string());
}

fs::path prepare_out(const RunConfig& c) {
  const fs::path out(c.out_dir);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) fail(ErrorCode::IoError, "cannot create output directory " + out.string());
  write_text(out / "config.json", to_json(c).dump(2) + "\n");
  return out;
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

void write_signals_csv(const fs::path& path, const pipe::Dataset& data, const pipe::Evaluation& ev) {
  std::ostringstream s;
  s.precision(9);
  s << "clip_id,index,pred,gt\n";
  for (std::size_t k = 0; k < ev.predictions.size(); ++k) {
    const auto& p = ev.predictions[k];
    const auto& gt = data.clips[k].bvp;
    for (std::size_t i = 0; i < p.signal.size(); ++i) {
      s << p.clip_id << ',' << i << ',' << p.signal[i] << ',';
      if (i < gt.size()) s << gt[i];
      s << '\n';
    }
  }
  write_text(path, s.str());
}

pipe::Dataset need_data(const std::string& dir, const char* what, const pipe::ClipOptions& clips) {
  if (dir.empty()) fail(ErrorCode::InvalidConfig, std::string("data.") + what + " is not set (config or --data)");
  return pipe::load_dataset(dir, clips);
}

void emit_summary(std::ostream& out, const pipe::MetricReport& r) {
  out << json{{"mean_ae", r.mean_ae}, {"rmse", r.rmse}, {"std", r.std}, {"r", r.pearson_r}}.dump() << '\n';
}

// ---- SVG -----------------------------------------------------------------

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

struct Series {
  std::string label;
  std::string color;
  std::vector<double> x, y;
};

std::string line_chart(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                       const std::vector<Series>& series) {
  const double W = 640, H = 360, L = 60, R = 20, T = 34, B = 44;
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : series) {
    for (double v : s.x) x0 = std::min(x0, v), x1 = std::max(x1, v);
    for (double v : s.y) y0 = std::min(y0, v), y1 = std::max(y1, v);
  }
  if (!(x1 > x0)) x1 = x0 + 1;
  if (!(y1 > y0)) y1 = y0 + 1;
  auto px = [&](double v) { return L + (v - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double v) { return H - B - (v - y0) / (y1 - y0) * (H - T - B); };
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << ' ' << H << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\" font-size=\"12\">" << xlabel
    << "</text>\n";
  s << "<text x=\"14\" y=\"" << H / 2 << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 " << H / 2
    << ")\">" << ylabel << "</text>\n";
  s << "<text x=\"" << L - 4 << "\" y=\"" << py(y1) + 4 << "\" text-anchor=\"end\" font-size=\"10\">" << fmt(y1)
    << "</text>\n";
  s << "<text x=\"" << L - 4 << "\" y=\"" << py(y0) + 4 << "\" text-anchor=\"end\" font-size=\"10\">" << fmt(y0)
    << "</text>\n";
  s << "<text x=\"" << L << "\" y=\"" << H - B + 14 << "\" font-size=\"10\">" << fmt(x0) << "</text>\n";
  s << "<text x=\"" << W - R << "\" y=\"" << H - B + 14 << "\" text-anchor=\"end\" font-size=\"10\">" << fmt(x1)
    << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& se = series[k];
    s << "<polyline fill=\"none\" stroke=\"" << se.color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < se.x.size(); ++i) s << (i ? " " : "") << fmt(px(se.x[i])) << ',' << fmt(py(se.y[i]));
    s << "\"/>\n";
    s << "<text x=\"" << W - R - 4 << "\" y=\"" << T + 14 * (k + 1) << "\" text-anchor=\"end\" font-size=\"11\" fill=\""
      << se.color << "\">" << se.label << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string heatmaps(const std::vector<std::pair<std::string, const stmap::STMap*>>& panels, std::size_t channel) {
  const double cell = 4, pad = 16, top = 28;
  const std::size_t h = panels.front().second->height, w = panels.front().second->width;
  const double pw = double(w) * cell, ph = double(h) * cell;
  const double W = pad + double(panels.size()) * (pw + pad), H = top + ph + pad;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << ' ' << H << "\" shape-rendering=\"crispEdges\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t k = 0; k < panels.size(); ++k) {
    const auto& [label, m] = panels[k];
    const double ox = pad + double(k) * (pw + pad);
    s << "<text x=\"" << ox + pw / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"12\">" << label << "</text>\n";
    s << "<g transform=\"translate(" << ox << ' ' << top << ")\">\n";
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        const double v = std::clamp(double(m->at(r, c, channel)), 0.0, 1.0);
        const int g = static_cast<int>(std::lround(v * 255));
        s << "<rect x=\"" << double(c) * cell << "\" y=\"" << double(r) * cell << "\" width=\"" << cell
          << "\" height=\"" << cell << "\" fill=\"rgb(" << g << ',' << g << ',' << g << ")\"/>\n";
      }
    }
    s << "</g>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  std::vector<std::vector<std::string>> rows;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(std::move(cells));
  }
  if (rows.empty()) fail(ErrorCode::TruncatedFile, path + " is empty");
  return rows;
}

double to_number(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  fail(ErrorCode::TruncatedFile, where + ": '" + s + "' is not a number");
}

std::size_t column(const std::vector<std::string>& header, const std::string& name, const std::string& path) {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) fail(ErrorCode::TruncatedFile, path + " has no '" + name + "' column");
  return std::size_t(it - header.begin());
}

std::vector<double> zscore(std::vector<double> v) {
  const double m = dsp::mean(v), sd = dsp::stddev(v);
  for (double& x : v) x = sd > 0 ? (x - m) / sd : 0.0;
  return v;
}

// ---- commands ------------------------------------------------------------

struct Flags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> jobs;
  bool resume = false;
  bool f64 = false;

  std::string data, test, checkpoint, init, variant, axis, values, protocol, second;
  std::optional<std::size_t> clip_len, step;
  bool video_mean = false;
  std::string plot_loss, plot_signals, plot_clip, plot_stmap;
  bool plot_recon = false;
  double recon_mask_ratio = 0.8;
};

RunConfig resolve(const Flags& f) {
  json j = json::object();
  if (!f.config_path.empty()) {
    std::ifstream in(f.config_path);
    if (!in) fail(ErrorCode::InvalidConfig, "cannot open config " + f.config_path);
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      fail(ErrorCode::InvalidConfig, f.config_path + ": " + e.what());
    }
  }
  RunConfig c = parse_run_config(j);
  if (f.seed) {
    c.benchmark.seed = c.pretrain.seed = c.finetune.seed = c.probe.seed = *f.seed;
  }
  if (!f.out.empty()) c.out_dir = f.out;
  if (f.jobs) c.jobs = std::max<std::size_t>(1, *f.jobs);
  if (f.resume) c.resume = true;
  if (f.f64) c.pretrain.numeric_mode = c.finetune.numeric_mode = c.probe.numeric_mode = pipe::NumericMode::F64;
  if (!f.data.empty()) c.train_dir = f.data;
  if (!f.test.empty()) c.test_dir = f.test;
  if (!f.second.empty()) c.test_dir = f.second;
  if (!f.checkpoint.empty()) c.checkpoint = f.checkpoint;
  if (!f.init.empty()) {
    if (!parse_init(f.init)) fail(ErrorCode::InvalidConfig, "--init: random, partial or checkpoint");
    c.init = f.init;
  }
  if (!f.variant.empty()) {
    c.clips.variant = cfg::parse_variant_or_throw(f.variant, "--variant");
    c.pretrain.stmap_variant = c.finetune.stmap_variant = c.probe.stmap_variant = c.clips.variant;
  }
  if (f.clip_len) c.clips.clip_len = *f.clip_len;
  if (f.step) c.clips.step = *f.step;
  if (f.clip_len || f.step) {
    if (c.clips.clip_len == 0 || c.clips.step == 0) fail(ErrorCode::InvalidConfig, "clip length and step must be > 0");
  }
  if (f.video_mean) c.video_mean = true;
  if (!f.axis.empty()) {
    if (!pipe::parse_axis(f.axis)) fail(ErrorCode::InvalidConfig, "--axis: unknown '" + f.axis + "'");
    c.axis = f.axis;
  }
  if (!f.values.empty()) {
    c.values.clear();
    std::stringstream ss(f.values);
    for (std::string v; std::getline(ss, v, ',');)
      if (!v.empty()) c.values.push_back(v);
  }
  if (!f.protocol.empty()) {
    if (!pipe::parse_protocol(f.protocol)) fail(ErrorCode::InvalidConfig, "--name: unknown protocol '" + f.protocol + "'");
    c.protocol = f.protocol;
  }
  return c;
}

int cmd_synth(const RunConfig& c, std::ostream& out) {
  const auto videos = pipe::synth_benchmark(c.benchmark);
  const fs::path dir = prepare_out(c);
  json list = json::array();
  for (const auto& v : videos) {
    const std::string file = v.id + ".roit";
    stmap::write_traces((dir / file).string(), v.traces);
    list.push_back({{"id", v.id},
                    {"subject", v.subject},
                    {"file", file},
                    {"hr_gt", v.traces.label->hr_gt},
                    {"rf_gt", v.traces.label->rf_gt},
                    {"frames", v.traces.frames},
                    {"fs", v.traces.fs}});
  }
  const json manifest = {{"name", c.benchmark.name}, {"created", utc_now()}, {"videos", list}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  out << json{{"videos", videos.size()}, {"out", dir.string()}}.dump() << '\n';
  return 0;
}

int cmd_stmap(const RunConfig& c, std::ostream& out) {
  const pipe::Dataset d = need_data(c.train_dir, "train", c.clips);
  const fs::path dir = prepare_out(c);
  json list = json::array();
  std::map<std::string, std::size_t> per_video;
  for (const auto& clip : d.clips) {
    const std::size_t k = per_video[clip.video]++;
    const std::string file = clip.video + "_" + std::to_string(k) + ".stmp";
    stmap::write_stmap((dir / file).string(), clip.map);
    list.push_back({{"id", clip.id}, {"video", clip.video}, {"subject", clip.subject}, {"file", file},
                    {"start", clip.start}, {"hr_gt", clip.hr_gt}});
  }
  write_text(dir / "stmaps.json", json{{"variant", stmap::to_string(c.clips.variant)}, {"clips", list}}.dump(2) + "\n");
  out << json{{"clips", d.clips.size()}, {"videos", per_video.size()}, {"out", dir.string()}}.dump() << '\n';
  return 0;
}

pipe::RunIo run_io(const RunConfig& c, const fs::path& dir) {
  pipe::RunIo io;
  io.out_dir = dir.string();
  io.resume = c.resume;
  return io;
}

int cmd_pretrain(const RunConfig& c, std::ostream& out) {
  const pipe::Dataset d = need_data(c.train_dir, "train", c.clips);
  const fs::path dir = prepare_out(c);
  const auto r = pipe::pretrain(d, c.model, c.pretrain, run_io(c, dir));
  nn::save_checkpoint((dir / "checkpoint.rmae").string(), r.checkpoint);
  out << json{{"epochs", r.log.size()}, {"final_loss", r.log.back().loss}, {"checkpoint",
                                                                             (dir / "checkpoint.rmae").string()}}
             .dump()
      << '\n';
  return 0;
}

int cmd_finetune(const RunConfig& c, std::ostream& out) {
  const pipe::Dataset d = need_data(c.train_dir, "train", c.clips);
  pipe::InitSpec init;
  nn::Checkpoint source;
  if (!c.checkpoint.empty() && c.init != "random") {
    source = nn::load_checkpoint(c.checkpoint);
    init = {*parse_init(c.init), &source};
  }
  const fs::path dir = prepare_out(c);
  const auto r = pipe::finetune(d, c.model, c.finetune, init, run_io(c, dir));
  nn::save_checkpoint((dir / "checkpoint.rmae").string(), r.checkpoint);
  out << json{{"epochs", r.log.size()}, {"final_loss", r.log.back().loss}}.dump() << '\n';
  return 0;
}

int cmd_probe(const RunConfig& c, std::ostream& out) {
  const pipe::Dataset train = need_data(c.train_dir, "train", c.clips);
  const pipe::Dataset test = c.test_dir.empty() ? train : pipe::load_dataset(c.test_dir, c.clips);
  std::optional<nn::Checkpoint> enc;
  if (!c.checkpoint.empty()) enc = nn::load_checkpoint(c.checkpoint);
  const fs::path dir = prepare_out(c);
  const auto r = pipe::linear_probe(train, test, c.model, c.probe, enc ? &*enc : nullptr, run_io(c, dir), c.video_mean);
  nn::save_checkpoint((dir / "checkpoint.rmae").string(), r.train.checkpoint);
  pipe::write_report_csv((dir / "report.csv").string(), r.report);
  pipe::write_summary_json((dir / "summary.json").string(), r.report, to_json(c).dump());
  emit_summary(out, r.report);
  return 0;
}

int cmd_eval(const RunConfig& c, std::ostream& out) {
  if (c.checkpoint.empty()) fail(ErrorCode::InvalidConfig, "eval needs --checkpoint");
  const nn::Checkpoint ck = nn::load_checkpoint(c.checkpoint);
  const std::string& dir_in = c.test_dir.empty() ? c.train_dir : c.test_dir;
  const pipe::Dataset d = need_data(dir_in, "test", c.clips);
  const fs::path dir = prepare_out(c);
  const auto ev = pipe::evaluate(ck, pipe::checkpoint_model(ck), d, c.finetune.numeric_mode, c.video_mean);
  pipe::write_report_csv((dir / "report.csv").string(), ev.report);
  pipe::write_summary_json((dir / "summary.json").string(), ev.report, to_json(c).dump(),
                           {{"mean_pearson", ev.mean_pearson}});
  write_signals_csv(dir / "signals.csv", d, ev);
  emit_summary(out, ev.report);
  return 0;
}

pipe::ProtocolConfig protocol_config(const RunConfig& c, pipe::Protocol p, const fs::path& dir) {
  pipe::ProtocolConfig pc;
  pc.protocol = p;
  pc.model = c.model;
  pc.pretrain = c.pretrain;
  pc.finetune = c.finetune;
  pc.probe = c.probe;
  pc.folds = c.folds;
  pc.labeled_fraction = c.labeled_fraction;
  pc.video_mean = c.video_mean;
  pc.axis = *pipe::parse_axis(c.axis);
  pc.values = c.values;
  pc.jobs = c.jobs;
  pc.out_dir = dir.string();
  pc.resume = c.resume;
  return pc;
}

int cmd_ablate(const RunConfig& c, std::ostream& out) {
  const pipe::Dataset d = need_data(c.train_dir, "train", c.clips);
  const fs::path dir = prepare_out(c);
  const auto r = pipe::run_protocol(protocol_config(c, pipe::Protocol::Ablate, dir), d);
  out << json{{"rows", r.table.size()}, {"csv", (dir / ("ablation_" + c.axis + ".csv")).string()}}.dump() << '\n';
  return 0;
}

int cmd_protocol(const RunConfig& c, std::ostream& out) {
  const pipe::Protocol p = *pipe::parse_protocol(c.protocol);
  const pipe::Dataset a = need_data(c.train_dir, "train", c.clips);
  std::optional<pipe::Dataset> b;
  if (!c.test_dir.empty()) b = pipe::load_dataset(c.test_dir, c.clips);
  const fs::path dir = prepare_out(c);
  const auto r = pipe::run_protocol(protocol_config(c, p, dir), a, b ? &*b : nullptr);
  json reports = json::object();
  for (const auto& nr : r.reports) {
    reports[nr.name] = {{"mean_ae", nr.report.mean_ae}, {"rmse", nr.report.rmse}, {"std", nr.report.std},
                        {"r", nr.report.pearson_r}};
  }
  out << reports.dump() << '\n';
  return 0;
}

int cmd_plot(const Flags& f, const RunConfig& c, std::ostream& out) {
  const int chosen = int(!f.plot_loss.empty()) + int(!f.plot_signals.empty()) + int(f.plot_recon);
  if (chosen != 1) fail(ErrorCode::InvalidConfig, "plot needs exactly one of --loss, --signals, --recon");
  const fs::path dir = prepare_out(c);
  if (!f.plot_loss.empty()) {
    const auto rows = read_csv(f.plot_loss);
    const std::size_t ce = column(rows[0], "epoch", f.plot_loss), cl = column(rows[0], "loss", f.plot_loss);
    Series s{"loss", "#1f77b4", {}, {}};
    std::ostringstream csv;
    csv.precision(12);
    csv << "epoch,loss\n";
    for (std::size_t i = 1; i < rows.size(); ++i) {
      if (rows[i].size() <= std::max(ce, cl)) fail(ErrorCode::TruncatedFile, f.plot_loss + ": short row");
      s.x.push_back(to_number(rows[i][ce], f.plot_loss));
      s.y.push_back(to_number(rows[i][cl], f.plot_loss));
      csv << s.x.back() << ',' << s.y.back() << '\n';
    }
    if (s.x.empty()) fail(ErrorCode::TruncatedFile, f.plot_loss + " has no rows");
    write_text(dir / "loss.svg", line_chart("Training loss", "epoch", "loss", {s}));
    write_text(dir / "loss.csv", csv.str());
    out << json{{"svg", (dir / "loss.svg").string()}, {"points", s.x.size()}}.dump() << '\n';
    return 0;
  }
  if (!f.plot_signals.empty()) {
    const auto rows = read_csv(f.plot_signals);
    const auto& h = rows[0];
    const std::size_t cid = column(h, "clip_id", f.plot_signals), ci = column(h, "index", f.plot_signals),
                      cp = column(h, "pred", f.plot_signals), cg = column(h, "gt", f.plot_signals);
    std::string clip = f.plot_clip;
    if (clip.empty() && rows.size() > 1) clip = rows[1][cid];
    std::vector<double> t, pred, gt;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const auto& r = rows[i];
      if (r.size() <= std::max({cid, ci, cp, cg})) fail(ErrorCode::TruncatedFile, f.plot_signals + ": short row");
      if (r[cid] != clip) continue;
      t.push_back(to_number(r[ci], f.plot_signals));
      pred.push_back(to_number(r[cp], f.plot_signals));
      gt.push_back(r[cg].empty() ? 0.0 : to_number(r[cg], f.plot_signals));
    }
    if (t.empty()) fail(ErrorCode::InvalidConfig, "no samples for clip '" + clip + "'");
    pred = zscore(pred);
    gt = zscore(gt);
    std::ostringstream csv;
    csv.precision(9);
    csv << "index,pred_z,gt_z\n";
    for (std::size_t i = 0; i < t.size(); ++i) csv << t[i] << ',' << pred[i] << ',' << gt[i] << '\n';
    write_text(dir / "waveform.svg", line_chart("Predicted vs ground truth: " + clip, "frame", "z-score",
                                                {{"predicted", "#d62728", t, pred}, {"ground truth", "#2ca02c", t, gt}}));
    write_text(dir / "waveform.csv", csv.str());
    out << json{{"svg", (dir / "waveform.svg").string()}, {"clip", clip}}.dump() << '\n';
    return 0;
  }
  if (c.checkpoint.empty() || f.plot_stmap.empty()) fail(ErrorCode::InvalidConfig, "--recon needs --checkpoint and --stmap");
  const auto ck = nn::load_checkpoint(c.checkpoint);
  const auto map = stmap::read_stmap(f.plot_stmap);
  const auto r = pipe::reconstruct(ck, map, f.recon_mask_ratio, c.pretrain.seed);
  write_text(dir / "reconstruction.svg",
             heatmaps({{"original", &r.original}, {"masked", &r.masked}, {"reconstructed", &r.reconstructed}}, 0));
  std::ostringstream csv;
  csv.precision(7);
  csv << "row,col,original,masked,reconstructed\n";
  for (std::size_t y = 0; y < map.height; ++y)
    for (std::size_t x = 0; x < map.width; ++x)
      csv << y << ',' << x << ',' << r.original.at(y, x, 0) << ',' << r.masked.at(y, x, 0) << ','
          << r.reconstructed.at(y, x, 0) << '\n';
  write_text(dir / "reconstruction.csv", csv.str());
  out << json{{"svg", (dir / "reconstruction.svg").string()}}.dump() << '\n';
  return 0;
}

void report_error(std::ostream& err, int code, std::string_view kind, const std::string& message) {
  err << json{{"error", kind}, {"exit_code", code}, {"message", message}}.dump() << '\n';
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"rPPG masked-autoencoder toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Flags f;
  app.add_option("--config", f.config_path, "RunConfig JSON file");
  app.add_option("--seed", f.seed, "seed for data synthesis and every training stage");
  app.add_option("--out", f.out, "output directory");
  app.add_option("--jobs", f.jobs, "parallel grid points for ablate");
  app.add_flag("--resume", f.resume, "continue from checkpoint_last.rmae in the output directory");
  app.add_flag("--f64", f.f64, "train in double precision");

  auto* synth = app.add_subcommand("synth", "write synthetic ROI trace files and a manifest");
  auto* stm = app.add_subcommand("stmap", "build STMap clips from a trace directory");
  stm->add_option("--in,--data", f.data, "directory holding manifest.json");
  stm->add_option("--variant", f.variant, "map variant");
  stm->add_option("--clip-len", f.clip_len, "clip length T in frames");
  stm->add_option("--step", f.step, "crop step s in frames");
  auto* pre = app.add_subcommand("pretrain", "masked-autoencoder pre-training");
  auto* ft = app.add_subcommand("finetune", "supervised fine-tuning on labeled clips");
  auto* pr = app.add_subcommand("probe", "linear probe on a frozen encoder");
  auto* ev = app.add_subcommand("eval", "evaluate a fine-tuned checkpoint");
  auto* ab = app.add_subcommand("ablate", "sweep one axis and tabulate the results");
  auto* proto = app.add_subcommand("protocol", "run an intra, transfer, cross, semi or probe protocol");
  auto* plot = app.add_subcommand("plot", "SVG plots of loss logs, waveforms or reconstructions");
  for (auto* s : {pre, ft, pr, ev, ab, proto}) {
    s->add_option("--data", f.data, "training (or evaluation) data directory");
    s->add_option("--variant", f.variant, "map variant");
  }
  for (auto* s : {ft, pr, ev}) s->add_option("--checkpoint", f.checkpoint, "input checkpoint");
  ft->add_option("--init", f.init, "random, partial or checkpoint");
  for (auto* s : {pr, ev}) {
    s->add_option("--test", f.test, "test data directory");
    s->add_flag("--video-mean", f.video_mean, "average clip signals per video before the HR read-out");
  }
  ab->add_option("--axis", f.axis, "variant, lambda, mask_ratio, decoder_depth, decoder_dim or epochs");
  ab->add_option("--values", f.values, "comma-separated grid values");
  proto->add_option("--name", f.protocol, "protocol name");
  proto->add_option("--second", f.second, "second dataset for transfer and cross");
  proto->add_flag("--video-mean", f.video_mean, "video-level HR read-out");
  plot->add_option("--loss", f.plot_loss, "loss_log.csv");
  plot->add_option("--signals", f.plot_signals, "signals.csv from eval");
  plot->add_option("--clip", f.plot_clip, "clip id for --signals");
  plot->add_flag("--recon", f.plot_recon, "original/masked/reconstructed triplet");
  plot->add_option("--checkpoint", f.checkpoint, "pre-training checkpoint for --recon");
  plot->add_option("--stmap", f.plot_stmap, "STMP file for --recon");
  plot->add_option("--mask-ratio", f.recon_mask_ratio, "mask ratio for --recon");

  std::vector<std::string> rev(args.size() > 1 ? args.begin() + 1 : args.end(), args.end());
  std::reverse(rev.begin(), rev.end());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    report_error(err, 2, "usage", e.what());
    return 2;
  }

  try {
    const RunConfig c = resolve(f);
    if (synth->parsed()) return cmd_synth(c, out);
    if (stm->parsed()) return cmd_stmap(c, out);
    if (pre->parsed()) return cmd_pretrain(c, out);
    if (ft->parsed()) return cmd_finetune(c, out);
    if (pr->parsed()) return cmd_probe(c, out);
    if (ev->parsed()) return cmd_eval(c, out);
    if (ab->parsed()) return cmd_ablate(c, out);
    if (proto->parsed()) return cmd_protocol(c, out);
    if (plot->parsed()) return cmd_plot(f, c, out);
  } catch (const Error& e) {
    const int code = exit_code_for(e.code());
    report_error(err, code, error_code_name(e.code()), e.what());
    return code;
  } catch (const json::exception& e) {
    report_error(err, 2, "invalid_config", e.what());
    return 2;
  } catch (const fs::filesystem_error& e) {
    report_error(err, 3, "io_error", e.what());
    return 3;
  } catch (const std::exception& e) {
    report_error(err, 1, "internal", e.what());
    return 1;
  }
  return 2;
}

}  // namespace rppg::cli
