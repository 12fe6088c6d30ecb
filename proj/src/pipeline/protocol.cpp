// SPDX-License-Identifier: Apache-2.0
#include <json.hpp>

#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "rppg/config.hpp"
#include "rppg/pipeline.hpp"

namespace rppg::pipe {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Protocol p) {
  switch (p) {
    case Protocol::Intra: return "intra";
    case Protocol::Transfer: return "transfer";
    case Protocol::Cross: return "cross";
    case Protocol::Semi: return "semi";
    case Protocol::Probe: return "probe";
    case Protocol::Ablate: return "ablate";
  }
  return "?";
}

std::optional<Protocol> parse_protocol(std::string_view name) {
  for (Protocol p : {Protocol::Intra, Protocol::Transfer, Protocol::Cross, Protocol::Semi, Protocol::Probe,
                     Protocol::Ablate})
    if (to_string(p) == name) return p;
  return std::nullopt;
}

std::string_view to_string(AblationAxis a) {
  switch (a) {
    case AblationAxis::Variant: return "variant";
    case AblationAxis::Lambda: return "lambda";
    case AblationAxis::MaskRatio: return "mask_ratio";
    case AblationAxis::DecoderDepth: return "decoder_depth";
    case AblationAxis::DecoderDim: return "decoder_dim";
    case AblationAxis::Epochs: return "epochs";
  }
  return "?";
}

std::optional<AblationAxis> parse_axis(std::string_view name) {
  for (AblationAxis a : {AblationAxis::Variant, AblationAxis::Lambda, AblationAxis::MaskRatio,
                         AblationAxis::DecoderDepth, AblationAxis::DecoderDim, AblationAxis::Epochs})
    if (to_string(a) == name) return a;
  return std::nullopt;
}

std::string describe(const ProtocolConfig& cfg) {
  const json j = {{"protocol", to_string(cfg.protocol)},
                  {"model", cfg::to_json(cfg.model)},
                  {"pretrain", cfg::to_json(cfg.pretrain)},
                  {"finetune", cfg::to_json(cfg.finetune)},
                  {"probe", cfg::to_json(cfg.probe)},
                  {"folds", cfg.folds},
                  {"labeled_fraction", cfg.labeled_fraction},
                  {"video_mean", cfg.video_mean},
                  {"axis", to_string(cfg.axis)},
                  {"values", cfg.values}};
  return j.dump();
}

void write_summary_json(const std::string& path, const MetricReport& report, const std::string& config_json,
                        const std::vector<std::pair<std::string, double>>& extra) {
  json j = {{"mean_ae", report.mean_ae},
            {"rmse", report.rmse},
            {"std", report.std},
            {"r", report.pearson_r},
            {"count", report.rows.size()},
            {"git_describe", std::string(git_describe())}};
  j["config"] = config_json.empty() ? json::object() : json::parse(config_json);
  for (const auto& [k, v] : extra) j[k] = v;
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);
  out << j.dump(2) << '\n';
  if (!out) fail(ErrorCode::IoError, "short write to " + path);
}

void write_table_csv(const std::string& path, const std::vector<std::string>& header,
                     const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
    out << '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
  if (!out) fail(ErrorCode::IoError, "short write to " + path);
}

namespace {

std::string num(double v) {
  std::ostringstream s;
  s.precision(10);
  s << v;
  return s.str();
}

RunIo io_for(const ProtocolConfig& cfg, const std::string& name) {
  RunIo io;
  if (!cfg.out_dir.empty()) io.out_dir = (fs::path(cfg.out_dir) / name).string();
  io.resume = cfg.resume;
  return io;
}

struct FoldSplit {
  Dataset train, test;
};

FoldSplit fold_split(const Dataset& d, std::size_t folds, std::size_t k) {
  const auto subjects = d.subjects();
  const auto fold = subject_folds(subjects, folds);
  std::set<std::string> held;
  for (std::size_t i = 0; i < subjects.size(); ++i)
    if (fold[i] == k) held.insert(subjects[i]);
  FoldSplit s;
  s.test = d.filter_subjects([&](const std::string& x) { return held.count(x) > 0; });
  s.train = d.filter_subjects([&](const std::string& x) { return held.count(x) == 0; });
  s.test.name = d.name + "/fold" + std::to_string(k) + "/test";
  s.train.name = d.name + "/fold" + std::to_string(k) + "/train";
  return s;
}

struct Pooled {
  std::vector<double> pred, gt;
  std::vector<std::string> ids;
  void add(const MetricReport& r) {
    for (const auto& row : r.rows) {
      pred.push_back(row.pred_hr);
      gt.push_back(row.gt_hr);
      ids.push_back(row.id);
    }
  }
};

struct FoldOutcome {
  Evaluation eval;
  double pretrain_loss = 0.0;
};

// Pre-train on `unlabeled`, fine-tune on `labeled`, evaluate on `test`.
FoldOutcome mae_run(const ProtocolConfig& cfg, const Dataset& unlabeled, const Dataset& labeled, const Dataset& test,
                    const std::string& name) {
  const TrainResult pre = pretrain(unlabeled, cfg.model, cfg.pretrain, io_for(cfg, name + "/pretrain"));
  const TrainResult ft =
      finetune(labeled, cfg.model, cfg.finetune, {InitMode::Partial, &pre.checkpoint}, io_for(cfg, name + "/finetune"));
  return {evaluate(ft.checkpoint, cfg.model, test, cfg.finetune.numeric_mode, cfg.video_mean), pre.log.back().loss};
}

NamedReport named(std::string name, const Evaluation& ev) {
  return {std::move(name), ev.report, {{"mean_pearson", ev.mean_pearson}}};
}

void apply_axis(ProtocolConfig& c, ClipOptions& clips, AblationAxis axis, const std::string& value) {
  const std::string where = "ablate value '" + value + "'";
  auto real = [&] {
    try {
      std::size_t used = 0;
      const double v = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
      return v;
    } catch (const std::exception&) {
      fail(ErrorCode::InvalidConfig, where + " is not a number");
    }
  };
  auto count = [&] {
    const double v = real();
    if (v < 1 || v != std::floor(v)) fail(ErrorCode::InvalidConfig, where + " must be a positive integer");
    return static_cast<std::size_t>(v);
  };
  switch (axis) {
    case AblationAxis::Variant:
      clips.variant = cfg::parse_variant_or_throw(value, "ablate.values");
      c.pretrain.stmap_variant = c.finetune.stmap_variant = clips.variant;
      break;
    case AblationAxis::Lambda: c.pretrain.lambda = real(); break;
    case AblationAxis::MaskRatio: c.pretrain.mask_ratio = real(); break;
    case AblationAxis::DecoderDepth: c.model.decoder.depth = count(); break;
    case AblationAxis::DecoderDim: c.model.decoder.dim = count(); break;
    case AblationAxis::Epochs: c.pretrain.epochs = count(); break;
  }
  c.pretrain.validate();
}

ProtocolResult run_ablation(const ProtocolConfig& cfg, const Dataset& a) {
  if (cfg.values.empty()) fail(ErrorCode::InvalidConfig, "ablate needs at least one value");
  ProtocolResult out;
  out.table_header = {"axis", "value", "mean_ae", "rmse", "std", "r", "mean_pearson", "pretrain_loss"};
  out.table.resize(cfg.values.size());
  out.reports.resize(cfg.values.size());
  // Validate every grid point before any training starts.
  std::vector<ProtocolConfig> points(cfg.values.size(), cfg);
  std::vector<ClipOptions> clip_opts(cfg.values.size(), a.options);
  for (std::size_t i = 0; i < cfg.values.size(); ++i) apply_axis(points[i], clip_opts[i], cfg.axis, cfg.values[i]);

  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto worker = [&] {
    for (std::size_t i; (i = next++) < cfg.values.size();) {
      try {
        const std::string name = std::string(to_string(cfg.axis)) + "_" + cfg.values[i];
        ProtocolConfig pc = points[i];
        if (!pc.out_dir.empty()) pc.out_dir = (fs::path(cfg.out_dir) / ("ablate_" + name)).string();
        const Dataset data = cfg.axis == AblationAxis::Variant ? make_dataset(a.name, a.videos, clip_opts[i]) : a;
        const FoldSplit split = fold_split(data, cfg.folds, 0);
        const FoldOutcome r = mae_run(pc, split.train, split.train, split.test, "run");
        const auto& m = r.eval.report;
        out.table[i] = {std::string(to_string(cfg.axis)), cfg.values[i], num(m.mean_ae), num(m.rmse), num(m.std),
                        num(m.pearson_r), num(r.eval.mean_pearson), num(r.pretrain_loss)};
        out.reports[i] = named(name, r.eval);
        out.reports[i].extra.push_back({"pretrain_loss", r.pretrain_loss});
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(cfg.jobs, cfg.values.size()));
  std::vector<std::thread> pool;
  for (std::size_t j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    write_table_csv((fs::path(cfg.out_dir) / ("ablation_" + std::string(to_string(cfg.axis)) + ".csv")).string(),
                    out.table_header, out.table);
  }
  return out;
}

}  // namespace

ProtocolResult run_protocol(const ProtocolConfig& cfg, const Dataset& a, const Dataset* b) {
  cfg.pretrain.validate();
  cfg.finetune.validate();
  cfg.probe.validate();
  const bool needs_b = cfg.protocol == Protocol::Transfer || cfg.protocol == Protocol::Cross;
  if (needs_b && !b) fail(ErrorCode::InvalidConfig, std::string(to_string(cfg.protocol)) + " needs a second dataset");

  ProtocolResult out;
  switch (cfg.protocol) {
    case Protocol::Intra: {
      Pooled pool;
      for (std::size_t k = 0; k < cfg.folds; ++k) {
        const FoldSplit s = fold_split(a, cfg.folds, k);
        const std::string name = "fold" + std::to_string(k);
        const FoldOutcome r = mae_run(cfg, s.train, s.train, s.test, name);
        out.reports.push_back(named(name, r.eval));
        pool.add(r.eval.report);
      }
      out.reports.push_back({"pooled", compute_metrics(pool.pred, pool.gt, pool.ids), {}});
      break;
    }
    case Protocol::Transfer: {
      const TrainResult pre = pretrain(a, cfg.model, cfg.pretrain, io_for(cfg, "pretrain"));
      Pooled pool;
      for (std::size_t k = 0; k < cfg.folds; ++k) {
        const FoldSplit s = fold_split(*b, cfg.folds, k);
        const std::string name = "fold" + std::to_string(k);
        const TrainResult ft = finetune(s.train, cfg.model, cfg.finetune, {InitMode::Partial, &pre.checkpoint},
                                        io_for(cfg, name + "/finetune"));
        const Evaluation ev = evaluate(ft.checkpoint, cfg.model, s.test, cfg.finetune.numeric_mode, cfg.video_mean);
        out.reports.push_back(named(name, ev));
        pool.add(ev.report);
      }
      out.reports.push_back({"pooled", compute_metrics(pool.pred, pool.gt, pool.ids), {}});
      break;
    }
    case Protocol::Cross: {
      const TrainResult pre = pretrain(a, cfg.model, cfg.pretrain, io_for(cfg, "pretrain"));
      const TrainResult ft =
          finetune(a, cfg.model, cfg.finetune, {InitMode::Partial, &pre.checkpoint}, io_for(cfg, "finetune"));
      const std::uint64_t before = parameter_digest(ft.checkpoint);
      const Evaluation ev = evaluate(ft.checkpoint, cfg.model, *b, cfg.finetune.numeric_mode, cfg.video_mean);
      if (parameter_digest(ft.checkpoint) != before) {
        fail(ErrorCode::CheckpointMismatch, "weights changed while testing on " + b->name);
      }
      out.reports.push_back(named("cross", ev));
      break;
    }
    case Protocol::Semi: {
      const FoldSplit s = fold_split(a, cfg.folds, 0);
      const SemiSplit split = semi_split(s.train, cfg.labeled_fraction, cfg.finetune.seed);
      const TrainResult pre = pretrain(s.train, cfg.model, cfg.pretrain, io_for(cfg, "pretrain"));
      const TrainResult warm = finetune(split.labeled, cfg.model, cfg.finetune, {InitMode::Partial, &pre.checkpoint},
                                        io_for(cfg, "finetune_pretrained"));
      const TrainResult cold = finetune(split.labeled, cfg.model, cfg.finetune, {}, io_for(cfg, "finetune_scratch"));
      out.reports.push_back(
          named("pretrained", evaluate(warm.checkpoint, cfg.model, s.test, cfg.finetune.numeric_mode, cfg.video_mean)));
      out.reports.push_back(
          named("scratch", evaluate(cold.checkpoint, cfg.model, s.test, cfg.finetune.numeric_mode, cfg.video_mean)));
      break;
    }
    case Protocol::Probe: {
      const FoldSplit s = fold_split(a, cfg.folds, 0);
      const TrainResult pre = pretrain(s.train, cfg.model, cfg.pretrain, io_for(cfg, "pretrain"));
      const ProbeResult warm = linear_probe(s.train, s.test, cfg.model, cfg.probe, &pre.checkpoint,
                                            io_for(cfg, "probe_pretrained"), cfg.video_mean);
      const ProbeResult cold =
          linear_probe(s.train, s.test, cfg.model, cfg.probe, nullptr, io_for(cfg, "probe_random"), cfg.video_mean);
      out.reports.push_back({"pretrained", warm.report, {}});
      out.reports.push_back({"random", cold.report, {}});
      break;
    }
    case Protocol::Ablate: out = run_ablation(cfg, a); break;
  }

  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    const std::string echo = describe(cfg);
    for (const auto& r : out.reports) {
      if (r.report.rows.empty()) continue;
      write_report_csv((fs::path(cfg.out_dir) / (r.name + "_report.csv")).string(), r.report);
      write_summary_json((fs::path(cfg.out_dir) / (r.name + "_summary.json")).string(), r.report, echo, r.extra);
    }
  }
  return out;
}

}  // namespace rppg::pipe
