// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <random>

#include "rppg/config.hpp"
#include "rppg/dsp.hpp"
#include "rppg/nn/checkpoint.hpp"
#include "rppg/nn/optim.hpp"
#include "rppg/pipeline.hpp"

namespace rppg::pipe {

namespace fs = std::filesystem;
using nlohmann::json;
using nn::Tensor;

namespace {

template <typename T>
struct Net {
  Net(const ModelConfig& m, std::uint64_t seed) : store(seed), encoder(store, m.encoder) {}
  nn::ParamStore<T> store;
  nn::Encoder<T> encoder;
  std::optional<nn::Decoder<T>> decoder;
  std::optional<nn::SignalHead<T>> head;
  std::optional<nn::ProbeHead<T>> probe;
};

template <typename T>
using SampleLoss = std::function<Tensor<T>(std::size_t item, std::size_t epoch)>;

struct LoopSpec {
  std::string kind;
  json run;  // everything that must match for a resume
  std::size_t items = 0;
  std::vector<double> layer_scale;
};

std::string checkpoint_config(const LoopSpec& spec, std::size_t epoch, std::span<const EpochLog> log) {
  json entries = json::array();
  for (const auto& e : log) entries.push_back({e.epoch, e.loss, e.lr});
  return json{{"kind", spec.kind}, {"run", spec.run}, {"progress", {{"epoch", epoch}, {"log", entries}}}}.dump();
}

void write_run_files(const std::string& dir, const nn::Checkpoint& ckpt, std::span<const EpochLog> log) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  const std::string tmp = (fs::path(dir) / "checkpoint_last.rmae.tmp").string();
  nn::save_checkpoint(tmp, ckpt);
  fs::rename(tmp, fs::path(dir) / "checkpoint_last.rmae", ec);
  if (ec) fail(ErrorCode::IoError, "cannot move checkpoint into " + dir + ": " + ec.message());
  write_loss_csv((fs::path(dir) / "loss_log.csv").string(), log);
}

template <typename T>
TrainResult train_loop(nn::ParamStore<T>& store, const TrainConfig& cfg, const LoopSpec& spec,
                       const SampleLoss<T>& loss_of, const RunIo& io) {
  nn::AdamW<T> opt(store, {cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay});
  const nn::LrSchedule sched{cfg.base_lr, cfg.warmup_epochs, double(cfg.epochs), cfg.batch_size};
  std::vector<EpochLog> log;
  std::size_t first = 0;
  const std::string last = io.out_dir.empty() ? "" : (fs::path(io.out_dir) / "checkpoint_last.rmae").string();
  if (io.resume && !last.empty() && fs::exists(last)) {
    const nn::Checkpoint ck = nn::load_checkpoint(last);
    json meta;
    try {
      meta = json::parse(ck.config);
      if (meta.at("run") != spec.run || meta.at("kind") != spec.kind) {
        fail(ErrorCode::InvalidConfig, "resume: " + last + " was written by a different configuration");
      }
      for (const auto& e : meta.at("progress").at("log"))
        log.push_back({e.at(0).get<std::size_t>(), e.at(1).get<double>(), e.at(2).get<double>()});
      first = meta.at("progress").at("epoch").get<std::size_t>();
    } catch (const json::exception& e) {
      fail(ErrorCode::CheckpointMismatch, "resume: unreadable progress in " + last + ": " + e.what());
    }
    nn::load_params(store, ck, nn::LoadMode::Strict);
    if (!nn::load_optim_state(store, ck, opt.state())) {
      fail(ErrorCode::CheckpointMismatch, "resume: " + last + " has no optimizer state");
    }
  }

  const std::size_t n = spec.items;
  const std::size_t bs = std::min(cfg.batch_size, n);
  const std::size_t steps = (n + bs - 1) / bs;
  for (std::size_t epoch = first; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(synth::mix_seed(cfg.seed, 0x5ca1ab1e00000000ull + epoch));
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0, lr = 0.0;
    for (std::size_t b = 0; b < steps; ++b) {
      const std::size_t lo = b * bs, hi = std::min(n, lo + bs);
      store.zero_grad();
      const T w = T(1) / T(hi - lo);
      for (std::size_t i = lo; i < hi; ++i) {
        const Tensor<T> loss = loss_of(order[i], epoch);
        const double v = double(loss.item());
        if (!std::isfinite(v)) {
          fail(ErrorCode::NanGradient, "non-finite " + spec.kind + " loss at epoch " + std::to_string(epoch + 1) +
                                           ", batch " + std::to_string(b + 1));
        }
        total += v;
        nn::backward(nn::scale(loss, w));
      }
      lr = nn::lr_at(double(epoch) + double(b) / double(steps), sched);
      try {
        opt.step(lr, spec.layer_scale);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NanGradient) throw;
        fail(ErrorCode::NanGradient, std::string(e.what()) + " at epoch " + std::to_string(epoch + 1) + ", batch " +
                                         std::to_string(b + 1));
      }
    }
    const EpochLog entry{epoch + 1, total / double(n), lr};
    log.push_back(entry);
    if (io.on_epoch) io.on_epoch(entry);
    const bool final_epoch = epoch + 1 == cfg.epochs;
    const bool periodic = cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0;
    if (!io.out_dir.empty() && (final_epoch || periodic)) {
      write_run_files(io.out_dir, nn::snapshot(store, checkpoint_config(spec, epoch + 1, log), &opt.state()), log);
    }
  }
  TrainResult result;
  result.checkpoint = nn::snapshot(store, checkpoint_config(spec, cfg.epochs, log), &opt.state());
  result.log = std::move(log);
  return result;
}

json run_header(const ModelConfig& model, const TrainConfig& cfg, const Dataset& data) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& c : data.clips) {
    for (char ch : c.id) h = (h ^ std::uint8_t(ch)) * 1099511628211ull;
  }
  return {{"model", cfg::to_json(model)},
          {"train", cfg::to_json(cfg)},
          {"data", {{"name", data.name}, {"clips", data.clips.size()}, {"ids", std::to_string(h)}}}};
}

void check_shapes(const Dataset& data, std::optional<stmap::Variant> expect = std::nullopt) {
  if (data.clips.empty()) fail(ErrorCode::InvalidConfig, "dataset '" + data.name + "' has no clips");
  const auto& f = data.clips.front().map;
  if (expect && f.variant != *expect) {
    fail(ErrorCode::InvalidConfig, "stmap_variant " + std::string(stmap::to_string(*expect)) + " does not match the " +
                                       std::string(stmap::to_string(f.variant)) + " maps of '" + data.name + "'");
  }
  for (const auto& c : data.clips) {
    if (c.map.height != f.height || c.map.width != f.width || c.map.channels != f.channels ||
        c.map.variant != f.variant) {
      fail(ErrorCode::ShapeMismatch, "clip " + c.id + " differs in shape or variant from " + data.clips.front().id);
    }
  }
}

template <typename T>
Tensor<T> all_patches(const stmap::STMap& map, std::size_t patch) {
  const auto pm = stmap::patchify(map, patch);
  return Tensor<T>::constant(pm.rows, pm.cols, std::vector<T>(pm.values.begin(), pm.values.end()));
}

template <typename T>
Tensor<T> signal_tensor(std::span<const double> v) {
  return Tensor<T>::constant(1, v.size(), std::vector<T>(v.begin(), v.end()));
}

template <typename T>
TrainResult pretrain_impl(const Dataset& data, const ModelConfig& model0, const TrainConfig& cfg, const RunIo& io) {
  const ModelConfig model = fit_model(model0, data);
  Net<T> net(model, synth::mix_seed(cfg.seed, 101));
  net.decoder.emplace(net.store, model.decoder, model.encoder.dim, model.encoder.use_class_token);
  const std::size_t P = model.encoder.patch_size, H = model.map_side();
  std::vector<obj::ReconTarget> targets;
  targets.reserve(data.clips.size());
  for (const auto& c : data.clips) targets.push_back({stmap::patchify(c.map, P), {}, c.map});
  const obj::PretrainLossCfg lc{cfg.lambda};
  const SampleLoss<T> loss_of = [&](std::size_t i, std::size_t epoch) {
    auto& t = targets[i];
    t.plan = stmap::make_mask_plan(H, P, cfg.mask_ratio, synth::mix_seed(synth::mix_seed(cfg.seed, epoch + 1), i));
    const Tensor<T> kept = nn::patch_rows<T>(t.gt_patches.values, t.gt_patches.cols, t.plan.kept_indices);
    return obj::pretrain_loss((*net.decoder)(net.encoder(kept, t.plan), t.plan), t, lc);
  };
  LoopSpec spec{"pretrain", run_header(model, cfg, data), data.clips.size(), {}};
  return train_loop<T>(net.store, cfg, spec, loss_of, io);
}

template <typename T>
void initialise(nn::ParamStore<T>& store, const InitSpec& init) {
  if (init.mode == InitMode::Random) return;
  if (!init.checkpoint) fail(ErrorCode::InvalidConfig, "initialisation from a checkpoint needs a checkpoint");
  nn::load_params(store, *init.checkpoint, init.mode == InitMode::Partial ? nn::LoadMode::Partial : nn::LoadMode::Strict);
}

template <typename T>
TrainResult finetune_impl(const Dataset& data, const ModelConfig& model0, const TrainConfig& cfg, const InitSpec& init,
                          const RunIo& io) {
  const ModelConfig model = fit_model(model0, data);
  const std::size_t width = data.clips.front().map.width;
  Net<T> net(model, synth::mix_seed(cfg.seed, 102));
  net.head.emplace(net.store, model.encoder, width);
  initialise(net.store, init);

  std::vector<Tensor<T>> inputs, labels;
  for (const auto& c : data.clips) {
    if (!c.labeled) fail(ErrorCode::LabelLengthMismatch, "clip " + c.id + " has no label signal");
    if (c.bvp.size() != c.map.width) {
      fail(ErrorCode::LabelLengthMismatch, "clip " + c.id + " has " + std::to_string(c.bvp.size()) +
                                               " label samples for " + std::to_string(c.map.width) + " columns");
    }
    inputs.push_back(all_patches<T>(c.map, model.encoder.patch_size));
    labels.push_back(signal_tensor<T>(c.bvp));
  }
  const auto full = stmap::MaskPlan::full(model.encoder.seq_side, model.encoder.patch_size);
  const obj::FinetuneLossCfg lc{cfg.gamma, {}};
  const SampleLoss<T> loss_of = [&](std::size_t i, std::size_t) {
    const auto& c = data.clips[i];
    return obj::finetune_loss((*net.head)(net.encoder(inputs[i], full)), labels[i], c.map.fs, c.hr_gt, lc);
  };
  json run = run_header(model, cfg, data);
  run["init"] = init.mode == InitMode::Random ? "random" : init.mode == InitMode::Partial ? "partial" : "checkpoint";
  if (init.checkpoint) run["init_digest"] = std::to_string(parameter_digest(*init.checkpoint, "encoder."));
  LoopSpec spec{"finetune", run, data.clips.size(),
                nn::layerwise_lr_multipliers(model.encoder.depth + 1, cfg.layer_decay)};
  return train_loop<T>(net.store, cfg, spec, loss_of, io);
}

template <typename T>
std::vector<Tensor<T>> class_tokens(const nn::Encoder<T>& encoder, const Dataset& data, const ModelConfig& model) {
  const auto full = stmap::MaskPlan::full(model.encoder.seq_side, model.encoder.patch_size);
  std::vector<Tensor<T>> out;
  for (const auto& c : data.clips) {
    const Tensor<T> enc = encoder(all_patches<T>(c.map, model.encoder.patch_size), full);
    const auto v = enc.values();
    out.push_back(Tensor<T>::constant(1, enc.cols(), std::vector<T>(v.begin(), v.begin() + enc.cols())));
  }
  return out;
}

std::vector<double> video_mean_hr(const Dataset& data, std::span<const double> per_clip, std::vector<double>& gt,
                                  std::vector<std::string>& ids) {
  std::map<std::string, std::size_t> slot;
  std::vector<double> sum, count, out;
  gt.clear();
  ids.clear();
  for (std::size_t i = 0; i < data.clips.size(); ++i) {
    const auto& c = data.clips[i];
    auto [it, fresh] = slot.try_emplace(c.video, sum.size());
    if (fresh) {
      sum.push_back(0.0);
      count.push_back(0.0);
      gt.push_back(c.hr_gt);
      ids.push_back(c.video);
    }
    sum[it->second] += per_clip[i];
    count[it->second] += 1.0;
  }
  for (std::size_t k = 0; k < sum.size(); ++k) out.push_back(sum[k] / count[k]);
  return out;
}

template <typename T>
ProbeResult probe_impl(const Dataset& train, const Dataset& test, const ModelConfig& model0, const TrainConfig& cfg,
                       const nn::Checkpoint* encoder_ckpt, const RunIo& io, bool video_mean) {
  const ModelConfig model = fit_model(model0, train);
  const obj::HrBins bins;
  Net<T> net(model, synth::mix_seed(cfg.seed, 103));
  if (encoder_ckpt) nn::load_params(net.store, *encoder_ckpt, nn::LoadMode::Partial);
  net.probe.emplace(net.store, model.encoder, bins.count());
  net.store.set_trainable("encoder.", false);
  const std::uint64_t before = parameter_digest(nn::snapshot(net.store, ""), "encoder.");

  std::vector<std::size_t> target;
  for (const auto& c : train.clips) {
    if (!c.labeled) fail(ErrorCode::LabelLengthMismatch, "clip " + c.id + " has no HR label");
    target.push_back(bins.bin_of(c.hr_gt));
  }
  const auto feats = class_tokens(net.encoder, train, model);
  const SampleLoss<T> loss_of = [&](std::size_t i, std::size_t) {
    return nn::cross_entropy_logits((*net.probe)(feats[i]), target[i]);
  };
  json run = run_header(model, cfg, train);
  if (encoder_ckpt) run["init_digest"] = std::to_string(parameter_digest(*encoder_ckpt, "encoder."));
  LoopSpec spec{"probe", run, train.clips.size(), {}};
  ProbeResult out;
  out.train = train_loop<T>(net.store, cfg, spec, loss_of, io);
  if (parameter_digest(out.train.checkpoint, "encoder.") != before) {
    fail(ErrorCode::CheckpointMismatch, "encoder weights changed during linear probing");
  }

  const auto test_feats = class_tokens(net.encoder, test, model);
  std::vector<double> pred, gt;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < test.clips.size(); ++i) {
    const Tensor<T> out_t = (*net.probe)(test_feats[i]);
    const auto logits = out_t.values();
    const auto best = std::size_t(std::max_element(logits.begin(), logits.end()) - logits.begin());
    pred.push_back(bins.center(best));
    gt.push_back(test.clips[i].hr_gt);
    ids.push_back(test.clips[i].id);
  }
  if (video_mean) pred = video_mean_hr(test, pred, gt, ids);
  out.report = compute_metrics(pred, gt, ids);
  return out;
}

template <typename T>
Evaluation evaluate_impl(const nn::Checkpoint& ckpt, const ModelConfig& model0, const Dataset& data, bool video_mean) {
  const ModelConfig model = fit_model(model0, data);
  check_shapes(data);
  Net<T> net(model, 0);
  net.head.emplace(net.store, model.encoder, data.clips.front().map.width);
  nn::load_params(net.store, ckpt, nn::LoadMode::Strict);
  const auto full = stmap::MaskPlan::full(model.encoder.seq_side, model.encoder.patch_size);

  Evaluation ev;
  double rsum = 0.0;
  std::size_t rcount = 0;
  for (const auto& c : data.clips) {
    const Tensor<T> y = (*net.head)(net.encoder(all_patches<T>(c.map, model.encoder.patch_size), full));
    const auto v = y.values();
    ClipPrediction p{c.id, std::vector<double>(v.begin(), v.end())};
    if (c.labeled && c.bvp.size() == p.signal.size()) {
      rsum += dsp::pearson(p.signal, c.bvp);
      ++rcount;
    }
    ev.predictions.push_back(std::move(p));
  }
  ev.mean_pearson = rcount ? rsum / double(rcount) : 0.0;

  std::vector<double> pred, gt;
  std::vector<std::string> ids;
  if (video_mean) {
    std::map<std::string, std::vector<std::size_t>> by_video;
    std::vector<std::string> order;
    for (std::size_t i = 0; i < data.clips.size(); ++i) {
      auto& v = by_video[data.clips[i].video];
      if (v.empty()) order.push_back(data.clips[i].video);
      v.push_back(i);
    }
    for (const auto& vid : order) {
      const auto& idx = by_video[vid];
      const auto& first = data.clips[idx.front()];
      if (!first.labeled) continue;
      std::vector<std::span<const double>> parts;
      std::vector<std::size_t> starts;
      for (auto i : idx) {
        parts.emplace_back(ev.predictions[i].signal);
        starts.push_back(data.clips[i].start);
      }
      const auto sig = assemble_video(parts, starts, first.video_frames);
      pred.push_back(estimate_hr(sig, first.map.fs));
      gt.push_back(first.hr_gt);
      ids.push_back(vid);
    }
  } else {
    for (std::size_t i = 0; i < data.clips.size(); ++i) {
      const auto& c = data.clips[i];
      if (!c.labeled) continue;
      pred.push_back(estimate_hr(ev.predictions[i].signal, c.map.fs));
      gt.push_back(c.hr_gt);
      ids.push_back(c.id);
    }
  }
  if (pred.size() >= 2) ev.report = compute_metrics(pred, gt, ids);
  return ev;
}

}  // namespace

TrainResult pretrain(const Dataset& data, const ModelConfig& model, const TrainConfig& cfg, const RunIo& io) {
  cfg.validate();
  check_shapes(data, cfg.stmap_variant);
  return cfg.numeric_mode == NumericMode::F64 ? pretrain_impl<double>(data, model, cfg, io)
                                              : pretrain_impl<float>(data, model, cfg, io);
}

TrainResult finetune(const Dataset& labeled, const ModelConfig& model, const TrainConfig& cfg, const InitSpec& init,
                     const RunIo& io) {
  cfg.validate();
  check_shapes(labeled, cfg.stmap_variant);
  return cfg.numeric_mode == NumericMode::F64 ? finetune_impl<double>(labeled, model, cfg, init, io)
                                              : finetune_impl<float>(labeled, model, cfg, init, io);
}

ProbeResult linear_probe(const Dataset& train, const Dataset& test, const ModelConfig& model, const TrainConfig& cfg,
                         const nn::Checkpoint* encoder, const RunIo& io, bool video_mean) {
  cfg.validate();
  check_shapes(train, cfg.stmap_variant);
  check_shapes(test, cfg.stmap_variant);
  return cfg.numeric_mode == NumericMode::F64 ? probe_impl<double>(train, test, model, cfg, encoder, io, video_mean)
                                              : probe_impl<float>(train, test, model, cfg, encoder, io, video_mean);
}

Evaluation evaluate(const nn::Checkpoint& ckpt, const ModelConfig& model, const Dataset& data, NumericMode mode,
                    bool video_mean) {
  return mode == NumericMode::F64 ? evaluate_impl<double>(ckpt, model, data, video_mean)
                                  : evaluate_impl<float>(ckpt, model, data, video_mean);
}

namespace {

template <typename T>
Reconstruction reconstruct_impl(const nn::Checkpoint& ckpt, const stmap::STMap& map, double mask_ratio,
                                std::uint64_t seed) {
  const ModelConfig model = checkpoint_model(ckpt);
  const std::size_t P = model.encoder.patch_size, H = model.map_side();
  if (map.height != H || map.width != H || map.channels != model.encoder.in_channels) {
    fail(ErrorCode::ShapeMismatch, "map does not match the checkpoint's " + std::to_string(H) + "x" +
                                       std::to_string(H) + "x" + std::to_string(model.encoder.in_channels) + " input");
  }
  Net<T> net(model, 0);
  net.decoder.emplace(net.store, model.decoder, model.encoder.dim, model.encoder.use_class_token);
  nn::load_params(net.store, ckpt, nn::LoadMode::Strict);
  const auto patches = stmap::patchify(map, P);
  const auto plan = stmap::make_mask_plan(H, P, mask_ratio, seed);
  const Tensor<T> kept = nn::patch_rows<T>(patches.values, patches.cols, plan.kept_indices);
  const Tensor<T> out = (*net.decoder)(net.encoder(kept, plan), plan);
  stmap::PatchMatrix rec{patches.rows, patches.cols, {}};
  const auto v = out.values();
  rec.values.assign(v.begin(), v.end());
  stmap::PatchMatrix hidden = patches;
  for (std::size_t p : plan.masked_indices)
    for (double& x : hidden.row(p)) x = 0.0;
  Reconstruction r;
  r.original = map;
  r.masked = stmap::unpatchify(hidden, H, H, map.channels, P, map.fs, map.variant);
  r.reconstructed = stmap::unpatchify(rec, H, H, map.channels, P, map.fs, map.variant);
  return r;
}

}  // namespace

Reconstruction reconstruct(const nn::Checkpoint& ckpt, const stmap::STMap& map, double mask_ratio, std::uint64_t seed) {
  if (checkpoint_kind(ckpt) != "pretrain") {
    fail(ErrorCode::CheckpointMismatch, "reconstruction needs a pre-training checkpoint");
  }
  return reconstruct_impl<float>(ckpt, map, mask_ratio, seed);
}

ModelConfig checkpoint_model(const nn::Checkpoint& ckpt) {
  try {
    const json meta = json::parse(ckpt.config);
    return cfg::model_from_json(meta.at("run").at("model"), ModelConfig::desk(), "checkpoint.model");
  } catch (const json::exception& e) {
    fail(ErrorCode::CheckpointMismatch, std::string("checkpoint carries no model description: ") + e.what());
  }
}

std::string checkpoint_kind(const nn::Checkpoint& ckpt) {
  try {
    return json::parse(ckpt.config).at("kind").get<std::string>();
  } catch (const json::exception& e) {
    fail(ErrorCode::CheckpointMismatch, std::string("checkpoint carries no kind: ") + e.what());
  }
}

}  // namespace rppg::pipe
