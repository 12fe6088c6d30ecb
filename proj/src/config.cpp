// SPDX-License-Identifier: Apache-2.0
#include "rppg/config.hpp"

#include <algorithm>

namespace rppg::cfg {

StrictObject::StrictObject(const json& j, std::string path) : j_(j), path_(std::move(path)) {
  if (!j_.is_object()) fail(ErrorCode::InvalidConfig, (path_.empty() ? "config" : path_) + ": expected an object");
}

const json* StrictObject::child(const char* key) {
  seen_.emplace_back(key);
  const auto it = j_.find(key);
  return it == j_.end() ? nullptr : &*it;
}

void StrictObject::finish() const {
  for (const auto& [key, value] : j_.items()) {
    if (std::find(seen_.begin(), seen_.end(), key) == seen_.end()) {
      fail(ErrorCode::InvalidConfig, "unknown key " + (path_.empty() ? key : path_ + "." + key));
    }
  }
}

stmap::Variant parse_variant_or_throw(const std::string& name, const std::string& path) {
  if (const auto v = stmap::parse_variant(name)) return *v;
  std::string legal;
  for (std::uint32_t i = 0; i < stmap::kVariantCount; ++i) {
    if (!legal.empty()) legal += ", ";
    legal += stmap::to_string(static_cast<stmap::Variant>(i));
  }
  fail(ErrorCode::InvalidConfig, path + ": unknown variant '" + name + "' (legal: " + legal + ")");
}

namespace {

std::string mode_name(pipe::NumericMode m) { return m == pipe::NumericMode::F64 ? "f64" : "f32"; }

}  // namespace

json to_json(const synth::SynthConfig& c) {
  return {{"hr_bpm", c.hr_bpm},
          {"rf_hz", c.rf_hz},
          {"duration_s", c.duration_s},
          {"fs", c.fs},
          {"n_rois", c.n_rois},
          {"pulse_amp_rgb", c.pulse_amp_rgb},
          {"illum_drift_amp", c.illum_drift_amp},
          {"motion_noise_std", c.motion_noise_std},
          {"white_noise_std", c.white_noise_std},
          {"rsa_depth", c.rsa_depth},
          {"seed", c.seed}};
}

json to_json(const nn::EncoderConfig& c) {
  return {{"depth", c.depth},           {"dim", c.dim},
          {"heads", c.heads},           {"patch_size", c.patch_size},
          {"in_channels", c.in_channels}, {"use_class_token", c.use_class_token},
          {"seq_side", c.seq_side}};
}

json to_json(const nn::DecoderConfig& c) {
  return {{"depth", c.depth},           {"dim", c.dim},          {"heads", c.heads},
          {"patch_size", c.patch_size}, {"in_channels", c.in_channels}, {"seq_side", c.seq_side}};
}

json to_json(const pipe::ModelConfig& c) { return {{"encoder", to_json(c.encoder)}, {"decoder", to_json(c.decoder)}}; }

json to_json(const pipe::TrainConfig& c) {
  return {{"stage", pipe::to_string(c.stage)},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"base_lr", c.base_lr},
          {"warmup_epochs", c.warmup_epochs},
          {"betas", {c.beta1, c.beta2}},
          {"weight_decay", c.weight_decay},
          {"layer_decay", c.layer_decay},
          {"mask_ratio", c.mask_ratio},
          {"stmap_variant", stmap::to_string(c.stmap_variant)},
          {"lambda", c.lambda},
          {"gamma", c.gamma},
          {"seed", c.seed},
          {"numeric_mode", mode_name(c.numeric_mode)},
          {"checkpoint_every", c.checkpoint_every}};
}

json to_json(const pipe::ClipOptions& c) {
  return {{"variant", stmap::to_string(c.variant)},
          {"clip_len", c.clip_len},
          {"step", c.step},
          {"rows", c.rows},
          {"aug_channels", c.build.aug_channels == stmap::AugChannels::Yuv ? "yuv" : "eq1"},
          {"band_lo_hz", c.build.band_lo_hz},
          {"band_hi_hz", c.build.band_hi_hz},
          {"filter_order", c.build.filter_order},
          {"pos_window_s", c.build.pos_window_s}};
}

json to_json(const pipe::BenchmarkConfig& c) {
  return {{"name", c.name},          {"subjects", c.subjects},   {"videos_per_subject", c.videos_per_subject},
          {"hr_lo_bpm", c.hr_lo_bpm}, {"hr_hi_bpm", c.hr_hi_bpm}, {"rf_lo_hz", c.rf_lo_hz},
          {"rf_hi_hz", c.rf_hi_hz},  {"base", to_json(c.base)},   {"seed", c.seed}};
}

synth::SynthConfig synth_from_json(const json& j, synth::SynthConfig c, const std::string& path) {
  StrictObject o(j, path);
  o.get("hr_bpm", c.hr_bpm);
  o.get("rf_hz", c.rf_hz);
  o.get("duration_s", c.duration_s);
  o.get("fs", c.fs);
  o.get("n_rois", c.n_rois);
  o.get("pulse_amp_rgb", c.pulse_amp_rgb);
  o.get("illum_drift_amp", c.illum_drift_amp);
  o.get("motion_noise_std", c.motion_noise_std);
  o.get("white_noise_std", c.white_noise_std);
  o.get("rsa_depth", c.rsa_depth);
  o.get("seed", c.seed);
  o.finish();
  try {
    synth::validate(c);
  } catch (const Error& e) {
    fail(ErrorCode::InvalidConfig, path + "." + e.what());
  }
  return c;
}

namespace {

void read_encoder(StrictObject& o, nn::EncoderConfig& c) {
  o.get("depth", c.depth);
  o.get("dim", c.dim);
  o.get("heads", c.heads);
  o.get("patch_size", c.patch_size);
  o.get("in_channels", c.in_channels);
  o.get("use_class_token", c.use_class_token);
  o.get("seq_side", c.seq_side);
  o.finish();
}

void read_decoder(StrictObject& o, nn::DecoderConfig& c) {
  o.get("depth", c.depth);
  o.get("dim", c.dim);
  o.get("heads", c.heads);
  o.get("patch_size", c.patch_size);
  o.get("in_channels", c.in_channels);
  o.get("seq_side", c.seq_side);
  o.finish();
}

}  // namespace

pipe::ModelConfig model_from_json(const json& j, pipe::ModelConfig c, const std::string& path) {
  StrictObject o(j, path);
  if (const json* e = o.child("encoder")) {
    StrictObject eo(*e, o.path_of("encoder"));
    read_encoder(eo, c.encoder);
  }
  if (const json* d = o.child("decoder")) {
    StrictObject d_o(*d, o.path_of("decoder"));
    read_decoder(d_o, c.decoder);
  }
  o.finish();
  return c;
}

pipe::TrainConfig train_from_json(const json& j, pipe::TrainConfig c, const std::string& path) {
  StrictObject o(j, path);
  std::string stage(pipe::to_string(c.stage));
  o.get("stage", stage);
  const auto parsed = pipe::parse_stage(stage);
  if (!parsed) fail(ErrorCode::InvalidConfig, o.path_of("stage") + ": unknown stage '" + stage + "'");
  c.stage = *parsed;
  o.get("epochs", c.epochs);
  o.get("batch_size", c.batch_size);
  o.get("base_lr", c.base_lr);
  o.get("warmup_epochs", c.warmup_epochs);
  std::vector<double> betas{c.beta1, c.beta2};
  o.get("betas", betas);
  if (betas.size() != 2) fail(ErrorCode::InvalidConfig, o.path_of("betas") + ": expected two values");
  c.beta1 = betas[0];
  c.beta2 = betas[1];
  o.get("weight_decay", c.weight_decay);
  o.get("layer_decay", c.layer_decay);
  o.get("mask_ratio", c.mask_ratio);
  std::string variant(stmap::to_string(c.stmap_variant));
  o.get("stmap_variant", variant);
  c.stmap_variant = parse_variant_or_throw(variant, o.path_of("stmap_variant"));
  o.get("lambda", c.lambda);
  o.get("gamma", c.gamma);
  o.get("seed", c.seed);
  std::string mode = mode_name(c.numeric_mode);
  o.get("numeric_mode", mode);
  if (mode != "f32" && mode != "f64") fail(ErrorCode::InvalidConfig, o.path_of("numeric_mode") + ": f32 or f64");
  c.numeric_mode = mode == "f64" ? pipe::NumericMode::F64 : pipe::NumericMode::F32;
  o.get("checkpoint_every", c.checkpoint_every);
  o.finish();
  try {
    c.validate();
  } catch (const Error& e) {
    fail(ErrorCode::InvalidConfig, path + ": " + e.what());
  }
  return c;
}

pipe::ClipOptions clips_from_json(const json& j, pipe::ClipOptions c, const std::string& path) {
  StrictObject o(j, path);
  std::string variant(stmap::to_string(c.variant));
  o.get("variant", variant);
  c.variant = parse_variant_or_throw(variant, o.path_of("variant"));
  o.get("clip_len", c.clip_len);
  o.get("step", c.step);
  o.get("rows", c.rows);
  std::string aug = c.build.aug_channels == stmap::AugChannels::Yuv ? "yuv" : "eq1";
  o.get("aug_channels", aug);
  if (aug != "eq1" && aug != "yuv") fail(ErrorCode::InvalidConfig, o.path_of("aug_channels") + ": eq1 or yuv");
  c.build.aug_channels = aug == "yuv" ? stmap::AugChannels::Yuv : stmap::AugChannels::Eq1;
  o.get("band_lo_hz", c.build.band_lo_hz);
  o.get("band_hi_hz", c.build.band_hi_hz);
  o.get("filter_order", c.build.filter_order);
  o.get("pos_window_s", c.build.pos_window_s);
  o.finish();
  if (c.clip_len == 0) fail(ErrorCode::InvalidConfig, o.path_of("clip_len") + " must be positive");
  if (c.step == 0) fail(ErrorCode::InvalidConfig, o.path_of("step") + " must be positive");
  return c;
}

pipe::BenchmarkConfig benchmark_from_json(const json& j, pipe::BenchmarkConfig c, const std::string& path) {
  StrictObject o(j, path);
  o.get("name", c.name);
  o.get("subjects", c.subjects);
  o.get("videos_per_subject", c.videos_per_subject);
  o.get("hr_lo_bpm", c.hr_lo_bpm);
  o.get("hr_hi_bpm", c.hr_hi_bpm);
  o.get("rf_lo_hz", c.rf_lo_hz);
  o.get("rf_hi_hz", c.rf_hi_hz);
  if (const json* b = o.child("base")) c.base = synth_from_json(*b, c.base, o.path_of("base"));
  o.get("seed", c.seed);
  o.finish();
  if (c.subjects == 0 || c.videos_per_subject == 0) fail(ErrorCode::InvalidConfig, path + ": empty benchmark");
  for (const auto& [key, hr] : {std::pair{"hr_lo_bpm", c.hr_lo_bpm}, std::pair{"hr_hi_bpm", c.hr_hi_bpm}}) {
    synth::SynthConfig probe = c.base;
    probe.hr_bpm = hr;
    try {
      synth::validate(probe);
    } catch (const Error& e) {
      fail(ErrorCode::InvalidConfig, o.path_of(key) + ": " + e.what());
    }
  }
  if (!(c.hr_lo_bpm <= c.hr_hi_bpm)) fail(ErrorCode::InvalidConfig, o.path_of("hr_lo_bpm") + " exceeds hr_hi_bpm");
  if (!(c.rf_lo_hz > 0 && c.rf_lo_hz <= c.rf_hi_hz)) fail(ErrorCode::InvalidConfig, o.path_of("rf_lo_hz") + " invalid");
  return c;
}

}  // namespace rppg::cfg
