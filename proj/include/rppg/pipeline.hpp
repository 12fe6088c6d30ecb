// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rppg/nn/checkpoint.hpp"
#include "rppg/nn/transformer.hpp"
#include "rppg/objectives.hpp"
#include "rppg/stmap.hpp"
#include "rppg/synthgen.hpp"

namespace rppg::pipe {

enum class Stage { Pretrain, Finetune, Probe };
enum class NumericMode { F32, F64 };

std::string_view to_string(Stage s);
std::optional<Stage> parse_stage(std::string_view name);

struct TrainConfig {
  Stage stage = Stage::Pretrain;
  std::size_t epochs = 400;
  std::size_t batch_size = 64;
  double base_lr = 1e-3;
  double warmup_epochs = 40;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.05;
  double layer_decay = 0.75;  // fine-tuning only
  double mask_ratio = 0.8;
  stmap::Variant stmap_variant = stmap::Variant::PC;
  double lambda = 0.0;
  double gamma = 1.0;
  std::uint64_t seed = 1;
  NumericMode numeric_mode = NumericMode::F32;
  /// Epochs between resumable checkpoints written to the run directory; 0 writes only the final one.
  std::size_t checkpoint_every = 10;

  static TrainConfig defaults(Stage stage);
  void validate() const;
};

struct ModelConfig {
  nn::EncoderConfig encoder;
  nn::DecoderConfig decoder;

  /// ViT-B/16 encoder on 224x224 maps with an 8-block, 128-wide decoder.
  static ModelConfig base(std::size_t channels = 6);
  /// 64x64 maps, 8x8 patches, 4 blocks of width 64, decoder 2 x 32.
  static ModelConfig desk(std::size_t channels = 6);

  std::size_t map_side() const { return encoder.patch_size * encoder.seq_side; }
  void validate() const;
};

/// Video-level input: one trace set, its subject, and the label HR.
struct VideoRecord {
  std::string id;
  std::string subject;
  synth::RoiTraceSet traces;
};

struct ClipOptions {
  stmap::Variant variant = stmap::Variant::PC;
  std::size_t clip_len = 224;
  std::size_t step = 5;
  std::size_t rows = 0;  // rows after resizing; 0 means clip_len
  stmap::BuildOptions build;

  std::size_t height() const { return rows == 0 ? clip_len : rows; }
};

struct Clip {
  std::string id;  // "<video>#<index>"
  std::string video;
  std::string subject;
  std::size_t start = 0;
  std::size_t video_frames = 0;
  stmap::STMap map;
  std::vector<double> bvp;  // aligned label segment, empty when unlabeled
  double hr_gt = 0.0;
  bool labeled = false;
};

struct Dataset {
  std::string name;
  ClipOptions options;
  std::vector<VideoRecord> videos;
  std::vector<Clip> clips;

  std::vector<std::string> subjects() const;
  /// All clips (and their videos) whose subject satisfies `keep`.
  Dataset filter_subjects(const std::function<bool(const std::string&)>& keep) const;
};

/// Builds STMaps for every video, crops overlapping clips and resizes rows.
Dataset make_dataset(std::string name, std::vector<VideoRecord> videos, const ClipOptions& opts);
/// Reads manifest.json plus its trace files. STMaps are cached under
/// $RPPG_LAB_CACHE when that variable is set.
Dataset load_dataset(const std::string& dir, const ClipOptions& opts);

/// Randomized synthetic subjects with per-video heart and breathing rates.
struct BenchmarkConfig {
  std::string name = "synth";
  std::size_t subjects = 5;
  std::size_t videos_per_subject = 4;
  double hr_lo_bpm = 45.0;
  double hr_hi_bpm = 150.0;
  double rf_lo_hz = 0.15;
  double rf_hi_hz = 0.4;
  synth::SynthConfig base;
  std::uint64_t seed = 1;
};

std::vector<VideoRecord> synth_benchmark(const BenchmarkConfig& cfg);

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;
  double lr = 0.0;        // lr at the last step of the epoch
};

struct RunIo {
  std::string out_dir;  // empty: nothing is written
  bool resume = false;
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  nn::Checkpoint checkpoint;
  std::vector<EpochLog> log;
};

enum class InitMode { Random, Checkpoint, Partial };

struct InitSpec {
  InitMode mode = InitMode::Random;
  const nn::Checkpoint* checkpoint = nullptr;
};

/// Masked-autoencoder pre-training; the result holds encoder and decoder.
TrainResult pretrain(const Dataset& data, const ModelConfig& model, const TrainConfig& cfg, const RunIo& io = {});

/// Encoder plus linear signal head trained on labeled clips with the fine-tuning loss.
TrainResult finetune(const Dataset& labeled, const ModelConfig& model, const TrainConfig& cfg,
                     const InitSpec& init = {}, const RunIo& io = {});

struct MetricRow {
  std::string id;
  double pred_hr = 0.0;
  double gt_hr = 0.0;
  double abs_err = 0.0;
};

struct MetricReport {
  double mean_ae = 0.0;
  double rmse = 0.0;
  double std = 0.0;
  double pearson_r = 0.0;
  std::vector<MetricRow> rows;
};

MetricReport compute_metrics(std::span<const double> pred_hr, std::span<const double> gt_hr,
                             std::span<const std::string> ids = {});

struct ProbeResult {
  TrainResult train;
  MetricReport report;
};

/// Linear classifier over the frozen class token. `encoder` supplies the
/// encoder weights (partial load); null means a randomly initialised encoder.
ProbeResult linear_probe(const Dataset& train, const Dataset& test, const ModelConfig& model, const TrainConfig& cfg,
                         const nn::Checkpoint* encoder, const RunIo& io = {}, bool video_mean = false);

struct SemiSplit {
  Dataset unlabeled;
  Dataset labeled;
};

/// Subject-disjoint when clips carry subject ids, otherwise per clip.
SemiSplit semi_split(const Dataset& data, double labeled_fraction, std::uint64_t seed);

/// Subjects ranked by hash and dealt round-robin into `folds` groups.
std::vector<std::size_t> subject_folds(const std::vector<std::string>& subjects, std::size_t folds);

double estimate_hr(std::span<const double> signal, double fs);

struct PhysioEstimate {
  double hr_bpm = 0.0;
  double lf_nu = 0.5;
  double hf_nu = 0.5;
  double lf_hf = 0.0;
  double rf_hz = 0.0;
  std::size_t beats = 0;
  /// True when the beat series shows no measurable variability; lf_hf is then 0.
  bool regular = false;
};

PhysioEstimate estimate_hrv_rf(std::span<const double> signal, double fs);

/// Systolic peaks: local maxima at least `min_distance` apart with the given prominence.
std::vector<std::size_t> find_peaks(std::span<const double> x, std::size_t min_distance, double min_prominence);

struct ClipPrediction {
  std::string clip_id;
  std::vector<double> signal;
};

struct Evaluation {
  MetricReport report;
  double mean_pearson = 0.0;  // mean clip-level Pearson of predicted vs. label signal
  std::vector<ClipPrediction> predictions;
};

/// Runs a fine-tuned checkpoint on every clip. With video_mean the clip
/// signals are overlap-averaged per video before the HR read-out.
Evaluation evaluate(const nn::Checkpoint& ckpt, const ModelConfig& model, const Dataset& data, NumericMode mode,
                    bool video_mean = false);

struct Reconstruction {
  stmap::STMap original;
  stmap::STMap masked;         // masked patches set to zero
  stmap::STMap reconstructed;  // decoder output for every patch
};

/// Runs a pre-trained encoder and decoder on one map under a fresh mask.
Reconstruction reconstruct(const nn::Checkpoint& ckpt, const stmap::STMap& map, double mask_ratio, std::uint64_t seed);

/// Model description stored in a checkpoint written by this pipeline.
ModelConfig checkpoint_model(const nn::Checkpoint& ckpt);
/// "pretrain", "finetune" or "probe".
std::string checkpoint_kind(const nn::Checkpoint& ckpt);

/// Overlap-averages z-scored clip signals onto the video timeline.
std::vector<double> assemble_video(const std::vector<std::span<const double>>& clips,
                                   std::span<const std::size_t> starts, std::size_t frames);

/// FNV-1a over every parameter value; equal digests mean bit-identical weights.
std::uint64_t parameter_digest(const nn::Checkpoint& ckpt, std::string_view prefix = "");

enum class Protocol { Intra, Transfer, Cross, Semi, Probe, Ablate };
enum class AblationAxis { Variant, Lambda, MaskRatio, DecoderDepth, DecoderDim, Epochs };

std::string_view to_string(Protocol p);
std::optional<Protocol> parse_protocol(std::string_view name);
std::string_view to_string(AblationAxis a);
std::optional<AblationAxis> parse_axis(std::string_view name);

struct ProtocolConfig {
  Protocol protocol = Protocol::Intra;
  ModelConfig model = ModelConfig::desk();
  TrainConfig pretrain = TrainConfig::defaults(Stage::Pretrain);
  TrainConfig finetune = TrainConfig::defaults(Stage::Finetune);
  TrainConfig probe = TrainConfig::defaults(Stage::Probe);
  std::size_t folds = 5;
  double labeled_fraction = 0.1;
  bool video_mean = false;
  AblationAxis axis = AblationAxis::MaskRatio;
  std::vector<std::string> values;
  std::size_t jobs = 1;
  std::string out_dir;
  bool resume = false;
};

struct NamedReport {
  std::string name;
  MetricReport report;
  std::vector<std::pair<std::string, double>> extra;
};

struct ProtocolResult {
  std::vector<NamedReport> reports;
  /// Ablation table, one row per grid point (empty for other protocols).
  std::vector<std::string> table_header;
  std::vector<std::vector<std::string>> table;
};

/// `b` is the second dataset for transfer and cross runs.
ProtocolResult run_protocol(const ProtocolConfig& cfg, const Dataset& a, const Dataset* b = nullptr);

/// Model shape adapted to a dataset: channel count and patch grid from its clips.
ModelConfig fit_model(ModelConfig model, const Dataset& data);

std::string_view git_describe();

/// JSON summary: the four metrics, extra values, a config echo (JSON text) and git-describe.
void write_summary_json(const std::string& path, const MetricReport& report, const std::string& config_json,
                        const std::vector<std::pair<std::string, double>>& extra = {});
/// Rows of strings with a header, comma-separated.
void write_table_csv(const std::string& path, const std::vector<std::string>& header,
                     const std::vector<std::vector<std::string>>& rows);
/// Protocol settings as JSON text.
std::string describe(const ProtocolConfig& cfg);

void write_report_csv(const std::string& path, const MetricReport& report);
void write_loss_csv(const std::string& path, std::span<const EpochLog> log);

}  // namespace rppg::pipe
