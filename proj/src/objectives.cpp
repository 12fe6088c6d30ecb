// SPDX-License-Identifier: Apache-2.0
#include "rppg/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "rppg/nn/transformer.hpp"

namespace rppg::obj {

using nn::SpectralPlan;

void PretrainLossCfg::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) fail(ErrorCode::InvalidConfig, "lambda must lie in [0, 1]");
}

std::size_t HrBins::count() const {
  return static_cast<std::size_t>(std::floor((hi_bpm - lo_bpm) / step_bpm + 1e-9)) + 1;
}

std::size_t HrBins::bin_of(double bpm) const {
  if (!(bpm >= lo_bpm && bpm <= hi_bpm)) {
    fail(ErrorCode::HrOutOfRange, "heart rate " + std::to_string(bpm) + " bpm outside [" + std::to_string(lo_bpm) +
                                      ", " + std::to_string(hi_bpm) + "]");
  }
  return std::min(count() - 1, static_cast<std::size_t>(std::lround((bpm - lo_bpm) / step_bpm)));
}

void HrBins::validate() const {
  if (!(lo_bpm > 0.0 && lo_bpm < hi_bpm)) fail(ErrorCode::InvalidConfig, "hr_bins: need 0 < lo_bpm < hi_bpm");
  if (!(step_bpm > 0.0)) fail(ErrorCode::InvalidConfig, "hr_bins.step_bpm must be positive");
}

void FinetuneLossCfg::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) fail(ErrorCode::InvalidConfig, "gamma must lie in [0, 1]");
  bins.validate();
}

ReconTarget ReconTarget::make(const stmap::STMap& map, const stmap::MaskPlan& plan) {
  return {stmap::patchify(map, plan.patch_size), plan, map};
}

namespace {

template <typename T>
void check_pred(const Tensor<T>& pred, const ReconTarget& target) {
  if (pred.rows() != target.gt_patches.rows || pred.cols() != target.gt_patches.cols) {
    fail(ErrorCode::ShapeMismatch, "prediction shape [" + std::to_string(pred.rows()) + "," +
                                       std::to_string(pred.cols()) + "] differs from target [" +
                                       std::to_string(target.gt_patches.rows) + "," +
                                       std::to_string(target.gt_patches.cols) + "]");
  }
}

template <typename T>
Tensor<T> one_minus(const Tensor<T>& x) {
  return nn::shift(nn::scale(x, T(-1)), T(1));
}

}  // namespace

template <typename T>
Tensor<T> pixel_loss(const Tensor<T>& pred_patches, const ReconTarget& target) {
  check_pred(pred_patches, target);
  const auto& masked = target.plan.masked_indices;
  if (masked.empty()) fail(ErrorCode::EmptyMask, "pixel loss needs at least one masked patch");
  const std::span<const std::size_t> idx(masked);
  const Tensor<T> pred = nn::gather_rows(pred_patches, idx);
  const Tensor<T> gt = nn::patch_rows<T>(target.gt_patches.values, target.gt_patches.cols, idx);
  return nn::mean(nn::square(nn::sub(pred, gt)));
}

template <typename T>
Tensor<T> rppg_recon_loss(const Tensor<T>& pred_patches, const ReconTarget& target) {
  check_pred(pred_patches, target);
  const auto& map = target.gt_map;
  const std::size_t P = target.plan.patch_size, G = target.plan.grid, C = map.channels;
  const std::size_t H = map.height, W = map.width;
  const std::size_t flat = target.gt_patches.values.size();

  std::vector<bool> kept(G * G, false);
  for (auto k : target.plan.kept_indices) kept[k] = true;

  // Pool = [predicted patches | gt patches]; each assembled row takes masked
  // content from the first half and kept content from the second.
  std::vector<std::size_t> index(H * C * W);
  std::vector<T> gt_rows(H * C * W);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t x = 0; x < W; ++x) {
        const std::size_t p = (y / P) * G + x / P;
        const std::size_t e = p * target.gt_patches.cols + ((y % P) * P + x % P) * C + c;
        const std::size_t out = (y * C + c) * W + x;
        index[out] = kept[p] ? flat + e : e;
        gt_rows[out] = T(map.at(y, x, c));
      }
    }
  }
  const Tensor<T> gt_flat = Tensor<T>::constant(
      1, flat, std::vector<T>(target.gt_patches.values.begin(), target.gt_patches.values.end()));
  const Tensor<T> pool = nn::concat_cols<T>({nn::reshape(pred_patches, 1, flat), gt_flat});
  const Tensor<T> rows = nn::gather_elements(pool, std::span<const std::size_t>(index), H * C, W);
  const Tensor<T> gt = Tensor<T>::constant(H * C, W, std::move(gt_rows));
  return one_minus(nn::mean(nn::row_pearson(rows, gt)));
}

template <typename T>
Tensor<T> pretrain_loss(const Tensor<T>& pred_patches, const ReconTarget& target, const PretrainLossCfg& cfg) {
  cfg.validate();
  if (cfg.lambda == 1.0) return pixel_loss(pred_patches, target);
  if (cfg.lambda == 0.0) return rppg_recon_loss(pred_patches, target);
  return nn::add(nn::scale(pixel_loss(pred_patches, target), T(cfg.lambda)),
                 nn::scale(rppg_recon_loss(pred_patches, target), T(1.0 - cfg.lambda)));
}

template <typename T>
Tensor<T> negative_pearson_loss(const Tensor<T>& pred, const Tensor<T>& gt) {
  if (pred.size() != gt.size()) {
    fail(ErrorCode::LengthMismatch, "negative Pearson: lengths " + std::to_string(pred.size()) + " and " +
                                        std::to_string(gt.size()) + " differ");
  }
  const Tensor<T> a = nn::reshape(pred, 1, pred.size());
  const Tensor<T> b = nn::reshape(gt, 1, gt.size());
  return one_minus(nn::row_pearson(a, b));
}

SpectralPlan hr_spectral_plan(std::size_t length, double fs, const HrBins& bins) {
  bins.validate();
  if (length < 2) fail(ErrorCode::TooShortInput, "spectral plan needs at least 2 samples");
  if (fs * 30.0 <= bins.hi_bpm + bins.step_bpm) fail(ErrorCode::InvalidBand, "HR classes exceed the Nyquist rate");
  // Samples per class follow the spectral resolution 60 fs / n bpm of the clip.
  const double resolution_bpm = 60.0 * fs / double(length);
  const auto per_class =
      static_cast<std::size_t>(std::clamp(std::ceil(bins.step_bpm / resolution_bpm), 4.0, 64.0));
  SpectralPlan plan;
  plan.length = length;
  plan.fs = fs;
  plan.bins = bins.count();
  for (std::size_t b = 0; b < plan.bins; ++b) {
    for (std::size_t j = 0; j < per_class; ++j) {
      const double bpm = bins.center(b) + bins.step_bpm * ((double(j) + 0.5) / double(per_class) - 0.5);
      plan.freqs.push_back(bpm / 60.0);
      plan.bin_of.push_back(b);
    }
  }
  return plan;
}

namespace {

constexpr double kProbFloor = 1e-12;

template <typename T>
Tensor<T> class_probabilities(const Tensor<T>& pred, const SpectralPlan& plan) {
  const Tensor<T> power = nn::band_power(nn::reshape(pred, 1, pred.size()), plan);
  const Tensor<T> total = nn::clamp_min(nn::sum(power), T(1e-30));
  return nn::clamp_min(nn::div_scalar(power, total), T(kProbFloor));
}

}  // namespace

std::vector<double> hr_class_probabilities(std::span<const double> signal, double fs, const HrBins& bins) {
  const SpectralPlan plan = hr_spectral_plan(signal.size(), fs, bins);
  const auto p = class_probabilities(Tensor<double>::constant(1, signal.size(), {signal.begin(), signal.end()}), plan);
  return {p.values().begin(), p.values().end()};
}

template <typename T>
Tensor<T> frequency_ce_loss(const Tensor<T>& pred, const SpectralPlan& plan, double gt_hr_bpm,
                            const FinetuneLossCfg& cfg) {
  const std::size_t target = cfg.bins.bin_of(gt_hr_bpm);
  if (plan.bins != cfg.bins.count()) fail(ErrorCode::ShapeMismatch, "spectral plan built for other HR classes");
  const Tensor<T> p = class_probabilities(pred, plan);
  return nn::scale(nn::log(nn::gather_elements(p, std::span<const std::size_t>(&target, 1), 1, 1)), T(-1));
}

template <typename T>
Tensor<T> frequency_ce_loss(const Tensor<T>& pred, double fs, double gt_hr_bpm, const FinetuneLossCfg& cfg) {
  cfg.bins.bin_of(gt_hr_bpm);
  return frequency_ce_loss(pred, hr_spectral_plan(pred.size(), fs, cfg.bins), gt_hr_bpm, cfg);
}

template <typename T>
Tensor<T> finetune_loss(const Tensor<T>& pred, const Tensor<T>& gt, double fs, double gt_hr_bpm,
                        const FinetuneLossCfg& cfg) {
  cfg.validate();
  if (cfg.gamma == 1.0) return negative_pearson_loss(pred, gt);
  if (cfg.gamma == 0.0) return frequency_ce_loss(pred, fs, gt_hr_bpm, cfg);
  return nn::add(nn::scale(negative_pearson_loss(pred, gt), T(cfg.gamma)),
                 nn::scale(frequency_ce_loss(pred, fs, gt_hr_bpm, cfg), T(1.0 - cfg.gamma)));
}

#define RPPG_OBJ_INSTANTIATE(T)                                                                            \
  template Tensor<T> pixel_loss<T>(const Tensor<T>&, const ReconTarget&);                                  \
  template Tensor<T> rppg_recon_loss<T>(const Tensor<T>&, const ReconTarget&);                             \
  template Tensor<T> pretrain_loss<T>(const Tensor<T>&, const ReconTarget&, const PretrainLossCfg&);       \
  template Tensor<T> negative_pearson_loss<T>(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> frequency_ce_loss<T>(const Tensor<T>&, double, double, const FinetuneLossCfg&);       \
  template Tensor<T> frequency_ce_loss<T>(const Tensor<T>&, const SpectralPlan&, double,                   \
                                          const FinetuneLossCfg&);                                         \
  template Tensor<T> finetune_loss<T>(const Tensor<T>&, const Tensor<T>&, double, double,                  \
                                      const FinetuneLossCfg&);

RPPG_OBJ_INSTANTIATE(float)
RPPG_OBJ_INSTANTIATE(double)

#undef RPPG_OBJ_INSTANTIATE

}  // namespace rppg::obj
