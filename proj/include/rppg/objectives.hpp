// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>

#include "rppg/nn/ops.hpp"
#include "rppg/stmap.hpp"

namespace rppg::obj {

using nn::Tensor;

struct PretrainLossCfg {
  double lambda = 0.0;
  void validate() const;
};

/// Heart-rate classes lo, lo + step, ..., hi (bpm).
struct HrBins {
  double lo_bpm = 36.0;
  double hi_bpm = 180.0;
  double step_bpm = 1.0;

  std::size_t count() const;
  double center(std::size_t bin) const { return lo_bpm + step_bpm * double(bin); }
  /// Nearest class; HrOutOfRange outside [lo, hi].
  std::size_t bin_of(double bpm) const;
  void validate() const;
};

struct FinetuneLossCfg {
  double gamma = 1.0;
  HrBins bins;
  void validate() const;
};

/// Ground truth for one reconstruction: patch table, mask plan and the map itself.
struct ReconTarget {
  stmap::PatchMatrix gt_patches;
  stmap::MaskPlan plan;
  stmap::STMap gt_map;

  static ReconTarget make(const stmap::STMap& map, const stmap::MaskPlan& plan);
};

/// MSE over masked patches only.
template <typename T>
Tensor<T> pixel_loss(const Tensor<T>& pred_patches, const ReconTarget& target);

/// Mean over (channel, row) of 1 - Pearson(pred row, gt row) on the map
/// reassembled with ground truth at kept patches.
template <typename T>
Tensor<T> rppg_recon_loss(const Tensor<T>& pred_patches, const ReconTarget& target);

template <typename T>
Tensor<T> pretrain_loss(const Tensor<T>& pred_patches, const ReconTarget& target, const PretrainLossCfg& cfg);

/// 1 - Pearson for [1, T] signals.
template <typename T>
Tensor<T> negative_pearson_loss(const Tensor<T>& pred, const Tensor<T>& gt);

/// Frequencies used to histogram a length-n signal into HR classes: every
/// class gets the same number of evenly spaced points across its width,
/// between 4 and 64 depending on the clip's spectral resolution.
nn::SpectralPlan hr_spectral_plan(std::size_t length, double fs, const HrBins& bins);

/// Class probabilities p (L1-normalized band power, floored at 1e-12) as plain values.
std::vector<double> hr_class_probabilities(std::span<const double> signal, double fs, const HrBins& bins);

/// -log p[class of gt_hr].
template <typename T>
Tensor<T> frequency_ce_loss(const Tensor<T>& pred, double fs, double gt_hr_bpm, const FinetuneLossCfg& cfg);
template <typename T>
Tensor<T> frequency_ce_loss(const Tensor<T>& pred, const nn::SpectralPlan& plan, double gt_hr_bpm,
                            const FinetuneLossCfg& cfg);

template <typename T>
Tensor<T> finetune_loss(const Tensor<T>& pred, const Tensor<T>& gt, double fs, double gt_hr_bpm,
                        const FinetuneLossCfg& cfg);

}  // namespace rppg::obj
