// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "rppg/nn/transformer.hpp"

namespace rppg::nn {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

template <typename T>
struct OptimState {
  std::size_t step = 0;
  std::vector<std::vector<T>> m;  // one per store slot
  std::vector<std::vector<T>> v;
};

/// AdamW over every trainable slot of a ParamStore.
template <typename T>
class AdamW {
 public:
  AdamW(ParamStore<T>& store, AdamWConfig cfg);

  /// One update at learning rate `lr`. `layer_scale`, when non-empty, multiplies
  /// the lr of each parameter by layer_scale[slot.layer]. Throws NanGradient
  /// naming the first non-finite gradient before touching any parameter.
  void step(double lr, const std::vector<double>& layer_scale = {});

  const AdamWConfig& config() const { return cfg_; }
  OptimState<T>& state() { return state_; }
  const OptimState<T>& state() const { return state_; }

 private:
  ParamStore<T>& store_;
  AdamWConfig cfg_;
  OptimState<T> state_;
};

struct LrSchedule {
  double base_lr = 1e-3;
  double warmup_epochs = 40;
  double total_epochs = 400;
  std::size_t batch_size = 64;

  double peak() const { return base_lr * double(batch_size) / 256.0; }
};

/// Linear warmup to base_lr * batch / 256, then half-cosine decay to 0.
double lr_at(double epoch, const LrSchedule& cfg);

/// decay^(depth - i) for i = 0 (embedding) .. depth (head).
std::vector<double> layerwise_lr_multipliers(std::size_t depth, double layer_decay = 0.75);

}  // namespace rppg::nn
