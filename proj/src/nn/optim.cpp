// SPDX-License-Identifier: Apache-2.0
#include "rppg/nn/optim.hpp"

#include <cmath>
#include <numbers>

namespace rppg::nn {

template <typename T>
AdamW<T>::AdamW(ParamStore<T>& store, AdamWConfig cfg) : store_(store), cfg_(cfg) {
  for (const auto& s : store_.slots()) {
    state_.m.emplace_back(s.tensor.size(), T(0));
    state_.v.emplace_back(s.tensor.size(), T(0));
  }
}

template <typename T>
void AdamW<T>::step(double lr, const std::vector<double>& layer_scale) {
  auto& slots = store_.slots();
  if (state_.m.size() != slots.size()) fail(ErrorCode::ShapeMismatch, "optimizer state does not match parameters");
  for (const auto& s : slots) {
    if (!s.trainable || !s.tensor.has_grad()) continue;
    for (T g : s.tensor.grad()) {
      if (!std::isfinite(double(g))) fail(ErrorCode::NanGradient, "non-finite gradient in parameter " + s.info.name);
    }
  }

  ++state_.step;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, double(state_.step));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, double(state_.step));
  for (std::size_t k = 0; k < slots.size(); ++k) {
    auto& s = slots[k];
    if (!s.trainable) continue;
    double rate = lr;
    if (!layer_scale.empty()) rate *= layer_scale.at(s.info.layer);
    auto p = s.tensor.mutable_values();
    const bool has_grad = s.tensor.has_grad();
    const auto g = has_grad ? s.tensor.grad() : std::span<const T>{};
    auto& m = state_.m[k];
    auto& v = state_.v[k];
    const double wd = s.info.decay ? cfg_.weight_decay : 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      double pi = double(p[i]);
      pi -= rate * wd * pi;
      const double gi = has_grad ? double(g[i]) : 0.0;
      const double mi = cfg_.beta1 * double(m[i]) + (1.0 - cfg_.beta1) * gi;
      const double vi = cfg_.beta2 * double(v[i]) + (1.0 - cfg_.beta2) * gi * gi;
      m[i] = T(mi);
      v[i] = T(vi);
      pi -= rate * (mi / bc1) / (std::sqrt(vi / bc2) + cfg_.eps);
      p[i] = T(pi);
    }
  }
}

double lr_at(double epoch, const LrSchedule& cfg) {
  const double peak = cfg.peak();
  if (epoch < cfg.warmup_epochs) return peak * epoch / cfg.warmup_epochs;
  const double span = cfg.total_epochs - cfg.warmup_epochs;
  if (span <= 0.0) return peak;
  const double progress = std::min(1.0, (epoch - cfg.warmup_epochs) / span);
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

std::vector<double> layerwise_lr_multipliers(std::size_t depth, double layer_decay) {
  if (depth < 1) fail(ErrorCode::InvalidConfig, "layerwise_lr_multipliers: depth must be >= 1");
  std::vector<double> out(depth + 1);
  for (std::size_t i = 0; i <= depth; ++i) out[i] = std::pow(layer_decay, double(depth - i));
  return out;
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace rppg::nn
