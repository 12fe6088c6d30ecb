// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rppg/nn/optim.hpp"
#include "rppg/nn/transformer.hpp"

namespace rppg::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

/// "RMAE" file: version, config text (JSON), named parameter table.
struct Checkpoint {
  std::string config;
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Names of optimizer moments in the table are prefixed with this.
inline constexpr std::string_view kOptimPrefix = "optim/";

template <typename T>
Checkpoint snapshot(const ParamStore<T>& store, std::string config, const OptimState<T>* optim = nullptr);

enum class LoadMode {
  Strict,   // table and store must match name-for-name and shape-for-shape
  Partial,  // copy only encoder.* weights, leave everything else as initialized
};

template <typename T>
void load_params(ParamStore<T>& store, const Checkpoint& ckpt, LoadMode mode);

/// Restores moments saved by snapshot(); false when the checkpoint has none.
template <typename T>
bool load_optim_state(const ParamStore<T>& store, const Checkpoint& ckpt, OptimState<T>& state);

}  // namespace rppg::nn
