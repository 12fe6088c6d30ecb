// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "rppg/nn/ops.hpp"
#include "rppg/nn/tensor.hpp"

namespace rppg::stmap {
struct MaskPlan;
}

namespace rppg::nn {

struct EncoderConfig {
  std::size_t depth = 12;
  std::size_t dim = 768;
  std::size_t heads = 12;
  std::size_t patch_size = 16;
  std::size_t in_channels = 3;
  bool use_class_token = true;
  std::size_t seq_side = 14;  // patch grid side G

  std::size_t patch_dim() const { return patch_size * patch_size * in_channels; }
  std::size_t patch_count() const { return seq_side * seq_side; }
  void validate() const;
};

struct DecoderConfig {
  std::size_t depth = 8;
  std::size_t dim = 128;
  std::size_t heads = 4;
  std::size_t patch_size = 16;
  std::size_t in_channels = 3;
  std::size_t seq_side = 14;

  std::size_t patch_dim() const { return patch_size * patch_size * in_channels; }
  std::size_t patch_count() const { return seq_side * seq_side; }
  void validate() const;
};

struct ParamEntry {
  std::string name;
  std::size_t layer = 0;  // layer id for layer-wise lr decay
  bool decay = true;      // subject to weight decay
};

/// Owns the named trainable tensors of a model. Modules keep shared handles.
template <typename T>
class ParamStore {
 public:
  struct Slot {
    ParamEntry info;
    Tensor<T> tensor;
    bool trainable = true;
  };

  explicit ParamStore(std::uint64_t seed = 0) : rng_(seed) {}

  /// Truncated normal (std 0.02, cut at two std); used for class and mask tokens.
  Tensor<T> add_normal(const std::string& name, std::size_t rows, std::size_t cols, std::size_t layer, bool decay);
  /// Uniform in +-sqrt(6 / (rows + cols)); used for every Linear weight.
  Tensor<T> add_xavier(const std::string& name, std::size_t rows, std::size_t cols, std::size_t layer, bool decay);
  Tensor<T> add_constant(const std::string& name, std::size_t rows, std::size_t cols, T value, std::size_t layer,
                         bool decay);

  std::vector<Slot>& slots() { return slots_; }
  const std::vector<Slot>& slots() const { return slots_; }
  Slot* find(const std::string& name);
  const Slot* find(const std::string& name) const;

  void zero_grad();
  /// Freezes (or unfreezes) every parameter whose name starts with `prefix`.
  void set_trainable(const std::string& prefix, bool on);
  std::size_t scalar_count() const;

 private:
  Tensor<T> add(const std::string& name, std::size_t rows, std::size_t cols, std::vector<T> values,
                std::size_t layer, bool decay);

  std::vector<Slot> slots_;
  std::mt19937_64 rng_;
};

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [1, out]

  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out, std::size_t layer);
  Tensor<T> operator()(const Tensor<T>& x) const { return add_row(matmul(x, weight), bias); }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gamma;
  Tensor<T> beta;

  LayerNorm() = default;
  LayerNorm(ParamStore<T>& store, const std::string& name, std::size_t dim, std::size_t layer);
  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }
};

/// Pre-norm transformer block: x + attn(ln(x)), then x + mlp(ln(x)).
template <typename T>
struct Block {
  std::size_t heads = 1;
  LayerNorm<T> norm1, norm2;
  Linear<T> qkv, proj, fc1, fc2;

  Block() = default;
  Block(ParamStore<T>& store, const std::string& name, std::size_t dim, std::size_t heads, std::size_t layer);
  Tensor<T> operator()(const Tensor<T>& x) const;
};

/// Fixed 2-D sine-cosine positional table [grid*grid, dim]; dim must be a multiple of 4.
std::vector<double> sincos_pos_embed_2d(std::size_t dim, std::size_t grid);

template <typename T>
class Encoder {
 public:
  Encoder(ParamStore<T>& store, const EncoderConfig& cfg);

  /// kept_patches rows follow plan.kept_indices; output [L_k (+1), dim], class token first.
  Tensor<T> operator()(const Tensor<T>& kept_patches, const stmap::MaskPlan& plan) const;
  const EncoderConfig& config() const { return cfg_; }
  std::vector<Block<T>>& blocks() { return blocks_; }

 private:
  EncoderConfig cfg_;
  Linear<T> embed_;
  Tensor<T> cls_;
  Tensor<T> pos_;  // constant [G², dim]
  std::vector<Block<T>> blocks_;
  LayerNorm<T> norm_;
};

template <typename T>
class Decoder {
 public:
  Decoder(ParamStore<T>& store, const DecoderConfig& cfg, std::size_t encoder_dim, bool class_token);

  /// Reconstructed patches [G², patch_dim] in canonical order.
  Tensor<T> operator()(const Tensor<T>& encoded, const stmap::MaskPlan& plan) const;
  const DecoderConfig& config() const { return cfg_; }
  std::vector<Block<T>>& blocks() { return blocks_; }

 private:
  DecoderConfig cfg_;
  bool class_token_;
  Linear<T> embed_;
  Tensor<T> mask_token_;
  Tensor<T> pos_;  // constant [G² (+1), dim], zero row for the class token
  std::vector<Block<T>> blocks_;
  LayerNorm<T> norm_;
  Linear<T> pred_;
};

/// Flattened non-class tokens -> [1, length] signal.
template <typename T>
class SignalHead {
 public:
  SignalHead(ParamStore<T>& store, const EncoderConfig& cfg, std::size_t length);
  Tensor<T> operator()(const Tensor<T>& encoded) const;

 private:
  bool class_token_;
  std::size_t tokens_;
  std::size_t dim_;
  Linear<T> fc_;
};

/// Class token -> [1, bins] logits.
template <typename T>
class ProbeHead {
 public:
  ProbeHead(ParamStore<T>& store, const EncoderConfig& cfg, std::size_t bins);
  Tensor<T> operator()(const Tensor<T>& encoded) const;

 private:
  Linear<T> fc_;
};

/// Patch table rows selected by `index` as a constant tensor.
template <typename T>
Tensor<T> patch_rows(std::span<const double> values, std::size_t cols, std::span<const std::size_t> index);

}  // namespace rppg::nn
