// SPDX-License-Identifier: Apache-2.0
#include "rppg/nn/transformer.hpp"

#include <cmath>
#include <numeric>

#include "rppg/stmap.hpp"

namespace rppg::nn {

namespace {

constexpr double kInitStd = 0.02;

void check_dims(std::size_t depth, std::size_t dim, std::size_t heads, std::size_t patch, std::size_t channels,
                std::size_t side, const char* what) {
  const std::string w(what);
  if (depth < 1) fail(ErrorCode::InvalidConfig, w + ".depth must be >= 1");
  if (heads < 1 || dim % heads != 0) fail(ErrorCode::InvalidConfig, w + ".dim must be divisible by heads");
  if (dim % 4 != 0) fail(ErrorCode::InvalidConfig, w + ".dim must be a multiple of 4");
  if (patch < 1 || channels < 1 || side < 1) fail(ErrorCode::InvalidConfig, w + ": empty patch geometry");
}

}  // namespace

void EncoderConfig::validate() const {
  check_dims(depth, dim, heads, patch_size, in_channels, seq_side, "encoder");
}

void DecoderConfig::validate() const {
  check_dims(depth, dim, heads, patch_size, in_channels, seq_side, "decoder");
}

// ---------------------------------------------------------------------------
// ParamStore

template <typename T>
Tensor<T> ParamStore<T>::add(const std::string& name, std::size_t rows, std::size_t cols, std::vector<T> values,
                             std::size_t layer, bool decay) {
  if (find(name) != nullptr) fail(ErrorCode::InvalidConfig, "duplicate parameter name " + name);
  Tensor<T> t = Tensor<T>::parameter(rows, cols, std::move(values));
  slots_.push_back({ParamEntry{name, layer, decay}, t, true});
  return t;
}

template <typename T>
Tensor<T> ParamStore<T>::add_normal(const std::string& name, std::size_t rows, std::size_t cols, std::size_t layer,
                                    bool decay) {
  std::normal_distribution<double> normal(0.0, kInitStd);
  std::vector<T> v(rows * cols);
  for (auto& x : v) {
    double d = 0.0;
    do {
      d = normal(rng_);
    } while (std::abs(d) > 2.0 * kInitStd);
    x = T(d);
  }
  return add(name, rows, cols, std::move(v), layer, decay);
}

template <typename T>
Tensor<T> ParamStore<T>::add_xavier(const std::string& name, std::size_t rows, std::size_t cols, std::size_t layer,
                                    bool decay) {
  const double bound = std::sqrt(6.0 / double(rows + cols));
  std::uniform_real_distribution<double> uniform(-bound, bound);
  std::vector<T> v(rows * cols);
  for (auto& x : v) x = T(uniform(rng_));
  return add(name, rows, cols, std::move(v), layer, decay);
}

template <typename T>
Tensor<T> ParamStore<T>::add_constant(const std::string& name, std::size_t rows, std::size_t cols, T value,
                                      std::size_t layer, bool decay) {
  return add(name, rows, cols, std::vector<T>(rows * cols, value), layer, decay);
}

template <typename T>
typename ParamStore<T>::Slot* ParamStore<T>::find(const std::string& name) {
  for (auto& s : slots_)
    if (s.info.name == name) return &s;
  return nullptr;
}

template <typename T>
const typename ParamStore<T>::Slot* ParamStore<T>::find(const std::string& name) const {
  for (const auto& s : slots_)
    if (s.info.name == name) return &s;
  return nullptr;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& s : slots_) s.tensor.zero_grad();
}

template <typename T>
void ParamStore<T>::set_trainable(const std::string& prefix, bool on) {
  for (auto& s : slots_) {
    if (s.info.name.starts_with(prefix)) {
      s.trainable = on;
      s.tensor.set_requires_grad(on);
    }
  }
}

template <typename T>
std::size_t ParamStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& s : slots_) n += s.tensor.size();
  return n;
}

// ---------------------------------------------------------------------------
// Layers

template <typename T>
Linear<T>::Linear(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out, std::size_t layer)
    : weight(store.add_xavier(name + ".weight", in, out, layer, true)),
      bias(store.add_constant(name + ".bias", 1, out, T(0), layer, false)) {}

template <typename T>
LayerNorm<T>::LayerNorm(ParamStore<T>& store, const std::string& name, std::size_t dim, std::size_t layer)
    : gamma(store.add_constant(name + ".gamma", 1, dim, T(1), layer, false)),
      beta(store.add_constant(name + ".beta", 1, dim, T(0), layer, false)) {}

template <typename T>
Block<T>::Block(ParamStore<T>& store, const std::string& name, std::size_t dim, std::size_t h, std::size_t layer)
    : heads(h),
      norm1(store, name + ".norm1", dim, layer),
      norm2(store, name + ".norm2", dim, layer),
      qkv(store, name + ".attn.qkv", dim, 3 * dim, layer),
      proj(store, name + ".attn.proj", dim, dim, layer),
      fc1(store, name + ".mlp.fc1", dim, 4 * dim, layer),
      fc2(store, name + ".mlp.fc2", 4 * dim, dim, layer) {}

template <typename T>
Tensor<T> Block<T>::operator()(const Tensor<T>& x) const {
  const std::size_t dim = x.cols();
  const std::size_t head_dim = dim / heads;
  const T inv_sqrt = T(1) / std::sqrt(T(head_dim));

  const Tensor<T> qkv_out = qkv(norm1(x));
  std::vector<Tensor<T>> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor<T> q = slice_cols(qkv_out, h * head_dim, (h + 1) * head_dim);
    const Tensor<T> k = slice_cols(qkv_out, dim + h * head_dim, dim + (h + 1) * head_dim);
    const Tensor<T> v = slice_cols(qkv_out, 2 * dim + h * head_dim, 2 * dim + (h + 1) * head_dim);
    const Tensor<T> attn = softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt));
    outs.push_back(matmul(attn, v));
  }
  const Tensor<T> attended = heads == 1 ? outs.front() : concat_cols(outs);
  const Tensor<T> y = add(x, proj(attended));
  return add(y, fc2(gelu(fc1(norm2(y)))));
}

// ---------------------------------------------------------------------------
// Positional embedding

std::vector<double> sincos_pos_embed_2d(std::size_t dim, std::size_t grid) {
  if (dim % 4 != 0) fail(ErrorCode::InvalidConfig, "positional embedding dim must be a multiple of 4");
  const std::size_t half = dim / 2, quarter = dim / 4;
  std::vector<double> omega(quarter);
  for (std::size_t i = 0; i < quarter; ++i) omega[i] = 1.0 / std::pow(10000.0, double(i) / double(quarter));
  std::vector<double> out(grid * grid * dim);
  for (std::size_t py = 0; py < grid; ++py) {
    for (std::size_t px = 0; px < grid; ++px) {
      double* row = out.data() + (py * grid + px) * dim;
      // First half encodes the column coordinate, second half the row coordinate.
      for (std::size_t i = 0; i < quarter; ++i) {
        row[i] = std::sin(double(px) * omega[i]);
        row[quarter + i] = std::cos(double(px) * omega[i]);
        row[half + i] = std::sin(double(py) * omega[i]);
        row[half + quarter + i] = std::cos(double(py) * omega[i]);
      }
    }
  }
  return out;
}

namespace {

template <typename T>
Tensor<T> constant_from(std::size_t rows, std::size_t cols, const std::vector<double>& v) {
  return Tensor<T>::constant(rows, cols, std::vector<T>(v.begin(), v.end()));
}

}  // namespace

template <typename T>
Tensor<T> patch_rows(std::span<const double> values, std::size_t cols, std::span<const std::size_t> index) {
  std::vector<T> out(index.size() * cols);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if ((index[i] + 1) * cols > values.size()) fail(ErrorCode::ShapeMismatch, "patch_rows: index out of range");
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = T(values[index[i] * cols + j]);
  }
  return Tensor<T>::constant(index.size(), cols, std::move(out));
}

// ---------------------------------------------------------------------------
// Encoder

template <typename T>
Encoder<T>::Encoder(ParamStore<T>& store, const EncoderConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  embed_ = Linear<T>(store, "encoder.patch_embed", cfg_.patch_dim(), cfg_.dim, 0);
  if (cfg_.use_class_token) cls_ = store.add_normal("encoder.cls_token", 1, cfg_.dim, 0, false);
  pos_ = constant_from<T>(cfg_.patch_count(), cfg_.dim, sincos_pos_embed_2d(cfg_.dim, cfg_.seq_side));
  for (std::size_t i = 0; i < cfg_.depth; ++i) {
    blocks_.emplace_back(store, "encoder.blocks." + std::to_string(i), cfg_.dim, cfg_.heads, i + 1);
  }
  norm_ = LayerNorm<T>(store, "encoder.norm", cfg_.dim, cfg_.depth + 1);
}

template <typename T>
Tensor<T> Encoder<T>::operator()(const Tensor<T>& kept_patches, const stmap::MaskPlan& plan) const {
  if (kept_patches.cols() != cfg_.patch_dim() || kept_patches.rows() != plan.kept_indices.size()) {
    fail(ErrorCode::ShapeMismatch, "encoder: expected [" + std::to_string(plan.kept_indices.size()) + "," +
                                       std::to_string(cfg_.patch_dim()) + "] patches, got [" +
                                       std::to_string(kept_patches.rows()) + "," +
                                       std::to_string(kept_patches.cols()) + "]");
  }
  if (plan.grid != cfg_.seq_side) fail(ErrorCode::ShapeMismatch, "encoder: mask plan grid differs from config");
  Tensor<T> x = add(embed_(kept_patches), gather_rows(pos_, std::span<const std::size_t>(plan.kept_indices)));
  if (cfg_.use_class_token) x = concat_rows<T>({cls_, x});
  for (const auto& b : blocks_) x = b(x);
  return norm_(x);
}

// ---------------------------------------------------------------------------
// Decoder

template <typename T>
Decoder<T>::Decoder(ParamStore<T>& store, const DecoderConfig& cfg, std::size_t encoder_dim, bool class_token)
    : cfg_(cfg), class_token_(class_token) {
  cfg_.validate();
  const std::size_t layer = 0;
  embed_ = Linear<T>(store, "decoder.embed", encoder_dim, cfg_.dim, layer);
  mask_token_ = store.add_normal("decoder.mask_token", 1, cfg_.dim, layer, false);
  std::vector<double> pos = sincos_pos_embed_2d(cfg_.dim, cfg_.seq_side);
  if (class_token_) pos.insert(pos.begin(), cfg_.dim, 0.0);
  pos_ = constant_from<T>(cfg_.patch_count() + (class_token_ ? 1 : 0), cfg_.dim, pos);
  for (std::size_t i = 0; i < cfg_.depth; ++i) {
    blocks_.emplace_back(store, "decoder.blocks." + std::to_string(i), cfg_.dim, cfg_.heads, layer);
  }
  norm_ = LayerNorm<T>(store, "decoder.norm", cfg_.dim, layer);
  pred_ = Linear<T>(store, "decoder.pred", cfg_.dim, cfg_.patch_dim(), layer);
}

template <typename T>
Tensor<T> Decoder<T>::operator()(const Tensor<T>& encoded, const stmap::MaskPlan& plan) const {
  const std::size_t offset = class_token_ ? 1 : 0;
  const std::size_t n_kept = plan.kept_indices.size();
  const std::size_t n = cfg_.patch_count();
  if (encoded.rows() != n_kept + offset || plan.patch_count() != n) {
    fail(ErrorCode::ShapeMismatch, "decoder: encoded tokens do not match the mask plan");
  }
  const Tensor<T> y = embed_(encoded);
  // Row n_kept + offset of `pool` is the shared mask token.
  const Tensor<T> pool = concat_rows<T>({y, mask_token_});
  std::vector<std::size_t> source(n, n_kept + offset);
  for (std::size_t j = 0; j < n_kept; ++j) source[plan.kept_indices[j]] = j + offset;
  std::vector<std::size_t> index;
  index.reserve(n + offset);
  if (class_token_) index.push_back(0);
  index.insert(index.end(), source.begin(), source.end());

  Tensor<T> x = add(gather_rows(pool, std::span<const std::size_t>(index)), pos_);
  for (const auto& b : blocks_) x = b(x);
  Tensor<T> out = pred_(norm_(x));
  if (class_token_) {
    std::vector<std::size_t> body(n);
    std::iota(body.begin(), body.end(), std::size_t{1});
    out = gather_rows(out, std::span<const std::size_t>(body));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Heads

template <typename T>
SignalHead<T>::SignalHead(ParamStore<T>& store, const EncoderConfig& cfg, std::size_t length)
    : class_token_(cfg.use_class_token),
      tokens_(cfg.patch_count()),
      dim_(cfg.dim),
      fc_(store, "head.signal", cfg.patch_count() * cfg.dim, length, cfg.depth + 1) {}

template <typename T>
Tensor<T> SignalHead<T>::operator()(const Tensor<T>& encoded) const {
  const std::size_t offset = class_token_ ? 1 : 0;
  if (encoded.rows() != tokens_ + offset || encoded.cols() != dim_) {
    fail(ErrorCode::ShapeMismatch, "signal head expects the full token set");
  }
  Tensor<T> body = encoded;
  if (class_token_) {
    std::vector<std::size_t> idx(tokens_);
    std::iota(idx.begin(), idx.end(), std::size_t{1});
    body = gather_rows(encoded, std::span<const std::size_t>(idx));
  }
  return fc_(reshape(body, 1, tokens_ * dim_));
}

template <typename T>
ProbeHead<T>::ProbeHead(ParamStore<T>& store, const EncoderConfig& cfg, std::size_t bins)
    : fc_(store, "probe.fc", cfg.dim, bins, cfg.depth + 1) {
  if (!cfg.use_class_token) fail(ErrorCode::InvalidConfig, "linear probe needs encoder.use_class_token");
}

template <typename T>
Tensor<T> ProbeHead<T>::operator()(const Tensor<T>& encoded) const {
  const std::size_t first = 0;
  return fc_(gather_rows(encoded, std::span<const std::size_t>(&first, 1)));
}

#define RPPG_TRANSFORMER_INSTANTIATE(T)                                                                   \
  template class ParamStore<T>;                                                                          \
  template struct Linear<T>;                                                                             \
  template struct LayerNorm<T>;                                                                          \
  template struct Block<T>;                                                                              \
  template class Encoder<T>;                                                                             \
  template class Decoder<T>;                                                                             \
  template class SignalHead<T>;                                                                          \
  template class ProbeHead<T>;                                                                           \
  template Tensor<T> patch_rows<T>(std::span<const double>, std::size_t, std::span<const std::size_t>);

RPPG_TRANSFORMER_INSTANTIATE(float)
RPPG_TRANSFORMER_INSTANTIATE(double)

#undef RPPG_TRANSFORMER_INSTANTIATE

}  // namespace rppg::nn
