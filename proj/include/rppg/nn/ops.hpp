// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rppg/nn/tensor.hpp"

namespace rppg::nn {

// Linear algebra
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose(const Tensor<T>& a);

// Elementwise, identical shapes
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
/// a / b where b is [1, 1].
template <typename T> Tensor<T> div_scalar(const Tensor<T>& a, const Tensor<T>& b);
/// Broadcast a [1, cols] row over every row of a.
template <typename T> Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& row);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> shift(const Tensor<T>& a, T offset);
template <typename T> Tensor<T> square(const Tensor<T>& a);
template <typename T> Tensor<T> log(const Tensor<T>& a);
/// max(a, floor) with zero gradient where clamped.
template <typename T> Tensor<T> clamp_min(const Tensor<T>& a, T floor);
/// Exact (erf) GELU.
template <typename T> Tensor<T> gelu(const Tensor<T>& a);

// Row-wise
template <typename T> Tensor<T> softmax_rows(const Tensor<T>& a);
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& a, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-6));
/// Pearson correlation per row -> [rows, 1]; 0 (with zero gradient) for rows whose variance is below 1e-12.
template <typename T> Tensor<T> row_pearson(const Tensor<T>& a, const Tensor<T>& b);
/// -log softmax(logits)[target] for a [1, K] row.
template <typename T> Tensor<T> cross_entropy_logits(const Tensor<T>& logits, std::size_t target);

// Reductions
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);

// Layout
template <typename T> Tensor<T> reshape(const Tensor<T>& a, std::size_t rows, std::size_t cols);
template <typename T> Tensor<T> slice_cols(const Tensor<T>& a, std::size_t begin, std::size_t end);
template <typename T> Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);
/// out.row(i) = a.row(index[i]).
template <typename T> Tensor<T> gather_rows(const Tensor<T>& a, std::span<const std::size_t> index);
/// out.flat(i) = a.flat(index[i]), shaped [rows, cols].
template <typename T>
Tensor<T> gather_elements(const Tensor<T>& a, std::span<const std::size_t> index, std::size_t rows, std::size_t cols);

/// Frequencies (Hz) evaluated by band_power and the output bin each one sums into.
struct SpectralPlan {
  std::size_t length = 0;  // signal samples
  double fs = 0.0;
  std::vector<double> freqs;
  std::vector<std::size_t> bin_of;
  std::size_t bins = 0;
};

/// Power of the zero-meaned, Hann-windowed [1, length] signal at plan.freqs,
/// summed into plan.bins outputs -> [1, bins].
template <typename T> Tensor<T> band_power(const Tensor<T>& signal, const SpectralPlan& plan);

}  // namespace rppg::nn
