// SPDX-License-Identifier: Apache-2.0
#include "rppg/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <unordered_set>

#include <Eigen/Dense>

namespace rppg::nn {

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using CMap = Eigen::Map<const Mat<T>>;
template <typename T>
using MMap = Eigen::Map<Mat<T>>;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
Tensor<T> make_result(std::size_t rows, std::size_t cols, std::vector<T> value, std::vector<NodePtr<T>> parents,
                      std::function<void(Node<T>&)> fn) {
  auto n = std::make_shared<Node<T>>();
  n->rows = rows;
  n->cols = cols;
  n->value = std::move(value);
  const bool any = std::any_of(parents.begin(), parents.end(), [](const auto& p) { return p->requires_grad; });
  if (any) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(fn);
  }
  return Tensor<T>(std::move(n));
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    fail(ErrorCode::ShapeMismatch, std::string(op) + ": shapes [" + std::to_string(a.rows()) + "," +
                                       std::to_string(a.cols()) + "] and [" + std::to_string(b.rows()) + "," +
                                       std::to_string(b.cols()) + "] differ");
  }
}

// Elementwise unary op with a local derivative computed from (input, output).
template <typename T, typename F, typename D>
Tensor<T> unary(const Tensor<T>& a, F f, D dfdx) {
  std::vector<T> out(a.size());
  const auto in = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return make_result<T>(a.rows(), a.cols(), std::move(out), {a.node()}, [dfdx](Node<T>& self) {
    auto& p = *self.parents[0];
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfdx(p.value[i], self.value[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// backward

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.size() != 1) {
    fail(ErrorCode::NonScalarLoss, "backward() requires a scalar loss, got " +
                                       (loss.defined() ? std::to_string(loss.rows()) + "x" + std::to_string(loss.cols())
                                                       : std::string("an undefined tensor")));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node<T>* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->value.size(), T(0));
  }
  loss.node()->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.rows()) {
    fail(ErrorCode::ShapeMismatch, "matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                                       std::to_string(b.rows()) + " differ");
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  std::vector<T> out(n * m);
  MMap<T>(out.data(), n, m).noalias() = CMap<T>(a.values().data(), n, k) * CMap<T>(b.values().data(), k, m);
  return make_result<T>(n, m, std::move(out), {a.node(), b.node()}, [n, k, m](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const CMap<T> g(self.grad.data(), n, m);
    if (pa.requires_grad) {
      MMap<T>(pa.grad_buffer().data(), n, k).noalias() += g * CMap<T>(pb.value.data(), k, m).transpose();
    }
    if (pb.requires_grad) {
      MMap<T>(pb.grad_buffer().data(), k, m).noalias() += CMap<T>(pa.value.data(), n, k).transpose() * g;
    }
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<T> out(r * c);
  MMap<T>(out.data(), c, r) = CMap<T>(a.values().data(), r, c).transpose();
  return make_result<T>(c, r, std::move(out), {a.node()}, [r, c](Node<T>& self) {
    MMap<T>(self.parents[0]->grad_buffer().data(), r, c) += CMap<T>(self.grad.data(), c, r).transpose();
  });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return make_result<T>(a.rows(), a.cols(), std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return make_result<T>(a.rows(), a.cols(), std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    if (self.parents[0]->requires_grad) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      auto& g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return make_result<T>(a.rows(), a.cols(), std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

template <typename T>
Tensor<T> div_scalar(const Tensor<T>& a, const Tensor<T>& b) {
  if (b.size() != 1) fail(ErrorCode::ShapeMismatch, "div_scalar: divisor must be [1,1]");
  const T d = b.values()[0];
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] / d;
  return make_result<T>(a.rows(), a.cols(), std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const T d = pb.value[0];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / d;
    }
    if (pb.requires_grad) {
      T acc = 0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * self.value[i];
      pb.grad_buffer()[0] -= acc / d;
    }
  });
}

template <typename T>
Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) fail(ErrorCode::ShapeMismatch, "add_row: bias shape mismatch");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<T> out(a.values().begin(), a.values().end());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += row.values()[j];
  return make_result<T>(r, c, std::move(out), {a.node(), row.node()}, [r, c](Node<T>& self) {
    if (self.parents[0]->requires_grad) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      auto& g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  return unary(a, [factor](T x) { return x * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> shift(const Tensor<T>& a, T offset) {
  return unary(a, [offset](T x) { return x + offset; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return unary(a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  return unary(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> clamp_min(const Tensor<T>& a, T floor) {
  return unary(a, [floor](T x) { return std::max(x, floor); }, [floor](T x, T) { return x > floor ? T(1) : T(0); });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  const T inv_sqrt2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
  return unary(
      a, [inv_sqrt2](T x) { return T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2)); },
      [inv_sqrt2, inv_sqrt2pi](T x, T) {
        return T(0.5) * (T(1) + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(T(-0.5) * x * x);
      });
}

// ---------------------------------------------------------------------------
// Row-wise

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<T> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    const T* x = a.values().data() + i * c;
    T* y = out.data() + i * c;
    const T mx = *std::max_element(x, x + c);
    T s = 0;
    for (std::size_t j = 0; j < c; ++j) s += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < c; ++j) y[j] /= s;
  }
  return make_result<T>(r, c, std::move(out), {a.node()}, [r, c](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i) {
      const T* y = self.value.data() + i * c;
      const T* dy = self.grad.data() + i * c;
      T dot = 0;
      for (std::size_t j = 0; j < c; ++j) dot += dy[j] * y[j];
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += y[j] * (dy[j] - dot);
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& a, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const std::size_t r = a.rows(), c = a.cols();
  if (gamma.size() != c || beta.size() != c) fail(ErrorCode::ShapeMismatch, "layer_norm: affine shape mismatch");
  std::vector<T> out(r * c), xhat(r * c), inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    const T* x = a.values().data() + i * c;
    T m = 0;
    for (std::size_t j = 0; j < c; ++j) m += x[j];
    m /= T(c);
    T v = 0;
    for (std::size_t j = 0; j < c; ++j) v += (x[j] - m) * (x[j] - m);
    v /= T(c);
    inv_std[i] = T(1) / std::sqrt(v + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (x[j] - m) * inv_std[i];
      out[i * c + j] = gamma.values()[j] * xhat[i * c + j] + beta.values()[j];
    }
  }
  return make_result<T>(
      r, c, std::move(out), {a.node(), gamma.node(), beta.node()},
      [r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        if (pg.requires_grad || pb.requires_grad) {
          auto& gg = pg.grad_buffer();
          auto& gb = pb.grad_buffer();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) {
              gg[j] += self.grad[i * c + j] * xhat[i * c + j];
              gb[j] += self.grad[i * c + j];
            }
        }
        if (!pa.requires_grad) return;
        auto& ga = pa.grad_buffer();
        std::vector<T> dxhat(c);
        for (std::size_t i = 0; i < r; ++i) {
          T m1 = 0, m2 = 0;
          for (std::size_t j = 0; j < c; ++j) {
            dxhat[j] = self.grad[i * c + j] * pg.value[j];
            m1 += dxhat[j];
            m2 += dxhat[j] * xhat[i * c + j];
          }
          m1 /= T(c);
          m2 /= T(c);
          for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += inv_std[i] * (dxhat[j] - m1 - xhat[i * c + j] * m2);
        }
      });
}

template <typename T>
Tensor<T> row_pearson(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "row_pearson");
  const std::size_t r = a.rows(), c = a.cols();
  if (c < 2) fail(ErrorCode::TooShortInput, "row_pearson needs rows of at least 2 samples");
  // Per-row centred copies and the derivative coefficients of r w.r.t. each side.
  std::vector<T> ac(r * c), bc(r * c), out(r, T(0));
  std::vector<T> coef_ab(r, T(0)), coef_aa(r, T(0)), coef_bb(r, T(0));
  constexpr double kVarEps = 1e-12;
  for (std::size_t i = 0; i < r; ++i) {
    T ma = 0, mb = 0;
    for (std::size_t j = 0; j < c; ++j) {
      ma += a.values()[i * c + j];
      mb += b.values()[i * c + j];
    }
    ma /= T(c);
    mb /= T(c);
    T sab = 0, saa = 0, sbb = 0;
    for (std::size_t j = 0; j < c; ++j) {
      const T x = ac[i * c + j] = a.values()[i * c + j] - ma;
      const T y = bc[i * c + j] = b.values()[i * c + j] - mb;
      sab += x * y;
      saa += x * x;
      sbb += y * y;
    }
    if (double(saa) / double(c) < kVarEps || double(sbb) / double(c) < kVarEps) continue;
    const T denom = std::sqrt(saa * sbb);
    const T rho = sab / denom;
    out[i] = rho;
    coef_ab[i] = T(1) / denom;
    coef_aa[i] = rho / saa;
    coef_bb[i] = rho / sbb;
  }
  return make_result<T>(r, 1, std::move(out), {a.node(), b.node()},
                        [r, c, ac = std::move(ac), bc = std::move(bc), coef_ab = std::move(coef_ab),
                         coef_aa = std::move(coef_aa), coef_bb = std::move(coef_bb)](Node<T>& self) {
                          // Centred vectors are zero-mean, so the mean-removal Jacobian is absorbed.
                          auto& pa = *self.parents[0];
                          auto& pb = *self.parents[1];
                          for (std::size_t i = 0; i < r; ++i) {
                            const T g = self.grad[i];
                            if (coef_ab[i] == T(0) || g == T(0)) continue;
                            if (pa.requires_grad) {
                              auto& ga = pa.grad_buffer();
                              for (std::size_t j = 0; j < c; ++j)
                                ga[i * c + j] += g * (coef_ab[i] * bc[i * c + j] - coef_aa[i] * ac[i * c + j]);
                            }
                            if (pb.requires_grad) {
                              auto& gb = pb.grad_buffer();
                              for (std::size_t j = 0; j < c; ++j)
                                gb[i * c + j] += g * (coef_ab[i] * ac[i * c + j] - coef_bb[i] * bc[i * c + j]);
                            }
                          }
                        });
}

template <typename T>
Tensor<T> cross_entropy_logits(const Tensor<T>& logits, std::size_t target) {
  if (logits.rows() != 1) fail(ErrorCode::ShapeMismatch, "cross_entropy_logits expects a single row");
  const std::size_t k = logits.cols();
  if (target >= k) fail(ErrorCode::InvalidConfig, "cross_entropy_logits: target out of range");
  const auto x = logits.values();
  const T mx = *std::max_element(x.begin(), x.end());
  std::vector<T> prob(k);
  T s = 0;
  for (std::size_t j = 0; j < k; ++j) s += (prob[j] = std::exp(x[j] - mx));
  for (auto& p : prob) p /= s;
  const T loss = -(x[target] - mx - std::log(s));
  return make_result<T>(1, 1, {loss}, {logits.node()}, [prob = std::move(prob), target](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t j = 0; j < prob.size(); ++j) g[j] += self.grad[0] * (prob[j] - (j == target ? T(1) : T(0)));
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (T v : a.values()) s += v;
  return make_result<T>(1, 1, {s}, {a.node()}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / T(a.size()));
}

// ---------------------------------------------------------------------------
// Layout

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, std::size_t rows, std::size_t cols) {
  if (rows * cols != a.size()) fail(ErrorCode::ShapeMismatch, "reshape: element count changes");
  std::vector<T> out(a.values().begin(), a.values().end());
  return make_result<T>(rows, cols, std::move(out), {a.node()}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  if (begin >= end || end > a.cols()) fail(ErrorCode::ShapeMismatch, "slice_cols: bad column range");
  const std::size_t r = a.rows(), c = a.cols(), w = end - begin;
  std::vector<T> out(r * w);
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(a.values().data() + i * c + begin, w, out.data() + i * w);
  return make_result<T>(r, w, std::move(out), {a.node()}, [r, c, w, begin](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) g[i * c + begin + j] += self.grad[i * w + j];
  });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) fail(ErrorCode::ShapeMismatch, "concat_cols: no inputs");
  const std::size_t r = parts.front().rows();
  std::size_t c = 0;
  std::vector<std::size_t> offsets;
  std::vector<NodePtr<T>> parents;
  for (const auto& p : parts) {
    if (p.rows() != r) fail(ErrorCode::ShapeMismatch, "concat_cols: row counts differ");
    offsets.push_back(c);
    c += p.cols();
    parents.push_back(p.node());
  }
  std::vector<T> out(r * c);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t w = parts[k].cols();
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(parts[k].values().data() + i * w, w, out.data() + i * c + offsets[k]);
  }
  return make_result<T>(r, c, std::move(out), std::move(parents), [r, c, offsets](Node<T>& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      auto& p = *self.parents[k];
      if (!p.requires_grad) continue;
      auto& g = p.grad_buffer();
      const std::size_t w = p.cols;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) g[i * w + j] += self.grad[i * c + offsets[k] + j];
    }
  });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) fail(ErrorCode::ShapeMismatch, "concat_rows: no inputs");
  const std::size_t c = parts.front().cols();
  std::size_t r = 0;
  std::vector<NodePtr<T>> parents;
  std::vector<T> out;
  for (const auto& p : parts) {
    if (p.cols() != c) fail(ErrorCode::ShapeMismatch, "concat_rows: column counts differ");
    r += p.rows();
    out.insert(out.end(), p.values().begin(), p.values().end());
    parents.push_back(p.node());
  }
  return make_result<T>(r, c, std::move(out), std::move(parents), [](Node<T>& self) {
    std::size_t offset = 0;
    for (auto& p : self.parents) {
      if (p->requires_grad) {
        auto& g = p->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offset + i];
      }
      offset += p->value.size();
    }
  });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, std::span<const std::size_t> index) {
  const std::size_t c = a.cols();
  std::vector<T> out(index.size() * c);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= a.rows()) fail(ErrorCode::ShapeMismatch, "gather_rows: index out of range");
    std::copy_n(a.values().data() + index[i] * c, c, out.data() + i * c);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_result<T>(index.size(), c, std::move(out), {a.node()}, [c, idx = std::move(idx)](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) g[idx[i] * c + j] += self.grad[i * c + j];
  });
}

template <typename T>
Tensor<T> gather_elements(const Tensor<T>& a, std::span<const std::size_t> index, std::size_t rows,
                          std::size_t cols) {
  if (index.size() != rows * cols) fail(ErrorCode::ShapeMismatch, "gather_elements: index size != rows*cols");
  std::vector<T> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= a.size()) fail(ErrorCode::ShapeMismatch, "gather_elements: index out of range");
    out[i] = a.values()[index[i]];
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_result<T>(rows, cols, std::move(out), {a.node()}, [idx = std::move(idx)](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Spectral power

template <typename T>
Tensor<T> band_power(const Tensor<T>& signal, const SpectralPlan& plan) {
  if (signal.size() != plan.length) fail(ErrorCode::LengthMismatch, "band_power: signal length differs from plan");
  const std::size_t n = plan.length, nf = plan.freqs.size();
  std::vector<double> w(n, 1.0);
  if (n > 1) {
    for (std::size_t i = 0; i < n; ++i)
      w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * double(i) / double(n - 1));
  }
  double m = 0.0;
  for (T v : signal.values()) m += double(v);
  m /= double(n);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = (double(signal.values()[i]) - m) * w[i];

  // re/im at each frequency by a unit-phasor recurrence (no n x nf tables).
  std::vector<double> re(nf, 0.0), im(nf, 0.0);
  std::vector<T> out(plan.bins, T(0));
  for (std::size_t k = 0; k < nf; ++k) {
    const double step = 2.0 * std::numbers::pi * plan.freqs[k] / plan.fs;
    const double cs = std::cos(step), sn = std::sin(step);
    double c = 1.0, s = 0.0, acc_re = 0.0, acc_im = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      acc_re += y[i] * c;
      acc_im -= y[i] * s;
      const double c2 = c * cs - s * sn;
      s = s * cs + c * sn;
      c = c2;
    }
    re[k] = acc_re;
    im[k] = acc_im;
    out[plan.bin_of[k]] += T(acc_re * acc_re + acc_im * acc_im);
  }
  return make_result<T>(1, plan.bins, std::move(out), {signal.node()},
                        [plan, w = std::move(w), re = std::move(re), im = std::move(im)](Node<T>& self) {
                          const std::size_t n = plan.length;
                          std::vector<double> dy(n, 0.0);
                          for (std::size_t k = 0; k < plan.freqs.size(); ++k) {
                            const double gk = double(self.grad[plan.bin_of[k]]);
                            if (gk == 0.0) continue;
                            const double step = 2.0 * std::numbers::pi * plan.freqs[k] / plan.fs;
                            const double cs = std::cos(step), sn = std::sin(step);
                            const double a = 2.0 * gk * re[k], b = 2.0 * gk * im[k];
                            double c = 1.0, s = 0.0;
                            for (std::size_t i = 0; i < n; ++i) {
                              dy[i] += a * c - b * s;
                              const double c2 = c * cs - s * sn;
                              s = s * cs + c * sn;
                              c = c2;
                            }
                          }
                          // Back through the window and the mean removal.
                          double mean_g = 0.0;
                          for (std::size_t i = 0; i < n; ++i) mean_g += (dy[i] *= w[i]);
                          mean_g /= double(n);
                          auto& g = self.parents[0]->grad_buffer();
                          for (std::size_t i = 0; i < n; ++i) g[i] += T(dy[i] - mean_g);
                        });
}

// ---------------------------------------------------------------------------
// Explicit instantiations

#define RPPG_NN_INSTANTIATE(T)                                                                              \
  template void backward<T>(const Tensor<T>&);                                                              \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> transpose<T>(const Tensor<T>&);                                                        \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> div_scalar<T>(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> add_row<T>(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                                         \
  template Tensor<T> shift<T>(const Tensor<T>&, T);                                                         \
  template Tensor<T> square<T>(const Tensor<T>&);                                                           \
  template Tensor<T> log<T>(const Tensor<T>&);                                                              \
  template Tensor<T> clamp_min<T>(const Tensor<T>&, T);                                                     \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                                             \
  template Tensor<T> softmax_rows<T>(const Tensor<T>&);                                                     \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                \
  template Tensor<T> row_pearson<T>(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> cross_entropy_logits<T>(const Tensor<T>&, std::size_t);                                \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                              \
  template Tensor<T> mean<T>(const Tensor<T>&);                                                             \
  template Tensor<T> reshape<T>(const Tensor<T>&, std::size_t, std::size_t);                                \
  template Tensor<T> slice_cols<T>(const Tensor<T>&, std::size_t, std::size_t);                             \
  template Tensor<T> concat_cols<T>(const std::vector<Tensor<T>>&);                                         \
  template Tensor<T> concat_rows<T>(const std::vector<Tensor<T>>&);                                         \
  template Tensor<T> gather_rows<T>(const Tensor<T>&, std::span<const std::size_t>);                        \
  template Tensor<T> gather_elements<T>(const Tensor<T>&, std::span<const std::size_t>, std::size_t,        \
                                        std::size_t);                                                       \
  template Tensor<T> band_power<T>(const Tensor<T>&, const SpectralPlan&);

RPPG_NN_INSTANTIATE(float)
RPPG_NN_INSTANTIATE(double)

#undef RPPG_NN_INSTANTIATE

}  // namespace rppg::nn
