// Copyright 2026  The mata-fusion Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mata/error.hpp"
#include "mata/random.hpp"
#include "mata/tensor.hpp"

namespace mata {

/// Trainable tensor with its accumulated gradient. `grad` always has the
/// shape of `value`.
template <typename T>
struct Parameter {
  Parameter(std::string name_, Tensor<T> value_)
      : name(std::move(name_)), value(std::move(value_)), grad(value.shape()) {}

  void zero_grad() { grad.fill(T{0}); }

  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

template <typename T>
void zero_grads(std::span<Parameter<T>* const> params) {
  for (auto* p : params) p->zero_grad();
}

/// Handle to a node on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

/// Dynamically recorded reverse-mode tape. Operations append nodes in
/// evaluation order; `backward` walks them in reverse and finally adds
/// parameter-node gradients into their Parameter. Clear it between batches.
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor<T>&)>;

  /// When set, every recorded op output is scanned for NaN/Inf.
  bool check_finite = true;

  Var constant(Tensor<T> v) { return push({"constant", std::move(v), {}, false, {}, nullptr, nullptr}); }

  /// Leaf whose gradient is tracked (used for checking input gradients).
  Var leaf(Tensor<T> v) { return push({"leaf", std::move(v), {}, true, {}, nullptr, nullptr}); }

  Var parameter(Parameter<T>& p) {
    return push({"parameter", {}, {}, true, {}, &p, &p.value});
  }

  Var record(std::string_view op, Tensor<T> value, std::initializer_list<Var> inputs, Backward bw) {
    return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(bw));
  }

  Var record(std::string_view op, Tensor<T> value, std::span<const Var> inputs, Backward bw) {
    if (check_finite && !value.all_finite())
      throw NumericError("non-finite output from " + std::string(op) + " " + shape_string(value.shape()));
    bool rg = false;
    for (Var in : inputs) rg = rg || nodes_.at(in.id).requires_grad;
    Node n{std::string(op), std::move(value), {}, rg, rg ? std::move(bw) : Backward{}, nullptr, nullptr};
    return push(std::move(n));
  }

  const Tensor<T>& value(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.external ? *n.external : n.value;
  }

  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Gradient of the last backward() root w.r.t. `v`; zeros if unreached.
  Tensor<T> grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.grad.empty() ? Tensor<T>(value(v).shape()) : n.grad;
  }

  /// Mutable accumulator for `v`, allocated on first use.
  Tensor<T>& grad_buffer(Var v) {
    Node& n = nodes_.at(v.id);
    if (n.grad.empty()) n.grad = Tensor<T>(value(v).shape());
    return n.grad;
  }

  void backward(Var root) {
    if (value(root).size() != 1) throw DimensionError("backward root must be a scalar");
    for (Node& n : nodes_) n.grad = Tensor<T>();
    grad_buffer(root)[0] = T{1};
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(*this, n.grad);
      if (n.param) {
        auto g = n.param->grad.values();
        auto src = n.grad.values();
        for (std::size_t j = 0; j < g.size(); ++j) g[j] += src[j];
      }
    }
  }

  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::string op;
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad;
    Backward backward;
    Parameter<T>* param;
    const Tensor<T>* external;
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

/// Differentiable operations. Each records its forward value and a backward
/// rule on the tape.
namespace ops {

namespace detail {

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  auto d = dst.values();
  auto s = src.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace detail

template <typename T>
Var matmul(Tape<T>& tp, Var a, Var b) {
  const Tensor<T>& A = tp.value(a);
  const Tensor<T>& B = tp.value(b);
  Tensor<T> C = mata::matmul(A, B);
  return tp.record("matmul", std::move(C), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& A = t.value(a);
    const Tensor<T>& B = t.value(b);
    const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
    if (t.requires_grad(a)) {
      auto bt = mata::detail::transpose(B.data(), k, n);
      mata::detail::gemm_acc(g.data(), bt.data(), t.grad_buffer(a).data(), m, n, k);
    }
    if (t.requires_grad(b)) {
      auto at = mata::detail::transpose(A.data(), m, k);
      mata::detail::gemm_acc(at.data(), g.data(), t.grad_buffer(b).data(), k, m, n);
    }
  });
}

/// x[m x n] * W[n x u] + bias[u].
template <typename T>
Var affine(Tape<T>& tp, Var x, Var w, Var bias) {
  const Tensor<T>& X = tp.value(x);
  const Tensor<T>& W = tp.value(w);
  const Tensor<T>& Bv = tp.value(bias);
  if (X.rank() != 2 || W.rank() != 2 || X.dim(1) != W.dim(0) || Bv.size() != W.dim(1))
    throw DimensionError("affine shape mismatch: " + shape_string(X.shape()) + " * " +
                         shape_string(W.shape()) + " + " + shape_string(Bv.shape()));
  const std::size_t m = X.dim(0), n = X.dim(1), u = W.dim(1);
  Tensor<T> out({m, u});
  for (std::size_t i = 0; i < m; ++i) std::copy(Bv.data(), Bv.data() + u, out.data() + i * u);
  mata::detail::gemm_acc(X.data(), W.data(), out.data(), m, n, u);
  return tp.record("affine", std::move(out), {x, w, bias}, [x, w, bias](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& X = t.value(x);
    const Tensor<T>& W = t.value(w);
    const std::size_t m = X.dim(0), n = X.dim(1), u = W.dim(1);
    if (t.requires_grad(x)) {
      auto wt = mata::detail::transpose(W.data(), n, u);
      mata::detail::gemm_acc(g.data(), wt.data(), t.grad_buffer(x).data(), m, u, n);
    }
    if (t.requires_grad(w)) {
      auto xt = mata::detail::transpose(X.data(), m, n);
      mata::detail::gemm_acc(xt.data(), g.data(), t.grad_buffer(w).data(), n, m, u);
    }
    if (t.requires_grad(bias)) {
      T* db = t.grad_buffer(bias).data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < u; ++j) db[j] += g[i * u + j];
    }
  });
}

template <typename T>
Var relu(Tape<T>& tp, Var x) {
  Tensor<T> y = tp.value(x);
  for (T& v : y.values()) v = v > T{0} ? v : T{0};
  return tp.record("relu", std::move(y), {x}, [x](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& X = t.value(x);
    Tensor<T>& dx = t.grad_buffer(x);
    for (std::size_t i = 0; i < X.size(); ++i)
      if (X[i] > T{0}) dx[i] += g[i];
  });
}

/// Row-wise softmax over the last axis with max subtraction.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  Tensor<T> y = x;
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.leading();
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = y.data() + r * n;
    const T mx = *std::max_element(row, row + n);
    T total{0};
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      total += row[j];
    }
    for (std::size_t j = 0; j < n; ++j) row[j] /= total;
  }
  return y;
}

template <typename T>
Var softmax_rows(Tape<T>& tp, Var x) {
  if (!tp.value(x).all_finite()) throw NumericError("softmax_rows: non-finite input");
  Tensor<T> y = softmax_rows(tp.value(x));
  Tensor<T> saved = y;
  return tp.record("softmax_rows", std::move(y), {x}, [x, y = std::move(saved)](Tape<T>& t, const Tensor<T>& g) {
    const std::size_t n = y.shape().back();
    const std::size_t rows = y.leading();
    Tensor<T>& dx = t.grad_buffer(x);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* yr = y.data() + r * n;
      const T* gr = g.data() + r * n;
      T dot{0};
      for (std::size_t j = 0; j < n; ++j) dot += yr[j] * gr[j];
      for (std::size_t j = 0; j < n; ++j) dx[r * n + j] += yr[j] * (gr[j] - dot);
    }
  });
}

/// Concatenates along the last axis; all parts share every other extent.
template <typename T>
Var concat_last(Tape<T>& tp, std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_last: no parts");
  const Tensor<T>& first = tp.value(parts[0]);
  const std::size_t rows = first.leading();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (Var p : parts) {
    const Tensor<T>& v = tp.value(p);
    if (v.rank() != first.rank() || v.leading() != rows ||
        !std::equal(v.shape().begin(), v.shape().end() - 1, first.shape().begin()))
      throw DimensionError("concat_last: leading extent mismatch " + shape_string(first.shape()) + " vs " +
                           shape_string(v.shape()));
    widths.push_back(v.shape().back());
    total += widths.back();
  }
  Shape shape = first.shape();
  shape.back() = total;
  Tensor<T> out(shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor<T>& v = tp.value(parts[k]);
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(v.data() + r * widths[k], v.data() + (r + 1) * widths[k], out.data() + r * total + offset);
    offset += widths[k];
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return tp.record("concat_last", std::move(out), parts,
                   [ins, widths, rows, total](Tape<T>& t, const Tensor<T>& g) {
                     std::size_t offset = 0;
                     for (std::size_t k = 0; k < ins.size(); ++k) {
                       if (t.requires_grad(ins[k])) {
                         T* d = t.grad_buffer(ins[k]).data();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < widths[k]; ++j)
                             d[r * widths[k] + j] += g[r * total + offset + j];
                       }
                       offset += widths[k];
                     }
                   });
}

template <typename T>
Var concat_last(Tape<T>& tp, std::initializer_list<Var> parts) {
  return concat_last(tp, std::span<const Var>(parts.begin(), parts.size()));
}

template <typename T>
Var reshape(Tape<T>& tp, Var x, Shape shape) {
  Tensor<T> y = tp.value(x).reshaped(std::move(shape));
  return tp.record("reshape", std::move(y), {x},
                   [x](Tape<T>& t, const Tensor<T>& g) { detail::add_into(t.grad_buffer(x), g.reshaped(t.value(x).shape())); });
}

/// Same-padded, stride-1 1-D cross-correlation.
/// x: [B x L x Cin], kernel: [K x Cin x Cout] (K odd), bias: [Cout] -> [B x L x Cout].
template <typename T>
Var conv1d(Tape<T>& tp, Var x, Var kernel, Var bias) {
  const Tensor<T>& X = tp.value(x);
  const Tensor<T>& W = tp.value(kernel);
  const Tensor<T>& Bv = tp.value(bias);
  if (X.rank() != 3 || W.rank() != 3 || W.dim(1) != X.dim(2) || Bv.size() != W.dim(2))
    throw DimensionError("conv1d channel mismatch: input " + shape_string(X.shape()) + ", kernel " +
                         shape_string(W.shape()));
  if (W.dim(0) % 2 == 0) throw DimensionError("conv1d kernel size must be odd");
  const std::size_t batch = X.dim(0), len = X.dim(1), cin = X.dim(2);
  const std::size_t ksize = W.dim(0), cout = W.dim(2);
  const std::size_t pad = ksize / 2;
  const std::size_t width = ksize * cin;
  // im2col: row (b, l) holds the K taps around l, zero outside the sequence.
  std::vector<T> cols(batch * len * width, T{0});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t k = 0; k < ksize; ++k) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(l + k) - static_cast<std::ptrdiff_t>(pad);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
        const T* in = X.data() + (b * len + static_cast<std::size_t>(src)) * cin;
        std::copy(in, in + cin, cols.data() + (b * len + l) * width + k * cin);
      }
  Tensor<T> out({batch, len, cout});
  for (std::size_t r = 0; r < batch * len; ++r) std::copy(Bv.data(), Bv.data() + cout, out.data() + r * cout);
  mata::detail::gemm_acc(cols.data(), W.data(), out.data(), batch * len, width, cout);
  return tp.record(
      "conv1d", std::move(out), {x, kernel, bias},
      [x, kernel, bias, cols = std::move(cols), batch, len, cin, ksize, cout, pad, width](Tape<T>& t,
                                                                                         const Tensor<T>& g) {
        const std::size_t rows = batch * len;
        if (t.requires_grad(kernel)) {
          auto ct = mata::detail::transpose(cols.data(), rows, width);
          mata::detail::gemm_acc(ct.data(), g.data(), t.grad_buffer(kernel).data(), width, rows, cout);
        }
        if (t.requires_grad(bias)) {
          T* db = t.grad_buffer(bias).data();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cout; ++c) db[c] += g[r * cout + c];
        }
        if (t.requires_grad(x)) {
          const Tensor<T>& W = t.value(kernel);
          auto wt = mata::detail::transpose(W.data(), width, cout);
          std::vector<T> dcols(rows * width, T{0});
          mata::detail::gemm_acc(g.data(), wt.data(), dcols.data(), rows, cout, width);
          T* dx = t.grad_buffer(x).data();
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t l = 0; l < len; ++l)
              for (std::size_t k = 0; k < ksize; ++k) {
                const std::ptrdiff_t src =
                    static_cast<std::ptrdiff_t>(l + k) - static_cast<std::ptrdiff_t>(pad);
                if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
                T* d = dx + (b * len + static_cast<std::size_t>(src)) * cin;
                const T* s = dcols.data() + (b * len + l) * width + k * cin;
                for (std::size_t c = 0; c < cin; ++c) d[c] += s[c];
              }
        }
      });
}

/// Non-overlapping max pooling over the length axis of [B x L x C]; a
/// trailing remainder shorter than `window` is dropped. Ties go to the first
/// position in the window.
template <typename T>
Var maxpool1d(Tape<T>& tp, Var x, std::size_t window = 2) {
  const Tensor<T>& X = tp.value(x);
  if (X.rank() != 3) throw DimensionError("maxpool1d expects [B x L x C], got " + shape_string(X.shape()));
  if (window == 0 || X.dim(1) < window)
    throw DimensionError("maxpool1d: length " + std::to_string(X.dim(1)) + " shorter than window " +
                         std::to_string(window));
  const std::size_t batch = X.dim(0), len = X.dim(1), ch = X.dim(2);
  const std::size_t olen = len / window;
  Tensor<T> out({batch, olen, ch});
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t o = 0; o < olen; ++o)
      for (std::size_t c = 0; c < ch; ++c) {
        std::size_t best = (b * len + o * window) * ch + c;
        for (std::size_t w = 1; w < window; ++w) {
          const std::size_t idx = (b * len + o * window + w) * ch + c;
          if (X[idx] > X[best]) best = idx;
        }
        const std::size_t oi = (b * olen + o) * ch + c;
        out[oi] = X[best];
        argmax[oi] = best;
      }
  return tp.record("maxpool1d", std::move(out), {x}, [x, argmax = std::move(argmax)](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& dx = t.grad_buffer(x);
    for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += g[i];
  });
}

/// Inverted dropout. Identity (the same Var) in eval mode or at rate 0.
template <typename T>
Var dropout(Tape<T>& tp, Var x, double rate, bool training, RandomSource& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0, 1)");
  if (!training || rate == 0.0) return x;
  const Tensor<T>& X = tp.value(x);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(X.size());
  for (T& m : mask) m = rng.bernoulli(rate) ? T{0} : keep_scale;
  Tensor<T> y = X;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= mask[i];
  return tp.record("dropout", std::move(y), {x}, [x, mask = std::move(mask)](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& dx = t.grad_buffer(x);
    for (std::size_t i = 0; i < mask.size(); ++i) dx[i] += g[i] * mask[i];
  });
}

/// Multi-head scaled dot-product self-attention core.
/// q, k, v: [(B*tokens) x D] with sample b's tokens in rows b*tokens ..
/// b*tokens+tokens-1; head h owns columns [h*D/heads, (h+1)*D/heads).
/// Returns the concatenated head outputs, same shape as q. If `weights` is
/// given it receives the attention matrices as [B x heads x tokens x tokens].
template <typename T>
Var attention(Tape<T>& tp, Var q, Var k, Var v, std::size_t tokens, std::size_t heads,
              Tensor<T>* weights = nullptr) {
  const Tensor<T>& Q = tp.value(q);
  const Tensor<T>& K = tp.value(k);
  const Tensor<T>& V = tp.value(v);
  if (Q.rank() != 2 || Q.shape() != K.shape() || Q.shape() != V.shape())
    throw DimensionError("attention: q/k/v shapes differ");
  const std::size_t dim = Q.dim(1);
  if (heads == 0 || dim % heads != 0)
    throw DimensionError("attention: model dim " + std::to_string(dim) + " not divisible by " +
                         std::to_string(heads) + " heads");
  if (tokens == 0 || Q.dim(0) % tokens != 0) throw DimensionError("attention: rows not a multiple of tokens");
  const std::size_t batch = Q.dim(0) / tokens;
  const std::size_t dk = dim / heads;
  const T inv_scale = T{1} / std::sqrt(static_cast<T>(dk));

  Tensor<T> probs({batch, heads, tokens, tokens});
  Tensor<T> out({Q.dim(0), dim});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h) {
      T* p = probs.data() + ((b * heads + h) * tokens) * tokens;
      for (std::size_t i = 0; i < tokens; ++i) {
        const T* qi = Q.data() + (b * tokens + i) * dim + h * dk;
        T* prow = p + i * tokens;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < tokens; ++j) {
          const T* kj = K.data() + (b * tokens + j) * dim + h * dk;
          T s{0};
          for (std::size_t c = 0; c < dk; ++c) s += qi[c] * kj[c];
          prow[j] = s * inv_scale;
          mx = std::max(mx, prow[j]);
        }
        T total{0};
        for (std::size_t j = 0; j < tokens; ++j) {
          prow[j] = std::exp(prow[j] - mx);
          total += prow[j];
        }
        for (std::size_t j = 0; j < tokens; ++j) prow[j] /= total;
        T* oi = out.data() + (b * tokens + i) * dim + h * dk;
        for (std::size_t j = 0; j < tokens; ++j) {
          const T* vj = V.data() + (b * tokens + j) * dim + h * dk;
          for (std::size_t c = 0; c < dk; ++c) oi[c] += prow[j] * vj[c];
        }
      }
    }
  if (weights) *weights = probs;
  return tp.record(
      "attention", std::move(out), {q, k, v},
      [q, k, v, probs = std::move(probs), batch, heads, tokens, dim, dk, inv_scale](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& Q = t.value(q);
        const Tensor<T>& K = t.value(k);
        const Tensor<T>& V = t.value(v);
        const bool gq = t.requires_grad(q), gk = t.requires_grad(k), gv = t.requires_grad(v);
        T* dq = gq ? t.grad_buffer(q).data() : nullptr;
        T* dk_ = gk ? t.grad_buffer(k).data() : nullptr;
        T* dv = gv ? t.grad_buffer(v).data() : nullptr;
        std::vector<T> dp(tokens);
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t h = 0; h < heads; ++h) {
            const T* p = probs.data() + ((b * heads + h) * tokens) * tokens;
            for (std::size_t i = 0; i < tokens; ++i) {
              const T* gi = g.data() + (b * tokens + i) * dim + h * dk;
              const T* prow = p + i * tokens;
              T dot{0};
              for (std::size_t j = 0; j < tokens; ++j) {
                const T* vj = V.data() + (b * tokens + j) * dim + h * dk;
                T s{0};
                for (std::size_t c = 0; c < dk; ++c) s += gi[c] * vj[c];
                dp[j] = s;
                dot += s * prow[j];
                if (dv) {
                  T* dvj = dv + (b * tokens + j) * dim + h * dk;
                  for (std::size_t c = 0; c < dk; ++c) dvj[c] += prow[j] * gi[c];
                }
              }
              const T* qi = Q.data() + (b * tokens + i) * dim + h * dk;
              for (std::size_t j = 0; j < tokens; ++j) {
                const T ds = prow[j] * (dp[j] - dot) * inv_scale;
                const T* kj = K.data() + (b * tokens + j) * dim + h * dk;
                if (dq) {
                  T* dqi = dq + (b * tokens + i) * dim + h * dk;
                  for (std::size_t c = 0; c < dk; ++c) dqi[c] += ds * kj[c];
                }
                if (dk_) {
                  T* dkj = dk_ + (b * tokens + j) * dim + h * dk;
                  for (std::size_t c = 0; c < dk; ++c) dkj[c] += ds * qi[c];
                }
              }
            }
          }
      });
}

/// Mean negative log-likelihood of `labels` under softmax(logits), via
/// log-sum-exp. Returns a 1-element tensor.
template <typename T>
Var cross_entropy(Tape<T>& tp, Var logits, std::span<const int> labels) {
  const Tensor<T>& Z = tp.value(logits);
  if (Z.rank() != 2 || Z.dim(0) != labels.size())
    throw DimensionError("cross_entropy: logits " + shape_string(Z.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  const std::size_t batch = Z.dim(0), classes = Z.dim(1);
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      throw DataError("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
  Tensor<T> probs = softmax_rows(Z);
  T loss{0};
  for (std::size_t i = 0; i < batch; ++i) {
    const T* z = Z.data() + i * classes;
    const T mx = *std::max_element(z, z + classes);
    T total{0};
    for (std::size_t c = 0; c < classes; ++c) total += std::exp(z[c] - mx);
    loss += mx + std::log(total) - z[labels[i]];
  }
  loss /= static_cast<T>(batch);
  std::vector<int> ys(labels.begin(), labels.end());
  return tp.record("cross_entropy", Tensor<T>({1}, std::vector<T>{loss}), {logits},
                   [logits, probs = std::move(probs), ys = std::move(ys)](Tape<T>& t, const Tensor<T>& g) {
                     const std::size_t batch = probs.dim(0), classes = probs.dim(1);
                     const T scale = g[0] / static_cast<T>(batch);
                     T* d = t.grad_buffer(logits).data();
                     for (std::size_t i = 0; i < batch; ++i)
                       for (std::size_t c = 0; c < classes; ++c) {
                         const T onehot = static_cast<std::size_t>(ys[i]) == c ? T{1} : T{0};
                         d[i * classes + c] += scale * (probs[i * classes + c] - onehot);
                       }
                   });
}

template <typename T>
Var sum(Tape<T>& tp, Var x) {
  T s{0};
  for (T v : tp.value(x).values()) s += v;
  return tp.record("sum", Tensor<T>({1}, std::vector<T>{s}), {x}, [x](Tape<T>& t, const Tensor<T>& g) {
    for (T& d : t.grad_buffer(x).values()) d += g[0];
  });
}

/// sum(x * w) for a constant weight tensor of the same size.
template <typename T>
Var weighted_sum(Tape<T>& tp, Var x, Tensor<T> w) {
  const Tensor<T>& X = tp.value(x);
  if (X.size() != w.size()) throw DimensionError("weighted_sum: size mismatch");
  T s{0};
  for (std::size_t i = 0; i < X.size(); ++i) s += X[i] * w[i];
  return tp.record("weighted_sum", Tensor<T>({1}, std::vector<T>{s}), {x},
                   [x, w = std::move(w)](Tape<T>& t, const Tensor<T>& g) {
                     Tensor<T>& d = t.grad_buffer(x);
                     for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[0] * w[i];
                   });
}

}  // namespace ops
}  // namespace mata
