//
// Copyright 2026 The meterlink Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

// Differentiable primitives. Each function computes its forward result and,
// when recording, pushes a closure that accumulates input gradients from the
// output gradient.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "meterlink/nk/tensor.hpp"

namespace meterlink::nk {

namespace detail {

inline void expect_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(t.shape()));
}

inline void expect_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// C[m x n] += A[m x k] * B[k x n]
inline void gemm_nn(const double* A, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* c = C + i * n;
    const double* a = A + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[p];
      if (av == 0.0) continue;
      const double* b = B + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// C[m x n] += A[m x k] * B^T, B stored [n x k]
inline void gemm_nt(const double* A, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* a = A + i * k;
    double* c = C + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* b = B + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[p] * b[p];
      c[j] += s;
    }
  }
}

// C[k x n] += A^T * B, A stored [m x k], B stored [m x n]
inline void gemm_tn(const double* A, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* a = A + i * k;
    const double* b = B + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[p];
      if (av == 0.0) continue;
      double* c = C + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::expect_rank(a, 2, "matmul");
  detail::expect_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out(Shape{m, n});
  detail::gemm_nn(a.data().data(), b.data().data(), out.data().data(), m, k, n);
  if (Tape* tape = detail::track(out, {&a, &b})) {
    tape->record([a, b, out, m, k, n]() mutable {
      if (!out.has_grad()) return;
      const double* g = out.grad().data();
      if (a.requires_grad()) detail::gemm_nt(g, b.data().data(), a.grad_mut().data(), m, n, k);
      if (b.requires_grad()) detail::gemm_tn(a.data().data(), g, b.grad_mut().data(), m, k, n);
    });
  }
  return out;
}

// y = x W + bias, x [b x i], W [i x o], bias [o] (may be undefined).
inline Tensor linear(const Tensor& x, const Tensor& W, const Tensor& bias = {}) {
  detail::expect_rank(x, 2, "linear");
  detail::expect_rank(W, 2, "linear");
  const std::size_t rows = x.dim(0), in = x.dim(1), outd = W.dim(1);
  if (W.dim(0) != in) throw ShapeError("linear: input width " + std::to_string(in) + " vs weight " + shape_str(W.shape()));
  if (bias.defined() && bias.numel() != outd) throw ShapeError("linear: bias shape " + shape_str(bias.shape()));
  Tensor out(Shape{rows, outd});
  double* y = out.data().data();
  if (bias.defined())
    for (std::size_t r = 0; r < rows; ++r) std::copy(bias.data().begin(), bias.data().end(), y + r * outd);
  detail::gemm_nn(x.data().data(), W.data().data(), y, rows, in, outd);
  if (Tape* tape = detail::track(out, {&x, &W, &bias})) {
    tape->record([x, W, bias, out, rows, in, outd]() mutable {
      if (!out.has_grad()) return;
      const double* g = out.grad().data();
      if (x.requires_grad()) detail::gemm_nt(g, W.data().data(), x.grad_mut().data(), rows, outd, in);
      if (W.requires_grad()) detail::gemm_tn(x.data().data(), g, W.grad_mut().data(), rows, in, outd);
      if (bias.defined() && bias.requires_grad()) {
        auto& gb = bias.grad_mut();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < outd; ++j) gb[j] += g[r * outd + j];
      }
    });
  }
  return out;
}

// Batched product: a [B x m x k] times b [B x k x n], or b^T when
// `transpose_b` (b stored [B x n x k]).
inline Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false) {
  detail::expect_rank(a, 3, "bmm");
  detail::expect_rank(b, 3, "bmm");
  const std::size_t B = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  if (b.dim(0) != B || (transpose_b ? b.dim(2) : b.dim(1)) != k)
    throw ShapeError("bmm: incompatible " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  Tensor out(Shape{B, m, n});
  for (std::size_t i = 0; i < B; ++i) {
    const double* pa = a.data().data() + i * m * k;
    const double* pb = b.data().data() + i * k * n;
    double* pc = out.data().data() + i * m * n;
    if (transpose_b)
      detail::gemm_nt(pa, pb, pc, m, k, n);
    else
      detail::gemm_nn(pa, pb, pc, m, k, n);
  }
  if (Tape* tape = detail::track(out, {&a, &b})) {
    tape->record([a, b, out, B, m, k, n, transpose_b]() mutable {
      if (!out.has_grad()) return;
      for (std::size_t i = 0; i < B; ++i) {
        const double* g = out.grad().data() + i * m * n;
        const double* pa = a.data().data() + i * m * k;
        const double* pb = b.data().data() + i * k * n;
        if (a.requires_grad()) {
          double* ga = a.grad_mut().data() + i * m * k;
          if (transpose_b)
            detail::gemm_nn(g, pb, ga, m, n, k);  // dA = dC B   (B is [n x k])
          else
            detail::gemm_nt(g, pb, ga, m, n, k);  // dA = dC B^T (B is [k x n])
        }
        if (b.requires_grad()) {
          double* gb = b.grad_mut().data() + i * k * n;
          if (transpose_b)
            detail::gemm_tn(g, pa, gb, m, n, k);  // dB = dC^T A
          else
            detail::gemm_tn(pa, g, gb, m, k, n);  // dB = A^T dC
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise

// alpha * a + beta * b (same shape).
inline Tensor axpby(const Tensor& a, double alpha, const Tensor& b, double beta) {
  detail::expect_same(a, b, "axpby");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = alpha * a[i] + beta * b[i];
  if (Tape* tape = detail::track(out, {&a, &b})) {
    tape->record([a, b, out, alpha, beta]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += alpha * g[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += beta * g[i];
      }
    });
  }
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) { return axpby(a, 1.0, b, 1.0); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return axpby(a, 1.0, b, -1.0); }

// Hadamard product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::expect_same(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] * b[i];
  if (Tape* tape = detail::track(out, {&a, &b})) {
    tape->record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
      }
    });
  }
  return out;
}

// scale * a + shift
inline Tensor affine(const Tensor& a, double scale, double shift = 0.0) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = scale * a[i] + shift;
  if (Tape* tape = detail::track(out, {&a})) {
    tape->record([a, out, scale]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto& ga = a.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += scale * g[i];
    });
  }
  return out;
}

// x + y where y's shape equals the trailing dimensions of x.
inline Tensor add_broadcast(const Tensor& x, const Tensor& y) {
  if (y.rank() > x.rank() || !std::equal(y.shape().begin(), y.shape().end(), x.shape().end() - static_cast<std::ptrdiff_t>(y.rank())))
    throw ShapeError("add_broadcast: " + shape_str(y.shape()) + " is not a suffix of " + shape_str(x.shape()));
  const std::size_t n = y.numel();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[i] + y[i % n];
  if (Tape* tape = detail::track(out, {&x, &y})) {
    tape->record([x, y, out, n]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      if (x.requires_grad()) {
        auto& gx = x.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (y.requires_grad()) {
        auto& gy = y.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) gy[i % n] += g[i];
      }
    });
  }
  return out;
}

enum class Activation { relu, leaky_relu, tanh, sigmoid };

inline constexpr double kLeakySlope = 0.01;

// Elementwise activation; the derivative at a kink is the right derivative.
inline Tensor activation(const Tensor& x, Activation kind, double slope = kLeakySlope) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const double v = x[i];
    switch (kind) {
      case Activation::relu: out[i] = v >= 0.0 ? v : 0.0; break;
      case Activation::leaky_relu: out[i] = v >= 0.0 ? v : slope * v; break;
      case Activation::tanh: out[i] = std::tanh(v); break;
      case Activation::sigmoid: out[i] = 1.0 / (1.0 + std::exp(-v)); break;
    }
  }
  if (Tape* tape = detail::track(out, {&x})) {
    tape->record([x, out, kind, slope]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto& gx = x.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) {
        double d = 0.0;
        switch (kind) {
          case Activation::relu: d = x[i] >= 0.0 ? 1.0 : 0.0; break;
          case Activation::leaky_relu: d = x[i] >= 0.0 ? 1.0 : slope; break;
          case Activation::tanh: d = 1.0 - out[i] * out[i]; break;
          case Activation::sigmoid: d = out[i] * (1.0 - out[i]); break;
        }
        gx[i] += d * g[i];
      }
    });
  }
  return out;
}

inline Tensor relu(const Tensor& x) { return activation(x, Activation::relu); }
inline Tensor leaky_relu(const Tensor& x, double slope = kLeakySlope) { return activation(x, Activation::leaky_relu, slope); }
inline Tensor tanh(const Tensor& x) { return activation(x, Activation::tanh); }
inline Tensor sigmoid(const Tensor& x) { return activation(x, Activation::sigmoid); }

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor out = Tensor::scalar(s);
  if (Tape* tape = detail::track(out, {&x})) {
    tape->record([x, out]() mutable {
      if (!out.has_grad()) return;
      const double g = out.grad()[0];
      for (double& gx : x.grad_mut()) gx += g;
    });
  }
  return out;
}

inline Tensor mean(const Tensor& x) { return affine(sum(x), 1.0 / static_cast<double>(x.numel())); }

// Sums over dimension `d`, removing it.
inline Tensor sum_dim(const Tensor& x, std::size_t d) {
  if (d >= x.rank()) throw ShapeError("sum_dim: dimension out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < d; ++i) outer *= x.dim(i);
  for (std::size_t i = d + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t n = x.dim(d);
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(d));
  if (shape.empty()) shape = {1};
  Tensor out(shape);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += x[(o * n + k) * inner + i];
  if (Tape* tape = detail::track(out, {&x})) {
    tape->record([x, out, outer, n, inner]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto& gx = x.grad_mut();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < n; ++k)
          for (std::size_t i = 0; i < inner; ++i) gx[(o * n + k) * inner + i] += g[o * inner + i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel())
    throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  Tensor out(std::move(shape), x.storage());
  if (Tape* tape = detail::track(out, {&x})) {
    tape->record([x, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto& gx = x.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

// out.shape[i] = x.shape[perm[i]]
inline Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
  const std::size_t r = x.rank();
  if (perm.size() != r) throw ShapeError("permute: permutation rank mismatch");
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.dim(perm[i]);
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.dim(i);
  // Source offset for every destination element.
  std::vector<std::size_t> src(x.numel());
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t flat = 0; flat < src.size(); ++flat) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < r; ++i) off += idx[i] * in_strides[perm[i]];
    src[flat] = off;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  Tensor out(out_shape);
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = x[src[i]];
  if (Tape* tape = detail::track(out, {&x})) {
    tape->record([x, out, src = std::move(src)]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto& gx = x.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) gx[src[i]] += g[i];
    });
  }
  return out;
}

// Elements [start, start + len) along dimension d.
inline Tensor slice(const Tensor& x, std::size_t d, std::size_t start, std::size_t len) {
  if (d >= x.rank() || start + len > x.dim(d) || len == 0) throw ShapeError("slice: range out of bounds");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < d; ++i) outer *= x.dim(i);
  for (std::size_t i = d + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t n = x.dim(d);
  Shape shape = x.shape();
  shape[d] = len;
  Tensor out(shape);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>((o * n + start) * inner), len * inner,
                out.data().begin() + static_cast<std::ptrdiff_t>(o * len * inner));
  if (Tape* tape = detail::track(out, {&x})) {
    tape->record([x, out, outer, n, inner, start, len]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto& gx = x.grad_mut();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < len * inner; ++i) gx[(o * n + start) * inner + i] += g[o * len * inner + i];
    });
  }
  return out;
}

// Concatenation along dimension d; all other dimensions must agree.
inline Tensor concat(const std::vector<Tensor>& parts, std::size_t d) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape shape = parts.front().shape();
  if (d >= shape.size()) throw ShapeError("concat: dimension out of range");
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != shape.size()) throw ShapeError("concat: rank mismatch");
    total += s[d];
    s[d] = shape[d];
    if (s != shape) throw ShapeError("concat: shapes disagree off the concatenation axis");
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < d; ++i) outer *= shape[i];
  for (std::size_t i = d + 1; i < shape.size(); ++i) inner *= shape[i];
  shape[d] = total;
  Tensor out(shape);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t n = p.dim(d);
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p.data().begin() + static_cast<std::ptrdiff_t>(o * n * inner), n * inner,
                  out.data().begin() + static_cast<std::ptrdiff_t>((o * total + offset) * inner));
    offset += n;
  }
  if (Tape* tape = detail::track(out, parts)) {
    tape->record([parts, out, outer, inner, total, d]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      std::size_t off = 0;
      for (auto& p : parts) {
        const std::size_t n = p.dim(d);
        if (p.requires_grad()) {
          auto& gp = p.grad_mut();
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < n * inner; ++i) gp[o * n * inner + i] += g[(o * total + off) * inner + i];
        }
        off += n;
      }
    });
  }
  return out;
}

// Rows of a matrix gathered by index (repeats allowed).
inline Tensor index_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
  detail::expect_rank(x, 2, "index_rows");
  const std::size_t n = x.dim(1);
  Tensor out(Shape{rows.size(), n});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= x.dim(0)) throw ShapeError("index_rows: row index out of range");
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(rows[r] * n), n,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * n));
  }
  if (Tape* tape = detail::track(out, {&x})) {
    tape->record([x, out, rows, n]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto& gx = x.grad_mut();
      for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t j = 0; j < n; ++j) gx[rows[r] * n + j] += g[r * n + j];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization-style ops over the last dimension

// Softmax over the last dimension, with max subtraction.
inline Tensor softmax(const Tensor& x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data().data() + r * n;
    double* y = out.data().data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (y[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < n; ++j) y[j] /= z;
  }
  if (Tape* tape = detail::track(out, {&x})) {
    tape->record([x, out, rows, n]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto& gx = x.grad_mut();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * out[r * n + j];
        for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += out[r * n + j] * (g[r * n + j] - dot);
      }
    });
  }
  return out;
}

// Layer normalization over the last dimension with affine gamma, beta.
inline Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
  const std::size_t n = x.shape().back();
  if (gamma.numel() != n || beta.numel() != n) throw ShapeError("layernorm: affine parameter size mismatch");
  const std::size_t rows = x.numel() / n;
  Tensor out(x.shape());
  std::vector<double> xhat(x.numel()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data().data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += in[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[r * n + j] = (in[j] - mu) * inv_std[r];
      out[r * n + j] = gamma[j] * xhat[r * n + j] + beta[j];
    }
  }
  if (Tape* tape = detail::track(out, {&x, &gamma, &beta})) {
    tape->record([x, gamma, beta, out, rows, n, xhat = std::move(xhat), inv_std = std::move(inv_std)]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      if (gamma.requires_grad() || beta.requires_grad()) {
        auto& gg = gamma.grad_mut();
        auto& gb = beta.grad_mut();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < n; ++j) {
            gg[j] += g[r * n + j] * xhat[r * n + j];
            gb[j] += g[r * n + j];
          }
      }
      if (x.requires_grad()) {
        auto& gx = x.grad_mut();
        const double nn = static_cast<double>(n);
        for (std::size_t r = 0; r < rows; ++r) {
          double s1 = 0.0, s2 = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double dxh = g[r * n + j] * gamma[j];
            s1 += dxh;
            s2 += dxh * xhat[r * n + j];
          }
          for (std::size_t j = 0; j < n; ++j) {
            const double dxh = g[r * n + j] * gamma[j];
            gx[r * n + j] += inv_std[r] / nn * (nn * dxh - s1 - xhat[r * n + j] * s2);
          }
        }
      }
    });
  }
  return out;
}

// Euclidean norm of each row: x [b x n] -> [b]. The gradient at a zero row
// is taken as zero.
inline Tensor row_norms(const Tensor& x) {
  detail::expect_rank(x, 2, "row_norms");
  const std::size_t b = x.dim(0), n = x.dim(1);
  Tensor out(Shape{b});
  for (std::size_t r = 0; r < b; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += x[r * n + j] * x[r * n + j];
    out[r] = std::sqrt(s);
  }
  if (Tape* tape = detail::track(out, {&x})) {
    tape->record([x, out, b, n]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto& gx = x.grad_mut();
      for (std::size_t r = 0; r < b; ++r) {
        if (out[r] == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += g[r] * x[r * n + j] / out[r];
      }
    });
  }
  return out;
}

// Scales every row of x [b x n] to unit Euclidean norm.
inline Tensor l2_normalize_rows(const Tensor& x) {
  detail::expect_rank(x, 2, "l2_normalize_rows");
  const std::size_t b = x.dim(0), n = x.dim(1);
  Tensor out(x.shape());
  std::vector<double> norms(b);
  for (std::size_t r = 0; r < b; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += x[r * n + j] * x[r * n + j];
    norms[r] = std::sqrt(s);
    if (!(norms[r] > 0.0)) throw NumericalError("cannot normalize a zero vector");
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = x[r * n + j] / norms[r];
  }
  if (Tape* tape = detail::track(out, {&x})) {
    tape->record([x, out, b, n, norms = std::move(norms)]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto& gx = x.grad_mut();
      for (std::size_t r = 0; r < b; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += out[r * n + j] * g[r * n + j];
        for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += (g[r * n + j] - out[r * n + j] * dot) / norms[r];
      }
    });
  }
  return out;
}

// Plain (non-differentiable) unit-vector scaling.
inline std::vector<double> l2_normalize(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  const double norm = std::sqrt(s);
  if (!(norm > 0.0)) throw NumericalError("cannot normalize a zero vector");
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= norm;
  return out;
}

// ---------------------------------------------------------------------------
// Convolution and pooling

// Cross-correlation of x [b x c_in x len] (or [c_in x len]) with kernels
// [c_out x c_in x k] after `left_pad` zeros on the left. Output length is
// len + left_pad - dilation * (k - 1). left_pad = dilation * (k - 1) gives a
// causal convolution whose output at t only sees inputs up to t.
inline Tensor conv1d(const Tensor& x_in, const Tensor& w, const Tensor& bias, std::size_t left_pad,
                     std::size_t dilation = 1) {
  const bool unbatched = x_in.rank() == 2;
  const Tensor x = unbatched ? reshape(x_in, Shape{1, x_in.dim(0), x_in.dim(1)}) : x_in;
  detail::expect_rank(x, 3, "conv1d");
  detail::expect_rank(w, 3, "conv1d");
  const std::size_t B = x.dim(0), cin = x.dim(1), len = x.dim(2);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != cin) throw ShapeError("conv1d: kernel expects " + std::to_string(w.dim(1)) + " input channels");
  if (bias.defined() && bias.numel() != cout) throw ShapeError("conv1d: bias size mismatch");
  const std::size_t span = dilation * (k - 1) + 1;
  if (span > len + left_pad) throw ShapeError("conv1d: kernel larger than padded input");
  const std::size_t lout = len + left_pad - span + 1;

  Tensor out(Shape{B, cout, lout});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < cout; ++o) {
      double* y = out.data().data() + (b * cout + o) * lout;
      if (bias.defined()) std::fill(y, y + lout, bias[o]);
      for (std::size_t c = 0; c < cin; ++c) {
        const double* xs = x.data().data() + (b * cin + c) * len;
        for (std::size_t j = 0; j < k; ++j) {
          const double wv = w[(o * cin + c) * k + j];
          // padded position t + j*dilation maps to input t + j*dilation - left_pad
          const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j * dilation) - static_cast<std::ptrdiff_t>(left_pad);
          const std::size_t t0 = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
          for (std::size_t t = t0; t < lout; ++t) y[t] += wv * xs[static_cast<std::ptrdiff_t>(t) + shift];
        }
      }
    }
  if (Tape* tape = detail::track(out, {&x, &w, &bias})) {
    tape->record([x, w, bias, out, B, cin, len, cout, k, lout, left_pad, dilation]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      double* gx = x.requires_grad() ? x.grad_mut().data() : nullptr;
      double* gw = w.requires_grad() ? w.grad_mut().data() : nullptr;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < cout; ++o) {
          const double* gy = g.data() + (b * cout + o) * lout;
          if (bias.defined() && bias.requires_grad()) {
            auto& gb = bias.grad_mut();
            for (std::size_t t = 0; t < lout; ++t) gb[o] += gy[t];
          }
          for (std::size_t c = 0; c < cin; ++c) {
            const double* xs = x.data().data() + (b * cin + c) * len;
            for (std::size_t j = 0; j < k; ++j) {
              const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j * dilation) - static_cast<std::ptrdiff_t>(left_pad);
              const std::size_t t0 = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
              const std::size_t widx = (o * cin + c) * k + j;
              if (gw) {
                double s = 0.0;
                for (std::size_t t = t0; t < lout; ++t) s += gy[t] * xs[static_cast<std::ptrdiff_t>(t) + shift];
                gw[widx] += s;
              }
              if (gx) {
                const double wv = w[widx];
                double* gxs = gx + (b * cin + c) * len;
                for (std::size_t t = t0; t < lout; ++t) gxs[static_cast<std::ptrdiff_t>(t) + shift] += wv * gy[t];
              }
            }
          }
        }
    });
  }
  return unbatched ? reshape(out, Shape{cout, lout}) : out;
}

// Non-overlapping max pooling over the last dimension; a trailing remainder
// is dropped. The gradient goes to the first maximal index of each window.
inline Tensor maxpool1d(const Tensor& x, std::size_t k) {
  const std::size_t len = x.shape().back();
  if (k == 0 || len < k) throw ShapeError("maxpool1d: window larger than input");
  const std::size_t rows = x.numel() / len;
  const std::size_t lout = len / k;
  Shape shape = x.shape();
  shape.back() = lout;
  Tensor out(shape);
  std::vector<std::size_t> arg(rows * lout);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t t = 0; t < lout; ++t) {
      std::size_t best = r * len + t * k;
      for (std::size_t j = 1; j < k; ++j)
        if (x[r * len + t * k + j] > x[best]) best = r * len + t * k + j;
      arg[r * lout + t] = best;
      out[r * lout + t] = x[best];
    }
  if (Tape* tape = detail::track(out, {&x})) {
    tape->record([x, out, arg = std::move(arg)]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto& gx = x.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) gx[arg[i]] += g[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batch normalization

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(Shape{channels}, 0.0), running_var(Shape{channels}, 1.0) {}
};

enum class Mode { train, eval };

// Per-channel normalization of x [b x c x len] (or [b x c]). Train mode
// uses batch statistics and updates the running estimates; eval mode uses
// the running estimates.
inline Tensor batchnorm1d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, Mode mode) {
  if (x.rank() != 2 && x.rank() != 3) throw ShapeError("batchnorm1d: expected [b x c] or [b x c x len]");
  const std::size_t B = x.dim(0), C = x.dim(1), L = x.rank() == 3 ? x.dim(2) : 1;
  if (gamma.numel() != C || beta.numel() != C || state.running_mean.numel() != C)
    throw ShapeError("batchnorm1d: channel count mismatch");
  if (mode == Mode::train && B < 2) throw PreconditionError("batchnorm1d: train mode needs a batch of at least 2");
  const double N = static_cast<double>(B * L);

  std::vector<double> mu(C), inv_std(C);
  if (mode == Mode::train) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < L; ++t) s += x[(b * C + c) * L + t];
      mu[c] = s / N;
      double v = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < L; ++t) {
          const double d = x[(b * C + c) * L + t] - mu[c];
          v += d * d;
        }
      const double var = v / N;
      inv_std[c] = 1.0 / std::sqrt(var + state.eps);
      state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mu[c];
      state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * v / (N - 1.0);
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = state.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + state.eps);
    }
  }
  Tensor out(x.shape());
  std::vector<double> xhat(x.numel());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = 0; t < L; ++t) {
        const std::size_t i = (b * C + c) * L + t;
        xhat[i] = (x[i] - mu[c]) * inv_std[c];
        out[i] = gamma[c] * xhat[i] + beta[c];
      }
  if (Tape* tape = detail::track(out, {&x, &gamma, &beta})) {
    tape->record([x, gamma, beta, out, B, C, L, N, mode, xhat = std::move(xhat), inv_std = std::move(inv_std)]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      std::vector<double> sum_dy(C, 0.0), sum_dy_xhat(C, 0.0);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t t = 0; t < L; ++t) {
            const std::size_t i = (b * C + c) * L + t;
            sum_dy[c] += g[i];
            sum_dy_xhat[c] += g[i] * xhat[i];
          }
      if (gamma.requires_grad()) {
        auto& gg = gamma.grad_mut();
        for (std::size_t c = 0; c < C; ++c) gg[c] += sum_dy_xhat[c];
      }
      if (beta.requires_grad()) {
        auto& gb = beta.grad_mut();
        for (std::size_t c = 0; c < C; ++c) gb[c] += sum_dy[c];
      }
      if (!x.requires_grad()) return;
      auto& gx = x.grad_mut();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t t = 0; t < L; ++t) {
            const std::size_t i = (b * C + c) * L + t;
            if (mode == Mode::train)
              gx[i] += gamma[c] * inv_std[c] / N * (N * g[i] - sum_dy[c] - xhat[i] * sum_dy_xhat[c]);
            else
              gx[i] += gamma[c] * inv_std[c] * g[i];
          }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Weight normalization: w_i = g_i * v_i / ||v_i|| for each output channel i
// (first dimension of v).

inline Tensor weight_norm(const Tensor& v, const Tensor& g) {
  const std::size_t rows = v.dim(0);
  const std::size_t n = v.numel() / rows;
  if (g.numel() != rows) throw ShapeError("weight_norm: gain size mismatch");
  Tensor out(v.shape());
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += v[r * n + j] * v[r * n + j];
    norms[r] = std::sqrt(s);
    if (!(norms[r] > 0.0)) throw NumericalError("weight_norm: zero direction vector");
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = g[r] * v[r * n + j] / norms[r];
  }
  if (Tape* tape = detail::track(out, {&v, &g})) {
    tape->record([v, g, out, rows, n, norms = std::move(norms)]() mutable {
      if (!out.has_grad()) return;
      auto dw = out.grad();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += dw[r * n + j] * v[r * n + j];
        if (g.requires_grad()) g.grad_mut()[r] += dot / norms[r];
        if (v.requires_grad()) {
          auto& gv = v.grad_mut();
          const double nr = norms[r];
          for (std::size_t j = 0; j < n; ++j)
            gv[r * n + j] += g[r] / nr * (dw[r * n + j] - dot * v[r * n + j] / (nr * nr));
        }
      }
    });
  }
  return out;
}

}  // namespace meterlink::nk
