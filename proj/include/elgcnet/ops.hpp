#pragma once

// Differentiable kernels that do not involve spatial windows: elementwise
// math, matmul, softmax, layer norm, reductions, concat/split. Every kernel
// takes the tape as first argument; pass nullptr for a pure forward pass.

#include <cmath>
#include <cstring>
#include <span>

#include "elgcnet/tensor.hpp"

namespace elgc {

template <class T>
Tensor<T> add(Graph<T>* g, const Tensor<T>& a, const Tensor<T>& b) {
  require_dims(a.shape() == b.shape(), "add: shape mismatch " +
                                           shape_str(a.shape()) + " vs " +
                                           shape_str(b.shape()));
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (std::int64_t i = 0; i < out.size(); ++i) po[i] = pa[i] + pb[i];
  if (detail::wants_grad(g, {&a, &b})) {
    out.set_requires_grad(true);
    g->record([a = a, b = b, out = out]() mutable {
      if (!out.has_grad()) return;
      const T* og = out.grad().data();
      if (a.requires_grad()) {
        T* ga = a.grad_data();
        for (std::int64_t i = 0; i < out.size(); ++i) ga[i] += og[i];
      }
      if (b.requires_grad()) {
        T* gb = b.grad_data();
        for (std::int64_t i = 0; i < out.size(); ++i) gb[i] += og[i];
      }
    });
  }
  detail::finish_op(out, "add");
  return out;
}

template <class T>
Tensor<T> sub(Graph<T>* g, const Tensor<T>& a, const Tensor<T>& b) {
  require_dims(a.shape() == b.shape(), "sub: shape mismatch");
  Tensor<T> out(a.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  if (detail::wants_grad(g, {&a, &b})) {
    out.set_requires_grad(true);
    g->record([a = a, b = b, out = out]() mutable {
      if (!out.has_grad()) return;
      const T* og = out.grad().data();
      if (a.requires_grad()) {
        T* ga = a.grad_data();
        for (std::int64_t i = 0; i < out.size(); ++i) ga[i] += og[i];
      }
      if (b.requires_grad()) {
        T* gb = b.grad_data();
        for (std::int64_t i = 0; i < out.size(); ++i) gb[i] -= og[i];
      }
    });
  }
  detail::finish_op(out, "sub");
  return out;
}

template <class T>
Tensor<T> mul(Graph<T>* g, const Tensor<T>& a, const Tensor<T>& b) {
  require_dims(a.shape() == b.shape(), "mul: shape mismatch");
  Tensor<T> out(a.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  if (detail::wants_grad(g, {&a, &b})) {
    out.set_requires_grad(true);
    g->record([a = a, b = b, out = out]() mutable {
      if (!out.has_grad()) return;
      const T* og = out.grad().data();
      if (a.requires_grad()) {
        T* ga = a.grad_data();
        for (std::int64_t i = 0; i < out.size(); ++i) ga[i] += og[i] * b[i];
      }
      if (b.requires_grad()) {
        T* gb = b.grad_data();
        for (std::int64_t i = 0; i < out.size(); ++i) gb[i] += og[i] * a[i];
      }
    });
  }
  detail::finish_op(out, "mul");
  return out;
}

template <class T>
Tensor<T> div(Graph<T>* g, const Tensor<T>& a, const Tensor<T>& b) {
  require_dims(a.shape() == b.shape(), "div: shape mismatch");
  Tensor<T> out(a.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a[i] / b[i];
  if (detail::wants_grad(g, {&a, &b})) {
    out.set_requires_grad(true);
    g->record([a = a, b = b, out = out]() mutable {
      if (!out.has_grad()) return;
      const T* og = out.grad().data();
      if (a.requires_grad()) {
        T* ga = a.grad_data();
        for (std::int64_t i = 0; i < out.size(); ++i) ga[i] += og[i] / b[i];
      }
      if (b.requires_grad()) {
        T* gb = b.grad_data();
        for (std::int64_t i = 0; i < out.size(); ++i)
          gb[i] -= og[i] * a[i] / (b[i] * b[i]);
      }
    });
  }
  detail::finish_op(out, "div");
  return out;
}

template <class T>
Tensor<T> mul_scalar(Graph<T>* g, const Tensor<T>& x, T s) {
  Tensor<T> out(x.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = x[i] * s;
  if (detail::wants_grad(g, {&x})) {
    out.set_requires_grad(true);
    g->record([x = x, out = out, s]() mutable {
      if (!out.has_grad()) return;
      const T* og = out.grad().data();
      T* gx = x.grad_data();
      for (std::int64_t i = 0; i < out.size(); ++i) gx[i] += og[i] * s;
    });
  }
  detail::finish_op(out, "mul_scalar");
  return out;
}

template <class T>
Tensor<T> add_scalar(Graph<T>* g, const Tensor<T>& x, T s) {
  Tensor<T> out(x.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = x[i] + s;
  if (detail::wants_grad(g, {&x})) {
    out.set_requires_grad(true);
    g->record([x = x, out = out]() mutable {
      if (!out.has_grad()) return;
      const T* og = out.grad().data();
      T* gx = x.grad_data();
      for (std::int64_t i = 0; i < out.size(); ++i) gx[i] += og[i];
    });
  }
  detail::finish_op(out, "add_scalar");
  return out;
}

template <class T>
Tensor<T> log(Graph<T>* g, const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::log(x[i]);
  if (detail::wants_grad(g, {&x})) {
    out.set_requires_grad(true);
    g->record([x = x, out = out]() mutable {
      if (!out.has_grad()) return;
      const T* og = out.grad().data();
      T* gx = x.grad_data();
      for (std::int64_t i = 0; i < out.size(); ++i) gx[i] += og[i] / x[i];
    });
  }
  detail::finish_op(out, "log");
  return out;
}

// Gradient is 1 strictly inside (lo, hi), 0 where the value was clipped.
template <class T>
Tensor<T> clamp(Graph<T>* g, const Tensor<T>& x, T lo, T hi) {
  require_dims(lo <= hi, "clamp: lo > hi");
  Tensor<T> out(x.shape());
  // NaN passes through (min/max would silently replace it with a bound).
  for (std::int64_t i = 0; i < out.size(); ++i)
    out[i] = std::isnan(x[i]) ? x[i] : std::min(hi, std::max(lo, x[i]));
  if (detail::wants_grad(g, {&x})) {
    out.set_requires_grad(true);
    g->record([x = x, out = out, lo, hi]() mutable {
      if (!out.has_grad()) return;
      const T* og = out.grad().data();
      T* gx = x.grad_data();
      for (std::int64_t i = 0; i < out.size(); ++i)
        if (x[i] > lo && x[i] < hi) gx[i] += og[i];
    });
  }
  detail::finish_op(out, "clamp");
  return out;
}

template <class T>
Tensor<T> pow_scalar(Graph<T>* g, const Tensor<T>& x, T p) {
  Tensor<T> out(x.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::pow(x[i], p);
  if (detail::wants_grad(g, {&x})) {
    out.set_requires_grad(true);
    g->record([x = x, out = out, p]() mutable {
      if (!out.has_grad()) return;
      if (p == T(0)) return;  // derivative identically zero (avoids 0 * inf)
      const T* og = out.grad().data();
      T* gx = x.grad_data();
      for (std::int64_t i = 0; i < out.size(); ++i)
        gx[i] += og[i] * p * std::pow(x[i], p - T(1));
    });
  }
  detail::finish_op(out, "pow_scalar");
  return out;
}

template <class T>
Tensor<T> relu(Graph<T>* g, const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  // The comparison would map NaN to 0; keep it so poison reaches the loss.
  for (std::int64_t i = 0; i < out.size(); ++i)
    out[i] = x[i] > T(0) || std::isnan(x[i]) ? x[i] : T(0);
  if (detail::wants_grad(g, {&x})) {
    out.set_requires_grad(true);
    g->record([x = x, out = out]() mutable {
      if (!out.has_grad()) return;
      const T* og = out.grad().data();
      T* gx = x.grad_data();
      for (std::int64_t i = 0; i < out.size(); ++i)
        if (x[i] > T(0)) gx[i] += og[i];
    });
  }
  detail::finish_op(out, "relu");
  return out;
}

// Exact (erf-based) GELU.
template <class T>
Tensor<T> gelu(Graph<T>* g, const Tensor<T>& x) {
  constexpr T kInvSqrt2 = T(0.70710678118654752440);
  constexpr T kInvSqrt2Pi = T(0.39894228040143267794);
  Tensor<T> out(x.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) {
    const T cdf = T(0.5) * (T(1) + std::erf(x[i] * kInvSqrt2));
    out[i] = x[i] * cdf;
  }
  if (detail::wants_grad(g, {&x})) {
    out.set_requires_grad(true);
    g->record([x = x, out = out]() mutable {
      if (!out.has_grad()) return;
      const T* og = out.grad().data();
      T* gx = x.grad_data();
      for (std::int64_t i = 0; i < out.size(); ++i) {
        const T v = x[i];
        const T cdf = T(0.5) * (T(1) + std::erf(v * kInvSqrt2));
        const T pdf = kInvSqrt2Pi * std::exp(T(-0.5) * v * v);
        gx[i] += og[i] * (cdf + v * pdf);
      }
    });
  }
  detail::finish_op(out, "gelu");
  return out;
}

template <class T>
Tensor<T> sum_all(Graph<T>* g, const Tensor<T>& x) {
  T acc = T(0);
  for (std::int64_t i = 0; i < x.size(); ++i) acc += x[i];
  Tensor<T> out = Tensor<T>::scalar(acc);
  if (detail::wants_grad(g, {&x})) {
    out.set_requires_grad(true);
    g->record([x = x, out = out]() mutable {
      if (!out.has_grad()) return;
      const T og = out.grad()[0];
      T* gx = x.grad_data();
      for (std::int64_t i = 0; i < x.size(); ++i) gx[i] += og;
    });
  }
  detail::finish_op(out, "sum_all");
  return out;
}

template <class T>
Tensor<T> mean_all(Graph<T>* g, const Tensor<T>& x) {
  return mul_scalar(g, sum_all(g, x), T(1) / T(x.size()));
}

template <class T>
Tensor<T> matmul(Graph<T>* g, const Tensor<T>& a, const Tensor<T>& b) {
  require_dims(a.rank() == 2 && b.rank() == 2, "matmul expects rank-2 tensors");
  require_dims(a.dim(1) == b.dim(0),
               "matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                   shape_str(b.shape()));
  const int M = a.dim(0), K = a.dim(1), N = b.dim(1);
  Tensor<T> out(Shape{M, N});
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (int m = 0; m < M; ++m)
    for (int k = 0; k < K; ++k) {
      const T av = pa[std::size_t(m) * K + k];
      const T* brow = pb + std::size_t(k) * N;
      T* orow = po + std::size_t(m) * N;
      for (int n = 0; n < N; ++n) orow[n] += av * brow[n];
    }
  if (detail::wants_grad(g, {&a, &b})) {
    out.set_requires_grad(true);
    g->record([a = a, b = b, out = out, M, K, N]() mutable {
      if (!out.has_grad()) return;
      const T* og = out.grad().data();
      if (a.requires_grad()) {
        T* ga = a.grad_data();
        const T* pb = b.data();
        for (int m = 0; m < M; ++m)
          for (int k = 0; k < K; ++k) {
            const T* grow = og + std::size_t(m) * N;
            const T* brow = pb + std::size_t(k) * N;
            T acc = T(0);
            for (int n = 0; n < N; ++n) acc += grow[n] * brow[n];
            ga[std::size_t(m) * K + k] += acc;
          }
      }
      if (b.requires_grad()) {
        T* gb = b.grad_data();
        const T* pa = a.data();
        for (int m = 0; m < M; ++m)
          for (int k = 0; k < K; ++k) {
            const T av = pa[std::size_t(m) * K + k];
            const T* grow = og + std::size_t(m) * N;
            T* gbrow = gb + std::size_t(k) * N;
            for (int n = 0; n < N; ++n) gbrow[n] += av * grow[n];
          }
      }
    });
  }
  detail::finish_op(out, "matmul");
  return out;
}

template <class T>
Tensor<T> transpose2d(Graph<T>* g, const Tensor<T>& x) {
  require_dims(x.rank() == 2, "transpose2d expects a rank-2 tensor");
  const int M = x.dim(0), N = x.dim(1);
  Tensor<T> out(Shape{N, M});
  for (int m = 0; m < M; ++m)
    for (int n = 0; n < N; ++n) out.at(n, m) = x.at(m, n);
  if (detail::wants_grad(g, {&x})) {
    out.set_requires_grad(true);
    g->record([x = x, out = out, M, N]() mutable {
      if (!out.has_grad()) return;
      T* gx = x.grad_data();
      const T* og = out.grad().data();
      for (int m = 0; m < M; ++m)
        for (int n = 0; n < N; ++n)
          gx[std::size_t(m) * N + n] += og[std::size_t(n) * M + m];
    });
  }
  detail::finish_op(out, "transpose2d");
  return out;
}

// Reshape participates in the graph for free: storage (and grad) is shared.
template <class T>
Tensor<T> reshape(Graph<T>*, const Tensor<T>& x, Shape new_shape) {
  return x.reshaped(std::move(new_shape));
}

// [H, W, C] -> [H*W, C]: spatial positions become rows (tokens).
template <class T>
Tensor<T> flatten_spatial(Graph<T>*, const Tensor<T>& x) {
  require_dims(x.rank() == 3, "flatten_spatial expects rank-3 [H,W,C]");
  return x.reshaped(Shape{x.dim(0) * x.dim(1), x.dim(2)});
}

namespace detail {
// Decompose a shape around an axis into [outer, n, inner] for axis-wise loops.
inline void axis_extents(const Shape& s, int axis, std::int64_t& outer, int& n,
                         std::int64_t& inner) {
  require_dims(axis >= 0 && axis < static_cast<int>(s.size()),
               "axis out of range for shape " + shape_str(s));
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[std::size_t(i)];
  n = s[std::size_t(axis)];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}
}  // namespace detail

// Numerically stable softmax along `axis` (max subtraction).
template <class T>
Tensor<T> softmax(Graph<T>* g, const Tensor<T>& x, int axis) {
  std::int64_t outer, inner;
  int n;
  detail::axis_extents(x.shape(), axis, outer, n, inner);
  Tensor<T> out(x.shape());
  const T* px = x.data();
  T* po = out.data();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::int64_t base = o * n * inner + in;
      T mx = px[base];
      for (int i = 1; i < n; ++i) mx = std::max(mx, px[base + i * inner]);
      T denom = T(0);
      for (int i = 0; i < n; ++i) {
        const T e = std::exp(px[base + i * inner] - mx);
        po[base + i * inner] = e;
        denom += e;
      }
      const T inv = T(1) / denom;
      for (int i = 0; i < n; ++i) po[base + i * inner] *= inv;
    }
  if (detail::wants_grad(g, {&x})) {
    out.set_requires_grad(true);
    g->record([x = x, out = out, outer, n, inner]() mutable {
      if (!out.has_grad()) return;
      const T* og = out.grad().data();
      const T* py = out.data();
      T* gx = x.grad_data();
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t in = 0; in < inner; ++in) {
          const std::int64_t base = o * n * inner + in;
          T dot = T(0);
          for (int i = 0; i < n; ++i)
            dot += og[base + i * inner] * py[base + i * inner];
          for (int i = 0; i < n; ++i) {
            const std::int64_t k = base + i * inner;
            gx[k] += py[k] * (og[k] - dot);
          }
        }
    });
  }
  detail::finish_op(out, "softmax");
  return out;
}

// Normalizes the channel vector (last axis) at every leading position to
// mean 0 / variance 1, then applies the affine pair.
template <class T>
Tensor<T> layer_norm(Graph<T>* g, const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps = T(1e-6)) {
  require_dims(x.rank() >= 1, "layer_norm: rank must be >= 1");
  const int C = x.dim(x.rank() - 1);
  require_dims(gamma.rank() == 1 && gamma.dim(0) == C &&
                   beta.rank() == 1 && beta.dim(0) == C,
               "layer_norm: affine params must have shape [C]");
  const std::int64_t rows = x.size() / C;
  Tensor<T> out(x.shape());
  const T* px = x.data();
  const T* pg = gamma.data();
  const T* pb = beta.data();
  T* po = out.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* row = px + r * C;
    T* orow = po + r * C;
    T mean = T(0);
    for (int c = 0; c < C; ++c) mean += row[c];
    mean /= T(C);
    T var = T(0);
    for (int c = 0; c < C; ++c) {
      const T d = row[c] - mean;
      var += d * d;
    }
    var /= T(C);
    const T inv_std = T(1) / std::sqrt(var + eps);
    for (int c = 0; c < C; ++c)
      orow[c] = (row[c] - mean) * inv_std * pg[c] + pb[c];
  }
  if (detail::wants_grad(g, {&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    g->record([x = x, gamma = gamma, beta = beta, out = out, C, rows, eps]() mutable {
      if (!out.has_grad()) return;
      const T* og = out.grad().data();
      const T* px = x.data();
      const T* pg = gamma.data();
      T* gx = x.requires_grad() ? x.grad_data() : nullptr;
      T* ggamma = gamma.requires_grad() ? gamma.grad_data() : nullptr;
      T* gbeta = beta.requires_grad() ? beta.grad_data() : nullptr;
      std::vector<T> xhat(static_cast<std::size_t>(C));
      for (std::int64_t r = 0; r < rows; ++r) {
        const T* row = px + r * C;
        const T* grow = og + r * C;
        T mean = T(0);
        for (int c = 0; c < C; ++c) mean += row[c];
        mean /= T(C);
        T var = T(0);
        for (int c = 0; c < C; ++c) {
          const T d = row[c] - mean;
          var += d * d;
        }
        var /= T(C);
        const T inv_std = T(1) / std::sqrt(var + eps);
        for (int c = 0; c < C; ++c) xhat[std::size_t(c)] = (row[c] - mean) * inv_std;
        if (ggamma)
          for (int c = 0; c < C; ++c) ggamma[c] += grow[c] * xhat[std::size_t(c)];
        if (gbeta)
          for (int c = 0; c < C; ++c) gbeta[c] += grow[c];
        if (gx) {
          T mean_gg = T(0), mean_ggx = T(0);
          for (int c = 0; c < C; ++c) {
            const T gg = grow[c] * pg[c];
            mean_gg += gg;
            mean_ggx += gg * xhat[std::size_t(c)];
          }
          mean_gg /= T(C);
          mean_ggx /= T(C);
          T* gxrow = gx + r * C;
          for (int c = 0; c < C; ++c) {
            const T gg = grow[c] * pg[c];
            gxrow[c] += (gg - mean_gg - xhat[std::size_t(c)] * mean_ggx) * inv_std;
          }
        }
      }
    });
  }
  detail::finish_op(out, "layer_norm");
  return out;
}

template <class T>
Tensor<T> concat(Graph<T>* g, const std::vector<Tensor<T>>& parts, int axis) {
  require_dims(!parts.empty(), "concat: no inputs");
  const Shape& s0 = parts.front().shape();
  Shape out_shape = s0;
  int total_axis = 0;
  for (const auto& p : parts) {
    require_dims(p.rank() == parts.front().rank(), "concat: rank mismatch");
    for (int d = 0; d < p.rank(); ++d)
      if (d != axis)
        require_dims(p.dim(d) == s0[std::size_t(d)],
                     "concat: non-axis extent mismatch");
    total_axis += p.dim(axis);
  }
  out_shape[std::size_t(axis)] = total_axis;
  std::int64_t outer, inner;
  int n_out;
  detail::axis_extents(out_shape, axis, outer, n_out, inner);

  Tensor<T> out(out_shape);
  T* po = out.data();
  int offset = 0;
  for (const auto& p : parts) {
    const int np = p.dim(axis);
    const T* pp = p.data();
    for (std::int64_t o = 0; o < outer; ++o)
      std::memcpy(po + (o * n_out + offset) * inner, pp + o * np * inner,
                  sizeof(T) * std::size_t(np) * std::size_t(inner));
    offset += np;
  }
  bool any_grad = false;
  for (const auto& p : parts) any_grad |= p.requires_grad();
  if (g != nullptr && any_grad) {
    out.set_requires_grad(true);
    g->record([parts = parts, out = out, axis, outer, n_out, inner]() mutable {
      if (!out.has_grad()) return;
      const T* og = out.grad().data();
      int offset = 0;
      for (auto& p : parts) {
        const int np = p.dim(axis);
        if (p.requires_grad()) {
          T* gp = p.grad_data();
          for (std::int64_t o = 0; o < outer; ++o) {
            const T* src = og + (o * n_out + offset) * inner;
            T* dst = gp + o * np * inner;
            for (std::int64_t i = 0; i < std::int64_t(np) * inner; ++i)
              dst[i] += src[i];
          }
        }
        offset += np;
      }
    });
  }
  detail::finish_op(out, "concat");
  return out;
}

// Splits along `axis` into `parts` equal pieces.
template <class T>
std::vector<Tensor<T>> split(Graph<T>* g, const Tensor<T>& x, int axis, int parts) {
  require_dims(parts >= 1, "split: parts must be >= 1");
  std::int64_t outer, inner;
  int n;
  detail::axis_extents(x.shape(), axis, outer, n, inner);
  require_dims(n % parts == 0, "split: axis extent " + std::to_string(n) +
                                   " not divisible into " + std::to_string(parts) +
                                   " parts");
  const int np = n / parts;
  Shape part_shape = x.shape();
  part_shape[std::size_t(axis)] = np;
  std::vector<Tensor<T>> out;
  out.reserve(static_cast<std::size_t>(parts));
  const T* px = x.data();
  for (int p = 0; p < parts; ++p) {
    Tensor<T> t(part_shape);
    T* pt = t.data();
    for (std::int64_t o = 0; o < outer; ++o)
      std::memcpy(pt + o * np * inner, px + (o * n + p * np) * inner,
                  sizeof(T) * std::size_t(np) * std::size_t(inner));
    if (detail::wants_grad(g, {&x})) t.set_requires_grad(true);
    detail::finish_op(t, "split");
    out.push_back(std::move(t));
  }
  if (detail::wants_grad(g, {&x})) {
    g->record([x = x, out = out, n, np, outer, inner]() mutable {
      T* gx = x.grad_data();
      for (int p = 0; p < static_cast<int>(out.size()); ++p) {
        if (!out[std::size_t(p)].has_grad()) continue;
        const T* gp = out[std::size_t(p)].grad().data();
        for (std::int64_t o = 0; o < outer; ++o) {
          T* dst = gx + (o * n + p * np) * inner;
          const T* src = gp + o * np * inner;
          for (std::int64_t i = 0; i < std::int64_t(np) * inner; ++i)
            dst[i] += src[i];
        }
      }
    });
  }
  return out;
}

}  // namespace elgc
