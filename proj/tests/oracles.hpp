#pragma once

// Independent naive-loop reference implementations used to validate the
// library kernels. These are written directly from the operation definitions
// (gather-form loops, explicit window scans, direct probability formulas) and
// deliberately share no code with the library implementations.

#include <algorithm>
#include <cmath>
#include <vector>

#include "elgcnet/elgcnet.hpp"

namespace oracle {

using elgc::Rng;
using elgc::Shape;
using elgc::Tensor;

template <class T>
Tensor<T> rand_t(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = T(rng.uniform(lo, hi));
  return t;
}

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.size() != b.size()) return 1e300;
  double worst = 0;
  for (std::int64_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(double(a[i]) - double(b[i])));
  return worst;
}

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 int stride, int pad) {
  const std::int64_t h = x.dim(0), wd = x.dim(1), cin = x.dim(2);
  const std::int64_t k = w.dim(0), cout = w.dim(3);
  const std::int64_t oh = (h + 2 * pad - k) / stride + 1;
  const std::int64_t ow = (wd + 2 * pad - k) / stride + 1;
  Tensor<T> out(Shape{int(oh), int(ow), int(cout)});
  for (std::int64_t oy = 0; oy < oh; ++oy)
    for (std::int64_t ox = 0; ox < ow; ++ox)
      for (std::int64_t co = 0; co < cout; ++co) {
        double acc = double(b[co]);
        for (std::int64_t ky = 0; ky < k; ++ky)
          for (std::int64_t kx = 0; kx < k; ++kx)
            for (std::int64_t ci = 0; ci < cin; ++ci) {
              const std::int64_t iy = oy * stride - pad + ky;
              const std::int64_t ix = ox * stride - pad + kx;
              if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
              acc += double(x.at(iy, ix, ci)) * double(w.at(ky, kx, ci, co));
            }
        out.at(oy, ox, co) = T(acc);
      }
  return out;
}

template <class T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& w,
                           const Tensor<T>& b, int stride, int pad) {
  const std::int64_t h = x.dim(0), wd = x.dim(1), c = x.dim(2);
  const std::int64_t k = w.dim(0);
  const std::int64_t oh = (h + 2 * pad - k) / stride + 1;
  const std::int64_t ow = (wd + 2 * pad - k) / stride + 1;
  Tensor<T> out(Shape{int(oh), int(ow), int(c)});
  for (std::int64_t oy = 0; oy < oh; ++oy)
    for (std::int64_t ox = 0; ox < ow; ++ox)
      for (std::int64_t ch = 0; ch < c; ++ch) {
        double acc = double(b[ch]);
        for (std::int64_t ky = 0; ky < k; ++ky)
          for (std::int64_t kx = 0; kx < k; ++kx) {
            const std::int64_t iy = oy * stride - pad + ky;
            const std::int64_t ix = ox * stride - pad + kx;
            if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
            acc += double(x.at(iy, ix, ch)) * double(w.at(ky, kx, ch));
          }
        out.at(oy, ox, ch) = T(acc);
      }
  return out;
}

// Gather form of the transpose convolution: output position (oy, ox) sums
// x[(oy + pad - ky)/stride, ...] over kernel taps whose index divides evenly.
template <class T>
Tensor<T> transpose_conv2d(const Tensor<T>& x, const Tensor<T>& w,
                           const Tensor<T>& b, int stride, int pad) {
  const std::int64_t h = x.dim(0), wd = x.dim(1), cin = x.dim(2);
  const std::int64_t k = w.dim(0), cout = w.dim(3);
  const std::int64_t oh = (h - 1) * stride - 2 * pad + k;
  const std::int64_t ow = (wd - 1) * stride - 2 * pad + k;
  Tensor<T> out(Shape{int(oh), int(ow), int(cout)});
  for (std::int64_t oy = 0; oy < oh; ++oy)
    for (std::int64_t ox = 0; ox < ow; ++ox)
      for (std::int64_t co = 0; co < cout; ++co) {
        double acc = double(b[co]);
        for (std::int64_t ky = 0; ky < k; ++ky)
          for (std::int64_t kx = 0; kx < k; ++kx) {
            const std::int64_t ny = oy + pad - ky;
            const std::int64_t nx = ox + pad - kx;
            if (ny % stride != 0 || nx % stride != 0) continue;
            const std::int64_t iy = ny / stride, ix = nx / stride;
            if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
            for (std::int64_t ci = 0; ci < cin; ++ci)
              acc += double(x.at(iy, ix, ci)) * double(w.at(ky, kx, ci, co));
          }
        out.at(oy, ox, co) = T(acc);
      }
  return out;
}

// Average pooling with a fixed 1/k^2 divisor (padded positions count as 0).
template <class T>
Tensor<T> avg_pool(const Tensor<T>& x, int k, int stride, int pad) {
  const std::int64_t h = x.dim(0), wd = x.dim(1), c = x.dim(2);
  const std::int64_t oh = (h + 2 * pad - k) / stride + 1;
  const std::int64_t ow = (wd + 2 * pad - k) / stride + 1;
  Tensor<T> out(Shape{int(oh), int(ow), int(c)});
  for (std::int64_t oy = 0; oy < oh; ++oy)
    for (std::int64_t ox = 0; ox < ow; ++ox)
      for (std::int64_t ch = 0; ch < c; ++ch) {
        double acc = 0;
        for (std::int64_t ky = 0; ky < k; ++ky)
          for (std::int64_t kx = 0; kx < k; ++kx) {
            const std::int64_t iy = oy * stride - pad + ky;
            const std::int64_t ix = ox * stride - pad + kx;
            if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
            acc += double(x.at(iy, ix, ch));
          }
        out.at(oy, ox, ch) = T(acc / double(k * k));
      }
  return out;
}

template <class T>
Tensor<T> max_pool(const Tensor<T>& x, int k, int stride, int pad) {
  const std::int64_t h = x.dim(0), wd = x.dim(1), c = x.dim(2);
  const std::int64_t oh = (h + 2 * pad - k) / stride + 1;
  const std::int64_t ow = (wd + 2 * pad - k) / stride + 1;
  Tensor<T> out(Shape{int(oh), int(ow), int(c)});
  for (std::int64_t oy = 0; oy < oh; ++oy)
    for (std::int64_t ox = 0; ox < ow; ++ox)
      for (std::int64_t ch = 0; ch < c; ++ch) {
        double best = -1e300;
        bool seen = false;
        for (std::int64_t ky = 0; ky < k; ++ky)
          for (std::int64_t kx = 0; kx < k; ++kx) {
            const std::int64_t iy = oy * stride - pad + ky;
            const std::int64_t ix = ox * stride - pad + kx;
            if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
            const double v = double(x.at(iy, ix, ch));
            if (!seen || v > best) best = v;
            seen = true;
          }
        out.at(oy, ox, ch) = T(best);
      }
  return out;
}

// Softmax over the trailing axis of a [rows, cols] view.
template <class T>
std::vector<double> softmax_rows(const std::vector<double>& v,
                                 std::int64_t rows, std::int64_t cols) {
  std::vector<double> out(v.size());
  for (std::int64_t r = 0; r < rows; ++r) {
    double mx = -1e300;
    for (std::int64_t c = 0; c < cols; ++c)
      mx = std::max(mx, v[std::size_t(r * cols + c)]);
    double sum = 0;
    for (std::int64_t c = 0; c < cols; ++c) {
      const double e = std::exp(v[std::size_t(r * cols + c)] - mx);
      out[std::size_t(r * cols + c)] = e;
      sum += e;
    }
    for (std::int64_t c = 0; c < cols; ++c) out[std::size_t(r * cols + c)] /= sum;
  }
  return out;
}

template <class T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  // Direct evaluation along `axis` of an arbitrary-rank tensor.
  const int rank = x.rank();
  std::int64_t before = 1, along = x.dim(axis), after = 1;
  for (int d = 0; d < axis; ++d) before *= x.dim(d);
  for (int d = axis + 1; d < rank; ++d) after *= x.dim(d);
  Tensor<T> out(x.shape());
  for (std::int64_t b = 0; b < before; ++b)
    for (std::int64_t a = 0; a < after; ++a) {
      double mx = -1e300;
      for (std::int64_t i = 0; i < along; ++i)
        mx = std::max(mx, double(x[(b * along + i) * after + a]));
      double sum = 0;
      for (std::int64_t i = 0; i < along; ++i)
        sum += std::exp(double(x[(b * along + i) * after + a]) - mx);
      for (std::int64_t i = 0; i < along; ++i)
        out[(b * along + i) * after + a] =
            T(std::exp(double(x[(b * along + i) * after + a]) - mx) / sum);
    }
  return out;
}

// Pooled-transpose attention: M = softmax(pool_k(K)^T pool_q(Q), axis=0)
// (column-stochastic [C4, C4]); out = V M at full resolution. Pools: q via
// 3x3 stride-2 pad-1 average, k via 2x2 stride-2 pad-0 max (mode-dependent).
template <class T>
Tensor<T> pt_attention(const Tensor<T>& q, const Tensor<T>& k,
                       const Tensor<T>& v, elgc::PoolingMode mode) {
  using elgc::PoolingMode;
  Tensor<T> qp = q, kp = k;
  switch (mode) {
    case PoolingMode::avg_q_max_k:
      qp = avg_pool(q, 3, 2, 1);
      kp = max_pool(k, 2, 2, 0);
      break;
    case PoolingMode::avg_avg:
      qp = avg_pool(q, 3, 2, 1);
      kp = avg_pool(k, 3, 2, 1);
      break;
    case PoolingMode::max_max:
      qp = max_pool(q, 2, 2, 0);
      kp = max_pool(k, 2, 2, 0);
      break;
    case PoolingMode::max_q_avg_k:
      qp = max_pool(q, 2, 2, 0);
      kp = avg_pool(k, 3, 2, 1);
      break;
    case PoolingMode::none:
      break;
  }
  const std::int64_t c4 = q.dim(2);
  const std::int64_t nq = qp.dim(0) * qp.dim(1);
  const std::int64_t nk = kp.dim(0) * kp.dim(1);
  if (nq != nk) throw elgc::UsageError("oracle: pooled token counts differ");
  // S[i][j] = sum_n kp[n,i] * qp[n,j]
  std::vector<double> s(std::size_t(c4 * c4), 0.0);
  for (std::int64_t n = 0; n < nq; ++n)
    for (std::int64_t i = 0; i < c4; ++i)
      for (std::int64_t j = 0; j < c4; ++j)
        s[std::size_t(i * c4 + j)] +=
            double(kp[n * c4 + i]) * double(qp[n * c4 + j]);
  // Column softmax (over i for each j).
  std::vector<double> m(std::size_t(c4 * c4));
  for (std::int64_t j = 0; j < c4; ++j) {
    double mx = -1e300;
    for (std::int64_t i = 0; i < c4; ++i)
      mx = std::max(mx, s[std::size_t(i * c4 + j)]);
    double sum = 0;
    for (std::int64_t i = 0; i < c4; ++i)
      sum += std::exp(s[std::size_t(i * c4 + j)] - mx);
    for (std::int64_t i = 0; i < c4; ++i)
      m[std::size_t(i * c4 + j)] =
          std::exp(s[std::size_t(i * c4 + j)] - mx) / sum;
  }
  const std::int64_t nv = v.dim(0) * v.dim(1);
  Tensor<T> out(v.shape());
  for (std::int64_t n = 0; n < nv; ++n)
    for (std::int64_t j = 0; j < c4; ++j) {
      double acc = 0;
      for (std::int64_t i = 0; i < c4; ++i)
        acc += double(v[n * c4 + i]) * m[std::size_t(i * c4 + j)];
      out[n * c4 + j] = T(acc);
    }
  return out;
}

// Standard self-attention: A = softmax(Q K^T / sqrt(C4), rows); out = A V.
template <class T>
Tensor<T> standard_self_attention(const Tensor<T>& q, const Tensor<T>& k,
                                  const Tensor<T>& v) {
  const std::int64_t n = q.dim(0) * q.dim(1);
  const std::int64_t c4 = q.dim(2);
  const double scale = 1.0 / std::sqrt(double(c4));
  std::vector<double> a(std::size_t(n * n));
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < n; ++j) {
      double acc = 0;
      for (std::int64_t c = 0; c < c4; ++c)
        acc += double(q[i * c4 + c]) * double(k[j * c4 + c]);
      a[std::size_t(i * n + j)] = acc * scale;
    }
  a = softmax_rows<T>(a, n, n);
  Tensor<T> out(v.shape());
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t c = 0; c < c4; ++c) {
      double acc = 0;
      for (std::int64_t j = 0; j < n; ++j)
        acc += a[std::size_t(i * n + j)] * double(v[j * c4 + c]);
      out[i * c4 + c] = T(acc);
    }
  return out;
}

// Per-pixel class probabilities from [H, W, 2] logits.
inline void pixel_probs(double l0, double l1, double& p0, double& p1) {
  const double mx = std::max(l0, l1);
  const double e0 = std::exp(l0 - mx), e1 = std::exp(l1 - mx);
  p0 = e0 / (e0 + e1);
  p1 = e1 / (e0 + e1);
}

template <class T>
double cross_entropy(const Tensor<T>& logits, const Tensor<T>& labels) {
  const std::int64_t hw = labels.size();
  double acc = 0;
  for (std::int64_t i = 0; i < hw; ++i) {
    double p0, p1;
    pixel_probs(double(logits[2 * i]), double(logits[2 * i + 1]), p0, p1);
    const double pt = labels[i] > T(0.5) ? p1 : p0;
    acc += -std::log(std::max(pt, elgc::kLogEps));
  }
  return acc / double(hw);
}

template <class T>
double focal_loss(const Tensor<T>& logits, const Tensor<T>& labels,
                  double gamma) {
  const std::int64_t hw = labels.size();
  double acc = 0;
  for (std::int64_t i = 0; i < hw; ++i) {
    double p0, p1;
    pixel_probs(double(logits[2 * i]), double(logits[2 * i + 1]), p0, p1);
    const double pt = labels[i] > T(0.5) ? p1 : p0;
    acc += -std::pow(1.0 - pt, gamma) * std::log(std::max(pt, elgc::kLogEps));
  }
  return acc / double(hw);
}

template <class T>
double miou_loss(const Tensor<T>& logits, const Tensor<T>& labels) {
  const std::int64_t hw = labels.size();
  double inter = 0, psum = 0, ysum = 0;
  for (std::int64_t i = 0; i < hw; ++i) {
    double p0, p1;
    pixel_probs(double(logits[2 * i]), double(logits[2 * i + 1]), p0, p1);
    const double y = labels[i] > T(0.5) ? 1.0 : 0.0;
    inter += p1 * y;
    psum += p1;
    ysum += y;
  }
  return 1.0 - (inter + 1.0) / (psum + ysum - inter + 1.0);
}

}  // namespace oracle
