#pragma once

// Spatial kernels over channel-last [H, W, C] feature maps. Dense weights are
// [k, k, Cin, Cout]; depthwise weights are [k, k, C]. All strides/pads are
// symmetric in the two spatial axes. Padding is implicit zeros.

#include <cmath>
#include <limits>
#include <memory>

#include "elgcnet/tensor.hpp"

namespace elgc {

inline int conv_out_extent(int in, int k, int stride, int pad) {
  require_dims(k >= 1 && stride >= 1 && pad >= 0,
               "conv geometry: kernel and stride must be >= 1, pad >= 0");
  const int n = (in + 2 * pad - k) / stride + 1;
  require_dims(in + 2 * pad >= k && n > 0,
               "conv window does not fit: extent " + std::to_string(in) +
                   ", kernel " + std::to_string(k) + ", stride " +
                   std::to_string(stride) + ", pad " + std::to_string(pad));
  return n;
}

inline int tconv_out_extent(int in, int k, int stride, int pad) {
  require_dims(k >= 1 && stride >= 1 && pad >= 0,
               "conv geometry: kernel and stride must be >= 1, pad >= 0");
  const int n = (in - 1) * stride - 2 * pad + k;
  require_dims(n > 0, "transpose conv output extent is not positive");
  return n;
}

template <class T>
Tensor<T> conv2d(Graph<T>* g, const Tensor<T>& x, const Tensor<T>& w,
                 const Tensor<T>& b, int stride, int pad) {
  require_dims(x.rank() == 3, "conv2d: input must be [H,W,C]");
  require_dims(w.rank() == 4, "conv2d: weight must be [k,k,Cin,Cout]");
  require_dims(w.dim(0) == w.dim(1), "conv2d: kernel must be square");
  require_dims(x.dim(2) == w.dim(2),
               "conv2d: input channels " + std::to_string(x.dim(2)) +
                   " != weight Cin " + std::to_string(w.dim(2)));
  const int H = x.dim(0), W = x.dim(1), Ci = x.dim(2);
  const int k = w.dim(0), Co = w.dim(3);
  require_dims(b.rank() == 1 && b.dim(0) == Co, "conv2d: bias must be [Cout]");
  const int Ho = conv_out_extent(H, k, stride, pad);
  const int Wo = conv_out_extent(W, k, stride, pad);

  Tensor<T> out(Shape{Ho, Wo, Co});
  const T* px = x.data();
  const T* pw = w.data();
  const T* pb = b.data();
  T* po = out.data();
  for (int oy = 0; oy < Ho; ++oy)
    for (int ox = 0; ox < Wo; ++ox) {
      T* orow = po + (std::int64_t(oy) * Wo + ox) * Co;
      for (int co = 0; co < Co; ++co) orow[co] = pb[co];
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * stride - pad + ky;
        if (iy < 0 || iy >= H) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * stride - pad + kx;
          if (ix < 0 || ix >= W) continue;
          const T* xel = px + (std::int64_t(iy) * W + ix) * Ci;
          const T* wrow = pw + (std::int64_t(ky) * k + kx) * Ci * Co;
          for (int ci = 0; ci < Ci; ++ci) {
            const T xv = xel[ci];
            const T* wcol = wrow + std::int64_t(ci) * Co;
            for (int co = 0; co < Co; ++co) orow[co] += xv * wcol[co];
          }
        }
      }
    }
  if (detail::wants_grad(g, {&x, &w, &b})) {
    out.set_requires_grad(true);
    g->record([x = x, w = w, b = b, out = out, stride, pad]() mutable {
      if (!out.has_grad()) return;
      const int H = x.dim(0), W = x.dim(1), Ci = x.dim(2);
      const int k = w.dim(0), Co = w.dim(3);
      const int Ho = out.dim(0), Wo = out.dim(1);
      const T* og = out.grad().data();
      const T* px = x.data();
      const T* pw = w.data();
      T* gx = x.requires_grad() ? x.grad_data() : nullptr;
      T* gw = w.requires_grad() ? w.grad_data() : nullptr;
      T* gb = b.requires_grad() ? b.grad_data() : nullptr;
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          const T* grow = og + (std::int64_t(oy) * Wo + ox) * Co;
          if (gb)
            for (int co = 0; co < Co; ++co) gb[co] += grow[co];
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= H) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= W) continue;
              const std::int64_t xoff = (std::int64_t(iy) * W + ix) * Ci;
              const std::int64_t woff = (std::int64_t(ky) * k + kx) * Ci * Co;
              for (int ci = 0; ci < Ci; ++ci) {
                const T* wcol = pw + woff + std::int64_t(ci) * Co;
                if (gx) {
                  T acc = T(0);
                  for (int co = 0; co < Co; ++co) acc += grow[co] * wcol[co];
                  gx[xoff + ci] += acc;
                }
                if (gw) {
                  const T xv = px[xoff + ci];
                  T* gwcol = gw + woff + std::int64_t(ci) * Co;
                  for (int co = 0; co < Co; ++co) gwcol[co] += xv * grow[co];
                }
              }
            }
          }
        }
    });
  }
  detail::finish_op(out, "conv2d");
  return out;
}

template <class T>
Tensor<T> depthwise_conv2d(Graph<T>* g, const Tensor<T>& x, const Tensor<T>& w,
                           const Tensor<T>& b, int stride, int pad) {
  require_dims(x.rank() == 3, "depthwise_conv2d: input must be [H,W,C]");
  require_dims(w.rank() == 3 && w.dim(0) == w.dim(1),
               "depthwise_conv2d: weight must be [k,k,C]");
  require_dims(x.dim(2) == w.dim(2), "depthwise_conv2d: channel mismatch");
  const int H = x.dim(0), W = x.dim(1), C = x.dim(2);
  const int k = w.dim(0);
  require_dims(b.rank() == 1 && b.dim(0) == C,
               "depthwise_conv2d: bias must be [C]");
  const int Ho = conv_out_extent(H, k, stride, pad);
  const int Wo = conv_out_extent(W, k, stride, pad);

  Tensor<T> out(Shape{Ho, Wo, C});
  const T* px = x.data();
  const T* pw = w.data();
  const T* pb = b.data();
  T* po = out.data();
  for (int oy = 0; oy < Ho; ++oy)
    for (int ox = 0; ox < Wo; ++ox) {
      T* orow = po + (std::int64_t(oy) * Wo + ox) * C;
      for (int c = 0; c < C; ++c) orow[c] = pb[c];
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * stride - pad + ky;
        if (iy < 0 || iy >= H) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * stride - pad + kx;
          if (ix < 0 || ix >= W) continue;
          const T* xel = px + (std::int64_t(iy) * W + ix) * C;
          const T* wel = pw + (std::int64_t(ky) * k + kx) * C;
          for (int c = 0; c < C; ++c) orow[c] += xel[c] * wel[c];
        }
      }
    }
  if (detail::wants_grad(g, {&x, &w, &b})) {
    out.set_requires_grad(true);
    g->record([x = x, w = w, b = b, out = out, stride, pad]() mutable {
      if (!out.has_grad()) return;
      const int H = x.dim(0), W = x.dim(1), C = x.dim(2);
      const int k = w.dim(0);
      const int Ho = out.dim(0), Wo = out.dim(1);
      const T* og = out.grad().data();
      const T* px = x.data();
      const T* pw = w.data();
      T* gx = x.requires_grad() ? x.grad_data() : nullptr;
      T* gw = w.requires_grad() ? w.grad_data() : nullptr;
      T* gb = b.requires_grad() ? b.grad_data() : nullptr;
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          const T* grow = og + (std::int64_t(oy) * Wo + ox) * C;
          if (gb)
            for (int c = 0; c < C; ++c) gb[c] += grow[c];
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= H) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= W) continue;
              const std::int64_t xoff = (std::int64_t(iy) * W + ix) * C;
              const std::int64_t woff = (std::int64_t(ky) * k + kx) * C;
              if (gx)
                for (int c = 0; c < C; ++c)
                  gx[xoff + c] += grow[c] * pw[woff + c];
              if (gw)
                for (int c = 0; c < C; ++c)
                  gw[woff + c] += grow[c] * px[xoff + c];
            }
          }
        }
    });
  }
  detail::finish_op(out, "depthwise_conv2d");
  return out;
}

// Fractionally-strided convolution. Forward scatters each input position into
// the output exactly where conv2d's input gradient would gather from, so
// <tconv(x; w), y> == <x, conv2d(y; w_swapped)> holds by construction.
template <class T>
Tensor<T> transpose_conv2d(Graph<T>* g, const Tensor<T>& x, const Tensor<T>& w,
                           const Tensor<T>& b, int stride, int pad) {
  require_dims(x.rank() == 3, "transpose_conv2d: input must be [H,W,C]");
  require_dims(w.rank() == 4 && w.dim(0) == w.dim(1),
               "transpose_conv2d: weight must be [k,k,Cin,Cout]");
  require_dims(x.dim(2) == w.dim(2), "transpose_conv2d: channel mismatch");
  const int H = x.dim(0), W = x.dim(1), Ci = x.dim(2);
  const int k = w.dim(0), Co = w.dim(3);
  require_dims(b.rank() == 1 && b.dim(0) == Co,
               "transpose_conv2d: bias must be [Cout]");
  const int Ho = tconv_out_extent(H, k, stride, pad);
  const int Wo = tconv_out_extent(W, k, stride, pad);

  Tensor<T> out(Shape{Ho, Wo, Co});
  const T* px = x.data();
  const T* pw = w.data();
  const T* pb = b.data();
  T* po = out.data();
  for (std::int64_t i = 0; i < std::int64_t(Ho) * Wo; ++i)
    for (int co = 0; co < Co; ++co) po[i * Co + co] = pb[co];
  for (int iy = 0; iy < H; ++iy)
    for (int ix = 0; ix < W; ++ix) {
      const T* xel = px + (std::int64_t(iy) * W + ix) * Ci;
      for (int ky = 0; ky < k; ++ky) {
        const int oy = iy * stride - pad + ky;
        if (oy < 0 || oy >= Ho) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ox = ix * stride - pad + kx;
          if (ox < 0 || ox >= Wo) continue;
          T* orow = po + (std::int64_t(oy) * Wo + ox) * Co;
          const T* wrow = pw + (std::int64_t(ky) * k + kx) * Ci * Co;
          for (int ci = 0; ci < Ci; ++ci) {
            const T xv = xel[ci];
            const T* wcol = wrow + std::int64_t(ci) * Co;
            for (int co = 0; co < Co; ++co) orow[co] += xv * wcol[co];
          }
        }
      }
    }
  if (detail::wants_grad(g, {&x, &w, &b})) {
    out.set_requires_grad(true);
    g->record([x = x, w = w, b = b, out = out, stride, pad]() mutable {
      if (!out.has_grad()) return;
      const int H = x.dim(0), W = x.dim(1), Ci = x.dim(2);
      const int k = w.dim(0), Co = w.dim(3);
      const int Ho = out.dim(0), Wo = out.dim(1);
      const T* og = out.grad().data();
      const T* px = x.data();
      const T* pw = w.data();
      T* gx = x.requires_grad() ? x.grad_data() : nullptr;
      T* gw = w.requires_grad() ? w.grad_data() : nullptr;
      T* gb = b.requires_grad() ? b.grad_data() : nullptr;
      if (gb)
        for (std::int64_t i = 0; i < std::int64_t(Ho) * Wo; ++i)
          for (int co = 0; co < Co; ++co) gb[co] += og[i * Co + co];
      for (int iy = 0; iy < H; ++iy)
        for (int ix = 0; ix < W; ++ix) {
          const std::int64_t xoff = (std::int64_t(iy) * W + ix) * Ci;
          for (int ky = 0; ky < k; ++ky) {
            const int oy = iy * stride - pad + ky;
            if (oy < 0 || oy >= Ho) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ox = ix * stride - pad + kx;
              if (ox < 0 || ox >= Wo) continue;
              const T* grow = og + (std::int64_t(oy) * Wo + ox) * Co;
              const std::int64_t woff = (std::int64_t(ky) * k + kx) * Ci * Co;
              for (int ci = 0; ci < Ci; ++ci) {
                const T* wcol = pw + woff + std::int64_t(ci) * Co;
                if (gx) {
                  T acc = T(0);
                  for (int co = 0; co < Co; ++co) acc += grow[co] * wcol[co];
                  gx[xoff + ci] += acc;
                }
                if (gw) {
                  const T xv = px[xoff + ci];
                  T* gwcol = gw + woff + std::int64_t(ci) * Co;
                  for (int co = 0; co < Co; ++co) gwcol[co] += xv * grow[co];
                }
              }
            }
          }
        }
    });
  }
  detail::finish_op(out, "transpose_conv2d");
  return out;
}

// Average pool with fixed divisor k*k (zero padding counts toward the mean).
template <class T>
Tensor<T> avg_pool(Graph<T>* g, const Tensor<T>& x, int k, int stride, int pad) {
  require_dims(x.rank() == 3, "avg_pool: input must be [H,W,C]");
  const int H = x.dim(0), W = x.dim(1), C = x.dim(2);
  const int Ho = conv_out_extent(H, k, stride, pad);
  const int Wo = conv_out_extent(W, k, stride, pad);
  const T inv = T(1) / T(k * k);

  Tensor<T> out(Shape{Ho, Wo, C});
  const T* px = x.data();
  T* po = out.data();
  for (int oy = 0; oy < Ho; ++oy)
    for (int ox = 0; ox < Wo; ++ox) {
      T* orow = po + (std::int64_t(oy) * Wo + ox) * C;
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * stride - pad + ky;
        if (iy < 0 || iy >= H) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * stride - pad + kx;
          if (ix < 0 || ix >= W) continue;
          const T* xel = px + (std::int64_t(iy) * W + ix) * C;
          for (int c = 0; c < C; ++c) orow[c] += xel[c];
        }
      }
      for (int c = 0; c < C; ++c) orow[c] *= inv;
    }
  if (detail::wants_grad(g, {&x})) {
    out.set_requires_grad(true);
    g->record([x = x, out = out, k, stride, pad, inv]() mutable {
      if (!out.has_grad()) return;
      const int H = x.dim(0), W = x.dim(1), C = x.dim(2);
      const int Ho = out.dim(0), Wo = out.dim(1);
      const T* og = out.grad().data();
      T* gx = x.grad_data();
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          const T* grow = og + (std::int64_t(oy) * Wo + ox) * C;
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= H) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= W) continue;
              T* gel = gx + (std::int64_t(iy) * W + ix) * C;
              for (int c = 0; c < C; ++c) gel[c] += grow[c] * inv;
            }
          }
        }
    });
  }
  detail::finish_op(out, "avg_pool");
  return out;
}

// Max pool; out-of-bounds window cells are ignored. The gradient is routed to
// the first maximal element of each window.
template <class T>
Tensor<T> max_pool(Graph<T>* g, const Tensor<T>& x, int k, int stride, int pad) {
  require_dims(x.rank() == 3, "max_pool: input must be [H,W,C]");
  const int H = x.dim(0), W = x.dim(1), C = x.dim(2);
  const int Ho = conv_out_extent(H, k, stride, pad);
  const int Wo = conv_out_extent(W, k, stride, pad);

  Tensor<T> out(Shape{Ho, Wo, C});
  auto argmax = std::make_shared<std::vector<std::int64_t>>(
      static_cast<std::size_t>(out.size()), std::int64_t(-1));
  const T* px = x.data();
  T* po = out.data();
  for (int oy = 0; oy < Ho; ++oy)
    for (int ox = 0; ox < Wo; ++ox) {
      const std::int64_t obase = (std::int64_t(oy) * Wo + ox) * C;
      for (int c = 0; c < C; ++c) {
        T best = -std::numeric_limits<T>::infinity();
        std::int64_t best_idx = -1;
        bool poisoned = false;
        for (int ky = 0; ky < k && !poisoned; ++ky) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= W) continue;
            const std::int64_t idx = (std::int64_t(iy) * W + ix) * C + c;
            // NaN would lose every comparison; propagate it instead so a
            // poisoned activation reaches the loss and trips its checks.
            if (std::isnan(px[idx])) {
              best = px[idx];
              best_idx = idx;
              poisoned = true;
              break;
            }
            if (px[idx] > best) {
              best = px[idx];
              best_idx = idx;
            }
          }
        }
        require_dims(best_idx >= 0, "max_pool: empty pooling window");
        po[obase + c] = best;
        (*argmax)[static_cast<std::size_t>(obase + c)] = best_idx;
      }
    }
  if (detail::wants_grad(g, {&x})) {
    out.set_requires_grad(true);
    g->record([x = x, out = out, argmax]() mutable {
      if (!out.has_grad()) return;
      const T* og = out.grad().data();
      T* gx = x.grad_data();
      for (std::int64_t i = 0; i < out.size(); ++i)
        gx[(*argmax)[static_cast<std::size_t>(i)]] += og[i];
    });
  }
  detail::finish_op(out, "max_pool");
  return out;
}

namespace detail {
// Half-pixel-center source coordinate mapping for bilinear resampling.
inline void bilinear_axis(int out_i, int in_n, int out_n, double scale, int& i0,
                          int& i1, double& w1) {
  double src = (double(out_i) + 0.5) * scale - 0.5;
  if (src < 0.0) src = 0.0;
  if (src > double(in_n - 1)) src = double(in_n - 1);
  i0 = static_cast<int>(src);
  if (i0 > in_n - 2) i0 = in_n - 2;
  if (i0 < 0) i0 = 0;
  i1 = in_n > 1 ? i0 + 1 : i0;
  w1 = in_n > 1 ? src - double(i0) : 0.0;
}
}  // namespace detail

template <class T>
Tensor<T> bilinear_upsample(Graph<T>* g, const Tensor<T>& x, int out_h, int out_w) {
  require_dims(x.rank() == 3, "bilinear_upsample: input must be [H,W,C]");
  require_dims(out_h >= 1 && out_w >= 1, "bilinear_upsample: bad output size");
  const int H = x.dim(0), W = x.dim(1), C = x.dim(2);
  const double sy = double(H) / double(out_h);
  const double sx = double(W) / double(out_w);

  Tensor<T> out(Shape{out_h, out_w, C});
  const T* px = x.data();
  T* po = out.data();
  for (int oy = 0; oy < out_h; ++oy) {
    int y0, y1;
    double wy1;
    detail::bilinear_axis(oy, H, out_h, sy, y0, y1, wy1);
    for (int ox = 0; ox < out_w; ++ox) {
      int x0, x1;
      double wx1;
      detail::bilinear_axis(ox, W, out_w, sx, x0, x1, wx1);
      const T w00 = T((1.0 - wy1) * (1.0 - wx1));
      const T w01 = T((1.0 - wy1) * wx1);
      const T w10 = T(wy1 * (1.0 - wx1));
      const T w11 = T(wy1 * wx1);
      const T* p00 = px + (std::int64_t(y0) * W + x0) * C;
      const T* p01 = px + (std::int64_t(y0) * W + x1) * C;
      const T* p10 = px + (std::int64_t(y1) * W + x0) * C;
      const T* p11 = px + (std::int64_t(y1) * W + x1) * C;
      T* orow = po + (std::int64_t(oy) * out_w + ox) * C;
      for (int c = 0; c < C; ++c)
        orow[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
    }
  }
  if (detail::wants_grad(g, {&x})) {
    out.set_requires_grad(true);
    g->record([x = x, out = out, sy, sx]() mutable {
      if (!out.has_grad()) return;
      const int H = x.dim(0), W = x.dim(1), C = x.dim(2);
      const int Ho = out.dim(0), Wo = out.dim(1);
      const T* og = out.grad().data();
      T* gx = x.grad_data();
      for (int oy = 0; oy < Ho; ++oy) {
        int y0, y1;
        double wy1;
        detail::bilinear_axis(oy, H, Ho, sy, y0, y1, wy1);
        for (int ox = 0; ox < Wo; ++ox) {
          int x0, x1;
          double wx1;
          detail::bilinear_axis(ox, W, Wo, sx, x0, x1, wx1);
          const T w00 = T((1.0 - wy1) * (1.0 - wx1));
          const T w01 = T((1.0 - wy1) * wx1);
          const T w10 = T(wy1 * (1.0 - wx1));
          const T w11 = T(wy1 * wx1);
          const T* grow = og + (std::int64_t(oy) * Wo + ox) * C;
          T* g00 = gx + (std::int64_t(y0) * W + x0) * C;
          T* g01 = gx + (std::int64_t(y0) * W + x1) * C;
          T* g10 = gx + (std::int64_t(y1) * W + x0) * C;
          T* g11 = gx + (std::int64_t(y1) * W + x1) * C;
          for (int c = 0; c < C; ++c) {
            g00[c] += w00 * grow[c];
            g01[c] += w01 * grow[c];
            g10[c] += w10 * grow[c];
            g11[c] += w11 * grow[c];
          }
        }
      }
    });
  }
  detail::finish_op(out, "bilinear_upsample");
  return out;
}

}  // namespace elgc
