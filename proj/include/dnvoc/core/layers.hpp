// Copyright 2026 The dnvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Fused layer ops: matmul, linear, convolutions, normalizations, attention.
// Tensors are channel-first without a batch axis unless stated otherwise.

#pragma once

#include <algorithm>
#include <cmath>

#include "dnvoc/core/gemm.hpp"
#include "dnvoc/core/ops.hpp"

namespace dnvoc::ad {

// [m, k] x [k, n] -> [m, n]
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> y(static_cast<std::size_t>(m) * n);
  gemm<T>(false, false, m, n, k, T(1), a.value().data(), b.value().data(), T(0), y.data());
  return make_op<T>({m, n}, std::move(y), {&a, &b}, [a, b, m, n, k](Node<T>& out) {
    if (T* ga = grad_of(a))
      gemm<T>(false, true, m, k, n, T(1), out.grad.data(), b.value().data(), T(1), ga);
    if (T* gb = grad_of(b))
      gemm<T>(true, false, k, n, m, T(1), a.value().data(), out.grad.data(), T(1), gb);
  });
}

// y = x W^T + b over the last axis; leading axes are flattened.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>* bias = nullptr) {
  const int in = x.dim(-1), out_f = w.dim(0);
  if (w.dim(1) != in) throw ShapeError("linear: weight " + shape_str(w.shape()) +
                                       " vs input " + shape_str(x.shape()));
  const int rows = static_cast<int>(x.numel() / static_cast<std::size_t>(in));
  Shape shape = x.shape();
  shape.back() = out_f;
  std::vector<T> y(static_cast<std::size_t>(rows) * out_f);
  gemm<T>(false, true, rows, out_f, in, T(1), x.value().data(), w.value().data(), T(0), y.data());
  Var<T> b = bias ? *bias : Var<T>();
  if (bias)
    for (int r = 0; r < rows; ++r)
      for (int o = 0; o < out_f; ++o) y[static_cast<std::size_t>(r) * out_f + o] += b.value()[o];
  auto bw = [x, w, b, rows, in, out_f](Node<T>& out) {
    if (T* gx = grad_of(x))
      gemm<T>(false, false, rows, in, out_f, T(1), out.grad.data(), w.value().data(), T(1), gx);
    if (T* gw = grad_of(w))
      gemm<T>(true, false, out_f, in, rows, T(1), out.grad.data(), x.value().data(), T(1), gw);
    if (b.defined())
      if (T* gb = grad_of(b))
        for (int r = 0; r < rows; ++r)
          for (int o = 0; o < out_f; ++o) gb[o] += out.grad[static_cast<std::size_t>(r) * out_f + o];
  };
  if (bias) return make_op<T>(std::move(shape), std::move(y), {&x, &w, bias}, bw);
  return make_op<T>(std::move(shape), std::move(y), {&x, &w}, bw);
}

namespace detail {

// Normalizes contiguous groups of `len` values; shared by layer and instance
// norm. gamma/beta index the group (instance norm) or the position within it
// (layer norm).
template <typename T>
Var<T> group_normalize(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                       std::size_t groups, std::size_t len, bool per_group_affine,
                       T eps) {
  std::vector<T> y(x.numel());
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(groups);
  const T* xv = x.value().data();
  for (std::size_t g = 0; g < groups; ++g) {
    const T* p = xv + g * len;
    T mu = 0;
    for (std::size_t i = 0; i < len; ++i) mu += p[i];
    mu /= static_cast<T>(len);
    T var = 0;
    for (std::size_t i = 0; i < len; ++i) var += (p[i] - mu) * (p[i] - mu);
    var /= static_cast<T>(len);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[g] = is;
    for (std::size_t i = 0; i < len; ++i) {
      const T h = (p[i] - mu) * is;
      (*xhat)[g * len + i] = h;
      const std::size_t a = per_group_affine ? g : i;
      y[g * len + i] = h * gamma.value()[a] + beta.value()[a];
    }
  }
  return make_op<T>(x.shape(), std::move(y), {&x, &gamma, &beta},
                    [x, gamma, beta, xhat, inv_std, groups, len, per_group_affine](Node<T>& out) {
    T* gx = grad_of(x);
    T* gg = grad_of(gamma);
    T* gb = grad_of(beta);
    std::vector<T> dh(len);
    for (std::size_t g = 0; g < groups; ++g) {
      T m1 = 0, m2 = 0;
      for (std::size_t i = 0; i < len; ++i) {
        const std::size_t idx = g * len + i;
        const std::size_t a = per_group_affine ? g : i;
        const T go = out.grad[idx];
        if (gg) gg[a] += go * (*xhat)[idx];
        if (gb) gb[a] += go;
        dh[i] = go * gamma.value()[a];
        m1 += dh[i];
        m2 += dh[i] * (*xhat)[idx];
      }
      if (!gx) continue;
      m1 /= static_cast<T>(len);
      m2 /= static_cast<T>(len);
      const T is = (*inv_std)[g];
      for (std::size_t i = 0; i < len; ++i) {
        const std::size_t idx = g * len + i;
        gx[idx] += is * (dh[i] - m1 - (*xhat)[idx] * m2);
      }
    }
  });
}

}  // namespace detail

// Normalization over the last axis with elementwise affine.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  T eps = T(1e-5)) {
  const auto len = static_cast<std::size_t>(x.dim(-1));
  return detail::group_normalize(x, gamma, beta, x.numel() / len, len, false, eps);
}

// Normalization over all trailing axes of [C, ...], affine per channel.
template <typename T>
Var<T> instance_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                     T eps = T(1e-5)) {
  const auto groups = static_cast<std::size_t>(x.dim(0));
  return detail::group_normalize(x, gamma, beta, groups, x.numel() / groups, true, eps);
}

struct Conv1dOpts {
  int stride = 1;
  int dilation = 1;
  int pad_left = 0;
  int pad_right = 0;
  int groups = 1;
};

// x [Cin, T], w [Cout, Cin/groups, K], bias [Cout] -> [Cout, Tout]
template <typename T>
Var<T> conv1d(const Var<T>& x, const Var<T>& w, const Var<T>* bias, Conv1dOpts o) {
  const int cin = x.dim(0), len = x.dim(1);
  const int cout = w.dim(0), cig = w.dim(1), K = w.dim(2);
  const int G = o.groups;
  if (cin != cig * G || cout % G)
    throw ShapeError("conv1d: channels " + shape_str(x.shape()) + " vs weight " +
                     shape_str(w.shape()));
  const int span = o.dilation * (K - 1) + 1;
  const int padded = len + o.pad_left + o.pad_right;
  if (padded < span) throw ShapeError("conv1d: input shorter than kernel extent");
  const int tout = (padded - span) / o.stride + 1;
  const int cog = cout / G;
  const int rows = cig * K;

  auto im2col = [=](const T* xv, int g, std::vector<T>& cols) {
    cols.assign(static_cast<std::size_t>(rows) * tout, T(0));
    for (int ci = 0; ci < cig; ++ci) {
      const T* src = xv + static_cast<std::size_t>(g * cig + ci) * len;
      for (int k = 0; k < K; ++k) {
        T* dst = cols.data() + static_cast<std::size_t>(ci * K + k) * tout;
        const int off = k * o.dilation - o.pad_left;
        for (int t = 0; t < tout; ++t) {
          const int s = t * o.stride + off;
          if (s >= 0 && s < len) dst[t] = src[s];
        }
      }
    }
  };

  std::vector<T> y(static_cast<std::size_t>(cout) * tout);
  std::vector<T> cols;
  for (int g = 0; g < G; ++g) {
    im2col(x.value().data(), g, cols);
    gemm<T>(false, false, cog, tout, rows, T(1),
            w.value().data() + static_cast<std::size_t>(g) * cog * rows, cols.data(), T(0),
            y.data() + static_cast<std::size_t>(g) * cog * tout);
  }
  if (bias)
    for (int c = 0; c < cout; ++c)
      for (int t = 0; t < tout; ++t) y[static_cast<std::size_t>(c) * tout + t] += bias->value()[c];

  Var<T> b = bias ? *bias : Var<T>();
  auto bw = [=](Node<T>& out) {
    T* gx = grad_of(x);
    T* gw = grad_of(w);
    std::vector<T> cols, dcols;
    for (int g = 0; g < G; ++g) {
      const T* dout = out.grad.data() + static_cast<std::size_t>(g) * cog * tout;
      if (gw) {
        im2col(x.value().data(), g, cols);
        gemm<T>(false, true, cog, rows, tout, T(1), dout, cols.data(), T(1),
                gw + static_cast<std::size_t>(g) * cog * rows);
      }
      if (gx) {
        dcols.assign(static_cast<std::size_t>(rows) * tout, T(0));
        gemm<T>(true, false, rows, tout, cog, T(1),
                w.value().data() + static_cast<std::size_t>(g) * cog * rows, dout, T(0), dcols.data());
        for (int ci = 0; ci < cig; ++ci) {
          T* dst = gx + static_cast<std::size_t>(g * cig + ci) * len;
          for (int k = 0; k < K; ++k) {
            const T* src = dcols.data() + static_cast<std::size_t>(ci * K + k) * tout;
            const int off = k * o.dilation - o.pad_left;
            for (int t = 0; t < tout; ++t) {
              const int s = t * o.stride + off;
              if (s >= 0 && s < len) dst[s] += src[t];
            }
          }
        }
      }
    }
    if (b.defined())
      if (T* gb = grad_of(b))
        for (int c = 0; c < cout; ++c)
          for (int t = 0; t < tout; ++t) gb[c] += out.grad[static_cast<std::size_t>(c) * tout + t];
  };
  if (bias) return make_op<T>({cout, tout}, std::move(y), {&x, &w, bias}, bw);
  return make_op<T>({cout, tout}, std::move(y), {&x, &w}, bw);
}

struct Conv2dOpts {
  int stride_h = 1, stride_w = 1;
  int dil_h = 1, dil_w = 1;
  int pad_top = 0, pad_bottom = 0, pad_left = 0, pad_right = 0;
};

namespace detail {

struct Geom2d {
  int cin, H, W, KH, KW, Ho, Wo;
  Conv2dOpts o;
};

// cols[(ci*KH + kh)*KW + kw, ho*Wo + wo] = x[ci, ho*sh + kh*dh - pt, wo*sw + kw*dw - pl]
template <typename T>
void im2col2d(const T* x, const Geom2d& g, std::vector<T>& cols) {
  const std::size_t P = static_cast<std::size_t>(g.Ho) * g.Wo;
  cols.assign(static_cast<std::size_t>(g.cin) * g.KH * g.KW * P, T(0));
  for (int ci = 0; ci < g.cin; ++ci)
    for (int kh = 0; kh < g.KH; ++kh)
      for (int kw = 0; kw < g.KW; ++kw) {
        T* dst = cols.data() + (static_cast<std::size_t>(ci * g.KH + kh) * g.KW + kw) * P;
        for (int ho = 0; ho < g.Ho; ++ho) {
          const int h = ho * g.o.stride_h + kh * g.o.dil_h - g.o.pad_top;
          if (h < 0 || h >= g.H) continue;
          const T* src = x + (static_cast<std::size_t>(ci) * g.H + h) * g.W;
          T* d = dst + static_cast<std::size_t>(ho) * g.Wo;
          const int w0 = kw * g.o.dil_w - g.o.pad_left;
          for (int wo = 0; wo < g.Wo; ++wo) {
            const int w = wo * g.o.stride_w + w0;
            if (w >= 0 && w < g.W) d[wo] = src[w];
          }
        }
      }
}

template <typename T>
void col2im2d(const std::vector<T>& cols, const Geom2d& g, T* x) {
  const std::size_t P = static_cast<std::size_t>(g.Ho) * g.Wo;
  for (int ci = 0; ci < g.cin; ++ci)
    for (int kh = 0; kh < g.KH; ++kh)
      for (int kw = 0; kw < g.KW; ++kw) {
        const T* src = cols.data() + (static_cast<std::size_t>(ci * g.KH + kh) * g.KW + kw) * P;
        for (int ho = 0; ho < g.Ho; ++ho) {
          const int h = ho * g.o.stride_h + kh * g.o.dil_h - g.o.pad_top;
          if (h < 0 || h >= g.H) continue;
          T* dst = x + (static_cast<std::size_t>(ci) * g.H + h) * g.W;
          const T* s = src + static_cast<std::size_t>(ho) * g.Wo;
          const int w0 = kw * g.o.dil_w - g.o.pad_left;
          for (int wo = 0; wo < g.Wo; ++wo) {
            const int w = wo * g.o.stride_w + w0;
            if (w >= 0 && w < g.W) dst[w] += s[wo];
          }
        }
      }
}

}  // namespace detail

// x [Cin, H, W], w [Cout, Cin, KH, KW] -> [Cout, Ho, Wo]
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>* bias, Conv2dOpts o) {
  if (x.rank() != 3 || w.rank() != 4 || w.dim(1) != x.dim(0))
    throw ShapeError("conv2d: input " + shape_str(x.shape()) + " vs weight " +
                     shape_str(w.shape()));
  detail::Geom2d g{x.dim(0), x.dim(1), x.dim(2), w.dim(2), w.dim(3), 0, 0, o};
  const int ph = g.H + o.pad_top + o.pad_bottom, pw = g.W + o.pad_left + o.pad_right;
  const int eh = o.dil_h * (g.KH - 1) + 1, ew = o.dil_w * (g.KW - 1) + 1;
  if (ph < eh || pw < ew) throw ShapeError("conv2d: input smaller than kernel extent");
  g.Ho = (ph - eh) / o.stride_h + 1;
  g.Wo = (pw - ew) / o.stride_w + 1;
  const int cout = w.dim(0);
  const int rows = g.cin * g.KH * g.KW;
  const int P = g.Ho * g.Wo;
  std::vector<T> cols;
  detail::im2col2d(x.value().data(), g, cols);
  std::vector<T> y(static_cast<std::size_t>(cout) * P);
  gemm<T>(false, false, cout, P, rows, T(1), w.value().data(), cols.data(), T(0), y.data());
  if (bias)
    for (int c = 0; c < cout; ++c)
      for (int p = 0; p < P; ++p) y[static_cast<std::size_t>(c) * P + p] += bias->value()[c];
  Var<T> b = bias ? *bias : Var<T>();
  auto bw = [=](Node<T>& out) {
    T* gx = grad_of(x);
    T* gw = grad_of(w);
    std::vector<T> c;
    if (gw) {
      detail::im2col2d(x.value().data(), g, c);
      gemm<T>(false, true, cout, rows, P, T(1), out.grad.data(), c.data(), T(1), gw);
    }
    if (gx) {
      c.assign(static_cast<std::size_t>(rows) * P, T(0));
      gemm<T>(true, false, rows, P, cout, T(1), w.value().data(), out.grad.data(), T(0), c.data());
      detail::col2im2d(c, g, gx);
    }
    if (b.defined())
      if (T* gb = grad_of(b))
        for (int ch = 0; ch < cout; ++ch)
          for (int p = 0; p < P; ++p) gb[ch] += out.grad[static_cast<std::size_t>(ch) * P + p];
  };
  if (bias) return make_op<T>({cout, g.Ho, g.Wo}, std::move(y), {&x, &w, bias}, bw);
  return make_op<T>({cout, g.Ho, g.Wo}, std::move(y), {&x, &w}, bw);
}

// Transposed 2-D convolution without padding.
// x [Cin, H, W], w [Cin, Cout, KH, KW] -> [Cout, (H-1)*sh + KH, (W-1)*sw + KW]
template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& w, const Var<T>* bias,
                        int stride_h, int stride_w) {
  if (x.rank() != 3 || w.rank() != 4 || w.dim(0) != x.dim(0))
    throw ShapeError("conv_transpose2d: input " + shape_str(x.shape()) +
                     " vs weight " + shape_str(w.shape()));
  const int cin = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int cout = w.dim(1), KH = w.dim(2), KW = w.dim(3);
  const int Ho = (H - 1) * stride_h + KH, Wo = (W - 1) * stride_w + KW;
  // The transposed conv is the adjoint of a conv from [Cout, Ho, Wo] to
  // [Cin, H, W]; its im2col geometry is reused in both directions.
  detail::Geom2d g{cout, Ho, Wo, KH, KW, H, W, Conv2dOpts{stride_h, stride_w}};
  const int rows = cout * KH * KW;
  const int P = H * W;
  std::vector<T> cols(static_cast<std::size_t>(rows) * P);
  gemm<T>(true, false, rows, P, cin, T(1), w.value().data(), x.value().data(), T(0), cols.data());
  std::vector<T> y(static_cast<std::size_t>(cout) * Ho * Wo, T(0));
  detail::col2im2d(cols, g, y.data());
  const std::size_t plane = static_cast<std::size_t>(Ho) * Wo;
  if (bias)
    for (int c = 0; c < cout; ++c)
      for (std::size_t p = 0; p < plane; ++p) y[c * plane + p] += bias->value()[c];
  Var<T> b = bias ? *bias : Var<T>();
  auto bw = [=](Node<T>& out) {
    std::vector<T> dcols;
    detail::im2col2d(out.grad.data(), g, dcols);
    if (T* gx = grad_of(x))
      gemm<T>(false, false, cin, P, rows, T(1), w.value().data(), dcols.data(), T(1), gx);
    if (T* gw = grad_of(w))
      gemm<T>(false, true, cin, rows, P, T(1), x.value().data(), dcols.data(), T(1), gw);
    if (b.defined())
      if (T* gb = grad_of(b))
        for (int c = 0; c < cout; ++c)
          for (std::size_t p = 0; p < plane; ++p) gb[c] += out.grad[c * plane + p];
  };
  if (bias) return make_op<T>({cout, Ho, Wo}, std::move(y), {&x, &w, bias}, bw);
  return make_op<T>({cout, Ho, Wo}, std::move(y), {&x, &w}, bw);
}

// Depthwise 1-D convolution along the sequence axis of [B, N, C] with "same"
// zero padding. w [C, K] (K odd), bias [C].
template <typename T>
Var<T> depthwise_seq_conv(const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
  const int B = x.dim(0), N = x.dim(1), C = x.dim(2), K = w.dim(1);
  if (w.dim(0) != C || K % 2 == 0) throw ShapeError("depthwise_seq_conv: bad kernel");
  const int pad = K / 2;
  std::vector<T> y(x.numel());
  const T* xv = x.value().data();
  const T* wv = w.value().data();
  for (int b = 0; b < B; ++b)
    for (int n = 0; n < N; ++n) {
      T* yr = y.data() + (static_cast<std::size_t>(b) * N + n) * C;
      for (int c = 0; c < C; ++c) yr[c] = bias.value()[c];
      for (int k = 0; k < K; ++k) {
        const int s = n + k - pad;
        if (s < 0 || s >= N) continue;
        const T* xr = xv + (static_cast<std::size_t>(b) * N + s) * C;
        for (int c = 0; c < C; ++c) yr[c] += wv[static_cast<std::size_t>(c) * K + k] * xr[c];
      }
    }
  return make_op<T>(x.shape(), std::move(y), {&x, &w, &bias}, [=](Node<T>& out) {
    T* gx = grad_of(x);
    T* gw = grad_of(w);
    T* gb = grad_of(bias);
    for (int b = 0; b < B; ++b)
      for (int n = 0; n < N; ++n) {
        const T* go = out.grad.data() + (static_cast<std::size_t>(b) * N + n) * C;
        if (gb)
          for (int c = 0; c < C; ++c) gb[c] += go[c];
        for (int k = 0; k < K; ++k) {
          const int s = n + k - pad;
          if (s < 0 || s >= N) continue;
          const std::size_t xi = (static_cast<std::size_t>(b) * N + s) * C;
          for (int c = 0; c < C; ++c) {
            if (gx) gx[xi + c] += go[c] * w.value()[static_cast<std::size_t>(c) * K + k];
            if (gw) gw[static_cast<std::size_t>(c) * K + k] += go[c] * x.value()[xi + c];
          }
        }
      }
  });
}

// Average pooling over the time axis of [C, T], zero padding counted.
template <typename T>
Var<T> avg_pool1d(const Var<T>& x, int kernel, int stride, int pad) {
  const int C = x.dim(0), L = x.dim(1);
  const int tout = (L + 2 * pad - kernel) / stride + 1;
  std::vector<T> y(static_cast<std::size_t>(C) * tout, T(0));
  const T inv = T(1) / static_cast<T>(kernel);
  for (int c = 0; c < C; ++c)
    for (int t = 0; t < tout; ++t)
      for (int k = 0; k < kernel; ++k) {
        const int s = t * stride + k - pad;
        if (s >= 0 && s < L)
          y[static_cast<std::size_t>(c) * tout + t] += inv * x.value()[static_cast<std::size_t>(c) * L + s];
      }
  return make_op<T>({C, tout}, std::move(y), {&x}, [=](Node<T>& out) {
    T* gx = grad_of(x);
    for (int c = 0; c < C; ++c)
      for (int t = 0; t < tout; ++t)
        for (int k = 0; k < kernel; ++k) {
          const int s = t * stride + k - pad;
          if (s >= 0 && s < L)
            gx[static_cast<std::size_t>(c) * L + s] += inv * out.grad[static_cast<std::size_t>(c) * tout + t];
        }
  });
}

// Index into a reflect-extended sequence of length n (edge sample not
// repeated), folding as many times as needed.
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

// Reflect padding of the last axis of [..., L].
template <typename T>
Var<T> reflect_pad_last(const Var<T>& x, int left, int right) {
  const int L = x.dim(-1);
  const std::size_t rows = x.numel() / static_cast<std::size_t>(L);
  const int Lo = L + left + right;
  Shape shape = x.shape();
  shape.back() = Lo;
  std::vector<T> y(rows * Lo);
  for (std::size_t r = 0; r < rows; ++r)
    for (int i = 0; i < Lo; ++i) y[r * Lo + i] = x.value()[r * L + reflect_index(i - left, L)];
  return make_op<T>(std::move(shape), std::move(y), {&x}, [=](Node<T>& out) {
    T* gx = grad_of(x);
    for (std::size_t r = 0; r < rows; ++r)
      for (int i = 0; i < Lo; ++i) gx[r * L + reflect_index(i - left, L)] += out.grad[r * Lo + i];
  });
}

// Multi-head scaled dot-product self-attention with optional learned relative
// position bias (Shaw-style, distances clipped to +-max_dist).
// q, k, v: [B, N, H*d]; rel: [2*max_dist+1, d] or undefined.
template <typename T>
Var<T> relative_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                          const Var<T>& rel, int heads, int max_dist) {
  const int B = q.dim(0), N = q.dim(1), D = q.dim(2);
  if (D % heads) throw ShapeError("attention: width not divisible by heads");
  check_same_shape(q.shape(), k.shape(), "attention");
  check_same_shape(q.shape(), v.shape(), "attention");
  const int d = D / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  const bool use_rel = rel.defined();
  const std::size_t NN = static_cast<std::size_t>(N) * N;
  auto probs = std::make_shared<std::vector<T>>(static_cast<std::size_t>(B) * heads * NN);
  auto dist_idx = [max_dist](int i, int j) {
    return std::clamp(i - j, -max_dist, max_dist) + max_dist;
  };

  auto gather = [&](const T* src, int b, int h, std::vector<T>& dst) {
    dst.resize(static_cast<std::size_t>(N) * d);
    for (int n = 0; n < N; ++n)
      std::copy_n(src + (static_cast<std::size_t>(b) * N + n) * D + static_cast<std::size_t>(h) * d, d,
                  dst.data() + static_cast<std::size_t>(n) * d);
  };

  std::vector<T> y(q.numel());
  std::vector<T> qh, kh, vh, oh(static_cast<std::size_t>(N) * d);
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < heads; ++h) {
      gather(q.value().data(), b, h, qh);
      gather(k.value().data(), b, h, kh);
      gather(v.value().data(), b, h, vh);
      T* S = probs->data() + (static_cast<std::size_t>(b) * heads + h) * NN;
      gemm<T>(false, true, N, N, d, scale, qh.data(), kh.data(), T(0), S);
      if (use_rel)
        for (int i = 0; i < N; ++i)
          for (int j = 0; j < N; ++j) {
            const T* e = rel.value().data() + static_cast<std::size_t>(dist_idx(i, j)) * d;
            T acc = 0;
            for (int t = 0; t < d; ++t) acc += qh[static_cast<std::size_t>(i) * d + t] * e[t];
            S[static_cast<std::size_t>(i) * N + j] += scale * acc;
          }
      for (int i = 0; i < N; ++i) {
        T* row = S + static_cast<std::size_t>(i) * N;
        const T mx = *std::max_element(row, row + N);
        T z = 0;
        for (int j = 0; j < N; ++j) z += (row[j] = std::exp(row[j] - mx));
        for (int j = 0; j < N; ++j) row[j] /= z;
      }
      gemm<T>(false, false, N, d, N, T(1), S, vh.data(), T(0), oh.data());
      for (int n = 0; n < N; ++n)
        std::copy_n(oh.data() + static_cast<std::size_t>(n) * d, d,
                    y.data() + (static_cast<std::size_t>(b) * N + n) * D + static_cast<std::size_t>(h) * d);
    }

  std::vector<Var<T>> parents{q, k, v};
  if (use_rel) parents.push_back(rel);
  return make_op<T>(q.shape(), std::move(y), parents, [=](Node<T>& out) {
    T* gq = grad_of(q);
    T* gk = grad_of(k);
    T* gv = grad_of(v);
    T* gr = use_rel ? grad_of(rel) : nullptr;
    std::vector<T> qh, kh, vh, goh, dA(NN), dq(static_cast<std::size_t>(N) * d),
        dk(static_cast<std::size_t>(N) * d), dv(static_cast<std::size_t>(N) * d);
    auto gather = [&](const T* src, int b, int h, std::vector<T>& dst) {
      dst.resize(static_cast<std::size_t>(N) * d);
      for (int n = 0; n < N; ++n)
        std::copy_n(src + (static_cast<std::size_t>(b) * N + n) * D + static_cast<std::size_t>(h) * d, d,
                    dst.data() + static_cast<std::size_t>(n) * d);
    };
    auto scatter = [&](T* dst, int b, int h, const std::vector<T>& src) {
      for (int n = 0; n < N; ++n) {
        T* p = dst + (static_cast<std::size_t>(b) * N + n) * D + static_cast<std::size_t>(h) * d;
        for (int t = 0; t < d; ++t) p[t] += src[static_cast<std::size_t>(n) * d + t];
      }
    };
    for (int b = 0; b < B; ++b)
      for (int h = 0; h < heads; ++h) {
        gather(q.value().data(), b, h, qh);
        gather(k.value().data(), b, h, kh);
        gather(v.value().data(), b, h, vh);
        gather(out.grad.data(), b, h, goh);
        const T* A = probs->data() + (static_cast<std::size_t>(b) * heads + h) * NN;
        // dV = A^T dO ; dA = dO V^T
        gemm<T>(true, false, N, d, N, T(1), A, goh.data(), T(0), dv.data());
        gemm<T>(false, true, N, N, d, T(1), goh.data(), vh.data(), T(0), dA.data());
        // softmax backward: dS = A * (dA - rowsum(dA * A))
        for (int i = 0; i < N; ++i) {
          T* r = dA.data() + static_cast<std::size_t>(i) * N;
          const T* a = A + static_cast<std::size_t>(i) * N;
          T s = 0;
          for (int j = 0; j < N; ++j) s += r[j] * a[j];
          for (int j = 0; j < N; ++j) r[j] = a[j] * (r[j] - s);
        }
        gemm<T>(false, false, N, d, N, scale, dA.data(), kh.data(), T(0), dq.data());
        gemm<T>(true, false, N, d, N, scale, dA.data(), qh.data(), T(0), dk.data());
        if (use_rel)
          for (int i = 0; i < N; ++i)
            for (int j = 0; j < N; ++j) {
              const T g = scale * dA[static_cast<std::size_t>(i) * N + j];
              const std::size_t e = static_cast<std::size_t>(dist_idx(i, j)) * d;
              for (int t = 0; t < d; ++t) {
                dq[static_cast<std::size_t>(i) * d + t] += g * rel.value()[e + t];
                if (gr) gr[e + t] += g * qh[static_cast<std::size_t>(i) * d + t];
              }
            }
        if (gq) scatter(gq, b, h, dq);
        if (gk) scatter(gk, b, h, dk);
        if (gv) scatter(gv, b, h, dv);
      }
  });
}

}  // namespace dnvoc::ad
