// Copyright 2026 The dnvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Elementwise, reduction and layout ops for ad::Var.

#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dnvoc/core/tensor.hpp"

namespace dnvoc::ad {

namespace detail {

// y = f(x), dy/dx = df(x, y)
template <typename T, typename F, typename DF>
Var<T> unary(const Var<T>& x, F f, DF df) {
  const std::size_t n = x.numel();
  std::vector<T> y(n);
  const T* xv = x.value().data();
  for (std::size_t i = 0; i < n; ++i) y[i] = f(xv[i]);
  return make_op<T>(x.shape(), std::move(y), {&x}, [x, df](Node<T>& out) {
    T* gx = grad_of(x);
    const T* xv = x.value().data();
    for (std::size_t i = 0; i < out.value.size(); ++i)
      gx[i] += out.grad[i] * df(xv[i], out.value[i]);
  });
}

}  // namespace detail

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a.shape(), b.shape(), "add");
  std::vector<T> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] + b.value()[i];
  return make_op<T>(a.shape(), std::move(y), {&a, &b}, [a, b](Node<T>& out) {
    if (T* ga = grad_of(a))
      for (std::size_t i = 0; i < out.grad.size(); ++i) ga[i] += out.grad[i];
    if (T* gb = grad_of(b))
      for (std::size_t i = 0; i < out.grad.size(); ++i) gb[i] += out.grad[i];
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a.shape(), b.shape(), "sub");
  std::vector<T> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] - b.value()[i];
  return make_op<T>(a.shape(), std::move(y), {&a, &b}, [a, b](Node<T>& out) {
    if (T* ga = grad_of(a))
      for (std::size_t i = 0; i < out.grad.size(); ++i) ga[i] += out.grad[i];
    if (T* gb = grad_of(b))
      for (std::size_t i = 0; i < out.grad.size(); ++i) gb[i] -= out.grad[i];
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a.shape(), b.shape(), "mul");
  std::vector<T> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] * b.value()[i];
  return make_op<T>(a.shape(), std::move(y), {&a, &b}, [a, b](Node<T>& out) {
    if (T* ga = grad_of(a))
      for (std::size_t i = 0; i < out.grad.size(); ++i)
        ga[i] += out.grad[i] * b.value()[i];
    if (T* gb = grad_of(b))
      for (std::size_t i = 0; i < out.grad.size(); ++i)
        gb[i] += out.grad[i] * a.value()[i];
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T s) {
  return detail::unary(
      x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, T s) {
  return detail::unary(
      x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> neg(const Var<T>& x) {
  return scale(x, T(-1));
}

template <typename T>
Var<T> square(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Var<T> abs(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > 0 ? T(1) : (v < 0 ? T(-1) : T(0)); });
}

template <typename T>
Var<T> exp(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Var<T> sqrt(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return std::sqrt(v); },
      [](T, T y) { return y > 0 ? T(0.5) / y : T(0); });
}

// x^p for x >= 0. The derivative is taken as 0 at x == 0 when p < 1.
template <typename T>
Var<T> pow(const Var<T>& x, T p) {
  return detail::unary(
      x, [p](T v) { return std::pow(std::max(v, T(0)), p); },
      [p](T v, T) {
        if (v <= 0) return p == T(1) ? T(1) : T(0);
        return p * std::pow(v, p - T(1));
      });
}

template <typename T>
Var<T> sin(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return std::sin(v); }, [](T v, T) { return std::cos(v); });
}

template <typename T>
Var<T> cos(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return std::cos(v); }, [](T v, T) { return -std::sin(v); });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

// Swish / SiLU: x * sigmoid(x)
template <typename T>
Var<T> silu(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return v / (T(1) + std::exp(-v)); },
      [](T v, T) {
        const T s = T(1) / (T(1) + std::exp(-v));
        return s * (T(1) + v * (T(1) - s));
      });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope = T(0.1)) {
  return detail::unary(
      x, [slope](T v) { return v > 0 ? v : slope * v; },
      [slope](T v, T) { return v > 0 ? T(1) : slope; });
}

// Principal angle of x + jy in (-pi, pi]. atan2 maps (-0, x<0) to -pi; the
// result is folded so -pi never escapes.
template <typename T>
Var<T> atan2(const Var<T>& y, const Var<T>& x) {
  check_same_shape(y.shape(), x.shape(), "atan2");
  std::vector<T> v(y.numel());
  for (std::size_t i = 0; i < v.size(); ++i) {
    T a = std::atan2(y.value()[i], x.value()[i]);
    if (a <= -std::numbers::pi_v<T>) a = std::numbers::pi_v<T>;
    v[i] = a;
  }
  return make_op<T>(y.shape(), std::move(v), {&y, &x}, [y, x](Node<T>& out) {
    T* gy = grad_of(y);
    T* gx = grad_of(x);
    for (std::size_t i = 0; i < out.grad.size(); ++i) {
      const T yy = y.value()[i], xx = x.value()[i];
      const T r2 = xx * xx + yy * yy;
      if (r2 <= T(0)) continue;
      if (gy) gy[i] += out.grad[i] * xx / r2;
      if (gx) gx[i] -= out.grad[i] * yy / r2;
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T s = 0;
  for (T v : x.value()) s += v;
  return make_op<T>({1}, {s}, {&x}, [x](Node<T>& out) {
    T* gx = grad_of(x);
    for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += out.grad[0];
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

// Weighted sum of scalar terms; weights of zero drop the term entirely.
template <typename T>
Var<T> weighted_sum(const std::vector<std::pair<T, Var<T>>>& terms) {
  Var<T> acc;
  for (const auto& [w, v] : terms) {
    if (w == T(0)) continue;
    Var<T> t = scale(v, w);
    acc = acc.defined() ? add(acc, t) : t;
  }
  return acc.defined() ? acc : Var<T>::scalar(T(0));
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  if (numel_of(shape) != x.numel())
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " +
                     shape_str(shape));
  return make_op<T>(std::move(shape), x.values(), {&x}, [x](Node<T>& out) {
    T* gx = grad_of(x);
    for (std::size_t i = 0; i < out.grad.size(); ++i) gx[i] += out.grad[i];
  });
}

namespace detail {

inline std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
    st[static_cast<std::size_t>(i)] =
        st[static_cast<std::size_t>(i) + 1] * static_cast<std::size_t>(s[static_cast<std::size_t>(i) + 1]);
  return st;
}

// For each output flat index, the flat index in the source.
inline std::vector<std::size_t> permute_map(const Shape& in,
                                            const std::vector<int>& perm) {
  const std::size_t r = in.size();
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) out[i] = in[static_cast<std::size_t>(perm[i])];
  const auto in_st = strides_of(in);
  std::vector<std::size_t> src_st(r);
  for (std::size_t i = 0; i < r; ++i) src_st[i] = in_st[static_cast<std::size_t>(perm[i])];
  const std::size_t n = numel_of(in);
  std::vector<std::size_t> map(n);
  std::vector<int> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < n; ++o) {
    map[o] = src;
    for (int d = static_cast<int>(r) - 1; d >= 0; --d) {
      const auto du = static_cast<std::size_t>(d);
      ++idx[du];
      src += src_st[du];
      if (idx[du] < out[du]) break;
      src -= src_st[du] * static_cast<std::size_t>(out[du]);
      idx[du] = 0;
    }
  }
  return map;
}

}  // namespace detail

template <typename T>
Var<T> permute(const Var<T>& x, const std::vector<int>& perm) {
  if (perm.size() != x.shape().size()) throw ShapeError("permute: rank mismatch");
  Shape out(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i)
    out[i] = x.shape()[static_cast<std::size_t>(perm[i])];
  auto map = std::make_shared<std::vector<std::size_t>>(
      detail::permute_map(x.shape(), perm));
  std::vector<T> y(x.numel());
  for (std::size_t o = 0; o < y.size(); ++o) y[o] = x.value()[(*map)[o]];
  return make_op<T>(std::move(out), std::move(y), {&x}, [x, map](Node<T>& o) {
    T* gx = grad_of(x);
    for (std::size_t i = 0; i < o.grad.size(); ++i) gx[(*map)[i]] += o.grad[i];
  });
}

template <typename T>
Var<T> transpose2d(const Var<T>& x) {
  return permute(x, {1, 0});
}

// Concatenation along axis 0.
template <typename T>
Var<T> concat0(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw ShapeError("concat0: empty input");
  Shape shape = xs[0].shape();
  int rows = 0;
  for (const auto& x : xs) {
    Shape a = x.shape(), b = shape;
    a[0] = b[0] = 0;
    if (a != b) throw ShapeError("concat0: trailing dims differ");
    rows += x.shape()[0];
  }
  shape[0] = rows;
  std::vector<T> y;
  y.reserve(numel_of(shape));
  for (const auto& x : xs) y.insert(y.end(), x.value().begin(), x.value().end());
  return make_op<T>(std::move(shape), std::move(y), xs, [xs](Node<T>& out) {
    std::size_t off = 0;
    for (const auto& x : xs) {
      if (T* g = grad_of(x))
        for (std::size_t i = 0; i < x.numel(); ++i) g[i] += out.grad[off + i];
      off += x.numel();
    }
  });
}

// Rows [start, start+len) along axis 0.
template <typename T>
Var<T> slice0(const Var<T>& x, int start, int len) {
  if (start < 0 || len < 0 || start + len > x.shape()[0])
    throw ShapeError("slice0: range out of bounds");
  Shape shape = x.shape();
  shape[0] = len;
  const std::size_t inner = x.numel() / static_cast<std::size_t>(x.shape()[0]);
  const std::size_t off = inner * static_cast<std::size_t>(start);
  std::vector<T> y(x.value().begin() + static_cast<std::ptrdiff_t>(off),
                   x.value().begin() + static_cast<std::ptrdiff_t>(off + inner * static_cast<std::size_t>(len)));
  return make_op<T>(std::move(shape), std::move(y), {&x}, [x, off](Node<T>& out) {
    T* gx = grad_of(x);
    for (std::size_t i = 0; i < out.grad.size(); ++i) gx[off + i] += out.grad[i];
  });
}

// Broadcast multiply/add of a vector along one axis: y[..., i, ...] = x * v[i].
template <typename T>
Var<T> mul_axis(const Var<T>& x, const Var<T>& v, int axis) {
  const auto& s = x.shape();
  const auto ax = static_cast<std::size_t>(axis < 0 ? axis + x.rank() : axis);
  if (v.numel() != static_cast<std::size_t>(s.at(ax)))
    throw ShapeError("mul_axis: vector length does not match axis");
  const auto st = detail::strides_of(s);
  const std::size_t inner = st[ax], n = static_cast<std::size_t>(s[ax]);
  std::vector<T> y(x.numel());
  for (std::size_t i = 0; i < y.size(); ++i)
    y[i] = x.value()[i] * v.value()[(i / inner) % n];
  return make_op<T>(s, std::move(y), {&x, &v}, [x, v, inner, n](Node<T>& out) {
    T* gx = grad_of(x);
    T* gv = grad_of(v);
    for (std::size_t i = 0; i < out.grad.size(); ++i) {
      const std::size_t k = (i / inner) % n;
      if (gx) gx[i] += out.grad[i] * v.value()[k];
      if (gv) gv[k] += out.grad[i] * x.value()[i];
    }
  });
}

template <typename T>
Var<T> add_axis(const Var<T>& x, const Var<T>& v, int axis) {
  const auto& s = x.shape();
  const auto ax = static_cast<std::size_t>(axis < 0 ? axis + x.rank() : axis);
  if (v.numel() != static_cast<std::size_t>(s.at(ax)))
    throw ShapeError("add_axis: vector length does not match axis");
  const auto st = detail::strides_of(s);
  const std::size_t inner = st[ax], n = static_cast<std::size_t>(s[ax]);
  std::vector<T> y(x.numel());
  for (std::size_t i = 0; i < y.size(); ++i)
    y[i] = x.value()[i] + v.value()[(i / inner) % n];
  return make_op<T>(s, std::move(y), {&x, &v}, [x, v, inner, n](Node<T>& out) {
    T* gx = grad_of(x);
    T* gv = grad_of(v);
    for (std::size_t i = 0; i < out.grad.size(); ++i) {
      if (gx) gx[i] += out.grad[i];
      if (gv) gv[(i / inner) % n] += out.grad[i];
    }
  });
}

// PReLU with one slope per entry of `axis`.
template <typename T>
Var<T> prelu(const Var<T>& x, const Var<T>& alpha, int axis = 0) {
  const auto& s = x.shape();
  const auto ax = static_cast<std::size_t>(axis);
  const auto st = detail::strides_of(s);
  const std::size_t inner = st[ax], n = static_cast<std::size_t>(s[ax]);
  if (alpha.numel() != n) throw ShapeError("prelu: slope count mismatch");
  std::vector<T> y(x.numel());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const T v = x.value()[i];
    y[i] = v > 0 ? v : alpha.value()[(i / inner) % n] * v;
  }
  return make_op<T>(s, std::move(y), {&x, &alpha}, [x, alpha, inner, n](Node<T>& out) {
    T* gx = grad_of(x);
    T* ga = grad_of(alpha);
    for (std::size_t i = 0; i < out.grad.size(); ++i) {
      const T v = x.value()[i];
      const std::size_t k = (i / inner) % n;
      if (v > 0) {
        if (gx) gx[i] += out.grad[i];
      } else {
        if (gx) gx[i] += out.grad[i] * alpha.value()[k];
        if (ga) ga[k] += out.grad[i] * v;
      }
    }
  });
}

// Forward difference along axis 0 or 1 of a 2-D tensor; the result loses one
// row (axis 0) or one column (axis 1).
template <typename T>
Var<T> diff2d(const Var<T>& x, int axis) {
  if (x.rank() != 2) throw ShapeError("diff2d: expects rank 2");
  const int R = x.dim(0), C = x.dim(1);
  const int r = axis == 0 ? R - 1 : R, c = axis == 0 ? C : C - 1;
  if (r < 1 || c < 1) throw ShapeError("diff2d: axis too short");
  const std::size_t step = axis == 0 ? static_cast<std::size_t>(C) : 1;
  std::vector<T> y(static_cast<std::size_t>(r) * static_cast<std::size_t>(c));
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) {
      const std::size_t src = static_cast<std::size_t>(i) * static_cast<std::size_t>(C) + static_cast<std::size_t>(j);
      y[static_cast<std::size_t>(i) * static_cast<std::size_t>(c) + static_cast<std::size_t>(j)] = x.value()[src + step] - x.value()[src];
    }
  return make_op<T>({r, c}, std::move(y), {&x}, [x, r, c, C, step](Node<T>& out) {
    T* gx = grad_of(x);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) {
        const T g = out.grad[static_cast<std::size_t>(i) * static_cast<std::size_t>(c) + static_cast<std::size_t>(j)];
        const std::size_t src = static_cast<std::size_t>(i) * static_cast<std::size_t>(C) + static_cast<std::size_t>(j);
        gx[src + step] += g;
        gx[src] -= g;
      }
  });
}

// Per-channel maximum over every trailing axis: [C, ...] -> [C].
template <typename T>
Var<T> channel_max(const Var<T>& x) {
  const int C = x.dim(0);
  const std::size_t inner = x.numel() / static_cast<std::size_t>(C);
  std::vector<T> y(static_cast<std::size_t>(C));
  auto arg = std::make_shared<std::vector<std::size_t>>(static_cast<std::size_t>(C));
  for (std::size_t c = 0; c < static_cast<std::size_t>(C); ++c) {
    std::size_t best = c * inner;
    for (std::size_t i = 1; i < inner; ++i)
      if (x.value()[c * inner + i] > x.value()[best]) best = c * inner + i;
    (*arg)[c] = best;
    y[c] = x.value()[best];
  }
  return make_op<T>({C}, std::move(y), {&x}, [x, arg](Node<T>& out) {
    T* gx = grad_of(x);
    for (std::size_t c = 0; c < out.grad.size(); ++c) gx[(*arg)[c]] += out.grad[c];
  });
}

// Gated linear unit over the last axis: first half * sigmoid(second half).
template <typename T>
Var<T> glu_last(const Var<T>& x) {
  const int D = x.dim(-1);
  if (D % 2) throw ShapeError("glu_last: odd feature size");
  const int H = D / 2;
  const std::size_t rows = x.numel() / static_cast<std::size_t>(D);
  Shape shape = x.shape();
  shape.back() = H;
  std::vector<T> y(rows * static_cast<std::size_t>(H));
  for (std::size_t r = 0; r < rows; ++r)
    for (int j = 0; j < H; ++j) {
      const T a = x.value()[r * static_cast<std::size_t>(D) + static_cast<std::size_t>(j)];
      const T b = x.value()[r * static_cast<std::size_t>(D) + static_cast<std::size_t>(H + j)];
      y[r * static_cast<std::size_t>(H) + static_cast<std::size_t>(j)] = a / (T(1) + std::exp(-b));
    }
  return make_op<T>(std::move(shape), std::move(y), {&x}, [x, rows, D, H](Node<T>& out) {
    T* gx = grad_of(x);
    for (std::size_t r = 0; r < rows; ++r)
      for (int j = 0; j < H; ++j) {
        const std::size_t ia = r * static_cast<std::size_t>(D) + static_cast<std::size_t>(j);
        const std::size_t ib = ia + static_cast<std::size_t>(H);
        const T a = x.value()[ia];
        const T s = T(1) / (T(1) + std::exp(-x.value()[ib]));
        const T g = out.grad[r * static_cast<std::size_t>(H) + static_cast<std::size_t>(j)];
        gx[ia] += g * s;
        gx[ib] += g * a * s * (T(1) - s);
      }
  });
}

// Exact (erf) GELU.
template <typename T>
Var<T> gelu(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * T(0.7071067811865476))); },
      [](T v, T) {
        const T cdf = T(0.5) * (T(1) + std::erf(v * T(0.7071067811865476)));
        return cdf + v * std::exp(T(-0.5) * v * v) * T(0.3989422804014327);
      });
}

// Sum over axis 0 of a 2-D tensor: [R, C] -> [C].
template <typename T>
Var<T> sum_rows(const Var<T>& x) {
  if (x.rank() != 2) throw ShapeError("sum_rows: expects rank 2");
  const int R = x.dim(0), C = x.dim(1);
  std::vector<T> y(static_cast<std::size_t>(C), T(0));
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) y[static_cast<std::size_t>(c)] += x.value()[static_cast<std::size_t>(r) * C + c];
  return make_op<T>({C}, std::move(y), {&x}, [x, R, C](Node<T>& out) {
    T* gx = grad_of(x);
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < C; ++c) gx[static_cast<std::size_t>(r) * C + c] += out.grad[static_cast<std::size_t>(c)];
  });
}

}  // namespace dnvoc::ad
