// Copyright 2026 The dnvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Parameter registry and the small set of layers the models are built from.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dnvoc/core/layers.hpp"

namespace dnvoc::nn {

using ad::Shape;
using ad::Var;

using Rng = std::mt19937_64;

// Uniform in [lo, hi) from raw engine bits, so initial weights do not depend on
// the standard library's distribution implementation.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
}

inline double normal01(Rng& rng) {
  const double u1 = std::max(uniform01(rng), 1e-300);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

template <typename T>
class ParamSet {
 public:
  Var<T> add(const std::string& name, Shape shape, std::vector<T> init) {
    auto v = Var<T>::parameter(std::move(shape), std::move(init));
    params_.emplace_back(name, v);
    return v;
  }

  Var<T> uniform(const std::string& name, Shape shape, double bound, Rng& rng) {
    std::vector<T> init(ad::numel_of(shape));
    for (auto& x : init) x = static_cast<T>((2.0 * uniform01(rng) - 1.0) * bound);
    return add(name, std::move(shape), std::move(init));
  }

  Var<T> normal(const std::string& name, Shape shape, double stddev, Rng& rng) {
    std::vector<T> init(ad::numel_of(shape));
    for (auto& x : init) x = static_cast<T>(normal01(rng) * stddev);
    return add(name, std::move(shape), std::move(init));
  }

  Var<T> constant(const std::string& name, Shape shape, T value) {
    return add(name, shape, std::vector<T>(ad::numel_of(shape), value));
  }

  const std::vector<std::pair<std::string, Var<T>>>& items() const { return params_; }
  std::vector<std::pair<std::string, Var<T>>>& items() { return params_; }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += p.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [_, p] : params_) p.zero_grad();
  }

  // Order-sensitive FNV-1a over parameter bytes.
  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& [name, p] : params_) {
      for (char c : name) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
      const auto* bytes = reinterpret_cast<const unsigned char*>(p.value().data());
      for (std::size_t i = 0; i < p.numel() * sizeof(T); ++i)
        h = (h ^ bytes[i]) * 1099511628211ULL;
    }
    return h;
  }

 private:
  std::vector<std::pair<std::string, Var<T>>> params_;
};

enum class Init { kFanIn, kNormal001 };

template <typename T>
struct Conv1d {
  Var<T> w, b;
  ad::Conv1dOpts opts;

  Conv1d() = default;
  Conv1d(ParamSet<T>& ps, const std::string& name, int cin, int cout, int kernel, Rng& rng,
         ad::Conv1dOpts o = {}, Init init = Init::kFanIn)
      : opts(o) {
    const double fan_in = static_cast<double>(cin / o.groups * kernel);
    const double bound = 1.0 / std::sqrt(fan_in);
    if (init == Init::kNormal001)
      w = ps.normal(name + ".weight", {cout, cin / o.groups, kernel}, 0.01, rng);
    else
      w = ps.uniform(name + ".weight", {cout, cin / o.groups, kernel}, bound, rng);
    b = ps.uniform(name + ".bias", {cout}, bound, rng);
  }

  // "same" padding for stride 1
  static ad::Conv1dOpts same(int kernel, int dilation = 1) {
    const int total = dilation * (kernel - 1);
    return {1, dilation, total / 2, total - total / 2, 1};
  }

  Var<T> operator()(const Var<T>& x) const { return ad::conv1d(x, w, &b, opts); }
};

template <typename T>
struct Conv2d {
  Var<T> w, b;
  ad::Conv2dOpts opts;
  bool has_bias = true;

  Conv2d() = default;
  Conv2d(ParamSet<T>& ps, const std::string& name, int cin, int cout, int kh, int kw, Rng& rng,
         ad::Conv2dOpts o = {}, bool bias = true)
      : opts(o), has_bias(bias) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cin * kh * kw));
    w = ps.uniform(name + ".weight", {cout, cin, kh, kw}, bound, rng);
    if (bias) b = ps.uniform(name + ".bias", {cout}, bound, rng);
  }

  Var<T> operator()(const Var<T>& x) const {
    return ad::conv2d(x, w, has_bias ? &b : nullptr, opts);
  }
};

template <typename T>
struct ConvTranspose2d {
  Var<T> w, b;
  int stride_h = 1, stride_w = 1;

  ConvTranspose2d() = default;
  ConvTranspose2d(ParamSet<T>& ps, const std::string& name, int cin, int cout, int kh, int kw,
                  int sh, int sw, Rng& rng)
      : stride_h(sh), stride_w(sw) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cout * kh * kw));
    w = ps.uniform(name + ".weight", {cin, cout, kh, kw}, bound, rng);
    b = ps.uniform(name + ".bias", {cout}, bound, rng);
  }

  Var<T> operator()(const Var<T>& x) const {
    return ad::conv_transpose2d(x, w, &b, stride_h, stride_w);
  }
};

template <typename T>
struct Linear {
  Var<T> w, b;
  bool has_bias = true;

  Linear() = default;
  Linear(ParamSet<T>& ps, const std::string& name, int in, int out, Rng& rng, bool bias = true)
      : has_bias(bias) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    w = ps.uniform(name + ".weight", {out, in}, bound, rng);
    if (bias) b = ps.uniform(name + ".bias", {out}, bound, rng);
  }

  Var<T> operator()(const Var<T>& x) const { return ad::linear(x, w, has_bias ? &b : nullptr); }
};

template <typename T>
struct LayerNorm {
  Var<T> gamma, beta;

  LayerNorm() = default;
  LayerNorm(ParamSet<T>& ps, const std::string& name, int dim) {
    gamma = ps.constant(name + ".weight", {dim}, T(1));
    beta = ps.constant(name + ".bias", {dim}, T(0));
  }

  Var<T> operator()(const Var<T>& x) const { return ad::layer_norm(x, gamma, beta); }
};

template <typename T>
struct InstanceNorm {
  Var<T> gamma, beta;

  InstanceNorm() = default;
  InstanceNorm(ParamSet<T>& ps, const std::string& name, int channels) {
    gamma = ps.constant(name + ".weight", {channels}, T(1));
    beta = ps.constant(name + ".bias", {channels}, T(0));
  }

  Var<T> operator()(const Var<T>& x) const { return ad::instance_norm(x, gamma, beta); }
};

template <typename T>
struct PReLU {
  Var<T> alpha;

  PReLU() = default;
  PReLU(ParamSet<T>& ps, const std::string& name, int channels) {
    alpha = ps.constant(name + ".weight", {channels}, T(0.25));
  }

  Var<T> operator()(const Var<T>& x, int axis = 0) const { return ad::prelu(x, alpha, axis); }
};

}  // namespace dnvoc::nn
