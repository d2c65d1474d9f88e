// Copyright 2026 The dnvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Differentiable counterparts of the STFT, iSTFT and mel projection, built on
// the same framing kernels as the plain API so both paths agree exactly.

#pragma once

#include <memory>
#include <utility>

#include "dnvoc/core/ops.hpp"
#include "dnvoc/dsp/mel.hpp"
#include "dnvoc/dsp/stft.hpp"

namespace dnvoc::dsp {

template <typename T>
struct ComplexVar {
  ad::Var<T> re;  // [frames, bins]
  ad::Var<T> im;
};

// x: [L] -> real/imag planes [frames, bins]
template <typename T>
ComplexVar<T> stft_var(const ad::Var<T>& x, const StftConfig& cfg) {
  cfg.validate();
  const int len = static_cast<int>(x.numel());
  if (len < 1) throw InputError("stft: empty signal");
  const int frames = frame_count(len, cfg), K = cfg.bins();
  auto kernel = std::make_shared<StftKernel<T>>(cfg);
  std::vector<T> re(static_cast<std::size_t>(frames) * K), im(re.size());
  kernel->analyze(x.value().data(), len, frames, re.data(), im.data());
  // Both planes come from a single node so the adjoint runs once.
  std::vector<T> both(re.size() * 2);
  std::copy(re.begin(), re.end(), both.begin());
  std::copy(im.begin(), im.end(), both.begin() + static_cast<std::ptrdiff_t>(re.size()));
  auto joint = ad::make_op<T>({2 * frames, K}, std::move(both), {&x},
                              [x, kernel, frames, len, K](ad::Node<T>& out) {
    const std::size_t half = static_cast<std::size_t>(frames) * K;
    kernel->analyze_adjoint(out.grad.data(), out.grad.data() + half, frames, len, ad::grad_of(x));
  });
  return {ad::slice0(joint, 0, frames), ad::slice0(joint, frames, frames)};
}

// re/im [frames, bins] -> [out_len]
template <typename T>
ad::Var<T> istft_var(const ad::Var<T>& re, const ad::Var<T>& im, const StftConfig& cfg, int out_len) {
  require_invertible(cfg);
  ad::check_same_shape(re.shape(), im.shape(), "istft");
  if (re.dim(1) != cfg.bins()) throw MismatchError("istft: bin count does not match config " + cfg.key());
  const int frames = re.dim(0);
  auto kernel = std::make_shared<StftKernel<T>>(cfg);
  std::vector<T> y(static_cast<std::size_t>(out_len));
  kernel->synthesize(re.value().data(), im.value().data(), frames, out_len, y.data());
  return ad::make_op<T>({out_len}, std::move(y), {&re, &im},
                        [re, im, kernel, frames, out_len](ad::Node<T>& out) {
    const std::size_t n = re.numel();
    std::vector<T> gre(n, T(0)), gim(n, T(0));
    kernel->synthesize_adjoint(out.grad.data(), frames, out_len, gre.data(), gim.data());
    if (T* g = ad::grad_of(re))
      for (std::size_t i = 0; i < n; ++i) g[i] += gre[i];
    if (T* g = ad::grad_of(im))
      for (std::size_t i = 0; i < n; ++i) g[i] += gim[i];
  });
}

template <typename T>
ad::Var<T> magnitude_var(const ComplexVar<T>& c, T eps = T(1e-9)) {
  return ad::sqrt(ad::add_scalar(ad::add(ad::square(c.re), ad::square(c.im)), eps));
}

template <typename T>
ComplexVar<T> polar_var(const ad::Var<T>& amplitude, const ad::Var<T>& phase) {
  return {ad::mul(amplitude, ad::cos(phase)), ad::mul(amplitude, ad::sin(phase))};
}

// Constant filterbank transposed to [bins, n_mels] for right-multiplication.
template <typename T>
ad::Var<T> filterbank_var(const StftConfig& cfg, const MelConfig& m = {}) {
  const auto fb = mel_filterbank(cfg.sample_rate, cfg.n_fft, m);
  std::vector<T> v(static_cast<std::size_t>(fb.rows) * fb.cols);
  for (int i = 0; i < fb.rows; ++i)
    for (int k = 0; k < fb.cols; ++k) v[static_cast<std::size_t>(k) * fb.rows + i] = static_cast<T>(fb(i, k));
  return ad::Var<T>::constant({fb.cols, fb.rows}, std::move(v));
}

// amplitude [frames, bins] -> log mel [frames, n_mels]
template <typename T>
ad::Var<T> log_mel_var(const ad::Var<T>& amplitude, const ad::Var<T>& fb_t) {
  return ad::log(ad::add_scalar(ad::matmul(amplitude, fb_t), static_cast<T>(kLogFloor)));
}

template <typename T>
ad::Var<T> waveform_var(const Waveform& w) {
  const int n = static_cast<int>(w.samples.size());
  return ad::Var<T>::constant({n}, std::vector<T>(w.samples.begin(), w.samples.end()));
}

template <typename T>
Waveform to_waveform(const ad::Var<T>& x, int sample_rate) {
  return {std::vector<double>(x.value().begin(), x.value().end()), sample_rate};
}

template <typename T>
ad::Var<T> array_var(const Array2D<double>& a) {
  return ad::Var<T>::constant({a.rows, a.cols}, std::vector<T>(a.data.begin(), a.data.end()));
}

template <typename T>
Array2D<double> to_array(const ad::Var<T>& v) {
  Array2D<double> a(v.dim(0), v.dim(1));
  std::copy(v.value().begin(), v.value().end(), a.data.begin());
  return a;
}

}  // namespace dnvoc::dsp
