// Copyright 2026 The dnvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Short-time Fourier analysis and overlap-add synthesis.
//
// Framing follows the centered convention: the signal is reflect-padded by
// n_fft/2 on both sides, frame t starts at t*hop in the padded signal, and the
// analysis window (win_length samples) sits in the middle of the n_fft frame.
// Synthesis divides the overlap-added frames by the summed squared window, so
// istft(stft(x)) == x whenever every output sample is covered by a non-zero
// window value (NOLA).

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <optional>
#include <vector>

#include "dnvoc/core/layers.hpp"
#include "dnvoc/dsp/fft.hpp"
#include "dnvoc/dsp/phase.hpp"
#include "dnvoc/dsp/types.hpp"

namespace dnvoc::dsp {

// Periodic window of win_length samples, zero-padded symmetrically to n_fft.
template <typename T = double>
std::vector<T> frame_window(const StftConfig& cfg) {
  std::vector<T> w(static_cast<std::size_t>(cfg.n_fft), T(0));
  const int off = (cfg.n_fft - cfg.win_length) / 2;
  const double N = cfg.win_length;
  for (int n = 0; n < cfg.win_length; ++n) {
    double v = 1.0;
    if (cfg.window == WindowType::kHann)
      v = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / N);
    else if (cfg.window == WindowType::kHamming)
      v = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * n / N);
    w[static_cast<std::size_t>(off + n)] = static_cast<T>(v);
  }
  return w;
}

// Minimum over one hop period of the summed squared window, relative to its
// maximum. Zero means some sample is never reconstructed.
inline double nola_margin(const StftConfig& cfg) {
  const auto w = frame_window<double>(cfg);
  double lo = INFINITY, hi = 0;
  for (int i = 0; i < cfg.hop_length; ++i) {
    double s = 0;
    for (int p = i; p < cfg.n_fft; p += cfg.hop_length) s += w[static_cast<std::size_t>(p)] * w[static_cast<std::size_t>(p)];
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  return hi > 0 ? lo / hi : 0.0;
}

// Max relative deviation of the summed window from a constant (0 == COLA).
inline double cola_deviation(const StftConfig& cfg) {
  const auto w = frame_window<double>(cfg);
  double lo = INFINITY, hi = 0;
  for (int i = 0; i < cfg.hop_length; ++i) {
    double s = 0;
    for (int p = i; p < cfg.n_fft; p += cfg.hop_length) s += w[static_cast<std::size_t>(p)];
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  return hi > 0 ? (hi - lo) / hi : 1.0;
}

inline void require_invertible(const StftConfig& cfg) {
  cfg.validate();
  if (nola_margin(cfg) < 1e-10)
    throw ConfigError("stft: window/hop pair " + cfg.key() +
                      " leaves samples uncovered; overlap-add cannot invert it");
}

inline int frame_count(int length, const StftConfig& cfg) {
  if (cfg.center) return 1 + length / cfg.hop_length;
  if (length < cfg.n_fft) throw InputError("stft: signal shorter than n_fft without centering");
  return 1 + (length - cfg.n_fft) / cfg.hop_length;
}

// Framed analysis and synthesis kernels shared by the plain (double) API and
// the differentiable ops.
template <typename T>
struct StftKernel {
  StftConfig cfg;
  std::vector<T> window;
  int pad;

  explicit StftKernel(const StftConfig& c)
      : cfg(c), window(frame_window<T>(c)), pad(c.center ? c.n_fft / 2 : 0) {}

  // re/im: [frames x bins]
  void analyze(const T* x, int len, int frames, T* re, T* im) const {
    const int N = cfg.n_fft, K = cfg.bins();
    std::vector<T> buf(static_cast<std::size_t>(N));
    std::vector<std::complex<T>> spec(static_cast<std::size_t>(K));
    for (int t = 0; t < frames; ++t) {
      for (int n = 0; n < N; ++n)
        buf[n] = x[ad::reflect_index(t * cfg.hop_length + n - pad, len)] * window[n];
      RealFft<T>::forward(buf.data(), spec.data(), N);
      for (int k = 0; k < K; ++k) {
        re[static_cast<std::size_t>(t) * K + k] = spec[k].real();
        im[static_cast<std::size_t>(t) * K + k] = spec[k].imag();
      }
    }
  }

  void analyze_adjoint(const T* gre, const T* gim, int frames, int len, T* gx) const {
    const int N = cfg.n_fft, K = cfg.bins();
    std::vector<std::complex<T>> h(static_cast<std::size_t>(K));
    std::vector<T> buf(static_cast<std::size_t>(N));
    for (int t = 0; t < frames; ++t) {
      for (int k = 0; k < K; ++k) {
        const T s = (k == 0 || k == K - 1) ? T(1) : T(0.5);
        h[k] = std::complex<T>(gre[static_cast<std::size_t>(t) * K + k] * s,
                               gim[static_cast<std::size_t>(t) * K + k] * s);
      }
      RealFft<T>::inverse(h.data(), buf.data(), N);
      for (int n = 0; n < N; ++n)
        gx[ad::reflect_index(t * cfg.hop_length + n - pad, len)] += buf[n] * static_cast<T>(N) * window[n];
    }
  }

  std::vector<T> envelope(int frames) const {
    const int N = cfg.n_fft;
    std::vector<T> env(static_cast<std::size_t>(N + (frames - 1) * cfg.hop_length), T(0));
    for (int t = 0; t < frames; ++t)
      for (int n = 0; n < N; ++n) env[static_cast<std::size_t>(t * cfg.hop_length + n)] += window[n] * window[n];
    return env;
  }

  void synthesize(const T* re, const T* im, int frames, int out_len, T* y) const {
    const int N = cfg.n_fft, K = cfg.bins();
    const auto env = envelope(frames);
    std::vector<T> ola(env.size(), T(0));
    std::vector<std::complex<T>> spec(static_cast<std::size_t>(K));
    std::vector<T> buf(static_cast<std::size_t>(N));
    for (int t = 0; t < frames; ++t) {
      for (int k = 0; k < K; ++k)
        spec[k] = {re[static_cast<std::size_t>(t) * K + k], im[static_cast<std::size_t>(t) * K + k]};
      RealFft<T>::inverse(spec.data(), buf.data(), N);
      for (int n = 0; n < N; ++n) ola[static_cast<std::size_t>(t * cfg.hop_length + n)] += buf[n] * window[n];
    }
    for (int i = 0; i < out_len; ++i) {
      const std::size_t p = static_cast<std::size_t>(i + pad);
      y[i] = (p < env.size() && env[p] > T(1e-11)) ? ola[p] / env[p] : T(0);
    }
  }

  void synthesize_adjoint(const T* gy, int frames, int out_len, T* gre, T* gim) const {
    const int N = cfg.n_fft, K = cfg.bins();
    const auto env = envelope(frames);
    std::vector<T> gola(env.size(), T(0));
    for (int i = 0; i < out_len; ++i) {
      const std::size_t p = static_cast<std::size_t>(i + pad);
      if (p < env.size() && env[p] > T(1e-11)) gola[p] += gy[i] / env[p];
    }
    std::vector<T> buf(static_cast<std::size_t>(N));
    std::vector<std::complex<T>> G(static_cast<std::size_t>(K));
    for (int t = 0; t < frames; ++t) {
      for (int n = 0; n < N; ++n) buf[n] = gola[static_cast<std::size_t>(t * cfg.hop_length + n)] * window[n];
      RealFft<T>::forward(buf.data(), G.data(), N);
      for (int k = 0; k < K; ++k) {
        const bool edge = k == 0 || k == K - 1;
        const T c = (edge ? T(1) : T(2)) / static_cast<T>(N);
        gre[static_cast<std::size_t>(t) * K + k] += c * G[k].real();
        if (!edge) gim[static_cast<std::size_t>(t) * K + k] += c * G[k].imag();
      }
    }
  }
};

// Complex STFT as separate real/imaginary planes.
struct ComplexSpectrum {
  Array2D<double> re;
  Array2D<double> im;
};

inline ComplexSpectrum stft_complex(const Waveform& w, const StftConfig& cfg) {
  w.validate();
  cfg.validate();
  const int len = static_cast<int>(w.size());
  const int frames = frame_count(len, cfg);
  ComplexSpectrum s{Array2D<double>(frames, cfg.bins()), Array2D<double>(frames, cfg.bins())};
  StftKernel<double>(cfg).analyze(w.samples.data(), len, frames, s.re.data.data(), s.im.data.data());
  return s;
}

inline SpectralPair stft(const Waveform& w, const StftConfig& cfg) {
  auto c = stft_complex(w, cfg);
  SpectralPair out{Array2D<double>(c.re.rows, c.re.cols), Array2D<double>(c.re.rows, c.re.cols), cfg};
  for (std::size_t i = 0; i < c.re.data.size(); ++i) {
    const double re = c.re.data[i], im = c.im.data[i];
    out.amplitude.data[i] = std::hypot(re, im);
    out.phase.data[i] = principal_angle(im, re);
  }
  return out;
}

// Default output length is (frames - 1) * hop; pass the analysis input length
// to trim or zero-extend to it.
inline Waveform istft_complex(const Array2D<double>& re, const Array2D<double>& im,
                              const StftConfig& cfg, std::optional<int> length = std::nullopt) {
  require_invertible(cfg);
  if (!re.same_shape(im) || re.cols != cfg.bins())
    throw MismatchError("istft: spectrum shape does not match config " + cfg.key());
  if (re.rows < 1) throw InputError("istft: no frames");
  const int out_len = length.value_or((re.rows - 1) * cfg.hop_length);
  Waveform w{std::vector<double>(static_cast<std::size_t>(out_len)), cfg.sample_rate};
  StftKernel<double>(cfg).synthesize(re.data.data(), im.data.data(), re.rows, out_len, w.samples.data());
  return w;
}

inline Waveform istft(const SpectralPair& s, std::optional<int> length = std::nullopt) {
  if (!s.amplitude.same_shape(s.phase)) throw MismatchError("istft: amplitude/phase shapes differ");
  Array2D<double> re(s.frames(), s.bins()), im(s.frames(), s.bins());
  for (std::size_t i = 0; i < re.data.size(); ++i) {
    re.data[i] = s.amplitude.data[i] * std::cos(s.phase.data[i]);
    im.data[i] = s.amplitude.data[i] * std::sin(s.phase.data[i]);
  }
  return istft_complex(re, im, s.config, length);
}

}  // namespace dnvoc::dsp
