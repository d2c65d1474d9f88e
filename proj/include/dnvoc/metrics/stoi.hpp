// Copyright 2026 The dnvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Short-time objective intelligibility (Taal et al. 2011), following the
// widely used pystoi port step for step so corpus numbers are comparable:
// Octave-compatible resampling to 10 kHz, silent-frame removal at 40 dB
// dynamic range, 256-sample Hann frames with 512-point FFT, 15 one-third
// octave bands from 150 Hz, 30-frame segments, -15 dB SDR clipping.

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <numeric>
#include <vector>

#include "dnvoc/data/resample.hpp"
#include "dnvoc/dsp/fft.hpp"
#include "dnvoc/metrics/quality.hpp"

namespace dnvoc::metrics {

namespace stoi_detail {

constexpr int kFs = 10000, kFrame = 256, kFft = 512, kBands = 15, kSeg = 30;
constexpr double kMinFreq = 150, kBeta = -15, kDynRange = 40;
constexpr double kEps = std::numeric_limits<double>::epsilon();

// Kaiser-windowed sinc matching Octave's resample(): 60 dB rejection,
// transition width one tenth of the cutoff, taps normalized to unit sum.
inline std::vector<double> octave_resample(const std::vector<double>& x, int p, int q) {
  const int g = std::gcd(p, q);
  p /= g;
  q /= g;
  if (p == q) return x;
  const double fc = 1.0 / (2.0 * std::max(p, q));
  const double roll = fc / 10;
  const double rej = 60;
  const int L = static_cast<int>(std::ceil((rej - 8) / (28.714 * roll)));
  const double beta = 0.1102 * (rej - 8.7);
  const int M = 2 * L + 1;
  std::vector<double> h(M);
  const double i0b = data::detail::bessel_i0(beta);
  double sum = 0;
  for (int n = 0; n < M; ++n) {
    const double t = n - L;
    const double a = std::numbers::pi * 2 * fc * t;
    const double sinc = t == 0 ? 1.0 : std::sin(a) / a;
    const double r = 2.0 * n / (M - 1) - 1;
    h[n] = data::detail::bessel_i0(beta * std::sqrt(std::max(0.0, 1 - r * r))) / i0b * 2 * p * fc * sinc;
    sum += h[n];
  }
  for (double& v : h) v *= p / sum;
  const long long n_in = static_cast<long long>(x.size());
  const long long n_out = (n_in * p + q - 1) / q;
  std::vector<double> y(static_cast<std::size_t>(n_out));
  for (long long m = 0; m < n_out; ++m) {
    // y[m] = sum_k x[k] h[m q - k p + L]
    const long long c = m * q + L;
    const long long k_lo = c < M ? 0 : (c - (M - 1) + p - 1) / p;
    const long long k_hi = std::min(n_in - 1, c / p);
    double acc = 0;
    for (long long k = k_lo; k <= k_hi; ++k) acc += x[static_cast<std::size_t>(k)] * h[static_cast<std::size_t>(c - k * p)];
    y[static_cast<std::size_t>(m)] = acc;
  }
  return y;
}

// Frames start at 0, hop, ... while start < len - framelen (strict, as in the
// reference), so the last full frame is skipped when it ends exactly at len.
inline int frame_count(std::size_t len, int framelen, int hop) {
  const long long span = static_cast<long long>(len) - framelen;
  return span <= 0 ? 0 : static_cast<int>((span + hop - 1) / hop);
}

inline void remove_silent_frames(std::vector<double>& x, std::vector<double>& y) {
  const auto w = detail::hanning(kFrame);
  const int hop = kFrame / 2;
  const int nf = frame_count(x.size(), kFrame, hop);
  std::vector<double> energy(nf);
  double emax = -std::numeric_limits<double>::infinity();
  for (int f = 0; f < nf; ++f) {
    double s = 0;
    for (int i = 0; i < kFrame; ++i) {
      const double v = w[i] * x[static_cast<std::size_t>(f) * hop + i];
      s += v * v;
    }
    energy[f] = 20 * std::log10(std::sqrt(s) + kEps);
    emax = std::max(emax, energy[f]);
  }
  std::vector<int> keep;
  for (int f = 0; f < nf; ++f)
    if (emax - kDynRange - energy[f] < 0) keep.push_back(f);
  const std::size_t out_len = keep.empty() ? 0 : (keep.size() - 1) * hop + kFrame;
  std::vector<double> xs(out_len, 0.0), ys(out_len, 0.0);
  for (std::size_t j = 0; j < keep.size(); ++j)
    for (int i = 0; i < kFrame; ++i) {
      const std::size_t src = static_cast<std::size_t>(keep[j]) * hop + i;
      xs[j * hop + i] += w[i] * x[src];
      ys[j * hop + i] += w[i] * y[src];
    }
  x.swap(xs);
  y.swap(ys);
}

// One-third octave band energies: bands x frames, as amplitudes.
inline std::vector<std::vector<double>> third_octave(const std::vector<double>& x) {
  const auto w = detail::hanning(kFrame);
  const int hop = kFrame / 2, nbins = kFft / 2 + 1;
  // band edges snapped to the nearest FFT bin; [lo, hi) ranges
  std::vector<int> lo(kBands), hi(kBands);
  auto nearest = [&](double f) {
    int best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (int b = 0; b < nbins; ++b) {
      const double fb = static_cast<double>(kFs) * b / kFft;
      if ((fb - f) * (fb - f) < bd) {
        bd = (fb - f) * (fb - f);
        best = b;
      }
    }
    return best;
  };
  for (int k = 0; k < kBands; ++k) {
    lo[k] = nearest(kMinFreq * std::pow(2.0, (2.0 * k - 1) / 6));
    hi[k] = nearest(kMinFreq * std::pow(2.0, (2.0 * k + 1) / 6));
  }
  const int nf = frame_count(x.size(), kFrame, hop);
  std::vector<std::vector<double>> out(kBands, std::vector<double>(nf));
  std::vector<double> buf(kFft);
  std::vector<std::complex<double>> spec(kFft);
  for (int f = 0; f < nf; ++f) {
    std::fill(buf.begin(), buf.end(), 0.0);
    for (int i = 0; i < kFrame; ++i) buf[i] = w[i] * x[static_cast<std::size_t>(f) * hop + i];
    dsp::RealFft<double>::forward(buf.data(), spec.data(), kFft);
    for (int k = 0; k < kBands; ++k) {
      double s = 0;
      for (int b = lo[k]; b < hi[k]; ++b) s += std::norm(spec[b]);
      out[k][f] = std::sqrt(s);
    }
  }
  return out;
}

}  // namespace stoi_detail

inline double stoi(const dsp::Waveform& ref, const dsp::Waveform& deg) {
  using namespace stoi_detail;
  detail::check_pair(ref, deg, "stoi");
  auto x = octave_resample(ref.samples, kFs, ref.sample_rate);
  auto y = octave_resample(deg.samples, kFs, deg.sample_rate);
  remove_silent_frames(x, y);
  const auto X = third_octave(x), Y = third_octave(y);
  const int frames = X.empty() ? 0 : static_cast<int>(X[0].size());
  if (frames < kSeg)
    throw InputError("stoi: fewer than 30 frames (384 ms) of active speech after silence removal");
  const double clip = std::pow(10.0, -kBeta / 20);
  double total = 0;
  const int J = frames - kSeg + 1;
  double xs[kSeg], ys[kSeg];
  for (int m = kSeg; m <= frames; ++m)
    for (int k = 0; k < kBands; ++k) {
      double nx = 0, ny = 0;
      for (int t = 0; t < kSeg; ++t) {
        xs[t] = X[k][m - kSeg + t];
        ys[t] = Y[k][m - kSeg + t];
        nx += xs[t] * xs[t];
        ny += ys[t] * ys[t];
      }
      const double alpha = std::sqrt(nx) / (std::sqrt(ny) + kEps);
      double mx = 0, my = 0;
      for (int t = 0; t < kSeg; ++t) {
        ys[t] = std::min(ys[t] * alpha, xs[t] * (1 + clip));
        mx += xs[t];
        my += ys[t];
      }
      mx /= kSeg;
      my /= kSeg;
      double sxy = 0, sxx = 0, syy = 0;
      for (int t = 0; t < kSeg; ++t) {
        const double a = xs[t] - mx, b = ys[t] - my;
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
      }
      total += sxy / ((std::sqrt(sxx) + kEps) * (std::sqrt(syy) + kEps));
    }
  return std::clamp(total / (static_cast<double>(J) * kBands), 0.0, 1.0);
}

}  // namespace dnvoc::metrics
