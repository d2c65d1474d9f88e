// Copyright 2026 The dnvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Rational-ratio polyphase resampler with a Kaiser-windowed sinc kernel.
//
// y[n] = sum_k x[k] g(n M / L - k), g(t) = fc sinc(fc t) kaiser(t / half_width)
// where L/M is the reduced ratio out_rate/in_rate and fc the cutoff in units of
// the input Nyquist. n M / L only takes L distinct fractional values, so the
// kernel is tabulated once per phase.

#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <vector>

#include "dnvoc/dsp/types.hpp"

namespace dnvoc::data {

struct ResamplerQuality {
  int zero_crossings = 32;  // kernel half-width, in periods of the lower rate
  double rolloff = 0.945;   // cutoff as a fraction of the lower Nyquist
  double kaiser_beta = 9.0;
};

namespace detail {

// Zeroth-order modified Bessel function of the first kind (power series).
inline double bessel_i0(double x) {
  double sum = 1, term = 1;
  const double q = x * x / 4;
  for (int k = 1; k < 200; ++k) {
    term *= q / (static_cast<double>(k) * k);
    sum += term;
    if (term < sum * 1e-17) break;
  }
  return sum;
}

}  // namespace detail

class Resampler {
 public:
  Resampler(int in_rate, int out_rate, ResamplerQuality q = {}) : in_(in_rate), out_(out_rate) {
    if (in_rate <= 0 || out_rate <= 0) throw ConfigError("resample: rates must be positive");
    const int g = std::gcd(in_rate, out_rate);
    L_ = out_rate / g;
    M_ = in_rate / g;
    const double ratio = static_cast<double>(L_) / M_;
    fc_ = q.rolloff * std::min(1.0, ratio);
    half_ = q.zero_crossings / std::min(1.0, ratio);  // in input samples
    taps_ = 2 * static_cast<int>(std::ceil(half_)) + 1;
    const double i0b = detail::bessel_i0(q.kaiser_beta);
    table_.assign(static_cast<std::size_t>(L_) * taps_, 0.0);
    const int c = taps_ / 2;
    for (int p = 0; p < L_; ++p) {
      const double frac = static_cast<double>(p) / L_;  // phase offset in input samples
      for (int j = 0; j < taps_; ++j) {
        const double t = frac - (j - c);  // distance from output instant to input tap
        double v = 0;
        if (std::abs(t) <= half_) {
          const double r = t / half_;
          const double w = detail::bessel_i0(q.kaiser_beta * std::sqrt(std::max(0.0, 1 - r * r))) / i0b;
          const double a = std::numbers::pi * fc_ * t;
          v = fc_ * (a == 0 ? 1.0 : std::sin(a) / a) * w;
        }
        table_[static_cast<std::size_t>(p) * taps_ + j] = v;
      }
    }
  }

  std::size_t output_length(std::size_t n) const {
    return static_cast<std::size_t>((static_cast<unsigned long long>(n) * L_ + M_ - 1) / M_);
  }

  std::vector<double> operator()(const std::vector<double>& x) const {
    if (L_ == 1 && M_ == 1) return x;
    const std::size_t n_out = output_length(x.size());
    const long long n_in = static_cast<long long>(x.size());
    const int c = taps_ / 2;
    std::vector<double> y(n_out);
    for (std::size_t n = 0; n < n_out; ++n) {
      const long long num = static_cast<long long>(n) * M_;
      const long long base = num / L_;
      const int p = static_cast<int>(num % L_);
      const double* h = &table_[static_cast<std::size_t>(p) * taps_];
      double acc = 0;
      for (int j = 0; j < taps_; ++j) {
        const long long k = base + j - c;
        if (k >= 0 && k < n_in) acc += h[j] * x[static_cast<std::size_t>(k)];
      }
      y[n] = acc;
    }
    return y;
  }

  int up() const { return L_; }
  int down() const { return M_; }

 private:
  int in_, out_, L_ = 1, M_ = 1, taps_ = 1;
  double fc_ = 1, half_ = 1;
  std::vector<double> table_;
};

// Equal rates return the input untouched.
inline dsp::Waveform resample(const dsp::Waveform& w, int target_rate, ResamplerQuality q = {}) {
  if (w.sample_rate == target_rate) return w;
  return {Resampler(w.sample_rate, target_rate, q)(w.samples), target_rate};
}

}  // namespace dnvoc::data
