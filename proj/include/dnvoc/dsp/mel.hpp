// Copyright 2026 The dnvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "dnvoc/dsp/stft.hpp"

namespace dnvoc::dsp {

inline constexpr double kLogFloor = 1e-5;

struct MelConfig {
  int n_mels = 80;
  double f_min = 0.0;
  double f_max = 8000.0;
};

// Slaney mel scale: linear below 1 kHz, logarithmic above.
inline double hz_to_mel(double hz) {
  constexpr double f_sp = 200.0 / 3.0, min_log_hz = 1000.0, min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  return hz < min_log_hz ? hz / f_sp : min_log_mel + std::log(hz / min_log_hz) / logstep;
}

inline double mel_to_hz(double mel) {
  constexpr double f_sp = 200.0 / 3.0, min_log_hz = 1000.0, min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  return mel < min_log_mel ? mel * f_sp : min_log_hz * std::exp(logstep * (mel - min_log_mel));
}

// Triangular, area-normalized filters: [n_mels x (n_fft/2 + 1)].
inline Array2D<double> mel_filterbank(int sample_rate, int n_fft, const MelConfig& m) {
  if (m.n_mels <= 0) throw ConfigError("mel: n_mels must be positive");
  if (!(m.f_min >= 0 && m.f_min < m.f_max && m.f_max <= sample_rate / 2.0))
    throw ConfigError("mel: require 0 <= f_min < f_max <= sample_rate / 2");
  const int bins = n_fft / 2 + 1;
  std::vector<double> fft_hz(static_cast<std::size_t>(bins));
  for (int k = 0; k < bins; ++k) fft_hz[static_cast<std::size_t>(k)] = k * (sample_rate / 2.0) / (bins - 1);
  const double lo = hz_to_mel(m.f_min), hi = hz_to_mel(m.f_max);
  std::vector<double> pts(static_cast<std::size_t>(m.n_mels + 2));
  for (int i = 0; i < m.n_mels + 2; ++i)
    pts[static_cast<std::size_t>(i)] = mel_to_hz(lo + (hi - lo) * i / (m.n_mels + 1));
  Array2D<double> fb(m.n_mels, bins);
  for (int i = 0; i < m.n_mels; ++i) {
    const double f0 = pts[static_cast<std::size_t>(i)], f1 = pts[static_cast<std::size_t>(i) + 1],
                 f2 = pts[static_cast<std::size_t>(i) + 2];
    const double enorm = 2.0 / (f2 - f0);
    for (int k = 0; k < bins; ++k) {
      const double f = fft_hz[static_cast<std::size_t>(k)];
      const double rise = (f - f0) / (f1 - f0), fall = (f2 - f) / (f2 - f1);
      fb(i, k) = enorm * std::max(0.0, std::min(rise, fall));
    }
  }
  return fb;
}

// log(filterbank * amplitude + floor) per frame.
inline Array2D<double> log_mel_from_amplitude(const Array2D<double>& amplitude,
                                              const Array2D<double>& fb) {
  if (amplitude.cols != fb.cols) throw MismatchError("mel: filterbank/spectrum bin mismatch");
  Array2D<double> out(amplitude.rows, fb.rows);
  for (int t = 0; t < amplitude.rows; ++t)
    for (int m = 0; m < fb.rows; ++m) {
      double s = 0;
      for (int k = 0; k < fb.cols; ++k) s += fb(m, k) * amplitude(t, k);
      out(t, m) = std::log(s + kLogFloor);
    }
  return out;
}

inline MelSpectrogram mel_spectrogram(const Waveform& w, const StftConfig& cfg,
                                      const MelConfig& m = {}) {
  const auto fb = mel_filterbank(cfg.sample_rate, cfg.n_fft, m);
  const auto spec = stft(w, cfg);
  return {log_mel_from_amplitude(spec.amplitude, fb), cfg, m.n_mels};
}

inline MelSpectrogram mel_spectrogram(const Waveform& w, const StftConfig& cfg, int n_mels,
                                      double f_min, double f_max) {
  return mel_spectrogram(w, cfg, MelConfig{n_mels, f_min, f_max});
}

}  // namespace dnvoc::dsp
