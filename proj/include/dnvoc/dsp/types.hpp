// Copyright 2026 The dnvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "dnvoc/core/errors.hpp"

namespace dnvoc::dsp {

// Mono signal. Samples are nominally in [-1, 1].
struct Waveform {
  std::vector<double> samples;
  int sample_rate = 16000;

  std::size_t size() const { return samples.size(); }
  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }

  void validate() const {
    if (sample_rate <= 0) throw InputError("waveform: sample rate must be positive");
    if (samples.empty()) throw InputError("waveform: empty signal");
    for (double s : samples)
      if (!std::isfinite(s)) throw InputError("waveform: non-finite sample");
  }
};

enum class WindowType { kHann, kHamming, kRectangular };

inline std::string to_string(WindowType w) {
  switch (w) {
    case WindowType::kHann: return "hann";
    case WindowType::kHamming: return "hamming";
    case WindowType::kRectangular: return "rectangular";
  }
  return "hann";
}

inline WindowType window_from_string(const std::string& s) {
  if (s == "hann") return WindowType::kHann;
  if (s == "hamming") return WindowType::kHamming;
  if (s == "rectangular") return WindowType::kRectangular;
  throw ConfigError("unknown window '" + s + "'");
}

struct StftConfig {
  int n_fft = 1024;
  int win_length = 320;
  int hop_length = 80;
  WindowType window = WindowType::kHann;
  int sample_rate = 16000;
  bool center = true;

  int bins() const { return n_fft / 2 + 1; }

  // Analysis config of the spectrum predictor (and its mel input).
  static StftConfig predictor() { return {1024, 320, 80, WindowType::kHann, 16000, true}; }
  // Analysis config of the enhancement stage.
  static StftConfig enhancer() { return {400, 400, 100, WindowType::kHann, 16000, true}; }

  void validate() const {
    if (n_fft <= 0 || win_length <= 0 || hop_length <= 0 || sample_rate <= 0)
      throw ConfigError("stft: sizes must be positive");
    if (n_fft % 2) throw ConfigError("stft: n_fft must be even");
    if (!(hop_length <= win_length && win_length <= n_fft))
      throw ConfigError("stft: require hop_length <= win_length <= n_fft");
  }

  std::string key() const {
    return std::to_string(n_fft) + "/" + std::to_string(win_length) + "/" +
           std::to_string(hop_length) + "/" + to_string(window) + "/" +
           std::to_string(sample_rate) + (center ? "/center" : "/nocenter");
  }

  friend bool operator==(const StftConfig&, const StftConfig&) = default;
};

// Dense row-major 2-D array; rows are frames.
template <typename T>
struct Array2D {
  int rows = 0;
  int cols = 0;
  std::vector<T> data;

  Array2D() = default;
  Array2D(int r, int c, T fill = T(0))
      : rows(r), cols(c), data(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), fill) {}

  T& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  const T& operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  std::span<T> row(int r) { return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)}; }
  std::span<const T> row(int r) const {
    return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
  }
  bool same_shape(const Array2D& o) const { return rows == o.rows && cols == o.cols; }
};

// Amplitude and principal-value phase of one utterance under one config.
struct SpectralPair {
  Array2D<double> amplitude;
  Array2D<double> phase;
  StftConfig config;

  int frames() const { return amplitude.rows; }
  int bins() const { return amplitude.cols; }

  void validate() const {
    if (!amplitude.same_shape(phase)) throw MismatchError("spectral pair: amplitude/phase shapes differ");
    if (amplitude.cols != config.bins()) throw MismatchError("spectral pair: bin count does not match config");
    constexpr double kPi = 3.14159265358979323846;
    for (std::size_t i = 0; i < amplitude.data.size(); ++i) {
      const double a = amplitude.data[i], p = phase.data[i];
      if (!std::isfinite(a) || !std::isfinite(p) || a < 0)
        throw InputError("spectral pair: amplitude must be finite and non-negative");
      if (p <= -kPi || p > kPi) throw InputError("spectral pair: phase outside (-pi, pi]");
    }
  }
};

struct MelSpectrogram {
  Array2D<double> values;  // [frames x n_mels], natural-log compressed
  StftConfig config;
  int n_mels = 80;

  int frames() const { return values.rows; }
};

}  // namespace dnvoc::dsp
