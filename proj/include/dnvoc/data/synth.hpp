// Copyright 2026 The dnvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Deterministic speech-like signals and noises for desk-scale fixtures.
// Nothing here tries to sound natural; the signals only need voiced harmonic
// structure, formant-like envelopes, unvoiced bursts and pauses so that the
// models and metrics see realistic spectral statistics.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "dnvoc/data/corpus.hpp"

namespace dnvoc::data {

// Platform-independent draws (std distributions are implementation-defined).
class SynthRng {
 public:
  explicit SynthRng(std::uint64_t seed) : g_(seed) {}
  double uniform() { return static_cast<double>(g_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal() {
    const double u1 = 1.0 - uniform(), u2 = uniform();
    return std::sqrt(-2 * std::log(u1)) * std::cos(2 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 g_;
};

// Syllables of harmonic excitation shaped by three moving formants, separated
// by short pauses and occasional fricative noise. Peak level about 0.5.
inline dsp::Waveform synthetic_speech(double seconds, std::uint64_t seed, int rate = 16000) {
  const auto n = static_cast<std::size_t>(seconds * rate);
  SynthRng r(seed);
  std::vector<double> y(n, 0.0);
  const double base_f0 = r.uniform(95, 210);
  std::size_t pos = static_cast<std::size_t>(r.uniform(0.05, 0.15) * rate);
  double phase = 0;
  while (pos < n) {
    const auto len = static_cast<std::size_t>(r.uniform(0.12, 0.3) * rate);
    const bool fricative = r.uniform() < 0.25;
    constexpr double lo[] = {300, 850, 2300}, hi[] = {850, 2300, 3400};
    std::array<double, 3> f0s{}, f1s{};  // formant tracks: start, end
    for (int k = 0; k < 3; ++k) {
      f0s[k] = r.uniform(lo[k], hi[k]);
      f1s[k] = f0s[k] * r.uniform(0.8, 1.2);
    }
    const double pitch0 = base_f0 * r.uniform(0.85, 1.2), pitch1 = base_f0 * r.uniform(0.8, 1.15);
    const double level = r.uniform(0.5, 1.0);
    double lp = 0;
    for (std::size_t i = 0; i < len && pos + i < n; ++i) {
      const double u = static_cast<double>(i) / len;
      const double env = level * std::pow(std::sin(std::numbers::pi * u), 0.6);
      double v = 0;
      if (fricative) {
        const double w = r.normal();
        v = 0.35 * (w - lp);  // first difference tilts the noise upward
        lp = w;
      } else {
        const double f0 = pitch0 + (pitch1 - pitch0) * u;
        phase += 2 * std::numbers::pi * f0 / rate;
        if (phase > 2 * std::numbers::pi) phase -= 2 * std::numbers::pi;
        for (int h = 1; f0 * h < 0.45 * rate && h <= 40; ++h) {
          const double fh = f0 * h;
          double gain = 0;
          for (int k = 0; k < 3; ++k) {
            const double fk = f0s[k] + (f1s[k] - f0s[k]) * u, bw = 80.0 + 40 * k;
            gain += std::exp(-0.5 * (fh - fk) * (fh - fk) / (bw * bw)) / (1 + k);
          }
          v += (gain + 0.02) * std::sin(h * phase) / std::sqrt(h);
        }
        v *= 0.25;
      }
      y[pos + i] += env * v;
    }
    pos += len + static_cast<std::size_t>(r.uniform(0.03, 0.2) * rate);
  }
  double peak = 0;
  for (double v : y) peak = std::max(peak, std::abs(v));
  if (peak > 0)
    for (double& v : y) v *= 0.5 / peak;
  return {std::move(y), rate};
}

enum class NoiseKind { kWhite, kPink, kBabble, kHum };

inline const char* to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::kWhite: return "white";
    case NoiseKind::kPink: return "pink";
    case NoiseKind::kBabble: return "babble";
    case NoiseKind::kHum: return "hum";
  }
  return "white";
}

inline dsp::Waveform synthetic_noise(NoiseKind kind, std::size_t n, std::uint64_t seed, int rate = 16000) {
  SynthRng r(seed);
  std::vector<double> y(n, 0.0);
  switch (kind) {
    case NoiseKind::kWhite:
      for (double& v : y) v = r.normal();
      break;
    case NoiseKind::kPink: {
      // Paul Kellet's economy pink filter
      double b0 = 0, b1 = 0, b2 = 0;
      for (double& v : y) {
        const double w = r.normal();
        b0 = 0.99765 * b0 + w * 0.0990460;
        b1 = 0.96300 * b1 + w * 0.2965164;
        b2 = 0.57000 * b2 + w * 1.0526913;
        v = b0 + b1 + b2 + w * 0.1848;
      }
      break;
    }
    case NoiseKind::kBabble:
      for (int t = 0; t < 5; ++t) {
        const auto s = synthetic_speech(static_cast<double>(n) / rate + 0.01, seed * 31 + t + 1, rate);
        for (std::size_t i = 0; i < n; ++i) y[i] += s.samples[i];
      }
      break;
    case NoiseKind::kHum: {
      const double f = r.uniform() < 0.5 ? 50.0 : 60.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / rate;
        for (int h = 1; h <= 6; ++h) y[i] += std::sin(2 * std::numbers::pi * f * h * t + h) / h;
        y[i] += 0.2 * r.normal();
      }
      break;
    }
  }
  return {std::move(y), rate};
}

struct SyntheticCorpusSpec {
  int train_utterances = 20;
  int test_utterances = 10;
  double min_seconds = 1.5, max_seconds = 3.0;
  std::vector<double> snrs{0, 5, 10, 15};
  std::uint64_t seed = 0;
  int rate = 16000;
};

// Writes clean/noisy WAV pairs in the VoiceBank+DEMAND directory layout
// (train speakers p2xx, test speakers p232/p257) and returns the manifest.
inline Manifest write_synthetic_corpus(const fs::path& root, const SyntheticCorpusSpec& spec) {
  if (spec.train_utterances < 0 || spec.test_utterances < 0 || spec.train_utterances + spec.test_utterances == 0)
    throw ConfigError("synthetic corpus: need at least one utterance");
  if (spec.snrs.empty() || !(spec.min_seconds > 0) || spec.max_seconds < spec.min_seconds)
    throw ConfigError("synthetic corpus: bad SNR list or duration range");
  SynthRng r(spec.seed);
  const NoiseKind kinds[] = {NoiseKind::kWhite, NoiseKind::kPink, NoiseKind::kBabble, NoiseKind::kHum};
  int k = 0;
  for (int s = 0; s < 2; ++s) {
    const bool train = s == 0;
    const int count = train ? spec.train_utterances : spec.test_utterances;
    const auto cdir = root / (train ? "clean_trainset_28spk_wav" : "clean_testset_wav");
    const auto ndir = root / (train ? "noisy_trainset_28spk_wav" : "noisy_testset_wav");
    if (count > 0) {
      fs::create_directories(cdir);
      fs::create_directories(ndir);
    }
    for (int i = 0; i < count; ++i, ++k) {
      const std::string spk = train ? "p" + std::to_string(226 + i % 28) : (i % 2 ? "p257" : "p232");
      char id[32];
      std::snprintf(id, sizeof id, "%s_%03d", spk.c_str(), i + 1);
      const double secs = r.uniform(spec.min_seconds, spec.max_seconds);
      auto clean = synthetic_speech(secs, spec.seed * 1000003 + static_cast<std::uint64_t>(k), spec.rate);
      const auto noise = synthetic_noise(kinds[k % 4], clean.size(), spec.seed * 7919 + static_cast<std::uint64_t>(k),
                                         spec.rate);
      auto noisy = synth_mix(clean, noise, spec.snrs[static_cast<std::size_t>(k) % spec.snrs.size()]);
      double peak = 0;
      for (double v : noisy.samples) peak = std::max(peak, std::abs(v));
      if (peak > 0.95) {  // rescale the pair together so 16-bit PCM never clips
        for (double& v : clean.samples) v *= 0.95 / peak;
        for (double& v : noisy.samples) v *= 0.95 / peak;
      }
      dsp::write_wav(cdir / (std::string(id) + ".wav"), clean);
      dsp::write_wav(ndir / (std::string(id) + ".wav"), noisy);
    }
  }
  return build_voicebank_manifest(root);
}

}  // namespace dnvoc::data
