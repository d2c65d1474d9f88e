// Copyright 2026 The dnvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>
#include <random>

#include "dnvoc/dsp/diff.hpp"
#include "dnvoc/dsp/phase.hpp"
#include "dnvoc/dsp/wav.hpp"
#include "support/gradcheck.hpp"

using namespace dnvoc::dsp;
namespace ad = dnvoc::ad;
constexpr double kPi = std::numbers::pi;

namespace {

Waveform noise(int n, std::uint64_t seed, double amp = 0.5) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-amp, amp);
  Waveform w{std::vector<double>(static_cast<std::size_t>(n)), 16000};
  for (auto& s : w.samples) s = u(rng);
  return w;
}

// Direct sliding-window count: frame t exists while its center t*hop lies in
// [0, len].
int count_frames_by_sliding(int len, int hop) {
  int frames = 0;
  for (int center = 0; center <= len; center += hop) ++frames;
  return frames;
}

double circular_distance(double a, double b) {
  return std::abs(std::remainder(a - b, 2 * kPi));
}

}  // namespace

TEST(Stft, FrameCountMatchesSlidingWindow) {
  for (int len : {1, 79, 80, 81, 16000, 16079}) {
    EXPECT_EQ(frame_count(len, StftConfig::predictor()), count_frames_by_sliding(len, 80)) << len;
    EXPECT_EQ(frame_count(len, StftConfig::enhancer()), count_frames_by_sliding(len, 100)) << len;
  }
  const auto s = stft(noise(16000, 1), StftConfig::predictor());
  EXPECT_EQ(s.frames(), 201);
  EXPECT_EQ(s.bins(), 513);
}

TEST(Stft, ZeroSignalHasZeroAmplitudeAndPhase) {
  Waveform w{std::vector<double>(4000, 0.0), 16000};
  const auto s = stft(w, StftConfig::predictor());
  for (double a : s.amplitude.data) EXPECT_EQ(a, 0.0);
  for (double p : s.phase.data) EXPECT_EQ(p, 0.0);
}

TEST(Stft, SinePeakMatchesDenseDft) {
  const auto cfg = StftConfig::predictor();
  Waveform w{std::vector<double>(16000), 16000};
  for (std::size_t n = 0; n < w.size(); ++n) w.samples[n] = std::sin(2 * kPi * 1000.0 * n / 16000.0);
  const auto s = stft(w, cfg);

  // O(N^2) DFT of one interior frame, built independently of the FFT path.
  const int t = 100, N = cfg.n_fft;
  const auto win = frame_window<double>(cfg);
  int dense_peak = 0;
  double best = -1;
  for (int k = 0; k <= N / 2; ++k) {
    std::complex<double> acc = 0;
    for (int n = 0; n < N; ++n) {
      const int src = t * cfg.hop_length + n - N / 2;
      acc += w.samples[static_cast<std::size_t>(src)] * win[static_cast<std::size_t>(n)] *
             std::polar(1.0, -2 * kPi * k * n / N);
    }
    if (std::abs(acc) > best) best = std::abs(acc), dense_peak = k;
  }
  EXPECT_EQ(dense_peak, 64);
  for (int f = 10; f < s.frames() - 10; ++f) {
    auto row = s.amplitude.row(f);
    EXPECT_EQ(std::max_element(row.begin(), row.end()) - row.begin(), dense_peak) << "frame " << f;
  }
}

TEST(Stft, RoundTripBothConfigs) {
  for (const auto& cfg : {StftConfig::predictor(), StftConfig::enhancer()}) {
    for (int trial = 0; trial < 5; ++trial) {
      const auto x = noise(16000, 10 + trial);
      const auto y = istft(stft(x, cfg), static_cast<int>(x.size()));
      ASSERT_EQ(y.size(), x.size());
      double err = 0;
      for (std::size_t i = 0; i < x.size(); ++i) err = std::max(err, std::abs(x.samples[i] - y.samples[i]));
      EXPECT_LT(err, 1e-4) << cfg.key();
    }
  }
}

TEST(Stft, DefaultSynthesisLength) {
  const auto cfg = StftConfig::enhancer();
  const auto s = stft(noise(1234, 3), cfg);
  EXPECT_EQ(istft(s).size(), static_cast<std::size_t>((s.frames() - 1) * cfg.hop_length));
}

TEST(Stft, ZeroSpectrumGivesZeroWaveform) {
  const auto cfg = StftConfig::enhancer();
  SpectralPair s{Array2D<double>(20, cfg.bins()), Array2D<double>(20, cfg.bins()), cfg};
  for (double v : istft(s).samples) EXPECT_EQ(v, 0.0);
}

TEST(Stft, RejectsBadInputAndConfigs) {
  auto w = noise(100, 4);
  w.samples[5] = std::nan("");
  EXPECT_THROW(stft(w, StftConfig::enhancer()), dnvoc::InputError);

  StftConfig bad = StftConfig::enhancer();
  bad.hop_length = 500;
  EXPECT_THROW(stft(noise(1000, 5), bad), dnvoc::ConfigError);

  // A Hann window with hop == win_length never covers the frame boundaries.
  StftConfig gaps{512, 256, 256, WindowType::kHann, 16000, true};
  EXPECT_NO_THROW(gaps.validate());
  EXPECT_LT(nola_margin(gaps), 1e-10);
  SpectralPair s{Array2D<double>(4, gaps.bins()), Array2D<double>(4, gaps.bins()), gaps};
  EXPECT_THROW(istft(s), dnvoc::ConfigError);

  EXPECT_GT(nola_margin(StftConfig::predictor()), 0.1);
  EXPECT_LT(cola_deviation(StftConfig::enhancer()), 1e-12);
}

TEST(Mel, ShapeAndSilenceFloor) {
  const auto cfg = StftConfig::predictor();
  const auto mel = mel_spectrogram(noise(16000, 6), cfg, 80, 0.0, 8000.0);
  EXPECT_EQ(mel.values.rows, 201);
  EXPECT_EQ(mel.values.cols, 80);
  Waveform zero{std::vector<double>(16000, 0.0), 16000};
  for (double v : mel_spectrogram(zero, cfg).values.data) EXPECT_DOUBLE_EQ(v, std::log(1e-5));
}

TEST(Mel, FilterbankCoverage) {
  for (int n_fft : {1024, 400}) {
    const auto fb = mel_filterbank(16000, n_fft, {});
    for (int m = 0; m < fb.rows; ++m) {
      double s = 0;
      for (int k = 0; k < fb.cols; ++k) {
        EXPECT_GE(fb(m, k), 0.0);
        s += fb(m, k);
      }
      EXPECT_GT(s, 0.0) << "row " << m << " n_fft " << n_fft;
    }
    // Interior bins (strictly between f_min and f_max) are covered.
    for (int k = 1; k < fb.cols - 1; ++k) {
      double c = 0;
      for (int m = 0; m < fb.rows; ++m) c += fb(m, k);
      EXPECT_GT(c, 0.0) << "bin " << k;
    }
  }
  EXPECT_THROW(mel_filterbank(16000, 1024, {0, 0, 8000}), dnvoc::ConfigError);
  EXPECT_THROW(mel_filterbank(16000, 1024, {80, 100, 9000}), dnvoc::ConfigError);
}

TEST(Mel, ShiftCovariantAtHopGranularity) {
  const auto cfg = StftConfig::predictor();
  const auto x = noise(8000, 7);
  Waveform delayed{std::vector<double>(static_cast<std::size_t>(cfg.hop_length), 0.0), 16000};
  delayed.samples.insert(delayed.samples.end(), x.samples.begin(), x.samples.end());
  const auto a = mel_spectrogram(x, cfg);
  const auto b = mel_spectrogram(delayed, cfg);
  // Frames whose analysis window stays inside the original signal.
  const int margin = cfg.n_fft / 2 / cfg.hop_length + 1;
  for (int t = margin; t < a.frames() - margin; ++t)
    for (int m = 0; m < 80; ++m) ASSERT_NEAR(a.values(t, m), b.values(t + 1, m), 1e-9);
}

TEST(Phase, WrapExamplesAndIdempotence) {
  EXPECT_EQ(wrap_phase(0.0), 0.0);
  EXPECT_NEAR(wrap_phase(2 * kPi), 0.0, 1e-15);
  EXPECT_EQ(wrap_phase(-kPi), kPi);
  EXPECT_NEAR(wrap_phase(3 * kPi), kPi, 1e-15);
  EXPECT_GT(wrap_phase(3 * kPi), -kPi);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-50, 50);
  for (int i = 0; i < 10000; ++i) {
    const double x = u(rng);
    const double y = wrap_phase(x);
    ASSERT_GT(y, -kPi);
    ASSERT_LE(y, kPi);
    ASSERT_EQ(wrap_phase(y), y);
    ASSERT_NEAR(std::remainder(x - y, 2 * kPi), 0.0, 1e-12);
  }
}

TEST(Phase, ComposeAnalyticCases) {
  const auto cfg = StftConfig::enhancer();
  SpectralPair clean{Array2D<double>(1, cfg.bins(), 1.0), Array2D<double>(1, cfg.bins(), 0.0), cfg};
  SpectralPair quiet{Array2D<double>(1, cfg.bins(), 0.0), Array2D<double>(1, cfg.bins(), 1.3), cfg};
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-kPi + 1e-9, kPi);
  for (auto& p : clean.phase.data) p = u(rng);
  const auto same = compose_noisy_phase(clean, quiet);
  for (std::size_t i = 0; i < same.phase.data.size(); ++i) EXPECT_EQ(same.phase.data[i], clean.phase.data[i]);

  SpectralPair x{Array2D<double>(1, cfg.bins(), 1.0), Array2D<double>(1, cfg.bins(), 0.0), cfg};
  SpectralPair n{Array2D<double>(1, cfg.bins(), 1.0), Array2D<double>(1, cfg.bins(), kPi / 2), cfg};
  const auto y = compose_noisy_phase(x, n);
  EXPECT_NEAR(y.phase(0, 0), kPi / 4, 1e-15);
  EXPECT_NEAR(y.amplitude(0, 0), std::sqrt(2.0), 1e-15);

  SpectralPair wrong{Array2D<double>(2, cfg.bins()), Array2D<double>(2, cfg.bins()), cfg};
  EXPECT_THROW(compose_noisy_phase(x, wrong), dnvoc::MismatchError);
}

TEST(Phase, ComposeMatchesComplexSumOracle) {
  const auto cfg = StftConfig::enhancer();
  const int frames = 5;  // 5 x 201 = 1005 bins
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> amp(0.0, 2.0), ph(-kPi + 1e-12, kPi);
  SpectralPair x{Array2D<double>(frames, cfg.bins()), Array2D<double>(frames, cfg.bins()), cfg};
  SpectralPair n = x;
  for (auto* s : {&x, &n}) {
    for (auto& a : s->amplitude.data) a = amp(rng);
    for (auto& p : s->phase.data) p = ph(rng);
  }
  const auto y = compose_noisy_phase(x, n);
  for (std::size_t i = 0; i < y.phase.data.size(); ++i) {
    const auto z = std::polar(x.amplitude.data[i], x.phase.data[i]) + std::polar(n.amplitude.data[i], n.phase.data[i]);
    ASSERT_LT(circular_distance(y.phase.data[i], std::arg(z)), 1e-9);
    ASSERT_NEAR(y.amplitude.data[i], std::abs(z), 1e-12);
    ASSERT_GT(y.phase.data[i], -kPi);
    ASSERT_LE(y.phase.data[i], kPi);
  }
}

TEST(Phase, DeviationShrinksWithNoiseRatio) {
  const auto cfg = StftConfig::enhancer();
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> ph(-kPi + 1e-12, kPi);
  SpectralPair x{Array2D<double>(4, cfg.bins(), 1.0), Array2D<double>(4, cfg.bins()), cfg};
  SpectralPair n = x;
  for (auto& p : x.phase.data) p = ph(rng);
  for (auto& p : n.phase.data) p = ph(rng);
  double prev = INFINITY;
  for (double ratio : {0.1, 0.01, 0.001}) {
    for (auto& a : n.amplitude.data) a = ratio;
    const auto y = compose_noisy_phase(x, n);
    double dev = 0;
    for (std::size_t i = 0; i < y.phase.data.size(); ++i)
      dev = std::max(dev, circular_distance(y.phase.data[i], x.phase.data[i]));
    EXPECT_LT(dev, prev);
    EXPECT_LE(dev, std::asin(ratio) + 1e-12);
    prev = dev;
  }
}

TEST(DiffStft, MatchesPlainApi) {
  const auto cfg = StftConfig::enhancer();
  const auto x = noise(3000, 12);
  const auto plain = stft_complex(x, cfg);
  const auto v = stft_var<double>(waveform_var<double>(x), cfg);
  for (std::size_t i = 0; i < plain.re.data.size(); ++i) {
    ASSERT_EQ(v.re.value()[i], plain.re.data[i]);
    ASSERT_EQ(v.im.value()[i], plain.im.data[i]);
  }
  const auto y = istft_var(v.re, v.im, cfg, 3000);
  for (std::size_t i = 0; i < x.size(); ++i) ASSERT_NEAR(y.value()[i], x.samples[i], 1e-10);
}

TEST(DiffStft, GradientsMatchFiniteDifferences) {
  const StftConfig cfg{16, 12, 4, WindowType::kHann, 16000, true};
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> xv(37), rv(10 * 9), iv(10 * 9), pr(10 * 9), pi(10 * 9), py(37);
  for (auto* v : {&xv, &rv, &iv, &pr, &pi, &py})
    for (auto& e : *v) e = u(rng);
  auto x = ad::Var<double>::parameter({37}, xv);
  auto re = ad::Var<double>::parameter({10, 9}, rv);
  auto im = ad::Var<double>::parameter({10, 9}, iv);
  std::vector<ad::Var<double>> in{x, re, im};
  auto r = dnvoc::testing::grad_check(in, [&] {
    auto c = stft_var(x, cfg);
    auto a = ad::sum(ad::add(ad::mul(c.re, ad::Var<double>::constant({10, 9}, pr)),
                             ad::mul(c.im, ad::Var<double>::constant({10, 9}, pi))));
    auto y = istft_var(re, im, cfg, 37);
    return ad::add(a, ad::sum(ad::mul(y, ad::Var<double>::constant({37}, py))));
  });
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Wav, PcmRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "dnvoc_wav_test";
  auto w = noise(1000, 14, 0.9);
  write_wav(dir / "x.wav", w);
  const auto info = read_wav_info(dir / "x.wav");
  EXPECT_EQ(info.sample_rate, 16000);
  EXPECT_EQ(info.frames, 1000u);
  const auto r = read_wav(dir / "x.wav");
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(r.samples[i], w.samples[i], 1.0 / 32768);
  // Quantized samples survive a second round trip bit-exactly.
  write_wav(dir / "y.wav", r);
  EXPECT_EQ(read_wav(dir / "y.wav").samples, r.samples);
  EXPECT_THROW(read_wav(dir / "missing.wav"), dnvoc::IoError);
  std::filesystem::remove_all(dir);
}
