// Copyright 2026 The dnvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Frame-based intrusive measures: segmental SNR, LPC log-likelihood ratio,
// weighted spectral slope, and the composite MOS regressions built on them.
// Argument order is always (reference, degraded).

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <vector>

#include "dnvoc/dsp/fft.hpp"
#include "dnvoc/dsp/types.hpp"

namespace dnvoc::metrics {

namespace detail {

inline void check_pair(const dsp::Waveform& ref, const dsp::Waveform& deg, const char* what) {
  if (ref.size() != deg.size())
    throw MismatchError(std::string(what) + ": length mismatch (" + std::to_string(ref.size()) + " vs " +
                        std::to_string(deg.size()) + ")");
  if (ref.sample_rate != deg.sample_rate) throw MismatchError(std::string(what) + ": sample rates differ");
  ref.validate();
  deg.validate();
}

// Hann window 0.5(1 - cos(2 pi n / (N + 1))), n = 1..N (MATLAB hanning).
inline std::vector<double> hanning(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i) w[i] = 0.5 * (1 - std::cos(2 * std::numbers::pi * (i + 1) / (n + 1)));
  return w;
}

struct Framing {
  int win, skip, count;
};

// 30 ms frames, hop win/4, count floor((L - win) / hop): the composite-measure
// reference framing shared by LLR, WSS and the reference SSNR.
inline Framing reference_framing(std::size_t n, int rate) {
  const int win = static_cast<int>(std::lround(30.0 * rate / 1000));
  const int skip = win / 4;
  const long long c = (static_cast<long long>(n) - win) / skip;
  return {win, skip, static_cast<int>(std::max(0LL, static_cast<long long>(n) >= win ? c : 0LL))};
}

inline double trimmed_mean(std::vector<double> v, double keep = 0.95) {
  if (v.empty()) throw InputError("metrics: signal shorter than one analysis frame");
  std::sort(v.begin(), v.end());
  // round half to even, like the reference scripts
  const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::nearbyint(v.size() * keep)));
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += v[i];
  return s / static_cast<double>(n);
}

}  // namespace detail

struct SsnrConfig {
  double frame_ms = 32;
  double overlap = 0.5;
  double min_db = -10, max_db = 35;
  // Frames whose reference energy is this far below the loudest frame are
  // dropped. -inf keeps every frame.
  double silence_db = -60;
  double eps = 1e-10;
  bool reference_count = false;  // floor((L - win) / hop) frames instead of 1 + floor(...)

  // 30 ms, 75% overlap, no silence exclusion: the framing used by the
  // composite-measure reference scripts and by published VoiceBank+DEMAND tables.
  static SsnrConfig reference() {
    SsnrConfig c;
    c.frame_ms = 30;
    c.overlap = 0.75;
    c.silence_db = -std::numeric_limits<double>::infinity();
    c.reference_count = true;
    return c;
  }

  void validate() const {
    if (!(frame_ms > 0) || !(overlap >= 0 && overlap < 1) || !(min_db < max_db))
      throw ConfigError("ssnr: bad framing or clamp range");
  }
};

// Mean over frames of 10 log10(E_ref / (E_err + eps) + eps), each clamped.
inline double ssnr(const dsp::Waveform& ref, const dsp::Waveform& deg, const SsnrConfig& cfg = {}) {
  detail::check_pair(ref, deg, "ssnr");
  cfg.validate();
  const int win = static_cast<int>(std::lround(cfg.frame_ms * ref.sample_rate / 1000));
  const int hop = std::max(1, static_cast<int>(std::floor(win * (1 - cfg.overlap) + 1e-9)));
  const long long L = static_cast<long long>(ref.size());
  if (L < win) throw InputError("ssnr: signal shorter than one frame");
  const long long count = (L - win) / hop + (cfg.reference_count ? 0 : 1);
  const auto w = detail::hanning(win);
  std::vector<double> es(count), en(count);
  double emax = 0;
  for (long long f = 0; f < count; ++f) {
    double s = 0, e = 0;
    for (int i = 0; i < win; ++i) {
      const double r = ref.samples[f * hop + i] * w[i], d = deg.samples[f * hop + i] * w[i];
      s += r * r;
      e += (r - d) * (r - d);
    }
    es[f] = s;
    en[f] = e;
    emax = std::max(emax, s);
  }
  const double floor_e = std::isinf(cfg.silence_db) ? -1.0 : emax * std::pow(10.0, cfg.silence_db / 10);
  double sum = 0;
  long long used = 0;
  for (long long f = 0; f < count; ++f) {
    if (!std::isinf(cfg.silence_db) && (es[f] <= 0 || es[f] < floor_e)) continue;
    const double v = 10 * std::log10(es[f] / (en[f] + cfg.eps) + cfg.eps);
    sum += std::clamp(v, cfg.min_db, cfg.max_db);
    ++used;
  }
  if (used == 0) throw InputError("ssnr: reference is silent");
  return sum / static_cast<double>(used);
}

struct LpcResult {
  std::vector<double> r;  // autocorrelation lags 0..order
  std::vector<double> a;  // [1, -a_1, ..., -a_p]
};

// Autocorrelation method with Levinson-Durbin recursion.
inline LpcResult lpc(const double* x, int n, int order) {
  LpcResult out{std::vector<double>(order + 1), std::vector<double>(order + 1)};
  for (int k = 0; k <= order; ++k) {
    double s = 0;
    for (int i = 0; i + k < n; ++i) s += x[i] * x[i + k];
    out.r[k] = s;
  }
  std::vector<double> a(order, 0.0), prev;
  double e = out.r[0];
  for (int i = 0; i < order; ++i) {
    double acc = 0;
    for (int j = 0; j < i; ++j) acc += a[j] * out.r[i - j];
    const double k = (out.r[i + 1] - acc) / e;
    prev.assign(a.begin(), a.begin() + i);
    a[i] = k;
    for (int j = 0; j < i; ++j) a[j] = prev[j] - k * prev[i - 1 - j];
    e *= 1 - k * k;
  }
  out.a[0] = 1;
  for (int i = 0; i < order; ++i) out.a[i + 1] = -a[i];
  return out;
}

struct LlrConfig {
  int order = 16;
  double keep = 0.95;
};

// Per-frame log(a_d' R_r a_d / a_r' R_r a_r). Frames where either side is
// silent (or the ratio is not finite) contribute 0, as in the reference.
inline std::vector<double> llr_frames(const dsp::Waveform& ref, const dsp::Waveform& deg, const LlrConfig& cfg = {}) {
  detail::check_pair(ref, deg, "llr");
  const auto fr = detail::reference_framing(ref.size(), ref.sample_rate);
  const auto w = detail::hanning(fr.win);
  std::vector<double> cr(fr.win), cd(fr.win), out(fr.count, 0.0);
  const int P = cfg.order;
  for (int f = 0; f < fr.count; ++f) {
    for (int i = 0; i < fr.win; ++i) {
      cr[i] = ref.samples[static_cast<std::size_t>(f) * fr.skip + i] * w[i];
      cd[i] = deg.samples[static_cast<std::size_t>(f) * fr.skip + i] * w[i];
    }
    const auto lr = lpc(cr.data(), fr.win, P), ld = lpc(cd.data(), fr.win, P);
    auto quad = [&](const std::vector<double>& a) {
      double s = 0;
      for (int i = 0; i <= P; ++i)
        for (int j = 0; j <= P; ++j) s += a[i] * lr.r[std::abs(i - j)] * a[j];
      return s;
    };
    const double v = std::log(quad(ld.a) / quad(lr.a));
    out[f] = std::isfinite(v) ? v : 0.0;
  }
  return out;
}

inline double llr(const dsp::Waveform& ref, const dsp::Waveform& deg, const LlrConfig& cfg = {}) {
  return detail::trimmed_mean(llr_frames(ref, deg, cfg), cfg.keep);
}

namespace detail {

constexpr std::array<double, 25> kCritCenter{50., 120, 190, 260, 330, 400, 470, 540, 617.372, 703.378,
                                             798.717, 904.128, 1020.38, 1148.30, 1288.72, 1442.54, 1610.70,
                                             1794.16, 1993.93, 2211.08, 2446.71, 2701.97, 2978.04, 3276.17,
                                             3597.63};
constexpr std::array<double, 25> kCritBandwidth{70., 70, 70, 70, 70, 70, 70, 77.3724, 86.0056, 95.3398,
                                                105.411, 116.256, 127.914, 140.423, 153.823, 168.154, 183.457,
                                                199.776, 217.153, 235.631, 255.255, 276.072, 298.126, 321.465,
                                                346.136};

}  // namespace detail

// Klatt's weighted spectral slope over 25 Gaussian critical-band filters, with
// the per-frame weight normalization of the reference scripts.
inline std::vector<double> wss_frames(const dsp::Waveform& ref, const dsp::Waveform& deg) {
  detail::check_pair(ref, deg, "wss");
  constexpr int nc = 25;
  constexpr double kmax = 20, klocmax = 1;
  const auto fr = detail::reference_framing(ref.size(), ref.sample_rate);
  int nfft = 1;
  while (nfft < 2 * fr.win) nfft *= 2;
  const int half = nfft / 2;
  const double nyq = ref.sample_rate / 2.0;
  const double min_factor = std::exp(-30.0 / (2 * 2.303));
  std::vector<std::vector<double>> fb(nc, std::vector<double>(half));
  for (int i = 0; i < nc; ++i) {
    const double f0 = std::floor(detail::kCritCenter[i] / nyq * half);
    const double bw = detail::kCritBandwidth[i] / nyq * half;
    const double norm = std::log(detail::kCritBandwidth[0]) - std::log(detail::kCritBandwidth[i]);
    for (int j = 0; j < half; ++j) {
      const double v = std::exp(-11 * ((j - f0) / bw) * ((j - f0) / bw) + norm);
      fb[i][j] = v > min_factor ? v : 0.0;
    }
  }
  const auto w = detail::hanning(fr.win);
  std::vector<double> buf(nfft);
  std::vector<std::complex<double>> spec(nfft);
  auto band_db = [&](const std::vector<double>& x, std::size_t start) {
    std::fill(buf.begin(), buf.end(), 0.0);
    for (int i = 0; i < fr.win; ++i) buf[i] = x[start + i] * w[i];
    dsp::RealFft<double>::forward(buf.data(), spec.data(), nfft);
    std::array<double, nc> e{};
    for (int b = 0; b < nc; ++b) {
      double s = 0;
      for (int j = 0; j < half; ++j) s += std::norm(spec[j]) * fb[b][j];
      e[b] = 10 * std::log10(std::max(s, 1e-10));
    }
    return e;
  };
  auto peaks = [&](const std::array<double, nc>& e, const std::array<double, nc - 1>& s) {
    std::array<double, nc - 1> p{};
    for (int i = 0; i < nc - 1; ++i) {
      int n = i;
      if (s[i] > 0) {
        while (n < nc - 1 && s[n] > 0) ++n;
        p[i] = e[n - 1];
      } else {
        while (n >= 0 && s[n] <= 0) --n;
        p[i] = e[n + 1];
      }
    }
    return p;
  };
  std::vector<double> out(fr.count);
  for (int f = 0; f < fr.count; ++f) {
    const std::size_t start = static_cast<std::size_t>(f) * fr.skip;
    const auto ec = band_db(ref.samples, start), ep = band_db(deg.samples, start);
    std::array<double, nc - 1> sc{}, sp{};
    for (int i = 0; i < nc - 1; ++i) {
      sc[i] = ec[i + 1] - ec[i];
      sp[i] = ep[i + 1] - ep[i];
    }
    const auto pc = peaks(ec, sc), pp = peaks(ep, sp);
    const double mc = *std::max_element(ec.begin(), ec.end()), mp = *std::max_element(ep.begin(), ep.end());
    double num = 0, den = 0;
    for (int i = 0; i < nc - 1; ++i) {
      const double wc = kmax / (kmax + mc - ec[i]) * klocmax / (klocmax + pc[i] - ec[i]);
      const double wp = kmax / (kmax + mp - ep[i]) * klocmax / (klocmax + pp[i] - ep[i]);
      const double wt = (wc + wp) / 2;
      num += wt * (sc[i] - sp[i]) * (sc[i] - sp[i]);
      den += wt;
    }
    out[f] = num / den;
  }
  return out;
}

inline double wss(const dsp::Waveform& ref, const dsp::Waveform& deg, double keep = 0.95) {
  return detail::trimmed_mean(wss_frames(ref, deg), keep);
}

struct Composite {
  double csig, cbak, covl;
};

inline double clamp_mos(double v) { return std::clamp(v, 1.0, 5.0); }

// Hu & Loizou regressions, clamped to the MOS range.
inline Composite composite(double pesq, double llr_mean, double wss_mean, double ssnr_mean) {
  for (double v : {pesq, llr_mean, wss_mean, ssnr_mean})
    if (!std::isfinite(v)) throw InputError("composite: non-finite input");
  return {clamp_mos(3.093 - 1.029 * llr_mean + 0.603 * pesq - 0.009 * wss_mean),
          clamp_mos(1.634 + 0.478 * pesq - 0.007 * wss_mean + 0.063 * ssnr_mean),
          clamp_mos(1.594 + 0.805 * pesq - 0.512 * llr_mean - 0.007 * wss_mean)};
}

}  // namespace dnvoc::metrics
