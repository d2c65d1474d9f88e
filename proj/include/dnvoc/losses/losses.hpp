// Copyright 2026 The dnvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Training objectives shared by the spectrum predictor and the enhancer.
// Everything operates on ad::Var so the same code serves training and tests.

#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "dnvoc/core/errors.hpp"
#include "dnvoc/core/layers.hpp"
#include "dnvoc/core/ops.hpp"
#include "dnvoc/dsp/diff.hpp"

namespace dnvoc::losses {

struct LossWeights {
  double w_mel = 45.0;
  double w_amp = 45.0;
  double w_phase_ip = 100.0;
  double w_phase_gd = 100.0;
  double w_phase_iaf = 100.0;
  double w_complex = 45.0;
  double w_time = 1.0;
  double w_adv = 1.0;
  double w_fm = 2.0;
  double w_metric = 1.0;

  void validate() const {
    const std::pair<const char*, double> all[] = {
        {"w_mel", w_mel},         {"w_amp", w_amp},         {"w_phase_ip", w_phase_ip},
        {"w_phase_gd", w_phase_gd}, {"w_phase_iaf", w_phase_iaf}, {"w_complex", w_complex},
        {"w_time", w_time},       {"w_adv", w_adv},         {"w_fm", w_fm},
        {"w_metric", w_metric}};
    for (const auto& [name, v] : all)
      if (!std::isfinite(v) || v < 0) throw ConfigError(std::string("loss weight ") + name + " must be finite and >= 0");
  }
};

enum class AntiWrap { kLinear, kCosine };

inline const char* to_string(AntiWrap a) { return a == AntiWrap::kLinear ? "linear" : "cosine"; }
inline AntiWrap anti_wrap_from_string(const std::string& s) {
  if (s == "linear") return AntiWrap::kLinear;
  if (s == "cosine") return AntiWrap::kCosine;
  throw ConfigError("unknown anti-wrap form: " + s);
}

// |x - 2*pi*round(x / 2*pi)|
inline double anti_wrap(double x) {
  constexpr double two_pi = 2 * std::numbers::pi;
  return std::abs(x - two_pi * std::round(x / two_pi));
}

template <typename T>
ad::Var<T> anti_wrap(const ad::Var<T>& x, AntiWrap form = AntiWrap::kLinear) {
  if (form == AntiWrap::kCosine) return ad::add_scalar(ad::neg(ad::cos(x)), T(1));
  constexpr T two_pi = static_cast<T>(2 * std::numbers::pi);
  return ad::detail::unary(
      x, [](T v) { return std::abs(v - two_pi * std::round(v / two_pi)); },
      [](T v, T) {
        const T r = v - two_pi * std::round(v / two_pi);
        return r > 0 ? T(1) : (r < 0 ? T(-1) : T(0));
      });
}

template <typename T>
struct PhaseLosses {
  ad::Var<T> ip, gd, iaf;
};

// Phase arrays are [frames, bins]: gd differences along bins, iaf along frames.
template <typename T>
PhaseLosses<T> phase_losses(const ad::Var<T>& pred, const ad::Var<T>& truth, AntiWrap form = AntiWrap::kLinear) {
  if (pred.shape() != truth.shape())
    throw MismatchError("phase_losses: shape " + ad::shape_str(pred.shape()) + " vs " + ad::shape_str(truth.shape()));
  if (pred.rank() != 2 || pred.dim(0) < 2 || pred.dim(1) < 2)
    throw InputError("phase_losses: need at least 2 frames and 2 bins");
  return {ad::mean(anti_wrap(ad::sub(pred, truth), form)),
          ad::mean(anti_wrap(ad::sub(ad::diff2d(pred, 1), ad::diff2d(truth, 1)), form)),
          ad::mean(anti_wrap(ad::sub(ad::diff2d(pred, 0), ad::diff2d(truth, 0)), form))};
}

template <typename T>
ad::Var<T> mse(const ad::Var<T>& a, const ad::Var<T>& b, const char* what = "mse") {
  if (a.shape() != b.shape())
    throw MismatchError(std::string(what) + ": shape " + ad::shape_str(a.shape()) + " vs " + ad::shape_str(b.shape()));
  return ad::mean(ad::square(ad::sub(a, b)));
}

template <typename T>
ad::Var<T> l1(const ad::Var<T>& a, const ad::Var<T>& b, const char* what = "l1") {
  if (a.shape() != b.shape())
    throw MismatchError(std::string(what) + ": shape " + ad::shape_str(a.shape()) + " vs " + ad::shape_str(b.shape()));
  return ad::mean(ad::abs(ad::sub(a, b)));
}

template <typename T>
ad::Var<T> amplitude_loss(const ad::Var<T>& pred_logamp, const ad::Var<T>& true_logamp) {
  return mse(pred_logamp, true_logamp, "amplitude_loss");
}

// Mean over both the real and imaginary planes.
template <typename T>
ad::Var<T> complex_l2(const dsp::ComplexVar<T>& a, const dsp::ComplexVar<T>& b) {
  return ad::scale(ad::add(mse(a.re, b.re, "complex_loss"), mse(a.im, b.im, "complex_loss")), T(0.5));
}

template <typename T>
struct ComplexLoss {
  ad::Var<T> complex;
  ad::Var<T> consistency;
  ad::Var<T> total() const { return ad::add(complex, consistency); }
};

// complex: L2 between pred and true spectra.
// consistency: L2 between pred and stft(istft(pred)).
template <typename T>
ComplexLoss<T> complex_and_consistency_loss(const dsp::ComplexVar<T>& pred, const dsp::ComplexVar<T>& truth,
                                            const dsp::StftConfig& cfg) {
  const int frames = pred.re.dim(0);
  if (frames < 2) throw InputError("complex loss: need at least 2 frames");
  const auto wave = dsp::istft_var(pred.re, pred.im, cfg, (frames - 1) * cfg.hop_length);
  const auto again = dsp::stft_var(wave, cfg);
  return {complex_l2(pred, truth), complex_l2(pred, again)};
}

template <typename T>
ComplexLoss<T> complex_and_consistency_loss(const ad::Var<T>& pred_amp, const ad::Var<T>& pred_phase,
                                            const ad::Var<T>& true_amp, const ad::Var<T>& true_phase,
                                            const dsp::StftConfig& pred_cfg, const dsp::StftConfig& true_cfg) {
  if (!(pred_cfg == true_cfg))
    throw MismatchError("complex loss: config " + pred_cfg.key() + " vs " + true_cfg.key());
  return complex_and_consistency_loss(dsp::polar_var(pred_amp, pred_phase), dsp::polar_var(true_amp, true_phase),
                                      pred_cfg);
}

// L1 between log-mel spectrograms of two waveforms.
template <typename T>
ad::Var<T> mel_loss(const ad::Var<T>& pred_wave, const ad::Var<T>& true_wave, const dsp::StftConfig& cfg,
                    const ad::Var<T>& fb_t) {
  auto mel_of = [&](const ad::Var<T>& w) {
    return dsp::log_mel_var(dsp::magnitude_var(dsp::stft_var(w, cfg)), fb_t);
  };
  return l1(mel_of(pred_wave), mel_of(true_wave), "mel_loss");
}

template <typename T>
ad::Var<T> time_loss(const ad::Var<T>& pred_wave, const ad::Var<T>& true_wave) {
  return l1(pred_wave, true_wave, "time_loss");
}

// Least-squares GAN over a list of discriminator heads.
template <typename T>
ad::Var<T> discriminator_loss(const std::vector<ad::Var<T>>& real, const std::vector<ad::Var<T>>& fake) {
  if (real.size() != fake.size() || real.empty()) throw MismatchError("discriminator_loss: output lists differ");
  std::vector<std::pair<T, ad::Var<T>>> terms;
  for (std::size_t i = 0; i < real.size(); ++i) {
    terms.emplace_back(T(1), ad::mean(ad::square(ad::add_scalar(ad::neg(real[i]), T(1)))));
    terms.emplace_back(T(1), ad::mean(ad::square(fake[i])));
  }
  return ad::weighted_sum(terms);
}

template <typename T>
ad::Var<T> generator_adv_loss(const std::vector<ad::Var<T>>& fake) {
  if (fake.empty()) throw MismatchError("generator_adv_loss: no outputs");
  std::vector<std::pair<T, ad::Var<T>>> terms;
  for (const auto& f : fake) terms.emplace_back(T(1), ad::mean(ad::square(ad::add_scalar(ad::neg(f), T(1)))));
  return ad::weighted_sum(terms);
}

// Real features act as fixed targets.
template <typename T>
ad::Var<T> feature_matching_loss(const std::vector<ad::Var<T>>& real, const std::vector<ad::Var<T>>& fake) {
  if (real.size() != fake.size() || real.empty()) throw MismatchError("feature_matching_loss: feature lists differ");
  std::vector<std::pair<T, ad::Var<T>>> terms;
  for (std::size_t i = 0; i < real.size(); ++i) terms.emplace_back(T(1), l1(fake[i], real[i].detach(), "feature_matching"));
  return ad::weighted_sum(terms);
}

template <typename T>
struct GanLosses {
  ad::Var<T> d_loss, g_adv, fm;
};

template <typename T>
GanLosses<T> gan_losses(const std::vector<ad::Var<T>>& d_real, const std::vector<ad::Var<T>>& d_fake,
                        const std::vector<ad::Var<T>>& feat_real, const std::vector<ad::Var<T>>& feat_fake) {
  return {discriminator_loss(d_real, d_fake), generator_adv_loss(d_fake), feature_matching_loss(feat_real, feat_fake)};
}

template <typename T>
ad::Var<T> metric_disc_loss(const ad::Var<T>& pred_score, const ad::Var<T>& target) {
  for (T t : target.value())
    if (!(t >= 0 && t <= 1)) throw InputError("metric_disc_loss: target outside [0, 1]");
  return mse(pred_score, target, "metric_disc_loss");
}

}  // namespace dnvoc::losses
