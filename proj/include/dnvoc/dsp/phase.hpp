// Copyright 2026 The dnvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <vector>

#include "dnvoc/dsp/types.hpp"

namespace dnvoc::dsp {

// Projection onto the principal interval (-pi, pi]. Values already inside the
// interval are returned unchanged.
inline double wrap_phase(double x) {
  constexpr double pi = std::numbers::pi;
  if (x > -pi && x <= pi) return x;
  double y = x - 2.0 * pi * std::ceil((x - pi) / (2.0 * pi));
  if (y <= -pi) y += 2.0 * pi;
  if (y > pi) y -= 2.0 * pi;
  return y;
}

inline std::vector<double> wrap_phase(std::span<const double> x) {
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = wrap_phase(x[i]);
  return y;
}

// Angle of re + j*im in (-pi, pi]; 0 for the origin.
inline double principal_angle(double im, double re) {
  if (re == 0.0 && im == 0.0) return 0.0;
  return wrap_phase(std::atan2(im, re));
}

// Spectrum of clean + noise given each as amplitude/phase:
//   Y = Xa e^{j Xp} + Na e^{j Np}
// The phase is evaluated as Xp + Angle(1 + (Na/Xa) e^{j(Np - Xp)}), so it
// reduces to Xp exactly when Na == 0.
inline SpectralPair compose_noisy_phase(const SpectralPair& clean, const SpectralPair& noise) {
  if (!clean.amplitude.same_shape(noise.amplitude) || !clean.phase.same_shape(noise.phase) ||
      !clean.amplitude.same_shape(clean.phase))
    throw MismatchError("compose_noisy_phase: spectra have different shapes");
  if (!(clean.config == noise.config))
    throw MismatchError("compose_noisy_phase: spectra use different STFT configs");
  SpectralPair y{Array2D<double>(clean.frames(), clean.bins()),
                 Array2D<double>(clean.frames(), clean.bins()), clean.config};
  for (std::size_t i = 0; i < y.amplitude.data.size(); ++i) {
    const double xa = clean.amplitude.data[i], xp = clean.phase.data[i];
    const double na = noise.amplitude.data[i], np = noise.phase.data[i];
    if (xa > 0.0) {
      const double r = na / xa;
      const double d = np - xp;
      const double re = 1.0 + r * std::cos(d), im = r * std::sin(d);
      y.amplitude.data[i] = xa * std::hypot(re, im);
      y.phase.data[i] = na == 0.0 ? xp : wrap_phase(xp + std::atan2(im, re));
    } else {
      y.amplitude.data[i] = na;
      y.phase.data[i] = na > 0.0 ? wrap_phase(np) : 0.0;
    }
  }
  return y;
}

}  // namespace dnvoc::dsp
