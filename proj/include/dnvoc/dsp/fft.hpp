// Copyright 2026 The dnvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <complex>
#include <vector>

#include <unsupported/Eigen/FFT>

namespace dnvoc::dsp {

// Half-spectrum real FFT of even length. Plans are cached per thread.
template <typename T>
class RealFft {
 public:
  // out[0 .. n/2] = sum_t in[t] e^{-j 2 pi k t / n}
  static void forward(const T* in, std::complex<T>* out, int n) {
    engine().fwd(out, in, n);
  }

  // out[t] = (1/n) * real inverse of the Hermitian extension of in[0 .. n/2].
  // Imaginary parts of the DC and Nyquist bins are ignored.
  static void inverse(const std::complex<T>* in, T* out, int n) {
    engine().inv(out, in, n);
  }

  // Unscaled complex inverse: out[t] = sum_k in[k] e^{+j 2 pi k t / n}.
  static void inverse_complex_unscaled(const std::complex<T>* in, std::complex<T>* out, int n) {
    auto& e = engine();
    e.inv(out, in, n);
    for (int i = 0; i < n; ++i) out[i] *= static_cast<T>(n);
  }

 private:
  static Eigen::FFT<T>& engine() {
    thread_local Eigen::FFT<T> fft = [] {
      Eigen::FFT<T> f;
      f.SetFlag(Eigen::FFT<T>::HalfSpectrum);
      return f;
    }();
    return fft;
  }
};

}  // namespace dnvoc::dsp
