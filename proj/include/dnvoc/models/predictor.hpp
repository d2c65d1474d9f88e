// Copyright 2026 The dnvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Stage 1: mel-spectrogram -> log-amplitude and phase spectra at frame rate.
// Two parallel streams (ASP, PSP) of stride-1 1-D convolutions over frames.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dnvoc/core/errors.hpp"
#include "dnvoc/core/nn.hpp"
#include "dnvoc/dsp/diff.hpp"
#include "json.hpp"

namespace dnvoc::models {

enum class Backbone { kResNet, kConvNeXtV2 };

inline const char* to_string(Backbone b) { return b == Backbone::kResNet ? "resnet" : "convnext_v2"; }
inline Backbone backbone_from_string(const std::string& s) {
  if (s == "resnet") return Backbone::kResNet;
  if (s == "convnext_v2") return Backbone::kConvNeXtV2;
  throw ConfigError("unknown predictor backbone: " + s);
}

struct PredictorConfig {
  int n_mels = 80;
  int hidden = 512;
  int n_resblocks = 1;  // stacked multi-receptive-field stages per stream
  std::vector<int> kernels{3, 7, 11};
  std::vector<int> dilations{1, 3, 5};
  int output_bins = 513;
  int io_kernel = 7;
  Backbone backbone = Backbone::kResNet;
  int convnext_blocks = 8;
  int convnext_mult = 3;

  static PredictorConfig full() { return {}; }
  static PredictorConfig toy() {
    PredictorConfig c;
    c.hidden = 128;
    return c;
  }

  void validate() const {
    if (n_mels <= 0 || hidden <= 0 || output_bins <= 1) throw ConfigError("predictor: sizes must be positive");
    if (n_resblocks < 1 || kernels.empty() || dilations.empty()) throw ConfigError("predictor: empty residual stack");
    for (int k : kernels)
      if (k < 1 || k % 2 == 0) throw ConfigError("predictor: kernel sizes must be odd");
    for (int d : dilations)
      if (d < 1) throw ConfigError("predictor: dilations must be >= 1");
    if (io_kernel < 1 || io_kernel % 2 == 0) throw ConfigError("predictor: io_kernel must be odd");
    if (backbone == Backbone::kConvNeXtV2 && (convnext_blocks < 1 || convnext_mult < 1))
      throw ConfigError("predictor: bad convnext sizes");
  }

  // Frames on each side of an output frame that can influence it; -1 when
  // every frame does (GRN pools over time).
  int receptive_radius() const {
    if (backbone == Backbone::kConvNeXtV2) return -1;
    int r = 2 * (io_kernel / 2);
    int widest = 0;
    for (int k : kernels) {
      int s = 0;
      for (int d : dilations) s += (k / 2) * d + k / 2;
      widest = std::max(widest, s);
    }
    return r + n_resblocks * widest;
  }

  bool operator==(const PredictorConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const PredictorConfig& c) {
  j = {{"n_mels", c.n_mels},           {"hidden", c.hidden},
       {"n_resblocks", c.n_resblocks}, {"kernels", c.kernels},
       {"dilations", c.dilations},     {"output_bins", c.output_bins},
       {"io_kernel", c.io_kernel},     {"backbone", to_string(c.backbone)},
       {"convnext_blocks", c.convnext_blocks}, {"convnext_mult", c.convnext_mult}};
}

inline void from_json(const nlohmann::json& j, PredictorConfig& c) {
  PredictorConfig d;
  c.n_mels = j.value("n_mels", d.n_mels);
  c.hidden = j.value("hidden", d.hidden);
  c.n_resblocks = j.value("n_resblocks", d.n_resblocks);
  c.kernels = j.value("kernels", d.kernels);
  c.dilations = j.value("dilations", d.dilations);
  c.output_bins = j.value("output_bins", d.output_bins);
  c.io_kernel = j.value("io_kernel", d.io_kernel);
  c.backbone = backbone_from_string(j.value("backbone", std::string(to_string(d.backbone))));
  c.convnext_blocks = j.value("convnext_blocks", d.convnext_blocks);
  c.convnext_mult = j.value("convnext_mult", d.convnext_mult);
}

template <typename T>
struct PredictorVars {
  ad::Var<T> log_amplitude;  // [frames, bins]
  ad::Var<T> phase;          // [frames, bins]
};

struct PredictorOutput {
  dsp::Array2D<double> log_amplitude;
  dsp::Array2D<double> phase;
};

namespace detail {

// HiFi-GAN style residual block: pairs of (dilated conv, conv) with a skip.
template <typename T>
struct ResBlock {
  std::vector<nn::Conv1d<T>> c1, c2;

  ResBlock(nn::ParamSet<T>& ps, const std::string& name, int ch, int k, const std::vector<int>& dil, nn::Rng& rng) {
    for (std::size_t i = 0; i < dil.size(); ++i) {
      c1.emplace_back(ps, name + ".convs1." + std::to_string(i), ch, ch, k, rng, nn::Conv1d<T>::same(k, dil[i]),
                      nn::Init::kNormal001);
      c2.emplace_back(ps, name + ".convs2." + std::to_string(i), ch, ch, k, rng, nn::Conv1d<T>::same(k, 1),
                      nn::Init::kNormal001);
    }
  }

  ad::Var<T> operator()(ad::Var<T> x) const {
    for (std::size_t i = 0; i < c1.size(); ++i) {
      auto h = c2[i](ad::leaky_relu(c1[i](ad::leaky_relu(x))));
      x = ad::add(h, x);
    }
    return x;
  }
};

// Mean over parallel residual blocks with different kernel sizes.
template <typename T>
struct Mrf {
  std::vector<ResBlock<T>> branches;

  Mrf(nn::ParamSet<T>& ps, const std::string& name, const PredictorConfig& c, nn::Rng& rng) {
    for (std::size_t j = 0; j < c.kernels.size(); ++j)
      branches.emplace_back(ps, name + ".resblocks." + std::to_string(j), c.hidden, c.kernels[j], c.dilations, rng);
  }

  ad::Var<T> operator()(const ad::Var<T>& x) const {
    std::vector<std::pair<T, ad::Var<T>>> terms;
    const T w = T(1) / static_cast<T>(branches.size());
    for (const auto& b : branches) terms.emplace_back(w, b(x));
    return ad::weighted_sum(terms);
  }
};

// ConvNeXt v2 block on [C, T]: depthwise conv, LayerNorm, MLP with GELU and
// global response normalization, residual.
template <typename T>
struct ConvNeXtBlock {
  nn::Conv1d<T> dw;
  nn::LayerNorm<T> norm;
  nn::Linear<T> pw1, pw2;
  ad::Var<T> grn_gamma, grn_beta;

  ConvNeXtBlock(nn::ParamSet<T>& ps, const std::string& name, int ch, int mult, nn::Rng& rng)
      : dw(ps, name + ".dwconv", ch, ch, 7, rng, {1, 1, 3, 3, ch}),
        norm(ps, name + ".norm", ch),
        pw1(ps, name + ".pwconv1", ch, ch * mult, rng),
        pw2(ps, name + ".pwconv2", ch * mult, ch, rng) {
    grn_gamma = ps.constant(name + ".grn.gamma", {ch * mult}, T(0));
    grn_beta = ps.constant(name + ".grn.beta", {ch * mult}, T(0));
  }

  ad::Var<T> operator()(const ad::Var<T>& x) const {
    auto h = ad::transpose2d(dw(x));  // [T, C]
    h = ad::gelu(pw1(norm(h)));
    const int width = h.dim(1);
    auto gx = ad::sqrt(ad::add_scalar(ad::sum_rows(ad::square(h)), T(1e-12)));  // [width]
    auto inv_mean = ad::pow(ad::add_scalar(ad::scale(ad::sum(gx), T(1) / static_cast<T>(width)), T(1e-6)), T(-1));
    auto nx = ad::reshape(ad::matmul(ad::reshape(gx, {width, 1}), ad::reshape(inv_mean, {1, 1})), {width});
    auto g = ad::add(ad::add_axis(ad::mul_axis(ad::mul_axis(h, nx, 1), grn_gamma, 1), grn_beta, 1), h);
    return ad::add(x, ad::transpose2d(pw2(g)));
  }
};

template <typename T>
struct Stream {
  nn::Conv1d<T> input;
  std::vector<Mrf<T>> stages;
  nn::LayerNorm<T> pre_norm, post_norm;
  std::vector<ConvNeXtBlock<T>> blocks;
  Backbone backbone;

  Stream(nn::ParamSet<T>& ps, const std::string& name, const PredictorConfig& c, nn::Rng& rng)
      : input(ps, name + ".input_conv", c.n_mels, c.hidden, c.io_kernel, rng, nn::Conv1d<T>::same(c.io_kernel),
              nn::Init::kNormal001),
        backbone(c.backbone) {
    if (backbone == Backbone::kResNet) {
      for (int s = 0; s < c.n_resblocks; ++s) stages.emplace_back(ps, name + ".mrf." + std::to_string(s), c, rng);
    } else {
      pre_norm = nn::LayerNorm<T>(ps, name + ".norm_in", c.hidden);
      for (int b = 0; b < c.convnext_blocks; ++b)
        blocks.emplace_back(ps, name + ".convnext." + std::to_string(b), c.hidden, c.convnext_mult, rng);
      post_norm = nn::LayerNorm<T>(ps, name + ".norm_out", c.hidden);
    }
  }

  // [n_mels, T] -> [hidden, T]
  ad::Var<T> operator()(const ad::Var<T>& mel) const {
    auto h = input(mel);
    if (backbone == Backbone::kResNet) {
      for (const auto& s : stages) h = s(h);
      return h;
    }
    h = ad::transpose2d(pre_norm(ad::transpose2d(h)));
    for (const auto& b : blocks) h = b(h);
    return ad::transpose2d(post_norm(ad::transpose2d(h)));
  }
};

}  // namespace detail

template <typename T>
class Predictor {
 public:
  explicit Predictor(const PredictorConfig& cfg, std::uint64_t seed = 0) : cfg_(cfg) {
    cfg_.validate();
    nn::Rng rng(seed);
    asp_.emplace_back(params_, "asp", cfg_, rng);
    asp_out_ = nn::Conv1d<T>(params_, "asp.output_conv", cfg_.hidden, cfg_.output_bins, cfg_.io_kernel, rng,
                             nn::Conv1d<T>::same(cfg_.io_kernel), nn::Init::kNormal001);
    psp_.emplace_back(params_, "psp", cfg_, rng);
    psp_r_ = nn::Conv1d<T>(params_, "psp.output_r_conv", cfg_.hidden, cfg_.output_bins, cfg_.io_kernel, rng,
                           nn::Conv1d<T>::same(cfg_.io_kernel), nn::Init::kNormal001);
    psp_i_ = nn::Conv1d<T>(params_, "psp.output_i_conv", cfg_.hidden, cfg_.output_bins, cfg_.io_kernel, rng,
                           nn::Conv1d<T>::same(cfg_.io_kernel), nn::Init::kNormal001);
  }

  Predictor(const Predictor&) = delete;
  Predictor& operator=(const Predictor&) = delete;

  // mel [frames, n_mels]
  PredictorVars<T> forward(const ad::Var<T>& mel) const {
    if (mel.rank() != 2 || mel.dim(1) != cfg_.n_mels)
      throw MismatchError("predictor: expected [frames, " + std::to_string(cfg_.n_mels) + "] mel, got " +
                          ad::shape_str(mel.shape()));
    const auto x = ad::transpose2d(mel);
    auto logamp = asp_out_(ad::leaky_relu(asp_[0](x)));
    auto h = psp_[0](x);
    auto phase = ad::atan2(psp_i_(h), psp_r_(h));
    return {ad::transpose2d(logamp), ad::transpose2d(phase)};
  }

  PredictorOutput infer(const dsp::MelSpectrogram& mel) const {
    if (mel.n_mels != cfg_.n_mels || mel.values.cols != cfg_.n_mels)
      throw MismatchError("predictor: mel has " + std::to_string(mel.values.cols) + " bands, model expects " +
                          std::to_string(cfg_.n_mels));
    ad::NoGradGuard guard;
    auto out = forward(dsp::array_var<T>(mel.values));
    return {dsp::to_array(out.log_amplitude), dsp::to_array(out.phase)};
  }

  const PredictorConfig& config() const { return cfg_; }
  nn::ParamSet<T>& params() { return params_; }
  const nn::ParamSet<T>& params() const { return params_; }

 private:
  PredictorConfig cfg_;
  nn::ParamSet<T> params_;
  std::vector<detail::Stream<T>> asp_, psp_;
  nn::Conv1d<T> asp_out_, psp_r_, psp_i_;
};

// Differentiable spectrum -> waveform under the predictor STFT.
template <typename T>
ad::Var<T> predictor_waveform(const PredictorVars<T>& out, const dsp::StftConfig& cfg, int length) {
  if (out.log_amplitude.dim(1) != cfg.bins())
    throw MismatchError("predictor: " + std::to_string(out.log_amplitude.dim(1)) + " bins vs config " + cfg.key());
  const auto c = dsp::polar_var(ad::exp(out.log_amplitude), out.phase);
  return dsp::istft_var(c.re, c.im, cfg, length);
}

inline dsp::Waveform predictor_reconstruct(const PredictorOutput& out, const dsp::StftConfig& cfg,
                                           std::optional<int> length = std::nullopt) {
  if (out.log_amplitude.cols != cfg.bins() || !out.log_amplitude.same_shape(out.phase))
    throw MismatchError("predictor_reconstruct: spectrum shape does not match config " + cfg.key());
  dsp::SpectralPair s{out.log_amplitude, out.phase, cfg};
  for (auto& v : s.amplitude.data) v = std::exp(v);
  return dsp::istft(s, length);
}

}  // namespace dnvoc::models
