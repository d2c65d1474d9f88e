// Copyright 2026 The dnvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Stage 2: magnitude/phase denoiser in the MP-SENet layout.
//   dense encoder -> N x (time conformer, frequency conformer) ->
//   bounded mask decoder (compressed amplitude) + phase decoder (atan2).
// Parameter names follow the reference PyTorch state_dict so that exported
// weights map one-to-one (see pipeline/import.hpp).

#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "dnvoc/core/errors.hpp"
#include "dnvoc/core/nn.hpp"
#include "dnvoc/dsp/diff.hpp"
#include "json.hpp"

namespace dnvoc::models {

struct EnhancerConfig {
  int n_fft = 400;
  double compress = 0.3;
  int channels = 64;
  int n_blocks = 4;
  double beta = 2.0;
  int heads = 4;
  int dense_depth = 4;
  int ffn_mult = 4;
  int conv_expansion = 2;
  int conv_kernel = 31;
  int max_rel_pos = 512;

  int bins() const { return n_fft / 2 + 1; }

  static EnhancerConfig full() { return {}; }
  static EnhancerConfig toy() {
    EnhancerConfig c;
    c.channels = 16;
    c.n_blocks = 1;
    return c;
  }

  void validate() const {
    if (n_fft < 8 || n_fft % 4) throw ConfigError("enhancer: n_fft must be a multiple of 4");
    if (!(compress > 0 && compress <= 1)) throw ConfigError("enhancer: compression exponent must be in (0, 1]");
    if (!(beta > 0)) throw ConfigError("enhancer: mask bound must be positive");
    if (channels < 1 || heads < 1 || channels % heads) throw ConfigError("enhancer: channels must divide into heads");
    if (n_blocks < 0 || dense_depth < 1 || ffn_mult < 1 || conv_expansion < 1 || max_rel_pos < 1)
      throw ConfigError("enhancer: bad layer sizes");
    if (conv_kernel < 1 || conv_kernel % 2 == 0) throw ConfigError("enhancer: conv_kernel must be odd");
  }

  bool operator==(const EnhancerConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const EnhancerConfig& c) {
  j = {{"n_fft", c.n_fft},           {"compress", c.compress},       {"channels", c.channels},
       {"n_blocks", c.n_blocks},     {"beta", c.beta},               {"heads", c.heads},
       {"dense_depth", c.dense_depth}, {"ffn_mult", c.ffn_mult},     {"conv_expansion", c.conv_expansion},
       {"conv_kernel", c.conv_kernel}, {"max_rel_pos", c.max_rel_pos}};
}

inline void from_json(const nlohmann::json& j, EnhancerConfig& c) {
  EnhancerConfig d;
  c.n_fft = j.value("n_fft", d.n_fft);
  c.compress = j.value("compress", d.compress);
  c.channels = j.value("channels", d.channels);
  c.n_blocks = j.value("n_blocks", d.n_blocks);
  c.beta = j.value("beta", d.beta);
  c.heads = j.value("heads", d.heads);
  c.dense_depth = j.value("dense_depth", d.dense_depth);
  c.ffn_mult = j.value("ffn_mult", d.ffn_mult);
  c.conv_expansion = j.value("conv_expansion", d.conv_expansion);
  c.conv_kernel = j.value("conv_kernel", d.conv_kernel);
  c.max_rel_pos = j.value("max_rel_pos", d.max_rel_pos);
}

template <typename T>
struct EnhancerVars {
  ad::Var<T> amplitude;  // [frames, bins]
  ad::Var<T> phase;
  ad::Var<T> compressed;  // mask * A^c
};

namespace detail {

// conv -> InstanceNorm -> PReLU, registered as name.0 / name.1 / name.2
template <typename T>
struct ConvNormAct {
  nn::Conv2d<T> conv;
  nn::InstanceNorm<T> norm;
  nn::PReLU<T> act;

  ConvNormAct() = default;
  ConvNormAct(nn::ParamSet<T>& ps, const std::string& name, int cin, int cout, int kh, int kw, nn::Rng& rng,
              ad::Conv2dOpts o = {})
      : conv(ps, name + ".0", cin, cout, kh, kw, rng, o), norm(ps, name + ".1", cout), act(ps, name + ".2", cout) {}

  ad::Var<T> operator()(const ad::Var<T>& x) const { return act(norm(conv(x))); }
};

// Densely connected 3x3 convs with time dilation 2^i; each layer sees the
// concatenation of all previous outputs and the input.
template <typename T>
struct DenseBlock {
  std::vector<ConvNormAct<T>> layers;

  DenseBlock() = default;
  DenseBlock(nn::ParamSet<T>& ps, const std::string& name, int ch, int depth, nn::Rng& rng) {
    for (int i = 0; i < depth; ++i) {
      const int dil = 1 << i;
      ad::Conv2dOpts o;
      o.dil_h = dil;
      o.pad_top = o.pad_bottom = dil;
      o.pad_left = o.pad_right = 1;
      layers.emplace_back(ps, name + ".dense_block." + std::to_string(i), ch * (i + 1), ch, 3, 3, rng, o);
    }
  }

  ad::Var<T> operator()(const ad::Var<T>& x) const {
    ad::Var<T> skip = x, out;
    for (const auto& l : layers) {
      out = l(skip);
      skip = ad::concat0<T>({out, skip});
    }
    return out;
  }
};

template <typename T>
struct FeedForward {
  nn::LayerNorm<T> norm;
  nn::Linear<T> up, down;

  FeedForward() = default;
  FeedForward(nn::ParamSet<T>& ps, const std::string& name, int dim, int mult, nn::Rng& rng)
      : norm(ps, name + ".fn.norm", dim),
        up(ps, name + ".fn.fn.net.0", dim, dim * mult, rng),
        down(ps, name + ".fn.fn.net.3", dim * mult, dim, rng) {}

  ad::Var<T> operator()(const ad::Var<T>& x) const { return down(ad::silu(up(norm(x)))); }
};

template <typename T>
struct Attention {
  nn::LayerNorm<T> norm;
  nn::Linear<T> to_q, to_kv, to_out;
  ad::Var<T> rel;
  int heads = 1, max_pos = 1, inner = 1;

  Attention() = default;
  Attention(nn::ParamSet<T>& ps, const std::string& name, int dim, int h, int max_rel, nn::Rng& rng)
      : norm(ps, name + ".norm", dim),
        to_q(ps, name + ".fn.to_q", dim, dim, rng, false),
        to_kv(ps, name + ".fn.to_kv", dim, 2 * dim, rng, false),
        to_out(ps, name + ".fn.to_out", dim, dim, rng),
        heads(h),
        max_pos(max_rel),
        inner(dim) {
    rel = ps.normal(name + ".fn.rel_pos_emb.weight", {2 * max_rel + 1, dim / h}, 1.0, rng);
  }

  // x [B, N, C]
  ad::Var<T> operator()(const ad::Var<T>& x) const {
    auto h = norm(x);
    auto q = to_q(h);
    auto kv = to_kv(h);  // [B, N, 2C]: k then v along the last axis
    const int B = x.dim(0), N = x.dim(1);
    auto kv2 = ad::permute(ad::reshape(kv, {B * N, 2, inner}), {1, 0, 2});
    auto k = ad::reshape(ad::slice0(kv2, 0, 1), {B, N, inner});
    auto v = ad::reshape(ad::slice0(kv2, 1, 1), {B, N, inner});
    return to_out(ad::relative_attention(q, k, v, rel, heads, max_pos));
  }
};

// LayerNorm -> pointwise (GLU) -> depthwise -> per-channel affine -> SiLU ->
// pointwise. The affine stands in for BatchNorm at inference statistics.
template <typename T>
struct ConvModule {
  nn::LayerNorm<T> norm;
  nn::Linear<T> pw1, pw2;
  ad::Var<T> dw_w, dw_b, bn_scale, bn_shift;

  ConvModule() = default;
  ConvModule(nn::ParamSet<T>& ps, const std::string& name, int dim, int expansion, int kernel, nn::Rng& rng)
      : norm(ps, name + ".net.0", dim), pw1(ps, name + ".net.2", dim, 2 * dim * expansion, rng) {
    const int inner = dim * expansion;
    const double bound = 1.0 / std::sqrt(static_cast<double>(kernel));
    dw_w = ps.uniform(name + ".net.4.conv.weight", {inner, kernel}, bound, rng);
    dw_b = ps.uniform(name + ".net.4.conv.bias", {inner}, bound, rng);
    bn_scale = ps.constant(name + ".net.5.weight", {inner}, T(1));
    bn_shift = ps.constant(name + ".net.5.bias", {inner}, T(0));
    pw2 = nn::Linear<T>(ps, name + ".net.7", inner, dim, rng);
  }

  ad::Var<T> operator()(const ad::Var<T>& x) const {
    auto h = ad::glu_last(pw1(norm(x)));
    h = ad::depthwise_seq_conv(h, dw_w, dw_b);
    h = ad::add_axis(ad::mul_axis(h, bn_scale, 2), bn_shift, 2);
    return pw2(ad::silu(h));
  }
};

template <typename T>
struct Conformer {
  FeedForward<T> ff1, ff2;
  Attention<T> attn;
  ConvModule<T> conv;
  nn::LayerNorm<T> post_norm;

  Conformer() = default;
  Conformer(nn::ParamSet<T>& ps, const std::string& name, const EnhancerConfig& c, nn::Rng& rng)
      : ff1(ps, name + ".ff1", c.channels, c.ffn_mult, rng),
        ff2(ps, name + ".ff2", c.channels, c.ffn_mult, rng),
        attn(ps, name + ".attn", c.channels, c.heads, c.max_rel_pos, rng),
        conv(ps, name + ".conv", c.channels, c.conv_expansion, c.conv_kernel, rng),
        post_norm(ps, name + ".post_norm", c.channels) {}

  ad::Var<T> operator()(ad::Var<T> x) const {
    x = ad::add(ad::scale(ff1(x), T(0.5)), x);
    x = ad::add(attn(x), x);
    x = ad::add(conv(x), x);
    x = ad::add(ad::scale(ff2(x), T(0.5)), x);
    return post_norm(x);
  }
};

// [C, T, F] -> conformer over T for each F, then over F for each T.
template <typename T>
struct TSConformer {
  Conformer<T> time, freq;

  TSConformer(nn::ParamSet<T>& ps, const std::string& name, const EnhancerConfig& c, nn::Rng& rng)
      : time(ps, name + ".time_conformer", c, rng), freq(ps, name + ".freq_conformer", c, rng) {}

  ad::Var<T> operator()(const ad::Var<T>& x) const {
    auto h = ad::permute(x, {2, 1, 0});  // [F, T, C]
    h = ad::add(time(h), h);
    h = ad::permute(h, {1, 0, 2});  // [T, F, C]
    h = ad::add(freq(h), h);
    return ad::permute(h, {2, 0, 1});
  }
};

}  // namespace detail

template <typename T>
class Enhancer {
 public:
  explicit Enhancer(const EnhancerConfig& cfg, std::uint64_t seed = 0) : cfg_(cfg) {
    cfg_.validate();
    nn::Rng rng(seed);
    const int C = cfg_.channels;
    ad::Conv2dOpts down;
    down.stride_w = 2;
    enc_in_ = detail::ConvNormAct<T>(params_, "dense_encoder.dense_conv_1", 2, C, 1, 1, rng);
    enc_block_ = detail::DenseBlock<T>(params_, "dense_encoder.dense_block", C, cfg_.dense_depth, rng);
    enc_out_ = detail::ConvNormAct<T>(params_, "dense_encoder.dense_conv_2", C, C, 1, 3, rng, down);
    for (int i = 0; i < cfg_.n_blocks; ++i)
      blocks_.emplace_back(params_, "TSConformer." + std::to_string(i), cfg_, rng);

    mask_block_ = detail::DenseBlock<T>(params_, "mask_decoder.dense_block", C, cfg_.dense_depth, rng);
    mask_up_ = nn::ConvTranspose2d<T>(params_, "mask_decoder.mask_conv.0", C, C, 1, 3, 1, 2, rng);
    mask_proj_ = nn::Conv2d<T>(params_, "mask_decoder.mask_conv.1", C, 1, 1, 1, rng);
    mask_norm_ = nn::InstanceNorm<T>(params_, "mask_decoder.mask_conv.2", 1);
    mask_act_ = nn::PReLU<T>(params_, "mask_decoder.mask_conv.3", 1);
    mask_out_ = nn::Conv2d<T>(params_, "mask_decoder.mask_conv.4", 1, 1, 1, 1, rng);
    slope_ = params_.constant("mask_decoder.lsigmoid.slope", {cfg_.bins()}, T(1));

    phase_block_ = detail::DenseBlock<T>(params_, "phase_decoder.dense_block", C, cfg_.dense_depth, rng);
    phase_up_ = nn::ConvTranspose2d<T>(params_, "phase_decoder.phase_conv.0", C, C, 1, 3, 1, 2, rng);
    phase_norm_ = nn::InstanceNorm<T>(params_, "phase_decoder.phase_conv.1", C);
    phase_act_ = nn::PReLU<T>(params_, "phase_decoder.phase_conv.2", C);
    phase_r_ = nn::Conv2d<T>(params_, "phase_decoder.phase_conv_r", C, 1, 1, 1, rng);
    phase_i_ = nn::Conv2d<T>(params_, "phase_decoder.phase_conv_i", C, 1, 1, 1, rng);
  }

  Enhancer(const Enhancer&) = delete;
  Enhancer& operator=(const Enhancer&) = delete;

  // amplitude, phase: [frames, bins], amplitude uncompressed
  EnhancerVars<T> forward(const ad::Var<T>& amplitude, const ad::Var<T>& phase) const {
    const int bins = cfg_.bins();
    if (amplitude.rank() != 2 || amplitude.dim(1) != bins || amplitude.shape() != phase.shape())
      throw MismatchError("enhancer: expected [frames, " + std::to_string(bins) + "] spectra, got " +
                          ad::shape_str(amplitude.shape()) + " / " + ad::shape_str(phase.shape()));
    const int frames = amplitude.dim(0);
    auto mag_c = ad::pow(amplitude, static_cast<T>(cfg_.compress));
    auto x = ad::concat0<T>({ad::reshape(mag_c, {1, frames, bins}), ad::reshape(phase, {1, frames, bins})});
    x = enc_out_(enc_block_(enc_in_(x)));
    for (const auto& b : blocks_) x = b(x);

    auto m = mask_block_(x);
    m = mask_out_(mask_act_(mask_norm_(mask_proj_(mask_up_(m)))));  // [1, T, F]
    auto mask = ad::scale(ad::sigmoid(ad::mul_axis(ad::reshape(m, {frames, bins}), slope_, 1)),
                          static_cast<T>(cfg_.beta));
    auto compressed = ad::mul(mask, mag_c);
    auto amp = ad::pow(compressed, static_cast<T>(1.0 / cfg_.compress));

    auto p = phase_act_(phase_norm_(phase_up_(phase_block_(x))));
    auto ph = ad::atan2(ad::reshape(phase_i_(p), {frames, bins}), ad::reshape(phase_r_(p), {frames, bins}));
    return {amp, ph, compressed};
  }

  dsp::SpectralPair infer(const dsp::SpectralPair& noisy) const {
    noisy.validate();
    if (noisy.config.n_fft != cfg_.n_fft)
      throw MismatchError("enhancer: spectrum uses " + noisy.config.key() + ", model expects n_fft " +
                          std::to_string(cfg_.n_fft));
    ad::NoGradGuard guard;
    auto out = forward(dsp::array_var<T>(noisy.amplitude), dsp::array_var<T>(noisy.phase));
    return {dsp::to_array(out.amplitude), dsp::to_array(out.phase), noisy.config};
  }

  const EnhancerConfig& config() const { return cfg_; }
  nn::ParamSet<T>& params() { return params_; }
  const nn::ParamSet<T>& params() const { return params_; }

 private:
  EnhancerConfig cfg_;
  nn::ParamSet<T> params_;
  detail::ConvNormAct<T> enc_in_, enc_out_;
  detail::DenseBlock<T> enc_block_, mask_block_, phase_block_;
  std::vector<detail::TSConformer<T>> blocks_;
  nn::ConvTranspose2d<T> mask_up_, phase_up_;
  nn::Conv2d<T> mask_proj_, mask_out_, phase_r_, phase_i_;
  nn::InstanceNorm<T> mask_norm_, phase_norm_;
  nn::PReLU<T> mask_act_, phase_act_;
  ad::Var<T> slope_;
};

inline dsp::Waveform enhancer_reconstruct(const dsp::SpectralPair& out, const dsp::StftConfig& cfg,
                                          std::optional<int> length = std::nullopt) {
  if (!(out.config == cfg)) throw MismatchError("enhancer_reconstruct: spectrum config " + out.config.key() +
                                               " vs " + cfg.key());
  return dsp::istft(out, length);
}

}  // namespace dnvoc::models
