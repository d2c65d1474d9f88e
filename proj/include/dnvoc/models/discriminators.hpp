// Copyright 2026 The dnvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Adversarial critics.
//   MPD: period-folded 2-D views of the waveform (HiFi-GAN).
//   MRD: magnitude spectrograms at several STFT resolutions (UnivNet).
//   MSD: raw and average-pooled waveforms (HiFi-GAN), kept for the ablation.
//   MetricDiscriminator: regresses a [0, 1] quality score from a pair of
//   compressed magnitude spectra (MetricGAN / MP-SENet).

#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "dnvoc/core/errors.hpp"
#include "dnvoc/core/nn.hpp"
#include "dnvoc/dsp/diff.hpp"
#include "json.hpp"

namespace dnvoc::models {

enum class DiscVariant { kMrd, kMsd };

inline const char* to_string(DiscVariant v) { return v == DiscVariant::kMrd ? "mrd" : "msd"; }
inline DiscVariant disc_variant_from_string(const std::string& s) {
  if (s == "mrd") return DiscVariant::kMrd;
  if (s == "msd") return DiscVariant::kMsd;
  throw ConfigError("unknown discriminator variant: " + s);
}

struct Resolution {
  int n_fft, hop, win;
  bool operator==(const Resolution&) const = default;
};

struct DiscriminatorConfig {
  std::vector<int> periods{2, 3, 5, 7, 11};
  std::vector<Resolution> resolutions{{512, 128, 512}, {1024, 256, 1024}, {2048, 512, 2048}};
  DiscVariant variant = DiscVariant::kMrd;
  int width_div = 1;  // divides every channel count
  int metric_dim = 16;

  static DiscriminatorConfig full() { return {}; }
  static DiscriminatorConfig toy() {
    DiscriminatorConfig c;
    c.width_div = 8;
    c.metric_dim = 4;
    return c;
  }

  int sub_count() const {
    return static_cast<int>(periods.size()) +
           (variant == DiscVariant::kMrd ? static_cast<int>(resolutions.size()) : 3);
  }

  void validate() const {
    for (std::size_t i = 0; i < periods.size(); ++i) {
      if (periods[i] < 1) throw ConfigError("discriminators: periods must be >= 1");
      for (std::size_t j = 0; j < i; ++j)
        if (periods[i] == periods[j]) throw ConfigError("discriminators: periods must be distinct");
    }
    for (const auto& r : resolutions) dsp::StftConfig{r.n_fft, r.win, r.hop, dsp::WindowType::kHann, 16000, true}.validate();
    if (width_div < 1 || 32 % width_div || metric_dim < 1)
      throw ConfigError("discriminators: width_div must divide 32");
  }

  bool operator==(const DiscriminatorConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const DiscriminatorConfig& c) {
  nlohmann::json res = nlohmann::json::array();
  for (const auto& r : c.resolutions) res.push_back({r.n_fft, r.hop, r.win});
  j = {{"periods", c.periods},   {"resolutions", res},          {"variant", to_string(c.variant)},
       {"width_div", c.width_div}, {"metric_dim", c.metric_dim}};
}

inline void from_json(const nlohmann::json& j, DiscriminatorConfig& c) {
  DiscriminatorConfig d;
  c.periods = j.value("periods", d.periods);
  c.resolutions = d.resolutions;
  if (j.contains("resolutions")) {
    c.resolutions.clear();
    for (const auto& r : j.at("resolutions")) c.resolutions.push_back({r.at(0), r.at(1), r.at(2)});
  }
  c.variant = disc_variant_from_string(j.value("variant", std::string("mrd")));
  c.width_div = j.value("width_div", d.width_div);
  c.metric_dim = j.value("metric_dim", d.metric_dim);
}

template <typename T>
struct DiscOutput {
  std::vector<ad::Var<T>> scores;    // one score map per sub-discriminator
  std::vector<ad::Var<T>> features;  // every intermediate activation, flattened across subs
};

namespace detail {

constexpr double kDiscSlope = 0.1;

template <typename T>
struct PeriodDisc {
  int period;
  std::vector<nn::Conv2d<T>> convs;
  nn::Conv2d<T> post;

  PeriodDisc(nn::ParamSet<T>& ps, const std::string& name, int p, int div, nn::Rng& rng) : period(p) {
    const int ch[] = {1, 32 / div, 128 / div, 512 / div, 1024 / div, 1024 / div};
    for (int i = 0; i < 5; ++i) {
      ad::Conv2dOpts o;
      o.stride_h = i < 4 ? 3 : 1;
      o.pad_top = o.pad_bottom = 2;
      convs.emplace_back(ps, name + ".convs." + std::to_string(i), ch[i], ch[i + 1], 5, 1, rng, o);
    }
    ad::Conv2dOpts o;
    o.pad_top = o.pad_bottom = 1;
    post = nn::Conv2d<T>(ps, name + ".conv_post", ch[5], 1, 3, 1, rng, o);
  }

  void operator()(const ad::Var<T>& wave, DiscOutput<T>& out) const {
    const int L = static_cast<int>(wave.numel());
    const int pad = (period - L % period) % period;
    auto x = ad::reshape(wave, {1, L});
    if (pad) x = ad::reflect_pad_last(x, 0, pad);
    const int Lp = L + pad;
    x = ad::reshape(x, {1, Lp / period, period});
    for (const auto& c : convs) {
      x = ad::leaky_relu(c(x), static_cast<T>(kDiscSlope));
      out.features.push_back(x);
    }
    x = post(x);
    out.features.push_back(x);
    out.scores.push_back(x);
  }
};

template <typename T>
struct ResolutionDisc {
  dsp::StftConfig stft;
  std::vector<nn::Conv2d<T>> convs;
  nn::Conv2d<T> post;

  ResolutionDisc(nn::ParamSet<T>& ps, const std::string& name, const Resolution& r, int div, nn::Rng& rng)
      : stft{r.n_fft, r.win, r.hop, dsp::WindowType::kHann, 16000, true} {
    const int C = 32 / div;
    for (int i = 0; i < 4; ++i) {
      ad::Conv2dOpts o;
      o.stride_w = i == 0 ? 1 : 2;
      o.pad_top = o.pad_bottom = 1;
      o.pad_left = o.pad_right = 4;
      convs.emplace_back(ps, name + ".convs." + std::to_string(i), i == 0 ? 1 : C, C, 3, 9, rng, o);
    }
    ad::Conv2dOpts o3;
    o3.pad_top = o3.pad_bottom = o3.pad_left = o3.pad_right = 1;
    convs.emplace_back(ps, name + ".convs.4", C, C, 3, 3, rng, o3);
    post = nn::Conv2d<T>(ps, name + ".conv_post", C, 1, 3, 3, rng, o3);
  }

  void operator()(const ad::Var<T>& wave, DiscOutput<T>& out) const {
    auto mag = dsp::magnitude_var(dsp::stft_var(wave, stft));  // [frames, bins]
    auto x = ad::reshape(ad::transpose2d(mag), {1, stft.bins(), mag.dim(0)});  // [1, F, T]
    for (const auto& c : convs) {
      x = ad::leaky_relu(c(x), static_cast<T>(kDiscSlope));
      out.features.push_back(x);
    }
    x = post(x);
    out.features.push_back(x);
    out.scores.push_back(x);
  }
};

template <typename T>
struct ScaleDisc {
  std::vector<nn::Conv1d<T>> convs;
  nn::Conv1d<T> post;

  ScaleDisc(nn::ParamSet<T>& ps, const std::string& name, int div, nn::Rng& rng) {
    struct L {
      int cin, cout, k, s, g;
    };
    const int d = div;
    const L layers[] = {{1, 128 / d, 15, 1, 1},          {128 / d, 128 / d, 41, 2, 4},
                        {128 / d, 256 / d, 41, 2, 16},   {256 / d, 512 / d, 41, 4, 16},
                        {512 / d, 1024 / d, 41, 4, 16},  {1024 / d, 1024 / d, 41, 1, 16},
                        {1024 / d, 1024 / d, 5, 1, 1}};
    int i = 0;
    for (const auto& l : layers) {
      const int g = std::min(l.g, l.cin);
      convs.emplace_back(ps, name + ".convs." + std::to_string(i++), l.cin, l.cout, l.k, rng,
                         ad::Conv1dOpts{l.s, 1, l.k / 2, l.k / 2, g});
    }
    post = nn::Conv1d<T>(ps, name + ".conv_post", 1024 / d, 1, 3, rng, ad::Conv1dOpts{1, 1, 1, 1, 1});
  }

  void operator()(const ad::Var<T>& x1, DiscOutput<T>& out) const {
    auto x = x1;  // [1, L]
    for (const auto& c : convs) {
      x = ad::leaky_relu(c(x), static_cast<T>(kDiscSlope));
      out.features.push_back(x);
    }
    x = post(x);
    out.features.push_back(x);
    out.scores.push_back(x);
  }
};

}  // namespace detail

template <typename T>
class DiscriminatorSuite {
 public:
  explicit DiscriminatorSuite(const DiscriminatorConfig& cfg, std::uint64_t seed = 0) : cfg_(cfg) {
    cfg_.validate();
    nn::Rng rng(seed);
    for (std::size_t i = 0; i < cfg_.periods.size(); ++i)
      mpd_.emplace_back(params_, "mpd.discriminators." + std::to_string(i), cfg_.periods[i], cfg_.width_div, rng);
    if (cfg_.variant == DiscVariant::kMrd) {
      for (std::size_t i = 0; i < cfg_.resolutions.size(); ++i)
        mrd_.emplace_back(params_, "mrd.discriminators." + std::to_string(i), cfg_.resolutions[i], cfg_.width_div,
                          rng);
    } else {
      for (int i = 0; i < 3; ++i)
        msd_.emplace_back(params_, "msd.discriminators." + std::to_string(i), cfg_.width_div, rng);
    }
  }

  DiscriminatorSuite(const DiscriminatorSuite&) = delete;
  DiscriminatorSuite& operator=(const DiscriminatorSuite&) = delete;

  // wave: [L]. Short inputs are reflect/zero padded by the sub-discriminators.
  DiscOutput<T> operator()(const ad::Var<T>& wave) const {
    if (wave.rank() != 1 || wave.numel() < 2) throw InputError("discriminate: expected a waveform of length >= 2");
    DiscOutput<T> out;
    for (const auto& d : mpd_) d(wave, out);
    for (const auto& d : mrd_) d(wave, out);
    if (!msd_.empty()) {
      auto x = ad::reshape(wave, {1, static_cast<int>(wave.numel())});
      for (std::size_t i = 0; i < msd_.size(); ++i) {
        if (i > 0) x = ad::avg_pool1d(x, 4, 2, 2);
        msd_[i](x, out);
      }
    }
    return out;
  }

  const DiscriminatorConfig& config() const { return cfg_; }
  nn::ParamSet<T>& params() { return params_; }
  const nn::ParamSet<T>& params() const { return params_; }

 private:
  DiscriminatorConfig cfg_;
  nn::ParamSet<T> params_;
  std::vector<detail::PeriodDisc<T>> mpd_;
  std::vector<detail::ResolutionDisc<T>> mrd_;
  std::vector<detail::ScaleDisc<T>> msd_;
};

// Four strided conv blocks, global max pool, two linear layers and a sigmoid
// with a learnable slope.
template <typename T>
class MetricDiscriminator {
 public:
  static constexpr int kMinFrames = 32;  // four stride-2 stages leave a 2x2 map

  explicit MetricDiscriminator(int dim = 16, std::uint64_t seed = 0) {
    if (dim < 1) throw ConfigError("metric discriminator: dim must be positive");
    nn::Rng rng(seed);
    int cin = 2;
    for (int i = 0; i < 4; ++i) {
      const int cout = dim << i;
      ad::Conv2dOpts o;
      o.stride_h = o.stride_w = 2;
      o.pad_top = o.pad_bottom = o.pad_left = o.pad_right = 1;
      const std::string base = "layers." + std::to_string(3 * i);
      convs_.emplace_back(params_, base, cin, cout, 4, 4, rng, o, false);
      norms_.emplace_back(params_, "layers." + std::to_string(3 * i + 1), cout);
      acts_.emplace_back(params_, "layers." + std::to_string(3 * i + 2), cout);
      cin = cout;
    }
    fc1_ = nn::Linear<T>(params_, "layers.14", dim * 8, dim * 4, rng);
    act_ = nn::PReLU<T>(params_, "layers.16", dim * 4);
    fc2_ = nn::Linear<T>(params_, "layers.17", dim * 4, 1, rng);
    slope_ = params_.constant("layers.18.slope", {1}, T(1));
  }

  MetricDiscriminator(const MetricDiscriminator&) = delete;
  MetricDiscriminator& operator=(const MetricDiscriminator&) = delete;

  // Compressed magnitudes [frames, bins] -> score [1] in [0, 1]. Inputs
  // shorter than kMinFrames are zero-padded in time.
  ad::Var<T> operator()(const ad::Var<T>& a, const ad::Var<T>& b) const {
    if (a.rank() != 2 || a.shape() != b.shape())
      throw MismatchError("metric_discriminate: shapes " + ad::shape_str(a.shape()) + " vs " +
                          ad::shape_str(b.shape()));
    const int frames = a.dim(0), bins = a.dim(1);
    if (bins < kMinFrames) throw InputError("metric_discriminate: need at least 32 bins");
    auto pad = [&](const ad::Var<T>& v) {
      if (frames >= kMinFrames) return v;
      return ad::concat0<T>({v, ad::Var<T>::zeros({kMinFrames - frames, bins})});
    };
    const int rows = std::max(frames, kMinFrames);
    auto x = ad::concat0<T>({ad::reshape(pad(a), {1, rows, bins}), ad::reshape(pad(b), {1, rows, bins})});
    for (std::size_t i = 0; i < convs_.size(); ++i) x = acts_[i](norms_[i](convs_[i](x)));
    auto h = ad::reshape(ad::channel_max(x), {1, x.dim(0)});
    h = fc2_(ad::prelu(fc1_(h), act_.alpha, 1));
    return ad::reshape(ad::sigmoid(ad::mul(h, ad::reshape(slope_, {1, 1}))), {1});
  }

  nn::ParamSet<T>& params() { return params_; }
  const nn::ParamSet<T>& params() const { return params_; }

 private:
  nn::ParamSet<T> params_;
  std::vector<nn::Conv2d<T>> convs_;
  std::vector<nn::InstanceNorm<T>> norms_;
  std::vector<nn::PReLU<T>> acts_;
  nn::Linear<T> fc1_, fc2_;
  nn::PReLU<T> act_;
  ad::Var<T> slope_;
};

}  // namespace dnvoc::models
