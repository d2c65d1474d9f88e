// Copyright 2026 The dnvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Training loops for both stages. A Trainer owns the generator, the optional
// discriminator(s), both optimizers, the data RNG and the step counter; the
// stage-specific parts (forward pass, loss terms, discriminator objective)
// live in PredictorTask and EnhancerTask.
//
// Per step: draw batch_size random segments, run the generator once, update
// the discriminator on the detached outputs, then update the generator with
// the adversarial terms evaluated by the freshly updated discriminator.

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "dnvoc/data/corpus.hpp"
#include "dnvoc/dsp/diff.hpp"
#include "dnvoc/dsp/mel.hpp"
#include "dnvoc/losses/losses.hpp"
#include "dnvoc/metrics/pesq.hpp"
#include "dnvoc/metrics/quality.hpp"
#include "dnvoc/models/discriminators.hpp"
#include "dnvoc/models/enhancer.hpp"
#include "dnvoc/models/predictor.hpp"
#include "dnvoc/training/checkpoint.hpp"
#include "dnvoc/training/optim.hpp"
#include "json.hpp"

namespace dnvoc::training {

enum class Stage { kPredictor, kEnhancer };

inline const char* to_string(Stage s) { return s == Stage::kPredictor ? "predictor" : "enhancer"; }
inline Stage stage_from_string(const std::string& s) {
  if (s == "predictor") return Stage::kPredictor;
  if (s == "enhancer") return Stage::kEnhancer;
  throw ConfigError("unknown stage: " + s);
}

// Loss weights of the two backbone recipes; the paper does not restate them.
inline losses::LossWeights predictor_weights() {
  losses::LossWeights w;
  w.w_mel = 45;
  w.w_amp = 45;
  w.w_phase_ip = w.w_phase_gd = w.w_phase_iaf = 100;
  w.w_complex = 20;
  w.w_time = 0;
  w.w_adv = 1;
  w.w_fm = 1;
  w.w_metric = 0;
  return w;
}

inline losses::LossWeights enhancer_weights() {
  losses::LossWeights w;
  w.w_mel = 0;
  w.w_amp = 0.9;
  w.w_phase_ip = w.w_phase_gd = w.w_phase_iaf = 0.3;
  w.w_complex = 0.1;
  w.w_time = 0.2;
  w.w_adv = 0;
  w.w_fm = 0;
  w.w_metric = 0.05;
  return w;
}

struct TrainConfig {
  Stage stage = Stage::kPredictor;
  double lr_init = 2e-4;
  AdamWConfig adam;
  double lr_decay = 0.999;  // per epoch
  std::int64_t max_steps = 700000;
  int batch_size = 16;
  int segment = 8000;  // samples
  std::uint64_t seed = 1234;
  std::int64_t checkpoint_every = 5000;
  std::int64_t log_every = 100;
  losses::LossWeights weights = predictor_weights();
  losses::AntiWrap anti_wrap = losses::AntiWrap::kLinear;
  models::DiscriminatorConfig disc;
  int metric_dim = 16;

  static TrainConfig full(Stage s) {
    TrainConfig c;
    c.stage = s;
    if (s == Stage::kEnhancer) {
      c.batch_size = 4;
      c.segment = 32000;
      c.weights = enhancer_weights();
    }
    return c;
  }

  // Single-segment batches and narrow discriminators for CPU-sized runs.
  static TrainConfig toy(Stage s) {
    TrainConfig c = full(s);
    c.max_steps = 2000;
    c.batch_size = 1;
    c.segment = s == Stage::kPredictor ? 8000 : 16000;
    c.checkpoint_every = 500;
    c.log_every = 10;
    c.disc = models::DiscriminatorConfig::toy();
    c.metric_dim = 4;
    return c;
  }

  bool adversarial() const {
    return stage == Stage::kPredictor ? (weights.w_adv > 0 || weights.w_fm > 0) : weights.w_metric > 0;
  }

  void validate() const {
    if (!(lr_init > 0) || !std::isfinite(lr_init)) throw ConfigError("train: lr_init must be > 0");
    if (max_steps <= 0) throw ConfigError("train: max_steps must be > 0");
    if (batch_size < 1 || segment < 2) throw ConfigError("train: batch_size and segment must be positive");
    if (!(lr_decay > 0 && lr_decay <= 1)) throw ConfigError("train: lr_decay must be in (0, 1]");
    if (!(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1 && adam.eps > 0))
      throw ConfigError("train: bad AdamW coefficients");
    if (checkpoint_every < 0 || log_every < 0) throw ConfigError("train: cadences must be >= 0");
    weights.validate();
    disc.validate();
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  const auto& w = c.weights;
  j = {{"stage", to_string(c.stage)},
       {"lr_init", c.lr_init},
       {"betas", {c.adam.beta1, c.adam.beta2}},
       {"eps", c.adam.eps},
       {"weight_decay", c.adam.weight_decay},
       {"lr_decay", c.lr_decay},
       {"max_steps", c.max_steps},
       {"batch_size", c.batch_size},
       {"segment", c.segment},
       {"seed", c.seed},
       {"checkpoint_every", c.checkpoint_every},
       {"log_every", c.log_every},
       {"anti_wrap", losses::to_string(c.anti_wrap)},
       {"disc", c.disc},
       {"metric_dim", c.metric_dim},
       {"weights",
        {{"mel", w.w_mel}, {"amp", w.w_amp}, {"phase_ip", w.w_phase_ip}, {"phase_gd", w.w_phase_gd},
         {"phase_iaf", w.w_phase_iaf}, {"complex", w.w_complex}, {"time", w.w_time}, {"adv", w.w_adv},
         {"fm", w.w_fm}, {"metric", w.w_metric}}}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig::full(stage_from_string(j.value("stage", "predictor")));
  c.lr_init = j.value("lr_init", c.lr_init);
  if (j.contains("betas")) {
    c.adam.beta1 = j["betas"].at(0);
    c.adam.beta2 = j["betas"].at(1);
  }
  c.adam.eps = j.value("eps", c.adam.eps);
  c.adam.weight_decay = j.value("weight_decay", c.adam.weight_decay);
  c.lr_decay = j.value("lr_decay", c.lr_decay);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.segment = j.value("segment", c.segment);
  c.seed = j.value("seed", c.seed);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.log_every = j.value("log_every", c.log_every);
  c.anti_wrap = losses::anti_wrap_from_string(j.value("anti_wrap", std::string("linear")));
  if (j.contains("disc")) c.disc = j["disc"].get<models::DiscriminatorConfig>();
  c.metric_dim = j.value("metric_dim", c.metric_dim);
  if (j.contains("weights")) {
    const auto& w = j["weights"];
    auto& o = c.weights;
    o.w_mel = w.value("mel", o.w_mel);
    o.w_amp = w.value("amp", o.w_amp);
    o.w_phase_ip = w.value("phase_ip", o.w_phase_ip);
    o.w_phase_gd = w.value("phase_gd", o.w_phase_gd);
    o.w_phase_iaf = w.value("phase_iaf", o.w_phase_iaf);
    o.w_complex = w.value("complex", o.w_complex);
    o.w_time = w.value("time", o.w_time);
    o.w_adv = w.value("adv", o.w_adv);
    o.w_fm = w.value("fm", o.w_fm);
    o.w_metric = w.value("metric", o.w_metric);
  }
}

// Named, weighted loss terms; the generator objective is exactly their
// weighted sum.
template <typename T>
struct LossTerms {
  struct Term {
    std::string name;
    double weight;
    ad::Var<T> value;
    bool adversarial;
  };
  std::vector<Term> terms;

  void add(std::string name, double w, ad::Var<T> v, bool adversarial = false) {
    if (w != 0) terms.push_back({std::move(name), w, std::move(v), adversarial});
  }

  ad::Var<T> total() const {
    std::vector<std::pair<T, ad::Var<T>>> ws;
    for (const auto& t : terms) ws.emplace_back(static_cast<T>(t.weight), t.value);
    return ad::weighted_sum(ws);
  }

  // Weighted sum of the non-adversarial terms.
  double reconstruction() const {
    double s = 0;
    for (const auto& t : terms)
      if (!t.adversarial) s += t.weight * static_cast<double>(t.value.item());
    return s;
  }
};

struct StepStats {
  std::int64_t step = 0;  // 1-based index of the finished step
  double lr = 0;
  double reconstruction = 0;
  double generator = 0;
  std::optional<double> discriminator;
  std::vector<std::pair<std::string, double>> terms;  // unweighted, batch means

  nlohmann::json to_json(double wall) const {
    nlohmann::json l = nlohmann::json::object();
    for (const auto& [n, v] : terms) l[n] = v;
    nlohmann::json j{{"step", step}, {"lr", lr}, {"reconstruction", reconstruction}, {"generator", generator},
                     {"losses", l}, {"wall_time", wall}};
    if (discriminator) j["discriminator"] = *discriminator;
    return j;
  }
};

namespace detail {

inline void require_finite(double v, const std::string& what, std::int64_t step, const std::string& detail = "") {
  if (!std::isfinite(v))
    throw DivergenceError("step " + std::to_string(step) + ": non-finite " + what + (detail.empty() ? "" : " (" + detail + ")"));
}

template <typename T>
std::string describe(const LossTerms<T>& lt) {
  std::ostringstream os;
  for (const auto& t : lt.terms) os << t.name << "=" << t.value.item() << " ";
  return os.str();
}

template <typename T>
ad::Var<T> spectrum_var(const dsp::Array2D<double>& a) {
  return dsp::array_var<T>(a);
}

}  // namespace detail

// Stage 1: mel -> noisy amplitude/phase, trained against the NOISY waveform.
template <typename T>
class PredictorTask {
 public:
  static constexpr Stage kStage = Stage::kPredictor;
  using ModelConfig = models::PredictorConfig;

  struct Forward {
    dsp::Waveform target;
    ad::Var<T> target_wave;
    models::PredictorVars<T> out;
    ad::Var<T> wave;
  };

  PredictorTask(const ModelConfig& mcfg, const dsp::StftConfig& stft, const dsp::MelConfig& mel,
                const TrainConfig& tcfg)
      : stft_(stft), mel_(mel), tcfg_(tcfg), model_(mcfg, tcfg.seed) {
    stft_.validate();
    dsp::require_invertible(stft_);
    if (mcfg.output_bins != stft_.bins())
      throw ConfigError("predictor: output_bins " + std::to_string(mcfg.output_bins) + " vs STFT " + stft_.key());
    if (mcfg.n_mels != mel_.n_mels) throw ConfigError("predictor: n_mels differs from the mel config");
    fb_t_ = dsp::filterbank_var<T>(stft_, mel_);
    if (tcfg.adversarial()) disc_ = std::make_unique<models::DiscriminatorSuite<T>>(tcfg.disc, tcfg.seed + 1);
  }

  nlohmann::json model_json() const { return model_.config(); }
  const dsp::StftConfig& stft() const { return stft_; }
  const dsp::MelConfig& mel() const { return mel_; }
  models::Predictor<T>& model() { return model_; }
  nn::ParamSet<T>& gen_params() { return model_.params(); }
  nn::ParamSet<T>* disc_params() { return disc_ ? &disc_->params() : nullptr; }
  models::DiscriminatorSuite<T>* discriminator() { return disc_.get(); }

  Forward forward(const data::Segment& seg) const {
    Forward f;
    f.target = seg.noisy;
    f.target_wave = dsp::waveform_var<T>(seg.noisy);
    const auto mel = dsp::mel_spectrogram(seg.noisy, stft_, mel_);
    f.out = model_.forward(dsp::array_var<T>(mel.values));
    f.wave = models::predictor_waveform(f.out, stft_, static_cast<int>(seg.noisy.size()));
    return f;
  }

  ad::Var<T> disc_loss(const Forward& f) const {
    const auto real = (*disc_)(f.target_wave);
    const auto fake = (*disc_)(f.wave.detach());
    return losses::discriminator_loss(real.scores, fake.scores);
  }

  LossTerms<T> generator_terms(const Forward& f) const {
    const auto& w = tcfg_.weights;
    LossTerms<T> lt;
    const auto spec = dsp::stft(f.target, stft_);
    auto log_amp = spec.amplitude;
    for (auto& v : log_amp.data) v = std::log(v + dsp::kLogFloor);
    const auto true_phase = dsp::array_var<T>(spec.phase);
    lt.add("mel", w.w_mel, losses::mel_loss(f.wave, f.target_wave, stft_, fb_t_));
    lt.add("amp", w.w_amp, losses::amplitude_loss(f.out.log_amplitude, dsp::array_var<T>(log_amp)));
    const auto ph = losses::phase_losses(f.out.phase, true_phase, tcfg_.anti_wrap);
    lt.add("phase_ip", w.w_phase_ip, ph.ip);
    lt.add("phase_gd", w.w_phase_gd, ph.gd);
    lt.add("phase_iaf", w.w_phase_iaf, ph.iaf);
    if (w.w_complex != 0) {
      const auto pred = dsp::polar_var(ad::exp(f.out.log_amplitude), f.out.phase);
      const auto c = losses::complex_and_consistency_loss(pred, dsp::stft_var(f.target_wave, stft_), stft_);
      lt.add("complex", w.w_complex, c.complex);
      lt.add("consistency", w.w_complex, c.consistency);
    }
    if (disc_) {
      const auto real = (*disc_)(f.target_wave);
      const auto fake = (*disc_)(f.wave);
      lt.add("adv", w.w_adv, losses::generator_adv_loss(fake.scores), true);
      lt.add("fm", w.w_fm, losses::feature_matching_loss(real.features, fake.features), true);
    }
    return lt;
  }

 private:
  dsp::StftConfig stft_;
  dsp::MelConfig mel_;
  TrainConfig tcfg_;
  models::Predictor<T> model_;
  std::unique_ptr<models::DiscriminatorSuite<T>> disc_;
  ad::Var<T> fb_t_;
};

// Quality score in [0, 1] regressed by the metric discriminator.
using MetricScorer = std::function<std::optional<double>(const dsp::Waveform& clean, const dsp::Waveform& est)>;

// Normalized wideband PESQ when an adapter is configured; otherwise the
// clamped SSNR mapped from [-10, 35] dB onto [0, 1].
inline MetricScorer default_metric_scorer() {
  auto pesq = std::make_shared<metrics::PesqAdapter>(metrics::PesqAdapter::from_env());
  return [pesq](const dsp::Waveform& clean, const dsp::Waveform& est) -> std::optional<double> {
    if (pesq->configured()) {
      try {
        if (auto p = (*pesq)(clean, est)) return std::clamp((*p - 1.0) / 3.5, 0.0, 1.0);
      } catch (const Error&) {
        return std::nullopt;
      }
    }
    try {
      return (metrics::ssnr(clean, est) + 10.0) / 45.0;
    } catch (const Error&) {
      return std::nullopt;
    }
  };
}

// Stage 2: noisy amplitude/phase -> clean amplitude/phase.
template <typename T>
class EnhancerTask {
 public:
  static constexpr Stage kStage = Stage::kEnhancer;
  using ModelConfig = models::EnhancerConfig;

  struct Forward {
    dsp::Waveform clean;
    ad::Var<T> clean_wave;
    ad::Var<T> clean_c, clean_phase;  // compressed amplitude, phase
    models::EnhancerVars<T> out;
    ad::Var<T> wave;
  };

  EnhancerTask(const ModelConfig& mcfg, const dsp::StftConfig& stft, const dsp::MelConfig&, const TrainConfig& tcfg,
               MetricScorer scorer = default_metric_scorer())
      : stft_(stft), tcfg_(tcfg), model_(mcfg, tcfg.seed), scorer_(std::move(scorer)) {
    stft_.validate();
    dsp::require_invertible(stft_);
    if (mcfg.n_fft != stft_.n_fft)
      throw ConfigError("enhancer: n_fft " + std::to_string(mcfg.n_fft) + " vs STFT " + stft_.key());
    if (tcfg.adversarial()) metric_ = std::make_unique<models::MetricDiscriminator<T>>(tcfg.metric_dim, tcfg.seed + 1);
  }

  nlohmann::json model_json() const { return model_.config(); }
  const dsp::StftConfig& stft() const { return stft_; }
  models::Enhancer<T>& model() { return model_; }
  nn::ParamSet<T>& gen_params() { return model_.params(); }
  nn::ParamSet<T>* disc_params() { return metric_ ? &metric_->params() : nullptr; }
  models::MetricDiscriminator<T>* discriminator() { return metric_.get(); }

  Forward forward(const data::Segment& seg) const {
    Forward f;
    f.clean = seg.clean;
    f.clean_wave = dsp::waveform_var<T>(seg.clean);
    const auto noisy = dsp::stft(seg.noisy, stft_);
    auto clean = dsp::stft(seg.clean, stft_);
    for (auto& v : clean.amplitude.data) v = std::pow(v, model_.config().compress);
    f.clean_c = dsp::array_var<T>(clean.amplitude);
    f.clean_phase = dsp::array_var<T>(clean.phase);
    f.out = model_.forward(dsp::array_var<T>(noisy.amplitude), dsp::array_var<T>(noisy.phase));
    const auto c = dsp::polar_var(f.out.amplitude, f.out.phase);
    f.wave = dsp::istft_var(c.re, c.im, stft_, static_cast<int>(seg.clean.size()));
    return f;
  }

  // Real pairs score 1; (clean, enhanced) regresses onto the quality score.
  // Returns an undefined Var when the scorer has no value for this segment.
  ad::Var<T> disc_loss(const Forward& f) const {
    const auto score = scorer_(f.clean, dsp::to_waveform(f.wave, f.clean.sample_rate));
    if (!score) return {};
    const auto one = ad::Var<T>::scalar(T(1));
    const auto real = losses::metric_disc_loss((*metric_)(f.clean_c, f.clean_c), one);
    const auto fake = losses::metric_disc_loss((*metric_)(f.clean_c, f.out.compressed.detach()),
                                               ad::Var<T>::scalar(static_cast<T>(std::clamp(*score, 0.0, 1.0))));
    return ad::add(real, fake);
  }

  LossTerms<T> generator_terms(const Forward& f) const {
    const auto& w = tcfg_.weights;
    LossTerms<T> lt;
    lt.add("amp", w.w_amp, losses::mse(f.out.compressed, f.clean_c, "amplitude_loss"));
    const auto ph = losses::phase_losses(f.out.phase, f.clean_phase, tcfg_.anti_wrap);
    lt.add("phase_ip", w.w_phase_ip, ph.ip);
    lt.add("phase_gd", w.w_phase_gd, ph.gd);
    lt.add("phase_iaf", w.w_phase_iaf, ph.iaf);
    if (w.w_complex != 0) {
      const auto est = dsp::polar_var(f.out.compressed, f.out.phase);
      lt.add("complex", w.w_complex, losses::complex_l2(est, dsp::polar_var(f.clean_c, f.clean_phase)));
      // re-analysis of the synthesized waveform, compressed the same way
      const auto again = dsp::stft_var(f.wave, stft_);
      const auto mag = ad::pow(dsp::magnitude_var(again), static_cast<T>(model_.config().compress));
      const auto pha = ad::atan2(ad::add_scalar(again.im, T(1e-10)), ad::add_scalar(again.re, T(1e-5)));
      lt.add("consistency", w.w_complex, losses::complex_l2(est, dsp::polar_var(mag, pha)));
    }
    lt.add("time", w.w_time, losses::time_loss(f.wave, f.clean_wave));
    if (metric_)
      lt.add("metric", w.w_metric,
             losses::mse((*metric_)(f.clean_c, f.out.compressed), ad::Var<T>::scalar(T(1)), "metric_loss"), true);
    return lt;
  }

 private:
  dsp::StftConfig stft_;
  TrainConfig tcfg_;
  models::Enhancer<T> model_;
  std::unique_ptr<models::MetricDiscriminator<T>> metric_;
  MetricScorer scorer_;
};

template <typename T, typename Task>
class Trainer {
 public:
  using Log = std::function<void(const nlohmann::json&)>;

  template <typename... Extra>
  Trainer(std::vector<data::PairAudio> data, const typename Task::ModelConfig& mcfg, const dsp::StftConfig& stft,
          const dsp::MelConfig& mel, const TrainConfig& tcfg, Extra&&... extra)
      : cfg_((tcfg.validate(), tcfg)),
        data_(std::move(data)),
        task_(mcfg, stft, mel, tcfg, std::forward<Extra>(extra)...),
        gen_opt_(task_.gen_params(), tcfg.adam),
        rng_(tcfg.seed),
        start_(std::chrono::steady_clock::now()) {
    if (tcfg.stage != Task::kStage) throw ConfigError("train: stage does not match the trainer");
    if (data_.empty()) throw InputError("train: manifest is empty");
    for (const auto& p : data_)
      if (p.clean.size() != p.noisy.size() || p.clean.size() == 0)
        throw InputError("train: every pair needs equal, non-zero clean/noisy lengths");
    if (auto* d = task_.disc_params()) disc_opt_ = std::make_unique<AdamW<T>>(*d, tcfg.adam);
  }

  Task& task() { return task_; }
  const TrainConfig& config() const { return cfg_; }
  std::int64_t step_count() const { return step_; }
  std::string stage() const { return to_string(Task::kStage); }

  std::string config_hash() const {
    return training::config_hash(stage(), task_.model_json(), nlohmann::json(task_.stft()));
  }

  std::int64_t steps_per_epoch() const {
    return std::max<std::int64_t>(1, (static_cast<std::int64_t>(data_.size()) + cfg_.batch_size - 1) / cfg_.batch_size);
  }

  double current_lr() const {
    return lr_at(cfg_.lr_init, cfg_.lr_decay, static_cast<std::uint64_t>(step_ / steps_per_epoch()));
  }

  // Overrides the schedule (tests use 0 to check that updates are no-ops).
  void set_lr_override(std::optional<double> lr) { lr_override_ = lr; }

  data::Segment sample() {
    const auto idx = static_cast<std::size_t>(rng_() % data_.size());
    const auto seed = rng_();
    return data::random_segment(data_[idx].clean, data_[idx].noisy, static_cast<std::size_t>(cfg_.segment), seed);
  }

  // Discriminator half of a step; the generator is untouched.
  std::optional<double> discriminator_step(const std::vector<typename Task::Forward>& fwd, double lr) {
    if (!disc_opt_) return std::nullopt;
    auto& dp = *task_.disc_params();
    dp.zero_grad();
    double total = 0;
    int used = 0;
    for (const auto& f : fwd) {
      auto d = task_.disc_loss(f);
      if (!d.defined()) continue;
      detail::require_finite(d.item(), "discriminator loss", step_ + 1);
      ad::scale(d, static_cast<T>(1.0 / static_cast<double>(fwd.size()))).backward();
      total += d.item();
      ++used;
    }
    if (!used) return std::nullopt;
    disc_opt_->step(lr);
    return total / used;
  }

  // Generator half of a step; the discriminator is only read.
  void generator_step(const std::vector<typename Task::Forward>& fwd, double lr, StepStats& st) {
    auto& gp = task_.gen_params();
    gp.zero_grad();
    const double inv = 1.0 / static_cast<double>(fwd.size());
    for (const auto& f : fwd) {
      const auto lt = task_.generator_terms(f);
      const auto total = lt.total();
      detail::require_finite(total.item(), "generator loss", step_ + 1, detail::describe(lt));
      ad::scale(total, static_cast<T>(inv)).backward();
      st.generator += total.item() * inv;
      st.reconstruction += lt.reconstruction() * inv;
      if (st.terms.empty())
        for (const auto& t : lt.terms) st.terms.emplace_back(t.name, 0.0);
      for (std::size_t i = 0; i < lt.terms.size(); ++i) st.terms[i].second += lt.terms[i].value.item() * inv;
    }
    gen_opt_.step(lr);
  }

  std::vector<typename Task::Forward> forward_batch() {
    std::vector<typename Task::Forward> fwd;
    for (int b = 0; b < cfg_.batch_size; ++b) fwd.push_back(task_.forward(sample()));
    return fwd;
  }

  StepStats step() {
    const double lr = lr_override_ ? *lr_override_ : current_lr();
    const auto fwd = forward_batch();
    StepStats st;
    st.step = step_ + 1;
    st.lr = lr;
    st.discriminator = discriminator_step(fwd, lr);
    generator_step(fwd, lr, st);
    ++step_;
    return st;
  }

  // Runs until max_steps (or `steps` more). Checkpoints go to `stem` when it
  // is non-empty.
  void run(std::optional<std::int64_t> steps = std::nullopt, const Log& log = {},
           const std::filesystem::path& stem = {}) {
    const std::int64_t end = steps ? step_ + *steps : cfg_.max_steps;
    while (step_ < end) {
      const auto st = step();
      if (log && cfg_.log_every > 0 && (step_ % cfg_.log_every == 0 || step_ == end)) log(st.to_json(wall()));
      if (!stem.empty() && cfg_.checkpoint_every > 0 && step_ % cfg_.checkpoint_every == 0) save(stem);
    }
    if (!stem.empty()) save(stem);
  }

  nlohmann::json metadata() const {
    std::ostringstream rng;
    rng << rng_;
    nlohmann::json j{{"format", kCheckpointFormat},
                     {"stage", stage()},
                     {"step", step_},
                     {"scalar", sizeof(T) == 4 ? "float32" : "float64"},
                     {"model_config", task_.model_json()},
                     {"stft_config", task_.stft()},
                     {"train_config", cfg_},
                     {"config_hash", config_hash()},
                     {"rng_state", rng.str()},
                     {"gen_param_hash", hex64(const_cast<Task&>(task_).gen_params().hash())},
                     {"has_disc", disc_opt_ != nullptr}};
    if constexpr (requires { task_.mel(); }) j["mel_config"] = task_.mel();
    return j;
  }

  void save(const std::filesystem::path& stem) const {
    const auto paths = CheckpointPaths::from(stem);
    if (paths.stem.has_parent_path()) std::filesystem::create_directories(paths.stem.parent_path());
    auto& t = const_cast<Task&>(task_);
    save_params(paths.gen(), t.gen_params(), &gen_opt_);
    if (disc_opt_) save_params(paths.disc(), *t.disc_params(), disc_opt_.get());
    write_meta(paths, metadata());
  }

  // Restores weights, optimizer moments, step and data RNG for an exact
  // continuation.
  void resume(const std::filesystem::path& stem) {
    const auto paths = CheckpointPaths::from(stem);
    const auto meta = read_meta(paths);
    require_binding(meta, stage(), config_hash(), "resume");
    if (meta.value("has_disc", false) != (disc_opt_ != nullptr))
      throw CheckpointError("resume: checkpoint and training config disagree on the discriminator");
    load_params(paths.gen(), task_.gen_params(), &gen_opt_);
    if (disc_opt_) load_params(paths.disc(), *task_.disc_params(), disc_opt_.get());
    std::istringstream rng(meta.at("rng_state").get<std::string>());
    rng >> rng_;
    if (!rng) throw CheckpointError("resume: bad rng state");
    step_ = meta.at("step").get<std::int64_t>();
  }

 private:
  double wall() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

  TrainConfig cfg_;
  std::vector<data::PairAudio> data_;
  Task task_;
  AdamW<T> gen_opt_;
  std::unique_ptr<AdamW<T>> disc_opt_;
  std::mt19937_64 rng_;
  std::int64_t step_ = 0;
  std::optional<double> lr_override_;
  std::chrono::steady_clock::time_point start_;
};

template <typename T>
using PredictorTrainer = Trainer<T, PredictorTask<T>>;
template <typename T>
using EnhancerTrainer = Trainer<T, EnhancerTask<T>>;

// JSONL sink appending one record per logged step.
inline std::function<void(const nlohmann::json&)> jsonl_log(const std::filesystem::path& path) {
  auto f = std::make_shared<std::ofstream>(path, std::ios::app);
  if (!*f) throw IoError("cannot open training log " + path.string());
  return [f](const nlohmann::json& j) { *f << j.dump() << "\n" << std::flush; };
}

inline std::vector<data::PairAudio> load_training_audio(const data::Manifest& m, int rate = 16000, int workers = 0,
                                                        std::vector<std::string>* warnings = nullptr) {
  const auto train = m.split(data::Split::kTrain);
  if (train.empty()) throw InputError("train: manifest has no training pairs");
  auto r = data::ingest_all(train, rate, workers);
  std::vector<data::PairAudio> out;
  for (auto& a : r.audio)
    if (a) out.push_back(std::move(*a));
  if (warnings)
    for (const auto& [id, msg] : r.errors) warnings->push_back(id + ": " + msg);
  if (out.empty()) throw InputError("train: no training pair could be loaded");
  return out;
}

// Stage entry points over a manifest.
template <typename T = float>
std::unique_ptr<PredictorTrainer<T>> train_predictor(const data::Manifest& m, const models::PredictorConfig& mcfg,
                                                     const TrainConfig& tcfg,
                                                     const dsp::StftConfig& stft = dsp::StftConfig::predictor(),
                                                     const dsp::MelConfig& mel = {}) {
  return std::make_unique<PredictorTrainer<T>>(load_training_audio(m, stft.sample_rate), mcfg, stft, mel, tcfg);
}

template <typename T = float>
std::unique_ptr<EnhancerTrainer<T>> train_enhancer(const data::Manifest& m, const models::EnhancerConfig& mcfg,
                                                   const TrainConfig& tcfg,
                                                   const dsp::StftConfig& stft = dsp::StftConfig::enhancer()) {
  return std::make_unique<EnhancerTrainer<T>>(load_training_audio(m, stft.sample_rate), mcfg, stft, dsp::MelConfig{},
                                              tcfg);
}

}  // namespace dnvoc::training
