// Copyright 2026 The dnvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Two-stage inference:
//   mel -> predictor -> iSTFT(predictor cfg) -> noisy waveform
//       -> STFT(enhancer cfg) -> enhancer -> iSTFT(enhancer cfg) -> clean waveform
// The waveform bridge is kept in every variant, including matching_stft where
// both configs coincide.

#pragma once

#include <filesystem>
#include <fstream>
#include <future>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "dnvoc/data/corpus.hpp"
#include "dnvoc/dsp/mel.hpp"
#include "dnvoc/metrics/report.hpp"
#include "dnvoc/models/enhancer.hpp"
#include "dnvoc/models/predictor.hpp"
#include "dnvoc/training/checkpoint.hpp"
#include "dnvoc/training/trainer.hpp"
#include "json.hpp"

namespace dnvoc::pipeline {

namespace fs = std::filesystem;

enum class Variant { kProposed, kRepApnet, kMatchingStft };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::kProposed:
      return "proposed";
    case Variant::kRepApnet:
      return "rep_apnet";
    case Variant::kMatchingStft:
      return "matching_stft";
  }
  return "?";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "proposed") return Variant::kProposed;
  if (s == "rep_apnet") return Variant::kRepApnet;
  if (s == "matching_stft") return Variant::kMatchingStft;
  throw ConfigError("unknown variant '" + s + "' (proposed, rep_apnet, matching_stft)");
}

// Row label in the ablation table.
inline const char* label(Variant v) {
  switch (v) {
    case Variant::kProposed:
      return "Proposed";
    case Variant::kRepApnet:
      return "Proposed rep. APNet";
    case Variant::kMatchingStft:
      return "Proposed w/ matching STFT condition";
  }
  return "?";
}

// Stage-1 training recipe a variant's predictor checkpoint must come from.
struct PredictorRecipe {
  losses::AntiWrap anti_wrap;
  models::DiscVariant disc;
};

inline PredictorRecipe recipe(Variant v) {
  if (v == Variant::kRepApnet) return {losses::AntiWrap::kCosine, models::DiscVariant::kMsd};
  return {losses::AntiWrap::kLinear, models::DiscVariant::kMrd};
}

inline void apply_recipe(Variant v, training::TrainConfig& tc) {
  const auto r = recipe(v);
  tc.anti_wrap = r.anti_wrap;
  tc.disc.variant = r.disc;
}

// STFT the predictor of a variant is trained and run under.
inline dsp::StftConfig predictor_stft_for(Variant v) {
  return v == Variant::kMatchingStft ? dsp::StftConfig::enhancer() : dsp::StftConfig::predictor();
}

struct PipelineConfig {
  dsp::StftConfig predictor_stft = dsp::StftConfig::predictor();
  dsp::StftConfig enhancer_stft = dsp::StftConfig::enhancer();
  Variant variant = Variant::kProposed;
  fs::path predictor_checkpoint, enhancer_checkpoint;
  fs::path output_dir = "dnvoc_out";

  static PipelineConfig for_variant(Variant v) {
    PipelineConfig c;
    c.variant = v;
    c.predictor_stft = predictor_stft_for(v);
    return c;
  }

  void validate() const {
    predictor_stft.validate();
    enhancer_stft.validate();
    dsp::require_invertible(predictor_stft);
    dsp::require_invertible(enhancer_stft);
    if (predictor_stft.sample_rate != enhancer_stft.sample_rate)
      throw ConfigError("pipeline: predictor and enhancer sample rates differ");
    if (variant == Variant::kMatchingStft &&
        !(predictor_stft == dsp::StftConfig::enhancer() && enhancer_stft == dsp::StftConfig::enhancer()))
      throw ConfigError("pipeline: matching_stft requires 400/400/100 for both stages, got predictor " +
                        predictor_stft.key() + " and enhancer " + enhancer_stft.key());
  }
};

// Flat key-value form; CLI flags use the same names with '-' for '_'.
inline nlohmann::json to_flat_json(const PipelineConfig& c) {
  nlohmann::json j{{"variant", to_string(c.variant)},
                   {"sample_rate", c.predictor_stft.sample_rate},
                   {"predictor_checkpoint", c.predictor_checkpoint.string()},
                   {"enhancer_checkpoint", c.enhancer_checkpoint.string()},
                   {"output_dir", c.output_dir.string()}};
  for (const auto& [pre, s] : {std::pair<std::string, const dsp::StftConfig*>{"predictor_", &c.predictor_stft},
                               {"enhancer_", &c.enhancer_stft}}) {
    j[pre + "n_fft"] = s->n_fft;
    j[pre + "win_length"] = s->win_length;
    j[pre + "hop_length"] = s->hop_length;
    j[pre + "window"] = dsp::to_string(s->window);
  }
  return j;
}

// Missing keys keep the variant's defaults; unknown keys are an error.
inline PipelineConfig from_flat_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("pipeline config must be a flat object");
  static const std::vector<std::string> known{
      "variant",           "sample_rate",          "predictor_checkpoint", "enhancer_checkpoint",
      "output_dir",        "predictor_n_fft",      "predictor_win_length", "predictor_hop_length",
      "predictor_window",  "enhancer_n_fft",       "enhancer_win_length",  "enhancer_hop_length",
      "enhancer_window"};
  for (const auto& [k, _] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end()) throw ConfigError("pipeline config: unknown key " + k);
  try {
    auto c = PipelineConfig::for_variant(variant_from_string(j.value("variant", std::string("proposed"))));
    const int rate = j.value("sample_rate", c.predictor_stft.sample_rate);
    for (auto& [pre, s] : {std::pair<std::string, dsp::StftConfig*>{"predictor_", &c.predictor_stft},
                           {"enhancer_", &c.enhancer_stft}}) {
      s->n_fft = j.value(pre + "n_fft", s->n_fft);
      s->win_length = j.value(pre + "win_length", s->win_length);
      s->hop_length = j.value(pre + "hop_length", s->hop_length);
      s->window = dsp::window_from_string(j.value(pre + "window", std::string(dsp::to_string(s->window))));
      s->sample_rate = rate;
    }
    c.predictor_checkpoint = j.value("predictor_checkpoint", std::string());
    c.enhancer_checkpoint = j.value("enhancer_checkpoint", std::string());
    c.output_dir = j.value("output_dir", c.output_dir.string());
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("pipeline config: ") + e.what());
  }
}

inline PipelineConfig load_pipeline_config(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read pipeline config " + path.string());
  try {
    return from_flat_json(nlohmann::json::parse(f));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("pipeline config " + path.string() + ": " + e.what());
  }
}

// Mel files: JSON {format, n_mels, frames, stft, mel, values (row-major)}.
inline constexpr const char* kMelFormat = "dnvoc-mel/1";

inline void write_mel(const fs::path& path, const dsp::MelSpectrogram& m, const dsp::MelConfig& mc = {}) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << nlohmann::json{{"format", kMelFormat},   {"n_mels", m.n_mels}, {"frames", m.frames()},
                      {"stft", m.config},       {"mel", mc},          {"values", m.values.data}}
           .dump()
    << "\n";
}

inline dsp::MelSpectrogram read_mel(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read mel file " + path.string());
  try {
    const auto j = nlohmann::json::parse(f);
    if (j.value("format", "") != kMelFormat) throw InputError(path.string() + " is not a dnvoc mel file");
    dsp::MelSpectrogram m;
    m.n_mels = j.at("n_mels").get<int>();
    m.config = j.at("stft").get<dsp::StftConfig>();
    m.values = dsp::Array2D<double>(j.at("frames").get<int>(), m.n_mels);
    auto v = j.at("values").get<std::vector<double>>();
    if (v.size() != m.values.data.size()) throw InputError(path.string() + ": values do not match frames x n_mels");
    for (double x : v)
      if (!std::isfinite(x)) throw InputError(path.string() + ": non-finite mel value");
    m.values.data = std::move(v);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("mel file " + path.string() + ": " + e.what());
  }
}

template <typename T = float>
class TwoStage {
 public:
  // Fresh (random) weights; used by smoke runs and tests.
  TwoStage(const PipelineConfig& cfg, const models::PredictorConfig& pc, const models::EnhancerConfig& ec,
           const dsp::MelConfig& mel = {}, std::uint64_t seed = 0)
      : cfg_(cfg), mel_(mel), predictor_(pc, seed), enhancer_(ec, seed + 1) {
    check_shapes();
  }

  // Builds both models from their checkpoints, refusing any checkpoint whose
  // stage, STFT config or stage-1 recipe differs from cfg.
  static std::unique_ptr<TwoStage> load(const PipelineConfig& cfg) {
    cfg.validate();
    if (cfg.predictor_checkpoint.empty() || cfg.enhancer_checkpoint.empty())
      throw ConfigError("pipeline: both predictor_checkpoint and enhancer_checkpoint are required");
    const auto pp = training::CheckpointPaths::from(cfg.predictor_checkpoint);
    const auto ep = training::CheckpointPaths::from(cfg.enhancer_checkpoint);
    const auto pm = training::read_meta(pp), em = training::read_meta(ep);
    models::PredictorConfig pc;
    models::EnhancerConfig ec;
    dsp::MelConfig mel;
    try {
      pc = pm.at("model_config").get<models::PredictorConfig>();
      ec = em.at("model_config").get<models::EnhancerConfig>();
      if (pm.contains("mel_config")) mel = pm["mel_config"].get<dsp::MelConfig>();
    } catch (const nlohmann::json::exception& e) {
      throw CheckpointError(std::string("pipeline: bad model config in checkpoint metadata: ") + e.what());
    }
    training::require_binding(pm, "predictor", training::config_hash("predictor", pc, cfg.predictor_stft),
                              pp.meta().string());
    training::require_binding(em, "enhancer", training::config_hash("enhancer", ec, cfg.enhancer_stft),
                              ep.meta().string());
    check_recipe(pm, cfg.variant, pp.meta().string());
    auto s = std::make_unique<TwoStage>(cfg, pc, ec, mel);
    training::load_params(pp.gen(), s->predictor_.params());
    training::load_params(ep.gen(), s->enhancer_.params());
    return s;
  }

  const PipelineConfig& config() const { return cfg_; }
  const dsp::MelConfig& mel_config() const { return mel_; }
  models::Predictor<T>& predictor() { return predictor_; }
  models::Enhancer<T>& enhancer() { return enhancer_; }

  // Stage-1 input, always under the predictor config.
  dsp::MelSpectrogram analyze(const dsp::Waveform& w) const {
    if (w.sample_rate != cfg_.predictor_stft.sample_rate)
      throw MismatchError("pipeline: input is " + std::to_string(w.sample_rate) + " Hz, pipeline runs at " +
                          std::to_string(cfg_.predictor_stft.sample_rate) + " Hz");
    return dsp::mel_spectrogram(w, cfg_.predictor_stft, mel_);
  }

  // mel -> predicted noisy waveform.
  dsp::Waveform vocode(const dsp::MelSpectrogram& mel, std::optional<int> length = std::nullopt) const {
    if (!(mel.config == cfg_.predictor_stft))
      throw MismatchError("pipeline: mel was extracted under " + mel.config.key() + ", predictor runs under " +
                          cfg_.predictor_stft.key());
    return models::predictor_reconstruct(predictor_.infer(mel), cfg_.predictor_stft, length);
  }

  // Re-analysis under the enhancer config, masking, resynthesis.
  dsp::Waveform enhance(const dsp::Waveform& noisy) const {
    const auto spec = dsp::stft(noisy, cfg_.enhancer_stft);
    return models::enhancer_reconstruct(enhancer_.infer(spec), cfg_.enhancer_stft, static_cast<int>(noisy.size()));
  }

  dsp::Waveform denoise(const dsp::MelSpectrogram& mel, std::optional<int> length = std::nullopt) const {
    return enhance(vocode(mel, length));
  }

  // Output has the input's length.
  dsp::Waveform denoise_waveform(const dsp::Waveform& noisy) const {
    return denoise(analyze(noisy), static_cast<int>(noisy.size()));
  }

 private:
  void check_shapes() const {
    cfg_.validate();
    if (predictor_.config().output_bins != cfg_.predictor_stft.bins())
      throw MismatchError("pipeline: predictor emits " + std::to_string(predictor_.config().output_bins) +
                          " bins, STFT " + cfg_.predictor_stft.key() + " has " +
                          std::to_string(cfg_.predictor_stft.bins()));
    if (predictor_.config().n_mels != mel_.n_mels)
      throw MismatchError("pipeline: predictor expects " + std::to_string(predictor_.config().n_mels) +
                          " mel bands, mel config has " + std::to_string(mel_.n_mels));
    if (enhancer_.config().n_fft != cfg_.enhancer_stft.n_fft)
      throw MismatchError("pipeline: enhancer n_fft " + std::to_string(enhancer_.config().n_fft) + " vs STFT " +
                          cfg_.enhancer_stft.key());
  }

  static void check_recipe(const nlohmann::json& meta, Variant v, const std::string& where) {
    const auto want = recipe(v);
    const auto tc = meta.value("train_config", nlohmann::json::object());
    const std::string aw = tc.value("anti_wrap", std::string("?"));
    const std::string dv = tc.contains("disc") ? tc["disc"].value("variant", std::string("?")) : std::string("?");
    if (aw != losses::to_string(want.anti_wrap) || dv != models::to_string(want.disc))
      throw CheckpointError(where + ": predictor was trained with " + aw + " anti-wrapping and " + dv +
                            " discriminators; variant " + to_string(v) + " needs " +
                            losses::to_string(want.anti_wrap) + " and " + models::to_string(want.disc));
  }

  PipelineConfig cfg_;
  dsp::MelConfig mel_;
  models::Predictor<T> predictor_;
  models::Enhancer<T> enhancer_;
};

enum class EvalMode { kSystem, kIdentityNoisy, kIdentityClean };

struct EvalOptions {
  EvalMode mode = EvalMode::kSystem;
  metrics::MetricsConfig metrics;
  metrics::PesqAdapter* pesq = nullptr;
  int workers = 0;                    // per-utterance fan-out; 0: hardware concurrency
  std::optional<fs::path> write_dir;  // enhanced WAVs, one per id
  std::string system;                 // report name; defaults by mode
};

inline std::vector<data::PairAudio> load_split(const std::vector<data::UtterancePair>& split, int rate,
                                               int workers = 0) {
  if (split.empty()) throw InputError("evaluate: empty split");
  auto r = data::ingest_all(split, rate, workers);
  if (!r.errors.empty())
    throw IoError("evaluate: cannot load " + r.errors.front().first + ": " + r.errors.front().second);
  std::vector<data::PairAudio> out;
  for (auto& a : r.audio) out.push_back(std::move(*a));
  return out;
}

// Runs `system` (or an identity mode) over the split and scores the output
// against the clean references.
template <typename T>
metrics::MetricsReport evaluate_system(const TwoStage<T>* system, const std::vector<data::UtterancePair>& split,
                                       const EvalOptions& opt) {
  if (opt.mode == EvalMode::kSystem && !system) throw ConfigError("evaluate: no system to run");
  const int rate = system ? system->config().predictor_stft.sample_rate : 16000;
  const auto audio = load_split(split, rate, opt.workers);
  std::vector<metrics::ScoredInput> items(audio.size());
  const int workers =
      opt.workers > 0 ? opt.workers : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  auto run = [&](std::size_t w) {
    for (std::size_t i = w; i < audio.size(); i += static_cast<std::size_t>(workers)) {
      const auto& a = audio[i];
      dsp::Waveform out = opt.mode == EvalMode::kIdentityNoisy   ? a.noisy
                          : opt.mode == EvalMode::kIdentityClean ? a.clean
                                                                 : system->denoise_waveform(a.noisy);
      items[i] = {split[i].id, a.clean, std::move(out)};
    }
  };
  std::vector<std::future<void>> fut;
  for (int w = 1; w < workers; ++w) fut.push_back(std::async(std::launch::async, run, w));
  run(0);
  for (auto& f : fut) f.get();
  if (opt.write_dir) {
    fs::create_directories(*opt.write_dir);
    for (const auto& it : items) dsp::write_wav(*opt.write_dir / (it.id + ".wav"), it.deg);
  }
  std::string name = opt.system;
  if (name.empty())
    name = opt.mode == EvalMode::kIdentityNoisy   ? "Noisy"
           : opt.mode == EvalMode::kIdentityClean ? "Clean"
                                                  : label(system->config().variant);
  auto report = metrics::score_corpus(name, items, opt.metrics, opt.pesq);
  report.provenance["mode"] = opt.mode == EvalMode::kIdentityNoisy   ? "identity_noisy"
                              : opt.mode == EvalMode::kIdentityClean ? "identity_clean"
                                                                     : "system";
  if (system) report.provenance["pipeline"] = to_flat_json(system->config());
  return report;
}

// Loads the checkpoints named in cfg and evaluates them on the split.
template <typename T = float>
metrics::MetricsReport evaluate_checkpoint(const PipelineConfig& cfg, const std::vector<data::UtterancePair>& split,
                                           const EvalOptions& opt = {}) {
  if (opt.mode != EvalMode::kSystem) return evaluate_system<T>(nullptr, split, opt);
  if (split.empty()) throw InputError("evaluate: empty split");
  const auto system = TwoStage<T>::load(cfg);
  return evaluate_system(system.get(), split, opt);
}

struct AblationResult {
  std::vector<metrics::MetricsReport> reports;  // proposed, rep_apnet, matching_stft

  std::vector<metrics::TableRow> rows() const {
    std::vector<metrics::TableRow> r;
    for (const auto& rep : reports) r.push_back({rep.system, rep.means()});
    return r;
  }
  std::string table() const { return metrics::render_table(rows()); }
  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& rep : reports) j.push_back(rep.to_json());
    return {{"columns", metrics::Scores::kColumns}, {"variants", j}};
  }
};

// One config per variant, each with its own predictor checkpoint; the
// enhancer is normally the same stock checkpoint for all three.
template <typename T = float>
AblationResult ablate(const std::vector<PipelineConfig>& variants, const std::vector<data::UtterancePair>& split,
                      EvalOptions opt = {}) {
  const Variant order[] = {Variant::kProposed, Variant::kRepApnet, Variant::kMatchingStft};
  if (variants.size() != 3) throw ConfigError("ablate: need exactly the three variants");
  AblationResult out;
  const auto base_dir = opt.write_dir;
  for (Variant v : order) {
    const auto it = std::find_if(variants.begin(), variants.end(), [&](const auto& c) { return c.variant == v; });
    if (it == variants.end()) throw ConfigError(std::string("ablate: missing variant ") + to_string(v));
    opt.mode = EvalMode::kSystem;
    opt.system = label(v);
    if (base_dir) opt.write_dir = *base_dir / to_string(v);
    out.reports.push_back(evaluate_checkpoint<T>(*it, split, opt));
  }
  return out;
}

}  // namespace dnvoc::pipeline
