// Copyright 2026 The dnvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// dnvoc: data preparation, training, inference, evaluation and ablation.
// Failures print one JSON record on stderr and exit nonzero:
//   {"error": "<kind>", "message": "...", "command": "..."}

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "dnvoc/data/synth.hpp"
#include "dnvoc/pipeline/pipeline.hpp"
#include "json.hpp"

using namespace dnvoc;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int exit_code(const std::string& kind) {
  static const std::map<std::string, int> codes{{"input_error", 2},     {"config_error", 3}, {"mismatch_error", 4},
                                                {"io_error", 5},        {"checkpoint_error", 6},
                                                {"divergence", 7},      {"usage_error", 64}};
  const auto it = codes.find(kind);
  return it == codes.end() ? 1 : it->second;
}

int fail(const std::string& kind, const std::string& msg, const std::string& cmd) {
  std::cerr << json{{"error", kind}, {"message", msg}, {"command", cmd}}.dump() << std::endl;
  return exit_code(kind);
}

void emit(const json& j) { std::cout << j.dump(2) << std::endl; }

// Pipeline flags mirror the flat config keys with '-' for '_'.
struct PipelineFlags {
  std::string config;
  std::map<std::string, std::string> str;
  std::map<std::string, int> num;

  void add(CLI::App* app) {
    app->add_option("--config", config, "flat JSON pipeline config; flags override it");
    for (const char* k : {"variant", "predictor_checkpoint", "enhancer_checkpoint", "output_dir", "predictor_window",
                          "enhancer_window"})
      app->add_option(flag(k), str[k]);
    for (const char* k : {"sample_rate", "predictor_n_fft", "predictor_win_length", "predictor_hop_length",
                          "enhancer_n_fft", "enhancer_win_length", "enhancer_hop_length"})
      app->add_option(flag(k), num[k]);
  }

  static std::string flag(std::string k) {
    for (auto& c : k)
      if (c == '_') c = '-';
    return "--" + k;
  }

  pipeline::PipelineConfig resolve(CLI::App* app) const {
    json j = json::object();
    if (!config.empty()) j = pipeline::to_flat_json(pipeline::load_pipeline_config(config));
    // A variant given on the command line resets the STFT defaults to that variant's.
    if (app->count("--variant") && !str.at("variant").empty()) {
      auto d = pipeline::to_flat_json(pipeline::PipelineConfig::for_variant(pipeline::variant_from_string(str.at("variant"))));
      for (const char* k : {"predictor_n_fft", "predictor_win_length", "predictor_hop_length"}) j[k] = d[k];
    }
    for (const auto& [k, v] : str)
      if (app->count(flag(k))) j[k] = v;
    for (const auto& [k, v] : num)
      if (app->count(flag(k))) j[k] = v;
    auto c = pipeline::from_flat_json(j);
    c.validate();
    return c;
  }
};

struct MetricFlags {
  std::string ssnr_framing = "default";
  std::string pesq_cmd;
  int workers = 0;

  void add(CLI::App* app) {
    app->add_option("--ssnr-framing", ssnr_framing, "default (32 ms, 50%, silence excluded) or reference")
        ->check(CLI::IsMember({"default", "reference"}));
    app->add_option("--pesq-cmd", pesq_cmd, std::string("external PESQ command; defaults to $") + metrics::kPesqEnv);
    app->add_option("--workers", workers, "per-utterance parallelism (0: all cores)");
  }

  metrics::MetricsConfig config() const {
    auto c = ssnr_framing == "reference" ? metrics::MetricsConfig::reference() : metrics::MetricsConfig{};
    c.workers = workers;
    return c;
  }

  metrics::PesqAdapter adapter() const {
    return pesq_cmd.empty() ? metrics::PesqAdapter::from_env() : metrics::PesqAdapter(pesq_cmd);
  }
};

std::vector<data::UtterancePair> select(const data::Manifest& m, const std::string& split, int limit) {
  auto s = m.split(data::split_from_string(split));
  if (limit > 0 && static_cast<int>(s.size()) > limit) s.resize(static_cast<std::size_t>(limit));
  if (s.empty()) throw InputError("manifest has no " + split + " pairs");
  return s;
}

void write_json(const fs::path& p, const json& j) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p);
  if (!f) throw IoError("cannot write " + p.string());
  f << j.dump(2) << "\n";
}

struct TrainFlags {
  std::string manifest, out, preset = "toy", variant = "proposed", resume, log, train_config;
  std::optional<std::int64_t> steps;
  std::optional<double> lr;
  std::optional<int> batch, segment, checkpoint_every;
  std::optional<std::uint64_t> seed;
  std::optional<double> w_adv, w_fm, w_metric;

  void add(CLI::App* app, bool predictor) {
    app->add_option("--manifest", manifest, "manifest JSONL (train split is used)")->required();
    app->add_option("--out", out, "checkpoint stem (writes STEM.gen.bin, STEM.json, ...)")->required();
    app->add_option("--preset", preset, "model and schedule preset")->check(CLI::IsMember({"toy", "full"}));
    if (predictor)
      app->add_option("--variant", variant, "stage-1 recipe and STFT")
          ->check(CLI::IsMember({"proposed", "rep_apnet", "matching_stft"}));
    app->add_option("--train-config", train_config, "JSON TrainConfig overriding the preset");
    app->add_option("--steps", steps, "steps to run (default: max_steps)");
    app->add_option("--lr", lr, "initial learning rate");
    app->add_option("--batch", batch);
    app->add_option("--segment", segment, "training segment in samples");
    app->add_option("--checkpoint-every", checkpoint_every);
    app->add_option("--seed", seed);
    if (predictor) {
      app->add_option("--w-adv", w_adv);
      app->add_option("--w-fm", w_fm);
    } else {
      app->add_option("--w-metric", w_metric);
    }
    app->add_option("--resume", resume, "continue from this checkpoint stem");
    app->add_option("--log", log, "JSONL training log");
  }

  training::TrainConfig config(training::Stage s) const {
    auto c = preset == "full" ? training::TrainConfig::full(s) : training::TrainConfig::toy(s);
    if (!train_config.empty()) {
      std::ifstream f(train_config);
      if (!f) throw IoError("cannot read " + train_config);
      try {
        auto j = json::parse(f);
        j["stage"] = training::to_string(s);
        c = j.get<training::TrainConfig>();
      } catch (const json::exception& e) {
        throw ConfigError("train config " + train_config + ": " + e.what());
      }
    }
    if (s == training::Stage::kPredictor) pipeline::apply_recipe(pipeline::variant_from_string(variant), c);
    if (lr) c.lr_init = *lr;
    if (batch) c.batch_size = *batch;
    if (segment) c.segment = *segment;
    if (checkpoint_every) c.checkpoint_every = *checkpoint_every;
    if (seed) c.seed = *seed;
    if (w_adv) c.weights.w_adv = *w_adv;
    if (w_fm) c.weights.w_fm = *w_fm;
    if (w_metric) c.weights.w_metric = *w_metric;
    c.validate();
    return c;
  }
};

template <typename TrainerT>
json run_training(TrainerT& t, const TrainFlags& f) {
  if (!f.resume.empty()) t.resume(f.resume);
  auto log = f.log.empty() ? typename TrainerT::Log{} : training::jsonl_log(f.log);
  std::optional<double> last;
  auto sink = [&](const json& j) {
    last = j.value("reconstruction", 0.0);
    if (log) log(j);
    std::cerr << j.dump() << "\n";
  };
  t.run(f.steps, sink, f.out);
  json r{{"checkpoint", f.out}, {"step", t.step_count()}, {"config_hash", t.config_hash()}};
  if (last) r["reconstruction"] = *last;
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dnvoc: two-stage denoising vocoder"};
  app.require_subcommand(1);
  std::string active = "dnvoc";

  // prepare-data
  auto* prep = app.add_subcommand("prepare-data", "build a manifest from VoiceBank+DEMAND or a synthetic corpus");
  std::string prep_root, prep_manifest;
  bool prep_synth = false;
  data::SyntheticCorpusSpec synth;
  prep->add_option("--root", prep_root, "dataset root (synthetic corpora are written here)")->required();
  prep->add_option("--manifest", prep_manifest, "output manifest JSONL (default ROOT/manifest.jsonl)");
  prep->add_flag("--synthetic", prep_synth, "write a synthetic paired corpus first");
  prep->add_option("--train", synth.train_utterances);
  prep->add_option("--test", synth.test_utterances);
  prep->add_option("--seed", synth.seed);
  prep->add_option("--min-seconds", synth.min_seconds);
  prep->add_option("--max-seconds", synth.max_seconds);
  prep->add_option("--snrs", synth.snrs, "mixing SNRs in dB, cycled");

  // train-predictor / train-enhancer
  auto* tp = app.add_subcommand("train-predictor", "train stage 1 (mel -> noisy spectra) against noisy targets");
  TrainFlags tpf;
  tpf.add(tp, true);
  auto* te = app.add_subcommand("train-enhancer", "train stage 2 (noisy -> clean spectra)");
  TrainFlags tef;
  tef.add(te, false);

  // infer
  auto* inf = app.add_subcommand("infer", "WAV or mel file -> enhanced WAV");
  PipelineFlags inf_p;
  inf_p.add(inf);
  std::string inf_in, inf_out, inf_mel_out;
  inf->add_option("--input", inf_in, "noisy .wav or .mel.json")->required()->check(CLI::ExistingFile);
  inf->add_option("--output", inf_out, "output .wav (default OUTPUT_DIR/<input stem>.wav)");
  inf->add_option("--mel-out", inf_mel_out, "also write the stage-1 mel input here");

  // extract-mel is a helper for feeding `infer` with mel files
  auto* xm = app.add_subcommand("extract-mel", "WAV -> mel file under the predictor config");
  PipelineFlags xm_p;
  xm_p.add(xm);
  std::string xm_in, xm_out;
  xm->add_option("--input", xm_in)->required()->check(CLI::ExistingFile);
  xm->add_option("--output", xm_out)->required();

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "run the two-stage system over a split and score it");
  PipelineFlags ev_p;
  ev_p.add(ev);
  MetricFlags ev_m;
  ev_m.add(ev);
  std::string ev_manifest, ev_split = "test", ev_report;
  bool ev_noisy = false, ev_clean = false, ev_write = false;
  int ev_limit = 0;
  ev->add_option("--manifest", ev_manifest)->required();
  ev->add_option("--split", ev_split)->check(CLI::IsMember({"train", "test"}));
  ev->add_option("--limit", ev_limit, "first N utterances only");
  ev->add_flag("--identity-noisy", ev_noisy, "score the noisy input itself (no models)");
  ev->add_flag("--identity-clean", ev_clean, "score the clean reference itself (no models)");
  ev->add_flag("--write-audio", ev_write, "write enhanced WAVs to OUTPUT_DIR/<variant>");
  ev->add_option("--report", ev_report, "MetricsReport JSON (default OUTPUT_DIR/report.json)");

  // ablate
  auto* ab = app.add_subcommand("ablate", "proposed / rep_apnet / matching_stft comparison");
  MetricFlags ab_m;
  ab_m.add(ab);
  std::string ab_manifest, ab_split = "test", ab_report, ab_out = "dnvoc_out";
  std::string ab_prop, ab_rep, ab_match, ab_enh, ab_match_enh;
  int ab_limit = 0;
  ab->add_option("--manifest", ab_manifest)->required();
  ab->add_option("--split", ab_split)->check(CLI::IsMember({"train", "test"}));
  ab->add_option("--limit", ab_limit);
  ab->add_option("--proposed-predictor", ab_prop)->required();
  ab->add_option("--rep-apnet-predictor", ab_rep)->required();
  ab->add_option("--matching-predictor", ab_match)->required();
  ab->add_option("--enhancer", ab_enh, "stock enhancer shared by all rows")->required();
  ab->add_option("--matching-enhancer", ab_match_enh, "optional enhancer for the matching_stft row");
  ab->add_option("--output-dir", ab_out);
  ab->add_option("--report", ab_report, "JSON report (default OUTPUT_DIR/ablation.json)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage_error", e.what(), argc > 1 ? argv[1] : "dnvoc");
  }

  for (auto* s : app.get_subcommands()) active = s->get_name();
  try {
    if (*prep) {
      data::Manifest m;
      if (prep_synth) {
        m = data::write_synthetic_corpus(prep_root, synth);
      } else {
        m = data::build_voicebank_manifest(prep_root, [](const std::string& w) { std::cerr << "warning: " << w << "\n"; });
      }
      const fs::path out = prep_manifest.empty() ? fs::path(prep_root) / "manifest.jsonl" : fs::path(prep_manifest);
      data::write_manifest(out, m);
      emit({{"manifest", out.string()},
            {"train", m.count(data::Split::kTrain)},
            {"test", m.count(data::Split::kTest)},
            {"warnings", m.warnings}});
    } else if (*tp) {
      const auto tc = tpf.config(training::Stage::kPredictor);
      const auto v = pipeline::variant_from_string(tpf.variant);
      const auto stft = pipeline::predictor_stft_for(v);
      auto mc = tpf.preset == "full" ? models::PredictorConfig::full() : models::PredictorConfig::toy();
      mc.output_bins = stft.bins();
      auto t = training::train_predictor<float>(data::read_manifest(tpf.manifest), mc, tc, stft);
      auto r = run_training(*t, tpf);
      r["variant"] = tpf.variant;
      emit(r);
    } else if (*te) {
      const auto tc = tef.config(training::Stage::kEnhancer);
      const auto mc = tef.preset == "full" ? models::EnhancerConfig::full() : models::EnhancerConfig::toy();
      auto t = training::train_enhancer<float>(data::read_manifest(tef.manifest), mc, tc);
      emit(run_training(*t, tef));
    } else if (*inf) {
      const auto cfg = inf_p.resolve(inf);
      const auto sys = pipeline::TwoStage<float>::load(cfg);
      const fs::path in = inf_in;
      const bool is_mel = in.string().size() > 9 && in.string().ends_with(".mel.json");
      dsp::Waveform out;
      if (is_mel) {
        const auto mel = pipeline::read_mel(in);
        if (!inf_mel_out.empty()) pipeline::write_mel(inf_mel_out, mel, sys->mel_config());
        out = sys->denoise(mel);
      } else {
        auto noisy = dsp::read_wav(in);
        if (noisy.sample_rate != cfg.predictor_stft.sample_rate) noisy = data::resample(noisy, cfg.predictor_stft.sample_rate);
        if (!inf_mel_out.empty()) pipeline::write_mel(inf_mel_out, sys->analyze(noisy), sys->mel_config());
        out = sys->denoise_waveform(noisy);
      }
      std::string stem = in.filename().string();
      stem = stem.substr(0, stem.find('.'));
      const fs::path dst = inf_out.empty() ? cfg.output_dir / (stem + ".wav") : fs::path(inf_out);
      if (dst.has_parent_path()) fs::create_directories(dst.parent_path());
      dsp::write_wav(dst, out);
      emit({{"output", dst.string()},
            {"samples", out.size()},
            {"sample_rate", out.sample_rate},
            {"input", is_mel ? "mel" : "wav"},
            {"variant", pipeline::to_string(cfg.variant)}});
    } else if (*xm) {
      const auto cfg = xm_p.resolve(xm);
      dsp::MelConfig mel;
      if (!cfg.predictor_checkpoint.empty()) {
        const auto meta = training::read_meta(training::CheckpointPaths::from(cfg.predictor_checkpoint));
        if (meta.contains("mel_config")) mel = meta["mel_config"].get<dsp::MelConfig>();
      }
      auto w = dsp::read_wav(xm_in);
      if (w.sample_rate != cfg.predictor_stft.sample_rate) w = data::resample(w, cfg.predictor_stft.sample_rate);
      const auto m = dsp::mel_spectrogram(w, cfg.predictor_stft, mel);
      pipeline::write_mel(xm_out, m, mel);
      emit({{"output", xm_out}, {"frames", m.frames()}, {"n_mels", m.n_mels}, {"stft", m.config.key()}});
    } else if (*ev) {
      if (ev_noisy && ev_clean) throw ConfigError("--identity-noisy and --identity-clean are exclusive");
      const auto split = select(data::read_manifest(ev_manifest), ev_split, ev_limit);
      auto pesq = ev_m.adapter();
      pipeline::EvalOptions o;
      o.metrics = ev_m.config();
      o.workers = ev_m.workers;
      o.pesq = &pesq;
      o.mode = ev_noisy ? pipeline::EvalMode::kIdentityNoisy
               : ev_clean ? pipeline::EvalMode::kIdentityClean
                          : pipeline::EvalMode::kSystem;
      const auto cfg = o.mode == pipeline::EvalMode::kSystem ? ev_p.resolve(ev) : [&] {
        auto c = pipeline::from_flat_json(ev_p.config.empty() ? json::object()
                                                               : pipeline::to_flat_json(pipeline::load_pipeline_config(ev_p.config)));
        if (ev->count("--output-dir")) c.output_dir = ev_p.str.at("output_dir");
        return c;
      }();
      if (ev_write) o.write_dir = cfg.output_dir / pipeline::to_string(cfg.variant);
      const auto report = pipeline::evaluate_checkpoint<float>(cfg, split, o);
      const fs::path rp = ev_report.empty() ? cfg.output_dir / "report.json" : fs::path(ev_report);
      write_json(rp, report.to_json());
      std::cout << metrics::render_table(report);
      emit({{"report", rp.string()}, {"count", report.rows.size()}, {"system", report.system}});
    } else if (*ab) {
      const auto split = select(data::read_manifest(ab_manifest), ab_split, ab_limit);
      auto pesq = ab_m.adapter();
      pipeline::EvalOptions o;
      o.metrics = ab_m.config();
      o.workers = ab_m.workers;
      o.pesq = &pesq;
      std::vector<pipeline::PipelineConfig> cfgs;
      for (auto [v, pred] : {std::pair{pipeline::Variant::kProposed, ab_prop},
                             std::pair{pipeline::Variant::kRepApnet, ab_rep},
                             std::pair{pipeline::Variant::kMatchingStft, ab_match}}) {
        auto c = pipeline::PipelineConfig::for_variant(v);
        c.predictor_checkpoint = pred;
        c.enhancer_checkpoint = v == pipeline::Variant::kMatchingStft && !ab_match_enh.empty() ? ab_match_enh : ab_enh;
        c.output_dir = ab_out;
        cfgs.push_back(c);
      }
      const auto res = pipeline::ablate<float>(cfgs, split, o);
      const fs::path rp = ab_report.empty() ? fs::path(ab_out) / "ablation.json" : fs::path(ab_report);
      auto j = res.to_json();
      j["enhancer"] = ab_enh;
      j["note"] = ab_match_enh.empty() ? "matching_stft row reuses the stock enhancer" : "matching_stft row uses its own enhancer";
      write_json(rp, j);
      std::cout << res.table();
      emit({{"report", rp.string()}, {"count", split.size()}});
    }
  } catch (const Error& e) {
    return fail(e.kind(), e.what(), active);
  } catch (const std::exception& e) {
    return fail("internal_error", e.what(), active);
  }
  return 0;
}
