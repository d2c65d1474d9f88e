// Copyright 2026 The dnvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Acceptance battery. One line per criterion:
//   PASS|FAIL|SKIP  <n>  <title>  -- <detail> (<seconds>)
// Exit status is nonzero iff some criterion FAILs.
//
//   acceptance [--only 3,4,10]
//   DNVOC_VBD_ROOT   VoiceBank+DEMAND root for criterion 1
//   DNVOC_PESQ_CMD   PESQ adapter; otherwise tools/pesq_wb.py when `pesq` imports

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "dnvoc/data/synth.hpp"
#include "dnvoc/dsp/phase.hpp"
#include "dnvoc/losses/losses.hpp"
#include "dnvoc/pipeline/pipeline.hpp"

using namespace dnvoc;
namespace fs = std::filesystem;
constexpr double kPi = std::numbers::pi;

namespace {

enum class Status { kPass, kFail, kSkip };

struct Outcome {
  Status status;
  std::string detail;
};

Outcome pass(std::string d) { return {Status::kPass, std::move(d)}; }
Outcome fail(std::string d) { return {Status::kFail, std::move(d)}; }
Outcome skip(std::string d) { return {Status::kSkip, std::move(d)}; }
Outcome check(bool ok, std::string d) { return {ok ? Status::kPass : Status::kFail, std::move(d)}; }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path scratch() {
  static const auto d = [] {
    auto p = fs::temp_directory_path() / ("dnvoc_acceptance_" + std::to_string(::getpid()));
    fs::create_directories(p);
    return p;
  }();
  return d;
}

metrics::PesqAdapter pesq_adapter() {
  auto a = metrics::PesqAdapter::from_env();
  if (a.configured()) return a;
  const std::string script = std::string(DNVOC_SOURCE_DIR) + "/tools/pesq_wb.py";
  if (fs::exists(script) && std::system("python3 -c 'import pesq' >/dev/null 2>&1") == 0)
    return metrics::PesqAdapter("python3 '" + script + "'");
  return {};
}

double circular_distance(double a, double b) { return std::abs(dsp::wrap_phase(a - b)); }

// ---------------------------------------------------------------------------

Outcome noisy_row() {
  const char* root = std::getenv("DNVOC_VBD_ROOT");
  if (!root || !*root) return skip("DNVOC_VBD_ROOT not set (VoiceBank+DEMAND test set required)");
  auto pesq = pesq_adapter();
  if (!pesq.configured()) return skip("no PESQ adapter (set DNVOC_PESQ_CMD or install the pesq package)");
  const auto m = data::build_voicebank_manifest(root);
  const auto split = m.split(data::Split::kTest);
  pipeline::EvalOptions o;
  o.mode = pipeline::EvalMode::kIdentityNoisy;
  o.metrics = metrics::MetricsConfig::reference();
  o.pesq = &pesq;
  const auto r = pipeline::evaluate_checkpoint(pipeline::PipelineConfig{}, split, o);
  const auto mean = r.means();
  const double want[6] = {1.97, 3.35, 2.44, 2.63, 1.68, 0.91};
  const double tol[6] = {0.03, 0.10, 0.10, 0.10, 0.5, 0.01};
  bool ok = true;
  std::string d = fmt("%zu utterances:", split.size());
  for (int c = 0; c < 6; ++c) {
    const bool hit = mean[c] && std::abs(*mean[c] - want[c]) <= tol[c];
    ok = ok && hit;
    d += fmt(" %s %s (want %.2f)", metrics::Scores::kColumns[c], mean[c] ? fmt("%.2f", *mean[c]).c_str() : "n/a",
             want[c]);
  }
  return check(ok, d);
}

Outcome trained_rows() {
  return skip("informational: trained-system rows need 700k-step GAN training on the full corpus; "
              "covered by criteria 3-9 instead");
}

Outcome stft_round_trip() {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 0.3);
  double worst[2] = {0, 0};
  const dsp::StftConfig cfgs[2] = {dsp::StftConfig::predictor(), dsp::StftConfig::enhancer()};
  for (int c = 0; c < 2; ++c)
    for (int k = 0; k < 100; ++k) {
      dsp::Waveform w;
      w.sample_rate = 16000;
      w.samples.resize(16000);
      for (auto& x : w.samples) x = n(rng);
      const auto y = dsp::istft(dsp::stft(w, cfgs[c]), static_cast<int>(w.size()));
      for (std::size_t i = 0; i < w.size(); ++i) worst[c] = std::max(worst[c], std::abs(y.samples[i] - w.samples[i]));
    }
  return check(worst[0] < 1e-4 && worst[1] < 1e-4,
               fmt("100 x 1 s noise, max abs error 1024/320/80 %.2e, 400/400/100 %.2e", worst[0], worst[1]));
}

Outcome noisy_phase() {
  const auto cfg = dsp::StftConfig::enhancer();
  const int frames = 500;  // 500 x 201 = 100500 bins
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> amp(0.0, 3.0), ph(-kPi, kPi);
  dsp::SpectralPair x{dsp::Array2D<double>(frames, cfg.bins()), dsp::Array2D<double>(frames, cfg.bins()), cfg};
  auto n = x;
  for (auto* s : {&x, &n}) {
    for (auto& a : s->amplitude.data) a = amp(rng);
    for (auto& p : s->phase.data) p = dsp::wrap_phase(ph(rng));
  }
  const auto y = dsp::compose_noisy_phase(x, n);
  double err = 0;
  for (std::size_t i = 0; i < y.phase.data.size(); ++i) {
    const auto z = std::polar(x.amplitude.data[i], x.phase.data[i]) + std::polar(n.amplitude.data[i], n.phase.data[i]);
    err = std::max(err, circular_distance(y.phase.data[i], std::arg(z)));
  }
  // High-SNR limit: deviation from the clean phase shrinks with Na/Xa.
  for (auto& a : x.amplitude.data) a = 1.0;
  double devs[3];
  const double ratios[3] = {0.1, 0.01, 0.001};
  for (int r = 0; r < 3; ++r) {
    for (auto& a : n.amplitude.data) a = ratios[r];
    const auto yr = dsp::compose_noisy_phase(x, n);
    devs[r] = 0;
    for (std::size_t i = 0; i < yr.phase.data.size(); ++i)
      devs[r] = std::max(devs[r], circular_distance(yr.phase.data[i], x.phase.data[i]));
  }
  const bool mono = devs[0] > devs[1] && devs[1] > devs[2];
  return check(err < 1e-9 && mono, fmt("%zu bins, max phase error %.2e rad; max deviation at 0.1/0.01/0.001: "
                                       "%.2e %.2e %.2e",
                                       y.phase.data.size(), err, devs[0], devs[1], devs[2]));
}

Outcome anti_wrapping() {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-20, 20);
  double per = 0;
  for (int i = 0; i < 10000; ++i) {
    const double x = u(rng);
    for (int k = -3; k <= 3; ++k) per = std::max(per, std::abs(losses::anti_wrap(x + 2 * kPi * k) - losses::anti_wrap(x)));
  }
  // 100 points clear of the kinks at multiples of pi.
  std::vector<double> xs;
  while (xs.size() < 100) {
    const double x = u(rng);
    const double r = std::remainder(x, kPi);
    if (std::abs(r) >= 0.01) xs.push_back(x);
  }
  auto v = ad::Var<double>::parameter({100}, xs);
  ad::sum(losses::anti_wrap(v)).backward();
  const auto g = v.grad();
  double rel = 0;
  const double h = 1e-6;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double fd = (losses::anti_wrap(xs[i] + h) - losses::anti_wrap(xs[i] - h)) / (2 * h);
    rel = std::max(rel, std::abs(g[i] - fd) / std::max({std::abs(g[i]), std::abs(fd), 1e-12}));
  }
  return check(per <= 1e-12 && rel < 1e-4,
               fmt("2pi-periodicity max deviation %.1e; gradient rel. error %.1e at 100 points", per, rel));
}

Outcome structural() {
  nn::Rng rng(6);
  std::normal_distribution<double> n(0, 1);
  models::PredictorConfig pc = models::PredictorConfig::toy();
  pc.hidden = 32;
  models::EnhancerConfig ec = models::EnhancerConfig::toy();
  ec.channels = 8;
  ec.heads = 2;
  ec.dense_depth = 2;
  ec.conv_kernel = 7;
  const models::Predictor<double> pred(pc, 7);
  const models::Enhancer<double> enh(ec, 8);
  const double bound = std::pow(ec.beta, 1.0 / ec.compress);
  int bad_phase = 0, bad_amp = 0, bad_frames = 0;
  for (int frames = 1; frames <= 256; ++frames) {
    dsp::MelSpectrogram mel{dsp::Array2D<double>(frames, pc.n_mels), dsp::StftConfig::predictor(), pc.n_mels};
    for (auto& v : mel.values.data) v = n(rng) - 3;
    const auto po = pred.infer(mel);
    bad_frames += po.phase.rows != frames || po.log_amplitude.rows != frames;
    for (double p : po.phase.data) bad_phase += !(p > -kPi && p <= kPi);
    dsp::SpectralPair s{dsp::Array2D<double>(frames, ec.bins()), dsp::Array2D<double>(frames, ec.bins()),
                        dsp::StftConfig::enhancer()};
    for (auto& a : s.amplitude.data) a = std::abs(n(rng)) * 2;
    for (auto& p : s.phase.data) p = dsp::wrap_phase(n(rng) * 2);
    const auto eo = enh.infer(s);
    bad_frames += eo.amplitude.rows != frames || eo.phase.rows != frames;
    for (std::size_t i = 0; i < eo.amplitude.data.size(); ++i) {
      bad_phase += !(eo.phase.data[i] > -kPi && eo.phase.data[i] <= kPi);
      bad_amp += eo.amplitude.data[i] > bound * s.amplitude.data[i] * (1 + 1e-12);
    }
  }
  return check(bad_phase + bad_amp + bad_frames == 0,
               fmt("lengths 1-256 frames, random weights: %d phases outside (-pi, pi], %d amplitudes above "
                   "beta^(1/c) x input, %d frame-count changes",
                   bad_phase, bad_amp, bad_frames));
}

Outcome predictor_overfit() {
  auto clean = data::synthetic_speech(0.5, 1);
  const auto noise = data::synthetic_noise(data::NoiseKind::kWhite, clean.size(), 2);
  const auto noisy = data::synth_mix(clean, noise, 5);
  auto tc = training::TrainConfig::toy(training::Stage::kPredictor);
  tc.segment = static_cast<int>(noisy.size());
  const auto stft = dsp::StftConfig::predictor();
  training::PredictorTrainer<float> t({{clean, noisy}}, models::PredictorConfig::toy(), stft, {}, tc);
  const auto mel = dsp::mel_spectrogram(noisy, stft);
  double r10 = 0, ratio = 1, snr = -10;
  std::int64_t step = 0;
  while (step < tc.max_steps) {
    const auto st = t.step();
    step = st.step;
    if (step == 10) r10 = st.reconstruction;
    if (step >= 10) ratio = st.reconstruction / r10;
    if (step % 50 == 0 && ratio <= 0.2) {
      const auto w = models::predictor_reconstruct(t.task().model().infer(mel), stft, static_cast<int>(noisy.size()));
      snr = metrics::ssnr(noisy, w);
      if (snr > 5) break;
    }
  }
  return check(ratio <= 0.2 && snr > 5,
               fmt("toy predictor (adversarial), one 0.5 s utterance: loss at step %lld is %.3f of step 10; "
                   "SSNR vs noisy target %.2f dB",
                   static_cast<long long>(step), ratio, snr));
}

Outcome enhancer_overfit() {
  std::vector<data::PairAudio> d;
  const data::NoiseKind kinds[] = {data::NoiseKind::kWhite, data::NoiseKind::kPink, data::NoiseKind::kBabble};
  for (int i = 0; i < 10; ++i) {
    auto clean = data::synthetic_speech(1.0, 100 + i);
    const auto noise = data::synthetic_noise(kinds[i % 3], clean.size(), 200 + i);
    d.push_back({clean, data::synth_mix(clean, noise, 5)});
  }
  auto tc = training::TrainConfig::toy(training::Stage::kEnhancer);
  // Smoke settings: pure reconstruction, half-second segments, lr 1e-3.
  tc.weights.w_metric = 0;
  tc.segment = 8000;
  tc.lr_init = 1e-3;
  const auto stft = dsp::StftConfig::enhancer();
  training::EnhancerTrainer<float> t(d, models::EnhancerConfig::toy(), stft, {}, tc);
  double base = 0;
  for (const auto& p : d) base += metrics::ssnr(p.clean, p.noisy) / 10;
  double best = -100, gain = -100;
  std::int64_t step = 0;
  while (step < tc.max_steps) {
    step = t.step().step;
    if (step % 100 == 0 || step == tc.max_steps) {
      double m = 0;
      for (const auto& p : d) {
        const auto o = t.task().model().infer(dsp::stft(p.noisy, stft));
        m += metrics::ssnr(p.clean, models::enhancer_reconstruct(o, stft, static_cast<int>(p.noisy.size()))) / 10;
      }
      gain = m - base;
      best = std::max(best, gain);
      if (gain >= 3) break;
    }
  }
  return check(gain >= 3, fmt("toy enhancer, 10 pairs at 5 dB, %lld steps: SSNR %.2f dB -> %.2f dB (gain %.2f, "
                              "best %.2f)",
                              static_cast<long long>(step), base, base + gain, gain, best));
}

Outcome ablation() {
  data::SyntheticCorpusSpec spec;
  spec.train_utterances = 4;
  spec.test_utterances = 10;
  spec.min_seconds = 1.0;
  spec.max_seconds = 1.5;
  spec.seed = 9;
  const auto m = data::write_synthetic_corpus(scratch() / "corpus", spec);
  auto train = [&](pipeline::Variant v, const std::string& name) {
    auto cfg = pipeline::PipelineConfig::for_variant(v);
    auto tc = training::TrainConfig::toy(training::Stage::kPredictor);
    pipeline::apply_recipe(v, tc);
    auto mc = models::PredictorConfig::toy();
    mc.output_bins = cfg.predictor_stft.bins();
    auto t = training::train_predictor<float>(m, mc, tc, cfg.predictor_stft);
    t->run(3);
    cfg.predictor_checkpoint = scratch() / name;
    t->save(cfg.predictor_checkpoint);
    return cfg;
  };
  auto prop = train(pipeline::Variant::kProposed, "prop");
  auto rep = train(pipeline::Variant::kRepApnet, "rep");
  auto match = train(pipeline::Variant::kMatchingStft, "match");
  {
    auto tc = training::TrainConfig::toy(training::Stage::kEnhancer);
    auto t = training::train_enhancer<float>(m, models::EnhancerConfig::toy(), tc);
    t->run(3);
    t->save(scratch() / "enh");
  }
  for (auto* c : {&prop, &rep, &match}) c->enhancer_checkpoint = scratch() / "enh";
  auto pesq = pesq_adapter();
  pipeline::EvalOptions o;
  o.workers = 1;
  o.pesq = &pesq;
  const auto split = m.split(data::Split::kTest);
  const auto res = pipeline::ablate<float>({prop, rep, match}, split, o);
  bool ok = res.reports.size() == 3 && split.size() >= 10;
  for (const auto& r : res.reports) {
    ok = ok && r.rows.size() == split.size();
    const auto mean = r.means();
    ok = ok && mean.size() == 6 && mean[4] && mean[5];
  }
  std::istringstream table(res.table());
  std::string line;
  int lines = 0;
  while (std::getline(table, line)) {
    ++lines;
    ok = ok && std::count(line.begin(), line.end(), '|') == 8;
  }
  ok = ok && lines == 5;

  // Binding: every cross-wired pair must be refused.
  int refused = 0, tried = 0;
  auto expect_refusal = [&](pipeline::PipelineConfig c) {
    ++tried;
    try {
      pipeline::TwoStage<float>::load(c);
    } catch (const CheckpointError&) {
      ++refused;
    }
  };
  auto c = match;
  c.predictor_checkpoint = prop.predictor_checkpoint;
  expect_refusal(c);
  c = prop;
  c.predictor_checkpoint = match.predictor_checkpoint;
  expect_refusal(c);
  c = prop;
  c.predictor_checkpoint = rep.predictor_checkpoint;
  expect_refusal(c);
  c = prop;
  c.enhancer_stft.hop_length = 200;
  expect_refusal(c);
  ok = ok && refused == tried;
  std::string d = fmt("%zu utterances, %d table lines, %d/%d mismatched checkpoint/config pairs refused\n", split.size(),
                      lines, refused, tried);
  return check(ok, d + res.table());
}

Outcome metric_fixed_points() {
  const auto ref = data::synthetic_speech(2.0, 11);
  const double s = metrics::ssnr(ref, ref), st = metrics::stoi(ref, ref), l = metrics::llr(ref, ref),
               w = metrics::wss(ref, ref);
  const auto hi = metrics::composite(4.5, 0, 0, 35), lo = metrics::composite(-0.5, 2, 200, -10);
  bool clamped = true;
  for (const auto* c : {&hi, &lo})
    for (double v : {c->csig, c->cbak, c->covl}) clamped = clamped && v >= 1 && v <= 5;
  return check(s == 35 && std::abs(st - 1) <= 1e-6 && std::abs(l) < 1e-12 && std::abs(w) < 1e-12 && clamped,
               fmt("ssnr %.4f, stoi %.8f, llr %.1e, wss %.1e, composites at extremes (%.2f %.2f %.2f) / (%.2f %.2f "
                   "%.2f)",
                   s, st, l, w, hi.csig, hi.cbak, hi.covl, lo.csig, lo.cbak, lo.covl));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dnvoc acceptance criteria"};
  std::vector<int> only;
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  struct Criterion {
    int id;
    const char* title;
    std::function<Outcome()> fn;
  };
  const std::vector<Criterion> all{
      {1, "VoiceBank+DEMAND noisy row", noisy_row},
      {2, "trained-system rows", trained_rows},
      {3, "STFT/iSTFT round trip", stft_round_trip},
      {4, "noisy phase composition", noisy_phase},
      {5, "anti-wrapping loss properties", anti_wrapping},
      {6, "structural invariants", structural},
      {7, "predictor overfit smoke", predictor_overfit},
      {8, "enhancer overfit smoke", enhancer_overfit},
      {9, "ablation harness contract", ablation},
      {10, "metric fixed points", metric_fixed_points},
  };
  const std::set<int> pick(only.begin(), only.end());
  int failed = 0;
  for (const auto& c : all) {
    if (!pick.empty() && !pick.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.fn();
    } catch (const std::exception& e) {
      o = fail(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const char* tag = o.status == Status::kPass ? "PASS" : o.status == Status::kFail ? "FAIL" : "SKIP";
    failed += o.status == Status::kFail;
    std::printf("%s  %2d  %s  -- %s (%.1f s)\n", tag, c.id, c.title, o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  fs::remove_all(scratch());
  return failed ? 1 : 0;
}
