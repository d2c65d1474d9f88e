// Copyright 2026 The dnvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "dnvoc/data/synth.hpp"
#include "dnvoc/training/trainer.hpp"

using namespace dnvoc;
using training::Stage;

namespace fs = std::filesystem;

namespace {

std::vector<data::PairAudio> pairs(int n, double seconds = 0.4) {
  std::vector<data::PairAudio> out;
  for (int i = 0; i < n; ++i) {
    auto clean = data::synthetic_speech(seconds, 100 + i);
    auto noise = data::synthetic_noise(data::NoiseKind::kPink, clean.size(), 200 + i);
    out.push_back({clean, data::synth_mix(clean, noise, 5)});
  }
  return out;
}

models::PredictorConfig tiny_predictor() {
  auto c = models::PredictorConfig::toy();
  c.hidden = 16;
  c.kernels = {3};
  c.dilations = {1, 3};
  return c;
}

models::EnhancerConfig tiny_enhancer() {
  auto c = models::EnhancerConfig::toy();
  c.channels = 8;
  c.heads = 2;
  c.dense_depth = 2;
  c.conv_kernel = 7;
  return c;
}

training::TrainConfig tiny_train(Stage s) {
  auto c = training::TrainConfig::toy(s);
  c.segment = s == Stage::kPredictor ? 3200 : 4000;
  c.lr_init = 1e-3;
  return c;
}

using PT = training::PredictorTrainer<double>;
using ET = training::EnhancerTrainer<double>;

std::unique_ptr<PT> predictor_trainer(training::TrainConfig c = tiny_train(Stage::kPredictor), int n = 2) {
  return std::make_unique<PT>(pairs(n), tiny_predictor(), dsp::StftConfig::predictor(), dsp::MelConfig{}, c);
}

// The SSNR-based scorer keeps the metric discriminator independent of PESQ.
training::MetricScorer ssnr_scorer() {
  return [](const dsp::Waveform& c, const dsp::Waveform& e) -> std::optional<double> {
    return (metrics::ssnr(c, e) + 10) / 45;
  };
}

std::unique_ptr<ET> enhancer_trainer(training::TrainConfig c = tiny_train(Stage::kEnhancer), int n = 2) {
  return std::make_unique<ET>(pairs(n), tiny_enhancer(), dsp::StftConfig::enhancer(), dsp::MelConfig{}, c,
                              ssnr_scorer());
}

fs::path scratch(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("dnvoc_training_test_" + std::to_string(::getpid()));
  fs::create_directories(d);
  return d / name;
}

}  // namespace

// Trajectory frozen from tests/oracles/adamw_oracle.py (torch.optim.AdamW).
TEST(AdamW, MatchesTorchTrajectory) {
  nn::ParamSet<double> ps;
  auto w = ps.add("w", {3}, {0.5, -1.25, 2.0});
  training::AdamW<double> opt(ps, {0.8, 0.99, 1e-8, 0.01});
  const double grads[5][3] = {{0.3, -0.2, 1.0}, {0.1, 0.4, -2.0}, {-0.5, 0.0, 0.5}, {0.2, 0.2, 0.2}, {1e-3, -3.0, 0.0}};
  const double expect[5][3] = {{0.39950000333333324, -1.1487500049999997, 1.898000001},
                               {0.31445651796314389, -1.1897015358072669, 1.9382022828747274},
                               {0.34143642161099513, -1.2190188029133946, 1.9505255959879704},
                               {0.34031155482156522, -1.2429011991893404, 1.9520325725680947},
                               {0.33933670856983594, -1.2128357283056175, 1.9530111585497887}};
  for (int s = 0; s < 5; ++s) {
    auto g = w.mutable_grad();
    for (int i = 0; i < 3; ++i) g[i] = grads[s][i];
    opt.step(s < 3 ? 0.1 : 0.05);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(w.value()[i], expect[s][i], 1e-14) << "step " << s;
  }
  EXPECT_EQ(opt.steps(), 5u);
}

TEST(AdamW, ZeroLearningRateLeavesParametersBitIdentical) {
  auto t = predictor_trainer();
  const auto h = t->task().gen_params().hash();
  const auto hd = t->task().disc_params()->hash();
  t->set_lr_override(0.0);
  t->step();
  t->step();
  EXPECT_EQ(t->task().gen_params().hash(), h);
  EXPECT_EQ(t->task().disc_params()->hash(), hd);
}

TEST(Schedule, ExponentialDecayPerEpoch) {
  auto c = tiny_train(Stage::kPredictor);
  c.batch_size = 2;
  c.weights.w_adv = c.weights.w_fm = 0;
  auto t = predictor_trainer(c, 3);  // ceil(3 / 2) = 2 steps per epoch
  EXPECT_EQ(t->steps_per_epoch(), 2);
  std::vector<double> lrs;
  for (int i = 0; i < 5; ++i) lrs.push_back(t->step().lr);
  const double g = c.lr_decay, l0 = c.lr_init;
  const std::vector<double> expect{l0, l0, l0 * g, l0 * g, l0 * g * g};
  for (int i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(lrs[i], expect[i]);
}

TEST(Trainer, DiscriminatorAndGeneratorUpdatesAreSeparated) {
  for (Stage s : {Stage::kPredictor, Stage::kEnhancer}) {
    auto run = [&](auto& t) {
      auto& gp = t.task().gen_params();
      auto* dp = t.task().disc_params();
      ASSERT_NE(dp, nullptr);
      const auto fwd = t.forward_batch();
      const auto g0 = gp.hash(), d0 = dp->hash();
      ASSERT_TRUE(t.discriminator_step(fwd, 1e-3).has_value());
      EXPECT_EQ(gp.hash(), g0);
      EXPECT_NE(dp->hash(), d0);
      const auto d1 = dp->hash();
      training::StepStats st;
      t.generator_step(fwd, 1e-3, st);
      EXPECT_NE(gp.hash(), g0);
      EXPECT_EQ(dp->hash(), d1);
    };
    if (s == Stage::kPredictor)
      run(*predictor_trainer());
    else
      run(*enhancer_trainer());
  }
}

TEST(Trainer, GeneratorObjectiveIsTheWeightedSumOfItsTerms) {
  auto check = [](auto& t, std::vector<std::string> names) {
    const auto fwd = t.forward_batch();
    const auto lt = t.task().generator_terms(fwd[0]);
    std::vector<std::string> got;
    double sum = 0;
    for (const auto& term : lt.terms) {
      got.push_back(term.name);
      sum += term.weight * term.value.item();
    }
    EXPECT_EQ(got, names);
    EXPECT_NEAR(lt.total().item(), sum, 1e-12 * std::abs(sum));
  };
  check(*predictor_trainer(),
        {"mel", "amp", "phase_ip", "phase_gd", "phase_iaf", "complex", "consistency", "adv", "fm"});
  check(*enhancer_trainer(), {"amp", "phase_ip", "phase_gd", "phase_iaf", "complex", "consistency", "time", "metric"});
}

TEST(Trainer, PredictorTargetsAreTheNoisyWaveform) {
  auto t = predictor_trainer();
  data::Segment seg;
  seg.clean = data::synthetic_speech(0.2, 1);
  seg.noisy = seg.clean;
  for (auto& v : seg.noisy.samples) v = -0.5 * v + 0.01;
  const auto f = t->task().forward(seg);
  EXPECT_EQ(f.target.samples, seg.noisy.samples);
  // the amplitude term compares against log|STFT(noisy)|
  const auto spec = dsp::stft(seg.noisy, dsp::StftConfig::predictor());
  auto log_amp = spec.amplitude;
  for (auto& v : log_amp.data) v = std::log(v + dsp::kLogFloor);
  const auto lt = t->task().generator_terms(f);
  EXPECT_DOUBLE_EQ(lt.terms[1].value.item(),
                   losses::amplitude_loss(f.out.log_amplitude, dsp::array_var<double>(log_amp)).item());
}

TEST(Trainer, SameSeedSameLossCurve) {
  auto a = enhancer_trainer(), b = enhancer_trainer();
  for (int i = 0; i < 3; ++i) {
    const auto sa = a->step(), sb = b->step();
    EXPECT_EQ(sa.generator, sb.generator);
    EXPECT_EQ(sa.discriminator, sb.discriminator);
  }
  auto p = predictor_trainer(), q = predictor_trainer();
  for (int i = 0; i < 2; ++i) EXPECT_EQ(p->step().generator, q->step().generator);
}

TEST(Trainer, ResumeReproducesTheNextStepExactly) {
  for (Stage s : {Stage::kPredictor, Stage::kEnhancer}) {
    const auto stem = scratch(std::string("resume_") + training::to_string(s));
    auto go = [&](auto make) {
      auto a = make();
      a->step();
      a->step();
      a->save(stem);
      const auto next = a->step();
      auto b = make();
      b->resume(stem);
      EXPECT_EQ(b->step_count(), 2);
      const auto again = b->step();
      EXPECT_EQ(again.generator, next.generator);
      EXPECT_EQ(again.discriminator, next.discriminator);
      EXPECT_EQ(b->task().gen_params().hash(), a->task().gen_params().hash());
    };
    if (s == Stage::kPredictor)
      go([] { return predictor_trainer(); });
    else
      go([] { return enhancer_trainer(); });
  }
}

TEST(Checkpoint, ReloadGivesBitIdenticalForward) {
  auto t = predictor_trainer();
  t->step();
  const auto stem = scratch("reload");
  t->save(stem);
  models::Predictor<double> fresh(tiny_predictor(), 999);
  training::load_params(training::CheckpointPaths::from(stem).gen(), fresh.params());
  const auto mel = dsp::mel_spectrogram(data::synthetic_speech(0.3, 5), dsp::StftConfig::predictor());
  const auto a = t->task().model().infer(mel), b = fresh.infer(mel);
  EXPECT_EQ(a.log_amplitude.data, b.log_amplitude.data);
  EXPECT_EQ(a.phase.data, b.phase.data);
  const auto meta = training::read_meta(training::CheckpointPaths::from(stem.string() + ".json"));
  EXPECT_EQ(meta["step"], 1);
  EXPECT_EQ(meta["stage"], "predictor");
  EXPECT_EQ(meta["config_hash"], t->config_hash());
}

TEST(Checkpoint, BindingRejectsOtherConfigsAndCorruptFiles) {
  auto t = predictor_trainer();
  const auto stem = scratch("binding");
  t->save(stem);
  auto other = tiny_predictor();
  other.hidden = 24;
  PT u(pairs(1), other, dsp::StftConfig::predictor(), {}, tiny_train(Stage::kPredictor));
  EXPECT_THROW(u.resume(stem), CheckpointError);
  auto e = enhancer_trainer();
  EXPECT_THROW(e->resume(stem), CheckpointError);
  // truncated weights
  const auto gen = training::CheckpointPaths::from(stem).gen();
  fs::resize_file(gen, fs::file_size(gen) / 2);
  auto v = predictor_trainer();
  EXPECT_THROW(v->resume(stem), CheckpointError);
  EXPECT_THROW(v->resume(scratch("missing")), CheckpointError);
}

TEST(Trainer, NonFiniteLossAborts) {
  auto c = tiny_train(Stage::kPredictor);
  c.weights.w_adv = c.weights.w_fm = 0;
  auto t = predictor_trainer(c);
  t->set_lr_override(1e300);  // the first update overflows the weights
  t->step();
  try {
    t->step();
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("step 2"), std::string::npos) << e.what();
    EXPECT_EQ(e.kind(), "divergence");
  }
  // bad input is rejected before it can reach the loss
  auto d = pairs(1);
  d[0].noisy.samples[100] = std::numeric_limits<double>::quiet_NaN();
  c.segment = static_cast<int>(d[0].noisy.size());
  PT u(d, tiny_predictor(), dsp::StftConfig::predictor(), {}, c);
  EXPECT_THROW(u.step(), InputError);
}

TEST(Trainer, PureReconstructionModeTrains) {
  auto c = tiny_train(Stage::kEnhancer);
  c.weights.w_metric = 0;
  c.segment = 8000;
  auto t = std::make_unique<ET>(pairs(1, 0.5), tiny_enhancer(), dsp::StftConfig::enhancer(), dsp::MelConfig{}, c);
  EXPECT_EQ(t->task().disc_params(), nullptr);
  const double first = t->step().reconstruction;
  double last = first;
  for (int i = 0; i < 15; ++i) {
    const auto st = t->step();
    EXPECT_FALSE(st.discriminator.has_value());
    last = st.reconstruction;
  }
  EXPECT_LT(last, first);
}

TEST(Trainer, JsonlLogAndCheckpointCadence) {
  auto c = tiny_train(Stage::kPredictor);
  c.weights.w_adv = c.weights.w_fm = 0;
  c.log_every = 1;
  c.checkpoint_every = 2;
  auto t = predictor_trainer(c);
  const auto log = scratch("train.jsonl");
  fs::remove(log);
  const auto stem = scratch("cadence/ckpt");
  t->run(3, training::jsonl_log(log), stem);
  std::ifstream f(log);
  std::string line;
  int n = 0;
  while (std::getline(f, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["step"], ++n);
    for (const char* k : {"lr", "wall_time", "reconstruction", "generator"}) EXPECT_TRUE(j.contains(k)) << k;
    EXPECT_TRUE(j["losses"].contains("mel"));
  }
  EXPECT_EQ(n, 3);
  EXPECT_EQ(training::read_meta(training::CheckpointPaths::from(stem))["step"], 3);
  EXPECT_FALSE(fs::exists(training::CheckpointPaths::from(stem).disc()));
}

TEST(TrainConfig, ValidationAndJson) {
  auto c = training::TrainConfig::full(Stage::kEnhancer);
  EXPECT_EQ(c.lr_init, 2e-4);
  EXPECT_EQ(c.adam.beta1, 0.8);
  EXPECT_EQ(c.adam.beta2, 0.99);
  EXPECT_EQ(c.max_steps, 700000);
  const auto back = nlohmann::json(c).get<training::TrainConfig>();
  EXPECT_EQ(nlohmann::json(back), nlohmann::json(c));
  c.lr_init = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = training::TrainConfig::toy(Stage::kPredictor);
  c.max_steps = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(PT({}, tiny_predictor(), dsp::StftConfig::predictor(), {}, tiny_train(Stage::kPredictor)), InputError);
  EXPECT_THROW(PT(pairs(1), tiny_predictor(), dsp::StftConfig::enhancer(), {}, tiny_train(Stage::kPredictor)),
               ConfigError);
}
