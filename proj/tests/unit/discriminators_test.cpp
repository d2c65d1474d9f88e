// Copyright 2026 The dnvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <gtest/gtest.h>

#include <random>

#include "dnvoc/losses/losses.hpp"
#include "dnvoc/models/discriminators.hpp"
#include "support/gradcheck.hpp"

using namespace dnvoc;
using models::DiscriminatorConfig;
using models::DiscriminatorSuite;
using models::DiscVariant;

namespace {

ad::Var<double> noise(int n, std::uint64_t seed, bool leaf = false) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  std::vector<double> v(n);
  for (auto& e : v) e = u(rng);
  return leaf ? ad::Var<double>::parameter({n}, v) : ad::Var<double>::constant({n}, v);
}

DiscriminatorConfig tiny() {
  DiscriminatorConfig c;
  c.periods = {2, 3};
  c.resolutions = {{16, 4, 16}, {32, 8, 32}};
  c.width_div = 32;
  return c;
}

int ceil_div(int a, int b) { return (a + b - 1) / b; }

}  // namespace

TEST(Discriminators, EightScoreMapsForDefaultSuite) {
  for (auto v : {DiscVariant::kMrd, DiscVariant::kMsd}) {
    auto c = DiscriminatorConfig::toy();
    c.variant = v;
    DiscriminatorSuite<float> d(c, 1);
    ad::NoGradGuard ng;
    std::vector<float> w(4000, 0.1f);
    const auto out = d(ad::Var<float>::constant({4000}, w));
    EXPECT_EQ(out.scores.size(), 8u) << models::to_string(v);
    EXPECT_EQ(c.sub_count(), 8);
    // MPD: 5 convs + post, MRD: 5 convs + post, MSD: 7 convs + post
    EXPECT_EQ(out.features.size(), v == DiscVariant::kMrd ? 8u * 6 : 5u * 6 + 3u * 8);
  }
}

TEST(Discriminators, PeriodScoreLengthShrinksWithPeriod) {
  DiscriminatorConfig c = DiscriminatorConfig::toy();
  DiscriminatorSuite<float> d(c, 2);
  ad::NoGradGuard ng;
  for (int L : {1000, 3201, 8000}) {
    const auto out = d(ad::Var<float>::constant({L}, std::vector<float>(L, 0.0f)));
    for (std::size_t i = 0; i < c.periods.size(); ++i) {
      const int p = c.periods[i];
      int h = ceil_div(L, p);
      for (int k = 0; k < 4; ++k) h = ceil_div(h, 3);
      const auto& s = out.scores[i];
      ASSERT_EQ(s.rank(), 3);
      EXPECT_EQ(s.dim(1), h) << "L=" << L << " p=" << p;
      EXPECT_EQ(s.dim(2), p);
    }
    // MRD maps follow the frame count of each resolution
    for (std::size_t r = 0; r < c.resolutions.size(); ++r) {
      const auto& s = out.scores[c.periods.size() + r];
      EXPECT_EQ(s.dim(1), c.resolutions[r].n_fft / 2 + 1);
      EXPECT_EQ(s.dim(2), ceil_div(L / c.resolutions[r].hop + 1, 8));
    }
  }
}

TEST(Discriminators, FeatureMatchingZeroForIdenticalInputs) {
  DiscriminatorSuite<double> d(tiny(), 3);
  const auto w = noise(300, 4);
  const auto a = d(w), b = d(w);
  EXPECT_EQ(losses::feature_matching_loss(a.features, b.features).item(), 0.0);
  const auto c = d(noise(300, 5));
  EXPECT_GT(losses::feature_matching_loss(a.features, c.features).item(), 0.0);
}

TEST(Discriminators, GradientFlowsToWaveformAndParams) {
  for (auto v : {DiscVariant::kMrd, DiscVariant::kMsd}) {
    auto c = tiny();
    c.variant = v;
    DiscriminatorSuite<double> d(c, 6);
    auto w = noise(120, 7, true);
    auto out = d(w);
    losses::generator_adv_loss(out.scores).backward();
    double gw = 0;
    for (double e : w.grad()) gw += std::abs(e);
    EXPECT_GT(gw, 0.0);
    d.params().zero_grad();
    auto real = d(noise(120, 8)), fake = d(noise(120, 9));
    losses::discriminator_loss(real.scores, fake.scores).backward();
    for (const auto& [name, p] : d.params().items()) {
      double g = 0;
      for (double e : p.grad()) g += std::abs(e);
      EXPECT_GT(g, 0.0) << name;
    }
  }
}

TEST(Discriminators, WaveformGradientMatchesFiniteDifferences) {
  for (auto v : {DiscVariant::kMrd, DiscVariant::kMsd}) {
    auto c = tiny();
    c.variant = v;
    DiscriminatorSuite<double> d(c, 10);
    std::vector<ad::Var<double>> in{noise(48, 11, true)};
    auto r = dnvoc::testing::grad_check(in, [&] { return losses::generator_adv_loss(d(in[0]).scores); }, 1e-6,
                                        1e-5);  // central differences carry ~1e-10 noise
    EXPECT_LT(r.max_rel_error, 1e-4) << models::to_string(v);
  }
}

TEST(Discriminators, ShortInputsAndValidation) {
  DiscriminatorSuite<float> d(DiscriminatorConfig::toy(), 12);
  ad::NoGradGuard ng;
  for (int L : {2, 7, 100}) EXPECT_EQ(d(ad::Var<float>::constant({L}, std::vector<float>(L, 0.2f))).scores.size(), 8u);
  EXPECT_THROW(d(ad::Var<float>::zeros({1})), InputError);
  auto bad = DiscriminatorConfig::toy();
  bad.periods = {2, 2};
  EXPECT_THROW(DiscriminatorSuite<float>(bad, 1), ConfigError);
  bad = DiscriminatorConfig::toy();
  bad.resolutions = {{64, 80, 64}};
  EXPECT_THROW(DiscriminatorSuite<float>(bad, 1), ConfigError);
}

TEST(Discriminators, DeterministicAndJsonRoundTrip) {
  auto c = tiny();
  c.variant = DiscVariant::kMsd;
  DiscriminatorSuite<float> a(c, 13), b(c, 13);
  EXPECT_EQ(a.params().hash(), b.params().hash());
  const nlohmann::json j = c;
  EXPECT_EQ(j.get<DiscriminatorConfig>(), c);
}

TEST(MetricDiscriminator, ScoreInUnitIntervalForArbitraryParams) {
  models::MetricDiscriminator<double> m(4, 14);
  std::mt19937_64 rng(15);
  for (double scale : {0.01, 1.0, 50.0}) {
    std::normal_distribution<double> n(0, scale);
    for (auto& [_, p] : m.params().items())
      for (auto& e : p.mutable_value()) e = n(rng);
    for (int frames : {3, 16, 40}) {
      std::vector<double> a(frames * 201), b(frames * 201);
      std::uniform_real_distribution<double> u(0, 2);
      for (auto& e : a) e = u(rng);
      for (auto& e : b) e = u(rng);
      const auto s = m(ad::Var<double>::constant({frames, 201}, a), ad::Var<double>::constant({frames, 201}, b));
      ASSERT_EQ(s.numel(), 1u);
      EXPECT_GE(s.item(), 0.0);
      EXPECT_LE(s.item(), 1.0);
    }
  }
  EXPECT_THROW(m(ad::Var<double>::zeros({20, 201}), ad::Var<double>::zeros({20, 200})), MismatchError);
}

TEST(MetricDiscriminator, GradientMatchesFiniteDifferences) {
  models::MetricDiscriminator<double> m(2, 16);
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.1, 1.5);
  std::normal_distribution<double> n(0, 0.5);
  std::vector<double> a(20 * 36), b(20 * 36);
  for (auto& e : a) e = u(rng);
  for (auto& e : b) e = u(rng);
  std::vector<ad::Var<double>> in;
  for (auto& [_, p] : m.params().items()) {
    for (auto& e : p.mutable_value()) e = n(rng);  // keep PReLU inputs off the kink
    in.push_back(p);
  }
  const auto va = ad::Var<double>::constant({20, 36}, a), vb = ad::Var<double>::constant({20, 36}, b);
  auto r = dnvoc::testing::grad_check(in, [&] {
    return losses::metric_disc_loss(m(va, vb), ad::Var<double>::scalar(0.7));
  }, 1e-6, 1e-5);
  EXPECT_LT(r.max_rel_error, 1e-4) << "abs " << r.max_abs_error;
}
