/* Copyright 2026 The romtrack Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "romtrack/train.h"

#include <gtest/gtest.h>

#include <map>

#include "romtrack/errors.h"
#include "test_util.h"

namespace romtrack {
namespace {

using testing::bit_identical;

const Corpus& small_corpus() {
  static const Corpus corpus = [] {
    CorpusOptions o;
    o.sequences = 4;
    o.frames = 10;
    return generate_corpus(o, 21);
  }();
  return corpus;
}

ModelConfig tiny_config(Variant v = Variant::kROM, bool vt = true) {
  ModelConfig cfg;
  cfg.dim = 16;
  cfg.heads = 2;
  cfg.depth = 2;
  cfg.head_channels = 8;
  cfg.head_layers = 2;
  cfg.variant = v;
  cfg.variation_tokens = vt;
  return cfg;
}

Model tiny_model(Variant v = Variant::kROM, bool vt = true, std::uint64_t seed = 1) {
  Model m(tiny_config(v, vt));
  Rng rng(seed);
  m.initialize(rng);
  return m;
}

double chi_square(const std::vector<std::size_t>& counts, double expected) {
  double chi = 0.0;
  for (auto c : counts) chi += (c - expected) * (c - expected) / expected;
  return chi;
}

// ---- sampling ----------------------------------------------------------------------

TEST(SampleTest, Stage1TripletsComeFromOneSequence) {
  const Corpus& corpus = small_corpus();
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    TrainTriplet t = sample_stage1(corpus, rng);
    ASSERT_LT(t.sequence, corpus.size());
    const Sequence& seq = corpus[t.sequence];
    ASSERT_LT(t.it_frame, seq.size());
    ASSERT_LT(t.ht_frame, seq.size());
    ASSERT_LT(t.sr_frame, seq.size());
    // Templates are centred on their ground truth.
    Crop it = crop_region(seq.frames[t.it_frame], seq.groundtruth[t.it_frame], 2.0, 32);
    EXPECT_EQ(it.image.pixels, t.it.pixels);
    EXPECT_NEAR(it.spec.center_x, seq.groundtruth[t.it_frame].cx(), 1e-12);
    // The search label maps back to the annotation.
    PixelBox back = t.sr_crop.box_to_frame(t.gt);
    const PixelBox& gt = seq.groundtruth[t.sr_frame];
    EXPECT_NEAR(back.x, gt.x, 1e-9);
    EXPECT_NEAR(back.w, gt.w, 1e-9);
    EXPECT_GE(t.gt.cx, 0.0);
    EXPECT_LT(t.gt.cx, 1.0);
    EXPECT_GE(t.gt.cy, 0.0);
    EXPECT_LT(t.gt.cy, 1.0);
  }
}

TEST(SampleTest, Stage1SearchFramesAreUniform) {
  Corpus one = {small_corpus()[0]};
  Rng rng(2);
  std::vector<std::size_t> counts(10, 0);
  for (int i = 0; i < 10000; ++i) ++counts[sample_stage1(one, rng).sr_frame];
  // χ² with 9 degrees of freedom, p = 0.01.
  EXPECT_LT(chi_square(counts, 1000.0), 21.666);
}

TEST(SampleTest, ConsecutiveModePairsNeighbouringFrames) {
  const Corpus& corpus = small_corpus();
  Rng rng(3);
  for (int i = 0; i < 10000; ++i) {
    Stage2Sample s = sample_stage2(corpus, rng, SamplingMode::kConsecutive);
    ASSERT_EQ(s.first.sequence, s.second.sequence);
    ASSERT_EQ(s.second.sr_frame, s.first.sr_frame + 1);
    const Sequence& seq = corpus[s.first.sequence];
    for (const TrainTriplet* t : {&s.first, &s.second}) {
      PixelBox back = t->sr_crop.box_to_frame(t->gt);
      ASSERT_NEAR(back.cx(), seq.groundtruth[t->sr_frame].cx(), 1e-9);
      ASSERT_NEAR(back.h, seq.groundtruth[t->sr_frame].h, 1e-9);
    }
  }
}

TEST(SampleTest, RandomModeDrawsIndependentUniformFrames) {
  Corpus one = {small_corpus()[1]};
  Rng rng(4);
  std::vector<std::size_t> joint(100, 0);
  for (int i = 0; i < 10000; ++i) {
    Stage2Sample s = sample_stage2(one, rng, SamplingMode::kRandom);
    ++joint[s.first.sr_frame * 10 + s.second.sr_frame];
  }
  // χ² with 99 degrees of freedom, p = 0.01.
  EXPECT_LT(chi_square(joint, 100.0), 134.642);
}

TEST(SampleTest, ShortSequencesAreSkipped) {
  Corpus c = {small_corpus()[0], small_corpus()[1]};
  c[0].frames.resize(1);
  c[0].groundtruth.resize(1);
  Rng rng(5);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_stage2(c, rng, SamplingMode::kConsecutive).first.sequence, 1u);
  Corpus too_short = {c[0]};
  EXPECT_THROW(sample_stage2(too_short, rng, SamplingMode::kConsecutive), ContractError);
  EXPECT_THROW(sample_stage1(Corpus{}, rng), ContractError);
}

// ---- augmentation ------------------------------------------------------------------

TEST(AugmentTest, FlipTwiceAndUnitBrightnessAreIdentities) {
  Rng rng(6);
  TrainTriplet t = sample_stage1(small_corpus(), rng);
  Image im = t.sr;
  Box gt = t.gt;
  augment(im, gt, true, 1.0);
  EXPECT_NEAR(gt.cx, 1.0 - t.gt.cx, 1e-15);
  EXPECT_EQ(gt.cy, t.gt.cy);
  EXPECT_EQ(im.at(3, 0, 1), t.sr.at(3, 63, 1));
  augment(im, gt, true, 1.0);
  EXPECT_EQ(im.pixels, t.sr.pixels);
  EXPECT_EQ(gt, t.gt);
}

TEST(AugmentTest, BrightnessScalesAndClamps) {
  Image im(2, 2, 0.5);
  im.at(0, 0, 0) = 0.9;
  Box gt{0.5, 0.5, 0.1, 0.1};
  augment(im, gt, false, 1.2);
  EXPECT_DOUBLE_EQ(im.at(0, 0, 0), 1.0);
  EXPECT_DOUBLE_EQ(im.at(1, 1, 2), 0.6);
}

TEST(AugmentTest, RandomDrawsStayInRange) {
  Rng rng(7);
  int flips = 0;
  for (int i = 0; i < 2000; ++i) {
    Image im(1, 1, 0.5);
    Box gt{0.3, 0.5, 0.1, 0.1};
    augment(im, gt, rng);
    flips += gt.cx > 0.5;
    EXPECT_GE(im.pixels[0], 0.4 - 1e-12);
    EXPECT_LE(im.pixels[0], 0.6 + 1e-12);
  }
  EXPECT_NEAR(flips / 2000.0, 0.5, 0.05);
}

TEST(AugmentTest, TripletsFlipTogether) {
  Rng sample(8);
  TrainTriplet t = sample_stage1(small_corpus(), sample);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    TrainTriplet a = t;
    Rng rng(seed);
    augment(a, rng, AugmentOptions{0.5, 0.0});
    const bool flipped = a.gt.cx != t.gt.cx;
    EXPECT_EQ(a.it.pixels == flip_horizontal(t.it).pixels, flipped);
    EXPECT_EQ(a.ht.pixels == flip_horizontal(t.ht).pixels, flipped);
    EXPECT_EQ(a.sr.pixels == flip_horizontal(t.sr).pixels, flipped);
  }
}

// ---- training ----------------------------------------------------------------------

TrainConfig quick_config(int stage, std::size_t steps) {
  TrainConfig c = stage == 1 ? TrainConfig{} : TrainConfig::stage2_defaults();
  c.steps = steps;
  c.batch = 2;
  return c;
}

TEST(TrainTest, LearningRateDropsTenfoldAtTheDecayPoint) {
  Model m = tiny_model();
  TrainConfig c = quick_config(1, 10);
  TrainResult r = train(m, small_corpus(), c);
  ASSERT_EQ(r.trace.size(), 10u);
  for (const auto& s : r.trace) EXPECT_DOUBLE_EQ(s.lr, s.step < 8 ? 4e-4 : 4e-5);
  EXPECT_DOUBLE_EQ(TrainConfig::stage2_defaults().lr, TrainConfig{}.lr / 10);
  EXPECT_EQ(TrainConfig::stage2_defaults().steps, 2000u);
  EXPECT_EQ(TrainConfig{}.steps, 8000u);
}

TEST(TrainTest, FixedSeedReproducesTheLossTrace) {
  for (int stage : {1, 2}) {
    Model a = tiny_model(), b = tiny_model();
    TrainResult ra = train(a, small_corpus(), quick_config(stage, 4));
    TrainResult rb = train(b, small_corpus(), quick_config(stage, 4));
    for (std::size_t i = 0; i < 4; ++i) {
      EXPECT_EQ(ra.trace[i].loss, rb.trace[i].loss);
      EXPECT_EQ(ra.trace[i].grad_norm, rb.trace[i].grad_norm);
    }
    auto pa = a.parameters(), pb = b.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(bit_identical(pa[i].tensor, pb[i].tensor));
  }
}

TEST(TrainTest, ClippedGradientNormIsBounded) {
  Model m = tiny_model();
  Rng rng(9);
  std::vector<TrainTriplet> ts = {sample_stage1(small_corpus(), rng), sample_stage1(small_corpus(), rng)};
  auto params = m.trainable();
  backward(pass_loss(m, make_batch(m, ts), nullptr, LossWeights{}).total);
  const double before = clip_grad_norm(params, 0.1);
  ASSERT_GT(before, 0.1);
  EXPECT_LE(global_grad_norm(params), 0.1 + 1e-9);
}

TEST(TrainTest, DivergenceAbortsWithDiagnostic) {
  Model m = tiny_model();
  TrainConfig c = quick_config(1, 10);
  c.divergence_factor = 0.0;  // every step counts as diverged
  c.divergence_patience = 3;
  try {
    train(m, small_corpus(), c);
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("step 2"), std::string::npos) << e.what();
  }
}

std::pair<Batch, Batch> stage2_batches(const Model& m, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TrainTriplet> first, second;
  for (int i = 0; i < 2; ++i) {
    Stage2Sample s = sample_stage2(small_corpus(), rng, SamplingMode::kConsecutive);
    first.push_back(s.first);
    second.push_back(s.second);
  }
  return {make_batch(m, first), make_batch(m, second)};
}

TEST(TrainTest, PassBReceivesPassACacheExactly) {
  Model m = tiny_model();
  auto [first, second] = stage2_batches(m, 10);
  VariationCache cache;
  pass_loss(m, first, nullptr, LossWeights{}, &cache);
  ModelOutput independent = m.forward(first.it, first.ht, first.sr, first.size, nullptr, true);
  ASSERT_EQ(cache.layers.size(), 2u);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_TRUE(bit_identical(cache.layers[k], independent.cache.layers[k]));
    EXPECT_FALSE(cache.layers[k].requires_grad());
  }
}

TEST(TrainTest, WithoutVariationTokensStage2IsTwoStage1Passes) {
  Model m = tiny_model();
  auto [first, second] = stage2_batches(m, 11);
  const double joint = stage2_loss(m, first, second, false, LossWeights{}).total.item();
  const double a = pass_loss(m, first, nullptr, LossWeights{}).total.item();
  const double b = pass_loss(m, second, nullptr, LossWeights{}).total.item();
  EXPECT_NEAR(joint, a + b, 1e-10);
  const double with_vt = stage2_loss(m, first, second, true, LossWeights{}).total.item();
  EXPECT_GT(std::abs(with_vt - joint), 1e-9);
}

TEST(TrainTest, NoGradientFlowsThroughTheCache) {
  Model m = tiny_model();
  auto [first, second] = stage2_batches(m, 12);
  auto params = m.trainable();
  for (auto& p : params) p.zero_grad();
  backward(stage2_loss(m, first, second, true, LossWeights{}).total);
  std::vector<std::vector<double>> grads;
  for (auto& p : params) grads.emplace_back(p.grad().begin(), p.grad().end());

  // Same objective with the cache rebuilt as raw constants.
  for (auto& p : params) p.zero_grad();
  VariationCache cache;
  LossTerms a = pass_loss(m, first, nullptr, LossWeights{}, &cache);
  VariationCache constants;
  for (const auto& layer : cache.layers)
    constants.layers.emplace_back(layer.shape(), std::vector<double>(layer.values().begin(), layer.values().end()));
  LossTerms b = pass_loss(m, second, &constants, LossWeights{});
  backward(add(a.total, b.total));
  for (std::size_t i = 0; i < params.size(); ++i)
    for (std::size_t j = 0; j < grads[i].size(); ++j) ASSERT_EQ(params[i].grad()[j], grads[i][j]);
}

TEST(TrainTest, TinyRunReducesTheLoss) {
  Model m = tiny_model();
  TrainConfig c = quick_config(1, 120);
  c.batch = 4;
  c.clip_norm = 1.0;
  Corpus one = {small_corpus()[0]};
  TrainResult r = train(m, one, c);
  double early = 0.0, late = 0.0;
  for (std::size_t i = 0; i < 20; ++i) {
    early += r.trace[i].loss;
    late += r.trace[100 + i].loss;
  }
  EXPECT_LT(late, 0.8 * early);
}

TEST(TrainTest, RejectsBadStage) {
  Model m = tiny_model();
  TrainConfig c = quick_config(1, 1);
  c.stage = 3;
  EXPECT_THROW(train(m, small_corpus(), c), ConfigError);
}

}  // namespace
}  // namespace romtrack
