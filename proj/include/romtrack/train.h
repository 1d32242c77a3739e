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

#ifndef ROMTRACK_TRAIN_H_
#define ROMTRACK_TRAIN_H_

// Sampling, augmentation and the two training stages.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "romtrack/head.h"
#include "romtrack/image.h"
#include "romtrack/model.h"
#include "romtrack/optim.h"
#include "romtrack/rng.h"
#include "romtrack/synthetic.h"
#include "romtrack/tracker.h"

namespace romtrack {

enum class SamplingMode { kConsecutive, kRandom };

std::string_view sampling_name(SamplingMode mode);
SamplingMode parse_sampling(std::string_view name);

struct SampleOptions {
  std::size_t template_size = 32;
  std::size_t search_size = 64;
  double template_factor = 2.0;
  double search_factor = 4.0;
  // Search crops are centred on a jittered box: the centre moves by up to
  // center_jitter·√(wh) per axis and the side scales by exp(±scale_jitter).
  double center_jitter = 1.0;
  double scale_jitter = 0.25;
};

// One triplet: two templates and a search crop, all from one sequence.
struct TrainTriplet {
  Image it, ht, sr;
  Box gt;  // normalised to the search crop
  CropSpec sr_crop;
  std::size_t sequence = 0;
  std::size_t it_frame = 0, ht_frame = 0, sr_frame = 0;
};

struct Stage2Sample {
  TrainTriplet first;   // search frame t
  TrainTriplet second;  // search frame t + 1 (consecutive) or any frame (random)
};

// Sequences shorter than the sampler needs are skipped and redrawn.
TrainTriplet sample_stage1(const Corpus& corpus, Rng& rng, const SampleOptions& options = {});
Stage2Sample sample_stage2(const Corpus& corpus, Rng& rng, SamplingMode mode, const SampleOptions& options = {});

struct AugmentOptions {
  double flip_probability = 0.5;
  double brightness = 0.2;  // scale drawn from [1 - b, 1 + b]
};

// Horizontal mirror plus brightness scaling clamped to [0, 1].
void augment(Image& image, Box& gt, bool flip, double brightness);
void augment(Image& image, Box& gt, Rng& rng, const AugmentOptions& options = {});
// One flip decision per triplet so templates and search stay consistent;
// brightness is drawn per image.
void augment(TrainTriplet& triplet, Rng& rng, const AugmentOptions& options = {});
void augment(Stage2Sample& sample, Rng& rng, const AugmentOptions& options = {});

struct TrainConfig {
  int stage = 1;
  std::size_t steps = 8000;
  std::size_t batch = 16;
  double lr = 4e-4;
  double lr_decay = 10.0;
  double decay_fraction = 0.8;
  double weight_decay = 1e-4;
  double clip_norm = 0.1;
  SamplingMode sampling = SamplingMode::kConsecutive;
  SampleOptions sample;
  AugmentOptions augment;
  LossWeights loss;
  std::uint64_t seed = 0;
  double divergence_factor = 10.0;
  std::size_t divergence_patience = 100;
  // Stage 2 only: feed pass A's hybrid-template outputs to pass B.
  bool pass_b_variation_tokens = true;

  // Stage-2 defaults: lr one tenth of stage 1, 2000 steps.
  static TrainConfig stage2_defaults();
  std::int64_t decay_step() const;
};

struct StepRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double l1 = 0.0;
  double giou = 0.0;
  double cls = 0.0;
  double grad_norm = 0.0;  // before clipping
};

struct TrainResult {
  std::vector<StepRecord> trace;
  OptimState optim;
};

using StepCallback = std::function<void(const StepRecord&)>;

// Stage 1 trains without variation tokens on triplets. Stage 2 runs two
// passes per sample; pass B sees pass A's cache as constants and the two
// losses are summed. `resume` continues an optimizer state. Throws
// DivergenceError when the loss stays above factor × the first loss for
// `patience` consecutive steps.
TrainResult train(Model& model, const Corpus& corpus, const TrainConfig& cfg, const StepCallback& on_step = {},
                  std::optional<OptimState> resume = std::nullopt);

// Batched helpers, also used by tests.
struct Batch {
  Tensor it, ht, sr;  // stacked patches
  std::vector<Box> gt;
  std::size_t size = 0;
};
Batch make_batch(const Model& model, std::span<const TrainTriplet> triplets);

// Loss of one stage-1 style pass; `cache` may be null.
LossTerms pass_loss(Model& model, const Batch& batch, const VariationCache* cache, const LossWeights& weights,
                    VariationCache* cache_out = nullptr);

// Stage-2 objective: pass A without variation tokens, pass B with pass A's
// cache when `variation_tokens` is set, losses summed.
LossTerms stage2_loss(Model& model, const Batch& first, const Batch& second, bool variation_tokens,
                      const LossWeights& weights);

}  // namespace romtrack

#endif  // ROMTRACK_TRAIN_H_
