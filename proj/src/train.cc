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

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

#include "romtrack/errors.h"
#include "romtrack/tracker.h"

namespace romtrack {
namespace {

constexpr int kMaxRedraws = 10000;

std::size_t draw_sequence(const Corpus& corpus, Rng& rng, std::size_t min_length) {
  if (corpus.empty()) throw ContractError("sampler: empty corpus");
  for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
    const std::size_t s = uniform_index(rng, corpus.size());
    if (corpus[s].size() >= min_length && corpus[s].groundtruth.size() == corpus[s].size()) return s;
  }
  throw ContractError("sampler: no sequence has " + std::to_string(min_length) + " frames");
}

Image template_crop(const Sequence& seq, std::size_t frame, const SampleOptions& o) {
  return crop_region(seq.frames[frame], seq.groundtruth[frame], o.template_factor, o.template_size).image;
}

void search_crop(const Sequence& seq, std::size_t frame, Rng& rng, const SampleOptions& o, TrainTriplet& out) {
  const PixelBox& gt = seq.groundtruth[frame];
  const double size = std::sqrt(gt.w * gt.h);
  const double dx = uniform(rng, -o.center_jitter, o.center_jitter) * size;
  const double dy = uniform(rng, -o.center_jitter, o.center_jitter) * size;
  const double scale = std::exp(uniform(rng, -o.scale_jitter, o.scale_jitter));
  const double w = gt.w * scale, h = gt.h * scale;
  const PixelBox around{gt.cx() + dx - 0.5 * w, gt.cy() + dy - 0.5 * h, w, h};
  Crop crop = crop_region(seq.frames[frame], around, o.search_factor, o.search_size);
  out.sr = std::move(crop.image);
  out.gt = crop.spec.box_to_crop(gt);
  out.sr_crop = crop.spec;
  out.sr_frame = frame;
}

TrainTriplet triplet_with_search(const Corpus& corpus, std::size_t s, std::size_t sr_frame, Rng& rng,
                                 const SampleOptions& o) {
  const Sequence& seq = corpus[s];
  TrainTriplet t;
  t.sequence = s;
  t.it_frame = uniform_index(rng, seq.size());
  t.ht_frame = uniform_index(rng, seq.size());
  t.it = template_crop(seq, t.it_frame, o);
  t.ht = template_crop(seq, t.ht_frame, o);
  search_crop(seq, sr_frame, rng, o, t);
  return t;
}

}  // namespace

std::string_view sampling_name(SamplingMode mode) {
  return mode == SamplingMode::kConsecutive ? "consecutive" : "random";
}

SamplingMode parse_sampling(std::string_view name) {
  if (name == "consecutive" || name == "cs") return SamplingMode::kConsecutive;
  if (name == "random" || name == "rs") return SamplingMode::kRandom;
  throw ConfigError("sampling: expected consecutive or random, got '" + std::string(name) + "'");
}

TrainTriplet sample_stage1(const Corpus& corpus, Rng& rng, const SampleOptions& options) {
  const std::size_t s = draw_sequence(corpus, rng, 1);
  const std::size_t sr_frame = uniform_index(rng, corpus[s].size());
  return triplet_with_search(corpus, s, sr_frame, rng, options);
}

Stage2Sample sample_stage2(const Corpus& corpus, Rng& rng, SamplingMode mode, const SampleOptions& options) {
  const std::size_t s = draw_sequence(corpus, rng, 2);
  const std::size_t n = corpus[s].size();
  std::size_t t0, t1;
  if (mode == SamplingMode::kConsecutive) {
    t0 = uniform_index(rng, n - 1);
    t1 = t0 + 1;
  } else {
    t0 = uniform_index(rng, n);
    t1 = uniform_index(rng, n);
  }
  Stage2Sample out;
  out.first = triplet_with_search(corpus, s, t0, rng, options);
  out.second = triplet_with_search(corpus, s, t1, rng, options);
  return out;
}

void augment(Image& image, Box& gt, bool flip, double brightness) {
  if (flip) {
    image = flip_horizontal(image);
    gt.cx = 1.0 - gt.cx;
  }
  if (brightness != 1.0)
    for (double& v : image.pixels) v = std::clamp(v * brightness, 0.0, 1.0);
}

void augment(Image& image, Box& gt, Rng& rng, const AugmentOptions& o) {
  const bool flip = uniform(rng, 0.0, 1.0) < o.flip_probability;
  augment(image, gt, flip, uniform(rng, 1.0 - o.brightness, 1.0 + o.brightness));
}

namespace {

void augment_triplet(TrainTriplet& t, bool flip, Rng& rng, const AugmentOptions& o) {
  Box unused;
  augment(t.it, unused, flip, uniform(rng, 1.0 - o.brightness, 1.0 + o.brightness));
  augment(t.ht, unused, flip, uniform(rng, 1.0 - o.brightness, 1.0 + o.brightness));
  augment(t.sr, t.gt, flip, uniform(rng, 1.0 - o.brightness, 1.0 + o.brightness));
}

}  // namespace

void augment(TrainTriplet& t, Rng& rng, const AugmentOptions& o) {
  const bool flip = uniform(rng, 0.0, 1.0) < o.flip_probability;
  augment_triplet(t, flip, rng, o);
}

void augment(Stage2Sample& s, Rng& rng, const AugmentOptions& o) {
  // The cache carries spatial layout from pass A to pass B, so both passes
  // share the flip.
  const bool flip = uniform(rng, 0.0, 1.0) < o.flip_probability;
  augment_triplet(s.first, flip, rng, o);
  augment_triplet(s.second, flip, rng, o);
}

TrainConfig TrainConfig::stage2_defaults() {
  TrainConfig c;
  c.stage = 2;
  c.steps = 2000;
  c.lr = 4e-5;
  return c;
}

std::int64_t TrainConfig::decay_step() const {
  return static_cast<std::int64_t>(std::llround(decay_fraction * static_cast<double>(steps)));
}

Batch make_batch(const Model& model, std::span<const TrainTriplet> triplets) {
  std::vector<Image> it, ht, sr;
  Batch b;
  for (const auto& t : triplets) {
    it.push_back(t.it);
    ht.push_back(t.ht);
    sr.push_back(t.sr);
    b.gt.push_back(t.gt);
  }
  b.it = model.patches(it);
  b.ht = model.patches(ht);
  b.sr = model.patches(sr);
  b.size = triplets.size();
  return b;
}

LossTerms pass_loss(Model& model, const Batch& batch, const VariationCache* cache, const LossWeights& weights,
                    VariationCache* cache_out) {
  ModelOutput out = model.forward(batch.it, batch.ht, batch.sr, batch.size, cache, true);
  if (cache_out) *cache_out = std::move(out.cache);
  return total_loss(out.maps, batch.gt, weights);
}

LossTerms stage2_loss(Model& model, const Batch& first, const Batch& second, bool variation_tokens,
                      const LossWeights& weights) {
  VariationCache cache;
  LossTerms a = pass_loss(model, first, nullptr, weights, &cache);
  LossTerms b = pass_loss(model, second, variation_tokens ? &cache : nullptr, weights);
  return {add(a.total, b.total), a.l1 + b.l1, a.giou + b.giou, a.cls + b.cls};
}

TrainResult train(Model& model, const Corpus& corpus, const TrainConfig& cfg, const StepCallback& on_step,
                  std::optional<OptimState> resume) {
  if (cfg.stage != 1 && cfg.stage != 2) throw ConfigError("train: stage must be 1 or 2");
  if (cfg.batch == 0) throw ConfigError("train: batch must be positive");
  const ModelConfig& mc = model.config();
  SampleOptions so = cfg.sample;
  so.template_size = mc.template_size;
  so.search_size = mc.search_size;

  std::vector<Tensor> params = model.trainable();
  AdamWOptions ao;
  ao.lr = cfg.lr;
  ao.weight_decay = cfg.weight_decay;
  TrainResult result;
  result.optim = resume ? std::move(*resume) : make_optim_state(params, ao);
  result.optim.options.weight_decay = cfg.weight_decay;

  const std::string tag = cfg.stage == 1 ? "stage1" : "stage2";
  Rng sample_rng = make_stream(cfg.seed, tag + ".sample");
  Rng augment_rng = make_stream(cfg.seed, tag + ".augment");
  const bool vt = cfg.stage == 2 && cfg.pass_b_variation_tokens && mc.variation_tokens && mc.uses_hybrid();

  double first_loss = 0.0;
  std::size_t above = 0;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    StepRecord rec;
    rec.step = step;
    rec.lr = step_decay_lr(cfg.lr, cfg.lr_decay, cfg.decay_step(), static_cast<std::int64_t>(step));
    for (auto& p : params) p.zero_grad();

    Tensor loss;
    if (cfg.stage == 1) {
      std::vector<TrainTriplet> triplets;
      for (std::size_t i = 0; i < cfg.batch; ++i) {
        triplets.push_back(sample_stage1(corpus, sample_rng, so));
        augment(triplets.back(), augment_rng, cfg.augment);
      }
      LossTerms terms = pass_loss(model, make_batch(model, triplets), nullptr, cfg.loss);
      loss = terms.total;
      rec.l1 = terms.l1;
      rec.giou = terms.giou;
      rec.cls = terms.cls;
    } else {
      std::vector<TrainTriplet> first, second;
      for (std::size_t i = 0; i < cfg.batch; ++i) {
        Stage2Sample s = sample_stage2(corpus, sample_rng, cfg.sampling, so);
        augment(s, augment_rng, cfg.augment);
        first.push_back(std::move(s.first));
        second.push_back(std::move(s.second));
      }
      LossTerms terms = stage2_loss(model, make_batch(model, first), make_batch(model, second), vt, cfg.loss);
      loss = terms.total;
      rec.l1 = terms.l1;
      rec.giou = terms.giou;
      rec.cls = terms.cls;
    }
    rec.loss = loss.item();
    if (!std::isfinite(rec.loss)) {
      std::ostringstream msg;
      msg << "train: non-finite loss at step " << step;
      throw DivergenceError(msg.str());
    }
    if (step == 0) first_loss = rec.loss;
    above = rec.loss > cfg.divergence_factor * first_loss ? above + 1 : 0;
    if (above >= cfg.divergence_patience) {
      std::ostringstream msg;
      msg << "train: loss " << rec.loss << " above " << cfg.divergence_factor << "x the first loss (" << first_loss
          << ") for " << above << " steps, aborting at step " << step;
      throw DivergenceError(msg.str());
    }

    backward(loss);
    rec.grad_norm = clip_grad_norm(params, cfg.clip_norm);
    result.optim.options.lr = rec.lr;
    adamw_step(params, result.optim);
    result.trace.push_back(rec);
    if (on_step) on_step(rec);
  }
  return result;
}

}  // namespace romtrack
