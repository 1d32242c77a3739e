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

#ifndef ROMTRACK_MODEL_H_
#define ROMTRACK_MODEL_H_

// The full tracker network: patch embedding, object encoder and head, with
// a single declaration of every named parameter.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "romtrack/encoder.h"
#include "romtrack/head.h"
#include "romtrack/image.h"
#include "romtrack/model_config.h"
#include "romtrack/rng.h"
#include "romtrack/tensor.h"

namespace romtrack {

enum class ParamRole { kProjection, kBias, kNormGain, kNormBias, kPosition, kConv, kRunningMean, kRunningVar };

struct ParamSpec {
  std::string name;
  Shape shape;
  ParamRole role;
};

// Trainable tensors in canonical order. Shapes depend on the geometry knobs
// (patch size, width, depth, head widths, native position grids) and never
// on token counts.
std::vector<ParamSpec> declare_parameters(const ModelConfig& cfg);
// Non-trained state saved with the weights (batch-norm running statistics).
std::vector<ParamSpec> declare_buffers(const ModelConfig& cfg);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct ModelOutput {
  HeadMaps maps;
  VariationCache cache;
  Segments features;
};

class Model {
 public:
  // Gains 1, running variances 1, everything else 0.
  explicit Model(const ModelConfig& cfg);

  // Random initialisation: truncated normal (σ = 0.02) for transformer and
  // embedding weights, He normal for head convolutions, and a classification
  // prior of 0.1 on the score branch.
  void initialize(Rng& rng);

  const ModelConfig& config() const { return cfg_; }

  // Handles in declaration order; mutating their values mutates the model.
  std::vector<NamedTensor> parameters() const;
  std::vector<NamedTensor> buffers() const;
  std::vector<Tensor> trainable() const;

  // Normalised, patchified images stacked batch-major: [B·N × 3P²].
  Tensor patches(std::span<const Image> images) const;

  Tensor embed_template(const Tensor& patches) const;
  Tensor embed_search(const Tensor& patches) const;

  // Template patches feed the streams the variant uses: it for STM/ROM, ht
  // for HTM/ROM. `cache` may be null or empty.
  ModelOutput forward(const Tensor& it_patches, const Tensor& ht_patches, const Tensor& sr_patches,
                      std::size_t batch, const VariationCache* cache, bool training);
  // Same, from already embedded tokens (templates embedded once per video).
  ModelOutput forward_tokens(const Tensor& it_tokens, const Tensor& ht_tokens, const Tensor& sr_tokens,
                             std::size_t batch, const VariationCache* cache, bool training);

  EncoderSettings encoder_settings() const { return {cfg_.variant, cfg_.heads, cfg_.ln_eps}; }

  std::vector<EncoderLayerParams> layers;
  HeadParams head;
  Tensor patch_proj;    // [3P² × D]
  Tensor pos_template;  // [gt² × D] at the native grid
  Tensor pos_search;    // [gs² × D]
  Tensor norm_gain, norm_bias;

 private:
  Tensor pos_for(const Tensor& table, std::size_t native, std::size_t actual) const;

  ModelConfig cfg_;
};

// Search-token features after the backbone's final norm, as fed to the head.
Tensor head_input(const Model& model, const Segments& features);

}  // namespace romtrack

#endif  // ROMTRACK_MODEL_H_
