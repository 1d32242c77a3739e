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

#ifndef ROMTRACK_COMPLEXITY_H_
#define ROMTRACK_COMPLEXITY_H_

// Closed-form multiply-accumulate and parameter counts.
//
// MACs cover matrix products only: patch embedding, q/k/v/output
// projections, attention scores plus the weighted sum, the FFN and the head
// convolutions. Normalisation, activations, softmax and the position-table
// resampling (a weight-only transform) are not counted.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "romtrack/model_config.h"

namespace romtrack {

struct ComplexityReport {
  std::vector<std::pair<std::string, std::uint64_t>> components;

  std::uint64_t total() const;
  std::uint64_t component(const std::string& name) const;
};

// One forward pass (both templates and the search region embedded, all
// layers, head) for a variant with or without variation tokens.
ComplexityReport count_macs(const ModelConfig& cfg, Variant variant, bool variation_tokens);
inline ComplexityReport count_macs(const ModelConfig& cfg) {
  return count_macs(cfg, cfg.variant, cfg.variation_tokens);
}

// Extra cost of variation tokens: per layer, projecting N_t cached tokens to
// keys and values plus N_t more key/value columns for every query.
std::uint64_t variation_token_macs(const ModelConfig& cfg, Variant variant);

// Census of the declared trainable parameters, grouped by component.
ComplexityReport count_params(const ModelConfig& cfg);

}  // namespace romtrack

#endif  // ROMTRACK_COMPLEXITY_H_
