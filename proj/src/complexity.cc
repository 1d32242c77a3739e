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

#include "romtrack/complexity.h"

#include "romtrack/encoder.h"
#include "romtrack/errors.h"
#include "romtrack/model.h"

namespace romtrack {

std::uint64_t ComplexityReport::total() const {
  std::uint64_t t = 0;
  for (const auto& [name, value] : components) t += value;
  return t;
}

std::uint64_t ComplexityReport::component(const std::string& name) const {
  for (const auto& [n, value] : components)
    if (n == name) return value;
  throw ContractError("complexity report has no component " + name);
}

ComplexityReport count_macs(const ModelConfig& cfg, Variant variant, bool variation_tokens) {
  ModelConfig c = cfg;
  c.variant = variant;
  c.variation_tokens = variation_tokens;
  c.validate();
  using u64 = std::uint64_t;
  const TokenLayout l = TokenLayout::for_variant(variant, variation_tokens, c.template_tokens(), c.search_tokens());
  const u64 d = c.dim, hidden = c.dim * c.mlp_ratio, depth = c.depth;
  const u64 nz = l.n_ht + l.n_sr;

  u64 embed = (u64(l.n_it) + l.n_ht + l.n_sr) * c.patch_values() * d;
  u64 proj = 0, scores = 0, ffn = 0;
  if (l.n_it) {
    proj += 4 * u64(l.n_it) * d * d;  // q, k, v, out
    scores += 2 * u64(l.n_it) * l.n_it * d;
    ffn += 2 * u64(l.n_it) * d * hidden;
  }
  proj += 4 * nz * d * d + 2 * u64(l.n_vt) * d * d;
  scores += 2 * nz * l.key_count() * d;
  ffn += 2 * nz * d * hidden;

  u64 head = 0;
  const u64 cells = c.search_tokens();
  for (u64 outputs : {1, 2, 2}) {
    u64 in = d;
    for (std::size_t i = 0; i < c.head_layers; ++i) {
      const u64 width = c.head_channels >> i;
      head += cells * 9 * in * width;
      in = width;
    }
    head += cells * in * outputs;
  }

  ComplexityReport r;
  r.components = {{"patch_embed", embed},
                  {"attention_projections", proj * depth},
                  {"attention_scores", scores * depth},
                  {"ffn", ffn * depth},
                  {"head", head}};
  return r;
}

std::uint64_t variation_token_macs(const ModelConfig& cfg, Variant variant) {
  const std::uint64_t nt = cfg.template_tokens(), d = cfg.dim;
  const std::uint64_t nq = (variant == Variant::kSTM ? 0 : nt) + cfg.search_tokens();
  return cfg.depth * (2 * nt * d * d + 2 * nq * nt * d);
}

ComplexityReport count_params(const ModelConfig& cfg) {
  ComplexityReport r;
  r.components = {{"patch_embed", 0}, {"encoder", 0}, {"norm", 0}, {"head", 0}};
  for (const auto& spec : declare_parameters(cfg)) {
    std::size_t slot = 1;
    if (spec.name.starts_with("patch_embed") || spec.name.starts_with("pos_embed")) slot = 0;
    else if (spec.name.starts_with("norm.")) slot = 2;
    else if (spec.name.starts_with("head.")) slot = 3;
    r.components[slot].second += shape_numel(spec.shape);
  }
  return r;
}

}  // namespace romtrack
