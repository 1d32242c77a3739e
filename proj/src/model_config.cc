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

#include "romtrack/model_config.h"

#include "romtrack/errors.h"

namespace romtrack {

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kSTM: return "stm";
    case Variant::kHTM: return "htm";
    case Variant::kROM: return "rom";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  if (name == "stm" || name == "STM") return Variant::kSTM;
  if (name == "htm" || name == "HTM") return Variant::kHTM;
  if (name == "rom" || name == "ROM") return Variant::kROM;
  throw ConfigError("unknown variant '" + std::string(name) + "' (expected stm, htm or rom)");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("invalid model config: " + what); };
  if (patch_size == 0) fail("patch_size > 0");
  if (template_size == 0 || template_size % patch_size != 0) fail("patch_size divides template_size");
  if (search_size == 0 || search_size % patch_size != 0) fail("patch_size divides search_size");
  if (dim == 0 || heads == 0 || dim % heads != 0) fail("heads divides dim");
  if (mlp_ratio == 0) fail("mlp_ratio > 0");
  if (head_layers == 0) fail("head_layers > 0");
  if ((head_channels >> (head_layers - 1)) == 0) fail("head_channels / 2^(head_layers-1) >= 1");
  if (pos_grid_template < 2 && pos_grid_template != template_grid()) fail("pos_grid_template >= 2");
  if (pos_grid_search < 2 && pos_grid_search != search_grid()) fail("pos_grid_search >= 2");
  if (variation_tokens && variant == Variant::kSTM) fail("variation tokens require variant htm or rom");
  if (!(ln_eps > 0.0)) fail("ln_eps > 0");
  for (double s : pixel_std)
    if (!(s > 0.0)) fail("pixel_std > 0");
}

ModelConfig full256_config() {
  ModelConfig c;
  c.template_size = 128;
  c.search_size = 256;
  c.patch_size = 16;
  c.dim = 768;
  c.heads = 12;
  c.depth = 12;
  c.mlp_ratio = 4;
  c.head_channels = 256;
  c.head_layers = 4;
  // ViT-B/16 pretraining grid (224 / 16).
  c.pos_grid_template = 14;
  c.pos_grid_search = 14;
  return c;
}

ModelConfig full384_config() {
  ModelConfig c = full256_config();
  c.template_size = 192;
  c.search_size = 384;
  return c;
}

ModelConfig preset_config(std::string_view name) {
  if (name == "desk") return ModelConfig{};
  if (name == "paper-256") return full256_config();
  if (name == "paper-384") return full384_config();
  throw ConfigError("unknown preset '" + std::string(name) + "' (expected desk, paper-256 or paper-384)");
}

}  // namespace romtrack
