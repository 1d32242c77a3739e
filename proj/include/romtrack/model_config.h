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

#ifndef ROMTRACK_MODEL_CONFIG_H_
#define ROMTRACK_MODEL_CONFIG_H_

#include <array>
#include <cstddef>
#include <string>
#include <string_view>

namespace romtrack {

// Template/search relation modeling scheme.
//   kSTM: separate template stream, search reads it one-way.
//   kHTM: joint attention over [ht | sr].
//   kROM: inherent stream plus mixed attention over [vt | it | ht | sr].
enum class Variant { kSTM, kHTM, kROM };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);

struct ModelConfig {
  std::size_t template_size = 32;
  std::size_t search_size = 64;
  std::size_t patch_size = 8;
  std::size_t dim = 64;
  std::size_t heads = 2;
  std::size_t depth = 4;
  std::size_t mlp_ratio = 4;
  // Width of the first head conv; each further layer halves it.
  std::size_t head_channels = 32;
  std::size_t head_layers = 4;
  // Native grids of the learned position tables; resampled to the actual
  // template/search grids when they differ.
  std::size_t pos_grid_template = 4;
  std::size_t pos_grid_search = 8;
  Variant variant = Variant::kROM;
  bool variation_tokens = true;
  double ln_eps = 1e-6;
  std::array<double, 3> pixel_mean{0.5, 0.5, 0.5};
  std::array<double, 3> pixel_std{0.25, 0.25, 0.25};

  std::size_t template_grid() const { return template_size / patch_size; }
  std::size_t search_grid() const { return search_size / patch_size; }
  std::size_t template_tokens() const { return template_grid() * template_grid(); }
  std::size_t search_tokens() const { return search_grid() * search_grid(); }
  std::size_t head_dim() const { return dim / heads; }
  std::size_t patch_values() const { return 3 * patch_size * patch_size; }
  bool uses_inherent() const { return variant != Variant::kHTM; }
  bool uses_hybrid() const { return variant != Variant::kSTM; }

  // Throws ConfigError naming the first violated constraint.
  void validate() const;
};

// Full-resolution presets: ViT-Base/16 with 128/256 (or 192/384) crops.
ModelConfig full256_config();
ModelConfig full384_config();
// Returns the preset by name ("desk", "paper-256", "paper-384").
ModelConfig preset_config(std::string_view name);

}  // namespace romtrack

#endif  // ROMTRACK_MODEL_CONFIG_H_
