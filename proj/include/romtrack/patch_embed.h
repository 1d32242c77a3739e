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

#ifndef ROMTRACK_PATCH_EMBED_H_
#define ROMTRACK_PATCH_EMBED_H_

#include <cstddef>

#include "romtrack/image.h"
#include "romtrack/tensor.h"

namespace romtrack {

// Non-overlapping P×P patches in row-major grid order. Each row of `values`
// is one patch flattened as (py, px, channel), length 3·P².
struct ImagePatches {
  std::size_t grid_height = 0;
  std::size_t grid_width = 0;
  std::size_t patch_size = 0;
  Tensor values;

  std::size_t count() const { return grid_height * grid_width; }
};

ImagePatches patchify(const Image& image, std::size_t patch_size);
Image unpatchify(const ImagePatches& patches);

// Learned position table, one D-vector per grid cell (row-major).
struct PosEmbed {
  std::size_t grid_height = 0;
  std::size_t grid_width = 0;
  Tensor table;  // [grid_height·grid_width × D]
};

// token_i = patch_i · proj + pos_i. `patches` may stack several images of
// the same grid; the table is repeated for each.
Tensor embed(const Tensor& patches, const Tensor& proj, const Tensor& pos_table);
Tensor embed(const ImagePatches& patches, const Tensor& proj, const PosEmbed& pos);

// Keys cubic convolution weight (a = -0.75, the usual "bicubic").
double cubic_kernel(double distance);

// Separable bicubic resampling operator from an (ih × iw) grid to an
// (oh × ow) grid, half-pixel aligned with edge clamping. Shape [oh·ow × ih·iw].
Tensor bicubic_matrix(std::size_t in_h, std::size_t in_w, std::size_t out_h, std::size_t out_w);

// Channel-wise bicubic interpolation of a position table to a new grid.
PosEmbed resample_pos(const PosEmbed& pos, std::size_t new_height, std::size_t new_width);

}  // namespace romtrack

#endif  // ROMTRACK_PATCH_EMBED_H_
