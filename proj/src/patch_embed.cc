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

#include "romtrack/patch_embed.h"

#include <algorithm>
#include <cmath>

#include "romtrack/errors.h"

namespace romtrack {

ImagePatches patchify(const Image& image, std::size_t patch_size) {
  const std::size_t p = patch_size;
  if (p == 0 || image.height == 0 || image.height % p != 0 || image.width % p != 0) {
    throw GeometryError("patchify: " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                        " image is not divisible into " + std::to_string(p) + "px patches");
  }
  ImagePatches out;
  out.grid_height = image.height / p;
  out.grid_width = image.width / p;
  out.patch_size = p;
  const std::size_t len = 3 * p * p;
  std::vector<double> v(out.count() * len);
  for (std::size_t gy = 0; gy < out.grid_height; ++gy)
    for (std::size_t gx = 0; gx < out.grid_width; ++gx) {
      double* dst = v.data() + (gy * out.grid_width + gx) * len;
      for (std::size_t py = 0; py < p; ++py) {
        const double* src = image.pixels.data() + ((gy * p + py) * image.width + gx * p) * 3;
        std::copy_n(src, 3 * p, dst + py * 3 * p);
      }
    }
  out.values = Tensor({out.count(), len}, std::move(v));
  return out;
}

Image unpatchify(const ImagePatches& patches) {
  const std::size_t p = patches.patch_size;
  Image image(patches.grid_height * p, patches.grid_width * p);
  const std::size_t len = 3 * p * p;
  auto v = patches.values.values();
  for (std::size_t gy = 0; gy < patches.grid_height; ++gy)
    for (std::size_t gx = 0; gx < patches.grid_width; ++gx) {
      const double* src = v.data() + (gy * patches.grid_width + gx) * len;
      for (std::size_t py = 0; py < p; ++py) {
        double* dst = image.pixels.data() + ((gy * p + py) * image.width + gx * p) * 3;
        std::copy_n(src + py * 3 * p, 3 * p, dst);
      }
    }
  return image;
}

Tensor embed(const Tensor& patches, const Tensor& proj, const Tensor& pos_table) {
  if (patches.cols() != proj.rows()) {
    throw GeometryError("embed: patch length " + std::to_string(patches.cols()) +
                        " does not match projection " + shape_string(proj.shape()));
  }
  if (pos_table.cols() != proj.cols() || patches.rows() % pos_table.rows() != 0) {
    throw GeometryError("embed: " + std::to_string(patches.rows()) + " patches do not tile a " +
                        std::to_string(pos_table.rows()) + "-cell position table");
  }
  const std::size_t images = patches.rows() / pos_table.rows();
  Tensor tokens = matmul(patches, proj);
  return add(tokens, images == 1 ? pos_table : tile_rows(pos_table, images));
}

Tensor embed(const ImagePatches& patches, const Tensor& proj, const PosEmbed& pos) {
  if (patches.grid_height != pos.grid_height || patches.grid_width != pos.grid_width) {
    throw GeometryError("embed: patch grid " + std::to_string(patches.grid_height) + "x" +
                        std::to_string(patches.grid_width) + " vs position grid " +
                        std::to_string(pos.grid_height) + "x" + std::to_string(pos.grid_width));
  }
  return embed(patches.values, proj, pos.table);
}

double cubic_kernel(double distance) {
  constexpr double a = -0.75;
  const double x = std::abs(distance);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

namespace {

// [out × in] 1-D resampling weights.
std::vector<double> axis_weights(std::size_t in, std::size_t out) {
  std::vector<double> w(out * in, 0.0);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    const double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    const double base = std::floor(src);
    const double t = src - base;
    for (int k = -1; k <= 2; ++k) {
      const long idx = std::clamp(static_cast<long>(base) + k, 0L, static_cast<long>(in) - 1);
      w[o * in + static_cast<std::size_t>(idx)] += cubic_kernel(t - k);
    }
  }
  return w;
}

}  // namespace

Tensor bicubic_matrix(std::size_t in_h, std::size_t in_w, std::size_t out_h, std::size_t out_w) {
  if (in_h == 0 || in_w == 0 || out_h == 0 || out_w == 0) throw GeometryError("bicubic_matrix: empty grid");
  auto wy = axis_weights(in_h, out_h);
  auto wx = axis_weights(in_w, out_w);
  std::vector<double> m(out_h * out_w * in_h * in_w, 0.0);
  const std::size_t in_n = in_h * in_w;
  for (std::size_t oy = 0; oy < out_h; ++oy)
    for (std::size_t ox = 0; ox < out_w; ++ox)
      for (std::size_t iy = 0; iy < in_h; ++iy) {
        const double a = wy[oy * in_h + iy];
        if (a == 0.0) continue;
        for (std::size_t ix = 0; ix < in_w; ++ix)
          m[(oy * out_w + ox) * in_n + iy * in_w + ix] = a * wx[ox * in_w + ix];
      }
  return Tensor({out_h * out_w, in_n}, std::move(m));
}

PosEmbed resample_pos(const PosEmbed& pos, std::size_t new_height, std::size_t new_width) {
  if (new_height < 2 || new_width < 2) {
    throw GeometryError("resample_pos: target grid must be at least 2x2");
  }
  if (pos.table.rows() != pos.grid_height * pos.grid_width) {
    throw GeometryError("resample_pos: table size does not match its grid");
  }
  PosEmbed out{new_height, new_width, {}};
  if (new_height == pos.grid_height && new_width == pos.grid_width) {
    out.table = pos.table;
    return out;
  }
  out.table = matmul(bicubic_matrix(pos.grid_height, pos.grid_width, new_height, new_width), pos.table);
  return out;
}

}  // namespace romtrack
