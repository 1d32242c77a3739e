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

#ifndef ROMTRACK_IMAGE_H_
#define ROMTRACK_IMAGE_H_

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace romtrack {

// Real-valued RGB image, row-major height × width × 3, values in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), pixels(h * w * 3, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * 3 + c]; }
};

// 8-bit RGB frame, row-major height × width × 3.
struct Frame {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;

  Frame() = default;
  Frame(std::size_t h, std::size_t w) : height(h), width(w), pixels(h * w * 3, 0) {}

  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * 3 + c]; }
  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
  bool operator==(const Frame&) const = default;
};

Frame to_frame(const Image& image);
Image to_image(const Frame& frame);

// Per-channel mean of a frame in [0, 1].
std::array<double, 3> channel_means(const Frame& frame);

// (x - mean) / std per channel.
Image normalize(const Image& image, const std::array<double, 3>& mean, const std::array<double, 3>& stddev);

Image flip_horizontal(const Image& image);

// ROMI container: "ROMI", u32 height, u32 width, u32 reserved (all little
// endian), then the R, G and B planes, one byte per pixel.
std::vector<std::uint8_t> encode_romi(const Frame& frame);
Frame decode_romi(std::span<const std::uint8_t> bytes);
void write_romi(const std::filesystem::path& path, const Frame& frame);
Frame read_romi(const std::filesystem::path& path);

}  // namespace romtrack

#endif  // ROMTRACK_IMAGE_H_
