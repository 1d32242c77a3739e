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

#include "romtrack/image.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "romtrack/errors.h"

namespace romtrack {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[off + i]) << (8 * i);
  return v;
}

}  // namespace

Frame to_frame(const Image& image) {
  Frame f(image.height, image.width);
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    double v = std::clamp(image.pixels[i], 0.0, 1.0);
    f.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return f;
}

Image to_image(const Frame& frame) {
  Image img(frame.height, frame.width);
  for (std::size_t i = 0; i < frame.pixels.size(); ++i) img.pixels[i] = frame.pixels[i] / 255.0;
  return img;
}

std::array<double, 3> channel_means(const Frame& frame) {
  std::array<double, 3> sum{0.0, 0.0, 0.0};
  const std::size_t n = frame.height * frame.width;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 3; ++c) sum[c] += frame.pixels[i * 3 + c];
  for (auto& s : sum) s /= (255.0 * static_cast<double>(std::max<std::size_t>(n, 1)));
  return sum;
}

Image normalize(const Image& image, const std::array<double, 3>& mean, const std::array<double, 3>& stddev) {
  Image out = image;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    const std::size_t c = i % 3;
    out.pixels[i] = (out.pixels[i] - mean[c]) / stddev[c];
  }
  return out;
}

Image flip_horizontal(const Image& image) {
  Image out(image.height, image.width);
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.at(y, image.width - 1 - x, c) = image.at(y, x, c);
  return out;
}

std::vector<std::uint8_t> encode_romi(const Frame& frame) {
  std::vector<std::uint8_t> out;
  out.reserve(16 + frame.pixels.size());
  for (char ch : {'R', 'O', 'M', 'I'}) out.push_back(static_cast<std::uint8_t>(ch));
  put_u32(out, static_cast<std::uint32_t>(frame.height));
  put_u32(out, static_cast<std::uint32_t>(frame.width));
  put_u32(out, 0);
  const std::size_t n = frame.height * frame.width;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < n; ++i) out.push_back(frame.pixels[i * 3 + c]);
  return out;
}

Frame decode_romi(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16 || !std::equal(bytes.begin(), bytes.begin() + 4, "ROMI")) {
    throw FormatError("not a ROMI image");
  }
  const std::size_t h = get_u32(bytes, 4), w = get_u32(bytes, 8);
  const std::size_t n = h * w;
  if (bytes.size() != 16 + 3 * n) throw FormatError("ROMI payload size does not match header");
  Frame f(h, w);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < n; ++i) f.pixels[i * 3 + c] = bytes[16 + c * n + i];
  return f;
}

void write_romi(const std::filesystem::path& path, const Frame& frame) {
  auto bytes = encode_romi(frame);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Frame read_romi(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_romi(bytes);
}

}  // namespace romtrack
