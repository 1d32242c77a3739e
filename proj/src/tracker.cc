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

#include "romtrack/tracker.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include "romtrack/errors.h"

namespace romtrack {

double iou(const PixelBox& a, const PixelBox& b) {
  const double iw = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double ih = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = iw * ih;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

std::array<double, 2> CropSpec::to_crop(double fx, double fy) const {
  return {(fx - left()) * scale, (fy - top()) * scale};
}

std::array<double, 2> CropSpec::to_frame(double u, double v) const {
  return {left() + u / scale, top() + v / scale};
}

PixelBox CropSpec::box_to_frame(const Box& b) const {
  const double n = static_cast<double>(out_side);
  auto [cx, cy] = to_frame(b.cx * n, b.cy * n);
  const double w = b.w * side, h = b.h * side;
  return {cx - 0.5 * w, cy - 0.5 * h, w, h};
}

Box CropSpec::box_to_crop(const PixelBox& box) const {
  const double n = static_cast<double>(out_side);
  auto [u, v] = to_crop(box.cx(), box.cy());
  return {u / n, v / n, box.w / side, box.h / side};
}

Crop crop_region(const Frame& frame, const PixelBox& box, double area_factor, std::size_t out_side) {
  return crop_region(frame, channel_means(frame), box, area_factor, out_side);
}

Crop crop_region(const Frame& frame, const std::array<double, 3>& fill, const PixelBox& box, double area_factor,
                 std::size_t out_side) {
  if (!(box.w > 0.0) || !(box.h > 0.0) || !std::isfinite(box.x) || !std::isfinite(box.y) ||
      !std::isfinite(box.w) || !std::isfinite(box.h))
    throw ContractError("crop_region: degenerate box");
  if (!(area_factor > 0.0) || out_side == 0) throw ContractError("crop_region: bad factor or output size");
  if (frame.width == 0 || frame.height == 0) throw GeometryError("crop_region: empty frame");

  CropSpec spec;
  spec.center_x = box.cx();
  spec.center_y = box.cy();
  spec.side = area_factor * std::sqrt(box.w * box.h);
  spec.out_side = out_side;
  spec.scale = static_cast<double>(out_side) / spec.side;

  const double fw = static_cast<double>(frame.width), fh = static_cast<double>(frame.height);
  const double ix = std::min(spec.left() + spec.side, fw) - std::max(spec.left(), 0.0);
  const double iy = std::min(spec.top() + spec.side, fh) - std::max(spec.top(), 0.0);
  if (ix <= 0.0 || iy <= 0.0) throw TrackingLost("crop_region: search window outside the frame");

  Crop crop{Image(out_side, out_side), spec, 0.0};
  const long wmax = static_cast<long>(frame.width) - 1, hmax = static_cast<long>(frame.height) - 1;
  std::size_t filled = 0;
  for (std::size_t i = 0; i < out_side; ++i) {
    for (std::size_t j = 0; j < out_side; ++j) {
      auto [fx, fy] = spec.to_frame(j + 0.5, i + 0.5);
      if (fx < 0.0 || fy < 0.0 || fx >= fw || fy >= fh) {
        for (std::size_t c = 0; c < 3; ++c) crop.image.at(i, j, c) = fill[c];
        ++filled;
        continue;
      }
      // Bilinear between pixel centres, clamped at the border.
      const double sx = fx - 0.5, sy = fy - 0.5;
      const double x0f = std::floor(sx), y0f = std::floor(sy);
      const double ax = sx - x0f, ay = sy - y0f;
      const long x0 = std::clamp(static_cast<long>(x0f), 0L, wmax), x1 = std::clamp(static_cast<long>(x0f) + 1, 0L, wmax);
      const long y0 = std::clamp(static_cast<long>(y0f), 0L, hmax), y1 = std::clamp(static_cast<long>(y0f) + 1, 0L, hmax);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = (1 - ax) * frame.at(y0, x0, c) + ax * frame.at(y0, x1, c);
        const double bottom = (1 - ax) * frame.at(y1, x0, c) + ax * frame.at(y1, x1, c);
        crop.image.at(i, j, c) = ((1 - ay) * top + ay * bottom) / 255.0;
      }
    }
  }
  crop.fill_fraction = static_cast<double>(filled) / static_cast<double>(out_side * out_side);
  return crop;
}

Tensor hanning2d(std::size_t n) {
  if (n == 0) throw ContractError("hanning2d: n must be positive");
  std::vector<double> w(n, 1.0);
  // Mirrored from the first half so the window is exactly symmetric.
  if (n > 1)
    for (std::size_t i = 0; i <= (n - 1) / 2; ++i)
      w[i] = w[n - 1 - i] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * i / (n - 1.0)));
  Storage out(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = w[i] * w[j];
  return Tensor({n * n, 1}, std::move(out));
}

Tracker::Tracker(Model& model, TrackerOptions options)
    : model_(model), options_(options), window_(hanning2d(model.config().search_grid())) {}

TrackerState Tracker::init(const Frame& frame, const PixelBox& box) const {
  const ModelConfig& cfg = model_.config();
  Crop crop = crop_region(frame, box, options_.template_factor, cfg.template_size);
  NoGradGuard no_grad;
  Image images[] = {crop.image};
  Tensor tokens = model_.embed_template(model_.patches(images));
  TrackerState state;
  state.box = box;
  // The initial template feeds both template streams.
  state.it_tokens = cfg.uses_inherent() ? tokens : Tensor{};
  state.ht_tokens = cfg.uses_hybrid() ? tokens : Tensor{};
  state.last_crop = crop.spec;
  state.frame = 1;
  state.frame_width = frame.width;
  state.frame_height = frame.height;
  return state;
}

TrackResult Tracker::track(TrackerState& state, const Frame& frame) const {
  if (state.frame == 0) throw ContractError("track: tracker not initialised");
  const ModelConfig& cfg = model_.config();
  const std::size_t t = state.frame++;  // index of this frame
  Crop crop;
  try {
    crop = crop_region(frame, state.box, options_.search_factor, cfg.search_size);
  } catch (const TrackingLost&) {
    return {state.box, 0.0, 0, true};
  }
  NoGradGuard no_grad;
  Image images[] = {crop.image};
  Tensor sr = model_.embed_search(model_.patches(images));
  const bool use_cache = cfg.variation_tokens && cfg.uses_hybrid() && !state.cache.empty();
  ModelOutput out = model_.forward_tokens(state.it_tokens, state.ht_tokens, sr, 1,
                                          use_cache ? &state.cache : nullptr, false);
  Decoded d = decode_box(out.maps, 0, options_.use_window ? &window_ : nullptr);
  PixelBox box = crop.spec.box_to_frame(d.box);
  // Keep the centre on the frame and the box at least a pixel wide.
  const double cx = std::clamp(box.cx(), 0.0, static_cast<double>(frame.width));
  const double cy = std::clamp(box.cy(), 0.0, static_cast<double>(frame.height));
  box.w = std::max(box.w, 1.0);
  box.h = std::max(box.h, 1.0);
  box.x = cx - 0.5 * box.w;
  box.y = cy - 0.5 * box.h;

  state.box = box;
  state.last_crop = crop.spec;
  if (cfg.variation_tokens && cfg.uses_hybrid()) {
    state.cache = std::move(out.cache);
    state.cache.frame_index = static_cast<std::int64_t>(t);
  }
  return {box, d.score, d.cell, false};
}

std::vector<FrameResult> run_sequence(const Tracker& tracker, std::span<const Frame> frames, const PixelBox& init) {
  std::vector<FrameResult> results;
  if (frames.empty()) return results;
  TrackerState state = tracker.init(frames[0], init);
  results.push_back({0, init, 1.0});
  for (std::size_t i = 1; i < frames.size(); ++i) {
    TrackResult r = tracker.track(state, frames[i]);
    results.push_back({i, r.box, r.score});
  }
  return results;
}

namespace {

std::string format_result(const FrameResult& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu,%.4f,%.4f,%.4f,%.4f,%.6f", r.frame_index, r.box.x, r.box.y, r.box.w, r.box.h,
                r.score);
  return buf;
}

}  // namespace

void write_results(std::ostream& out, std::span<const FrameResult> results) {
  for (const auto& r : results) out << format_result(r) << '\n';
}

void write_results(const std::filesystem::path& path, std::span<const FrameResult> results) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  write_results(out, results);
  if (!out) throw FormatError("write failed: " + path.string());
}

std::vector<FrameResult> read_results(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read " + path.string());
  std::vector<FrameResult> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    FrameResult r;
    char c[5];
    std::istringstream ss(line);
    if (!(ss >> r.frame_index >> c[0] >> r.box.x >> c[1] >> r.box.y >> c[2] >> r.box.w >> c[3] >> r.box.h >> c[4] >>
          r.score) ||
        std::string(c, 5) != ",,,,,")
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": malformed result line");
    out.push_back(r);
  }
  return out;
}

}  // namespace romtrack
