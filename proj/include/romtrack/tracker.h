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

#ifndef ROMTRACK_TRACKER_H_
#define ROMTRACK_TRACKER_H_

// Frame-by-frame inference: crop geometry, window penalty and the
// per-video variation cache.

#include <array>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "romtrack/encoder.h"
#include "romtrack/head.h"
#include "romtrack/image.h"
#include "romtrack/model.h"
#include "romtrack/tensor.h"

namespace romtrack {

// Axis-aligned box in frame pixels, (x, y) the top-left corner.
struct PixelBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double cx() const { return x + 0.5 * w; }
  double cy() const { return y + 0.5 * h; }
  bool operator==(const PixelBox&) const = default;
};

double iou(const PixelBox& a, const PixelBox& b);

// Square crop window. Continuous coordinates: pixel j spans [j, j + 1).
struct CropSpec {
  double center_x = 0.0;
  double center_y = 0.0;
  double side = 0.0;          // frame pixels
  std::size_t out_side = 0;   // model pixels
  double scale = 0.0;         // out_side / side

  double left() const { return center_x - 0.5 * side; }
  double top() const { return center_y - 0.5 * side; }

  // Point maps between frame and crop coordinates.
  std::array<double, 2> to_crop(double fx, double fy) const;
  std::array<double, 2> to_frame(double u, double v) const;
  // Normalized crop box (centre form, fractions of out_side) to frame pixels.
  PixelBox box_to_frame(const Box& normalized) const;
  Box box_to_crop(const PixelBox& box) const;
};

struct Crop {
  Image image;
  CropSpec spec;
  double fill_fraction = 0.0;  // share of output pixels taken from the mean fill
};

// Square crop of side factor·√(w·h) centred on the box, bilinearly resized
// to out_side. Area outside the frame takes the frame's channel means.
// Throws TrackingLost when the window misses the frame entirely and
// ContractError on a degenerate box.
Crop crop_region(const Frame& frame, const PixelBox& box, double area_factor, std::size_t out_side);
Crop crop_region(const Frame& frame, const std::array<double, 3>& fill, const PixelBox& box, double area_factor,
                 std::size_t out_side);

// Outer product of two n-point Hann windows, flattened row-major [n·n × 1].
Tensor hanning2d(std::size_t n);

struct TrackerOptions {
  double template_factor = 2.0;
  double search_factor = 4.0;
  bool use_window = true;
};

struct TrackerState {
  PixelBox box;
  Tensor it_tokens;  // [N_t × D], fixed at init
  Tensor ht_tokens;  // [N_t × D], fixed at init
  VariationCache cache;
  CropSpec last_crop;
  std::size_t frame = 0;  // frames consumed, init included
  std::size_t frame_width = 0;
  std::size_t frame_height = 0;
};

struct TrackResult {
  PixelBox box;
  double score = 0.0;
  std::size_t cell = 0;  // chosen score-map cell
  bool lost = false;
};

// Inference never writes to the model, so one Model may back several
// trackers on different threads.
class Tracker {
 public:
  explicit Tracker(Model& model, TrackerOptions options = {});

  TrackerState init(const Frame& frame, const PixelBox& box) const;
  TrackResult track(TrackerState& state, const Frame& frame) const;

  const TrackerOptions& options() const { return options_; }

 private:
  Model& model_;
  TrackerOptions options_;
  Tensor window_;
};

struct FrameResult {
  std::size_t frame_index = 0;
  PixelBox box;
  double score = 0.0;
};

// The first frame reports the given box with score 1.
std::vector<FrameResult> run_sequence(const Tracker& tracker, std::span<const Frame> frames, const PixelBox& init);

// `frame_index,x,y,w,h,score`, one line per frame.
void write_results(std::ostream& out, std::span<const FrameResult> results);
void write_results(const std::filesystem::path& path, std::span<const FrameResult> results);
std::vector<FrameResult> read_results(const std::filesystem::path& path);

}  // namespace romtrack

#endif  // ROMTRACK_TRACKER_H_
