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

#ifndef ROMTRACK_SYNTHETIC_H_
#define ROMTRACK_SYNTHETIC_H_

// Procedural tracking sequences: a textured target moving over a static
// background, optionally deforming, drifting in appearance, and surrounded by
// look-alike distractors. Plus the on-disk corpus layout.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "romtrack/image.h"
#include "romtrack/tracker.h"

namespace romtrack {

struct Scenario {
  std::size_t frames = 40;
  std::size_t frame_size = 64;
  std::size_t render_scale = 2;     // rendered at this multiple, then box-filtered down
  double max_speed = 1.5;           // px per frame
  double acceleration = 0.3;        // per-frame velocity noise (px)
  double min_half_extent = 5.0;
  double max_half_extent = 10.0;
  double deformation = 0.0;         // peak relative change of the half extents
  double drift = 0.0;               // fraction of the colour change over the sequence
  std::size_t distractors = 0;
};

struct ScenarioTags {
  double deformation = 0.0;
  double drift = 0.0;
  std::size_t distractors = 0;

  bool distractor_heavy() const { return distractors >= 2; }
};

struct Sequence {
  std::string name;
  std::vector<Frame> frames;
  std::vector<PixelBox> groundtruth;
  ScenarioTags tags;
  std::uint64_t seed = 0;

  std::size_t size() const { return frames.size(); }
};

// Deterministic in (scenario, seed). The ground-truth box is the target's
// exact extent and always lies inside the frame.
Sequence generate_sequence(const Scenario& scenario, std::uint64_t seed);

struct CorpusOptions {
  std::size_t sequences = 200;
  std::size_t frames = 40;
  std::size_t frame_size = 64;
  std::size_t max_distractors = 3;
  double max_deformation = 0.3;
  double max_drift = 0.5;
};

using Corpus = std::vector<Sequence>;

// Scenario knobs for each sequence are drawn from the "data" stream of `seed`.
Corpus generate_corpus(const CorpusOptions& options, std::uint64_t seed, const std::string& prefix = "seq");

// One directory per sequence: numbered ROMI frames, groundtruth.txt with
// `x,y,w,h` per line, and meta.txt holding the scenario tags.
void save_sequence(const std::filesystem::path& dir, const Sequence& seq);
Sequence load_sequence(const std::filesystem::path& dir);
void save_corpus(const std::filesystem::path& root, const Corpus& corpus);
// Sequence directories in name order.
Corpus load_corpus(const std::filesystem::path& root);

std::vector<PixelBox> read_groundtruth(const std::filesystem::path& path);
void write_groundtruth(const std::filesystem::path& path, const std::vector<PixelBox>& boxes);

}  // namespace romtrack

#endif  // ROMTRACK_SYNTHETIC_H_
