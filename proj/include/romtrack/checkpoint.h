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

#ifndef ROMTRACK_CHECKPOINT_H_
#define ROMTRACK_CHECKPOINT_H_

// Binary checkpoints, little endian throughout:
//   "ROMC", u32 version, u32 config length, config text,
//   then tensor records until end of file:
//   u32 name length, name, u32 rank, u64 extents[rank], f64 values.
// Records hold the parameters and buffers under their declared names,
// `train.step`, and optionally `optim.step`, `optim.first.<param>` and
// `optim.second.<param>`.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "romtrack/config.h"
#include "romtrack/model.h"
#include "romtrack/optim.h"

namespace romtrack {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  RunConfig config;
  Model model;
  std::optional<OptimState> optim;
  std::int64_t step = 0;
};

std::vector<std::uint8_t> encode_checkpoint(const Model& model, const RunConfig& config, const OptimState* optim,
                                            std::int64_t step);
// Throws FormatError on bad magic, version or truncation, and CensusError
// when the tensors differ from the declared parameter set.
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Model& model, const RunConfig& config,
                     const OptimState* optim = nullptr, std::int64_t step = 0);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace romtrack

#endif  // ROMTRACK_CHECKPOINT_H_
