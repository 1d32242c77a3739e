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

#ifndef ROMTRACK_CONFIG_H_
#define ROMTRACK_CONFIG_H_

// Run configuration and its text form: `key = value` lines under
// `[section]` headers, `#` comments. Unknown sections and keys are errors.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "romtrack/model_config.h"
#include "romtrack/synthetic.h"
#include "romtrack/tracker.h"
#include "romtrack/train.h"

namespace romtrack {

struct RunConfig {
  ModelConfig model;
  CorpusOptions train_data;
  CorpusOptions eval_data{40};
  std::uint64_t train_data_seed = 1;
  std::uint64_t eval_data_seed = 2;
  TrainConfig stage1;
  TrainConfig stage2 = TrainConfig::stage2_defaults();
  TrackerOptions tracker;
  std::uint64_t seed = 0;  // model init and training streams
  std::filesystem::path train_corpus;
  std::filesystem::path eval_corpus;
  std::filesystem::path work_dir;

  // Throws ConfigError naming the failing constraint.
  void validate() const;
};

// `[model] preset = name` loads a model preset before the other model keys
// apply, wherever it appears in the section.
RunConfig parse_config_text(std::string_view text, std::string_view origin = "<config>");
RunConfig parse_config(const std::filesystem::path& path);

// Every key, in a fixed order, with doubles at round-trip precision.
std::string serialize_config(const RunConfig& config);

}  // namespace romtrack

#endif  // ROMTRACK_CONFIG_H_
