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

#ifndef ROMTRACK_EVAL_H_
#define ROMTRACK_EVAL_H_

// Tracking metrics, corpus evaluation and the ablation table.
//
// Conventions: success and SR use IoU > τ (strict); success thresholds are
// 0, 0.05, ..., 1; precision counts centre errors ≤ 20 px at a 256-px frame,
// scaled with the frame; normalised precision averages over τ = 0, 0.01,
// ..., 0.5. The initialisation frame is excluded, and corpus figures are
// means of per-sequence figures.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "romtrack/model.h"
#include "romtrack/synthetic.h"
#include "romtrack/tracker.h"

namespace romtrack {

double success_auc(std::span<const double> ious);
double precision(std::span<const double> center_errors, double threshold_px);
double norm_precision(std::span<const double> normalized_errors);
double precision_threshold(std::size_t frame_size);

struct AoSr {
  double ao = 0.0;
  double sr50 = 0.0;
  double sr75 = 0.0;
};
AoSr ao_sr(std::span<const double> ious);

double center_error(const PixelBox& pred, const PixelBox& gt);
// Centre distance over √(gt_w · gt_h).
double normalized_center_error(const PixelBox& pred, const PixelBox& gt);

struct MetricReport {
  double auc = 0.0;
  double norm_precision = 0.0;
  double precision = 0.0;
  double ao = 0.0;
  double sr50 = 0.0;
  double sr75 = 0.0;
  std::size_t sequences = 0;
  std::size_t frames = 0;
};

struct SequenceMetrics {
  std::string name;
  ScenarioTags tags;
  std::vector<double> ious;
  std::vector<double> center_errors;
  std::vector<double> normalized_errors;
  MetricReport metrics;
};

// Scores frames 1..n-1 of a run against the annotation.
SequenceMetrics evaluate_sequence(const Sequence& seq, std::span<const FrameResult> results);
MetricReport summarize(std::span<const SequenceMetrics> sequences);
MetricReport summarize_if(std::span<const SequenceMetrics> sequences,
                          const std::function<bool(const SequenceMetrics&)>& keep);

// Worker threads for per-sequence work: 1 when deterministic, otherwise
// `requested` (0 = hardware threads), capped by ROMTRACK_THREADS.
std::size_t resolve_workers(std::size_t requested, bool deterministic);

struct EvalRun {
  std::vector<std::vector<FrameResult>> results;  // per sequence
  std::vector<SequenceMetrics> sequences;
  MetricReport all;
  MetricReport distractor_heavy;
};

// Tracks every sequence from its first annotation. Results do not depend
// on the worker count.
EvalRun evaluate(Model& model, const Corpus& corpus, const TrackerOptions& options, std::size_t workers = 1);

struct AblationEntry {
  std::string label;
  std::vector<std::filesystem::path> checkpoints;  // one per seed
};

struct AblationRow {
  std::string label;
  std::string block;  // "all" or "distractor-heavy"
  std::size_t seeds = 0;
  std::vector<std::string> missing;
  MetricReport metrics;  // mean over evaluated seeds
};

// Missing or unreadable checkpoints are listed and skipped.
std::vector<AblationRow> run_ablation(const Corpus& corpus, std::span<const AblationEntry> entries,
                                      const TrackerOptions& options, std::size_t workers = 1);

std::vector<std::string> report_columns();
std::string report_tsv(std::span<const AblationRow> rows);
nlohmann::json report_json(std::span<const AblationRow> rows);
nlohmann::json to_json(const MetricReport& report);

}  // namespace romtrack

#endif  // ROMTRACK_EVAL_H_
