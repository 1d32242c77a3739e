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

#include "romtrack/eval.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <random>

#include "romtrack/checkpoint.h"
#include "romtrack/errors.h"

namespace romtrack {
namespace {

// ---- scalar metrics ----------------------------------------------------------------

TEST(MetricsTest, PerfectOverlapUnderStrictThresholds) {
  std::vector<double> ones(10, 1.0);
  // IoU > 1 never holds, so the last of 21 thresholds contributes nothing.
  EXPECT_DOUBLE_EQ(success_auc(ones), 20.0 / 21.0);
  AoSr a = ao_sr(ones);
  EXPECT_EQ(a.ao, 1.0);
  EXPECT_EQ(a.sr50, 1.0);
  EXPECT_EQ(a.sr75, 1.0);
}

TEST(MetricsTest, ThresholdGridCount) {
  std::vector<double> ious = {1.0, 0.5, 0.0};
  // τ = 0 .. 0.45 (10 values): 2 of 3 exceed; τ = 0.5 .. 0.95 (10 values):
  // 1 of 3; τ = 1: none.
  EXPECT_NEAR(success_auc(ious), (10 * 2.0 / 3 + 10 * 1.0 / 3) / 21.0, 1e-15);
  AoSr a = ao_sr(ious);
  EXPECT_DOUBLE_EQ(a.ao, 0.5);
  EXPECT_DOUBLE_EQ(a.sr50, 1.0 / 3);
  EXPECT_DOUBLE_EQ(a.sr75, 1.0 / 3);
  AoSr b = ao_sr(std::vector<double>{0.6, 0.8});
  EXPECT_DOUBLE_EQ(b.ao, 0.7);
  EXPECT_DOUBLE_EQ(b.sr50, 1.0);
  EXPECT_DOUBLE_EQ(b.sr75, 0.5);
}

TEST(MetricsTest, PrecisionAndNormalizedPrecision) {
  std::vector<double> zeros(5, 0.0);
  EXPECT_EQ(precision(zeros, 5.0), 1.0);
  EXPECT_EQ(norm_precision(zeros), 1.0);
  EXPECT_DOUBLE_EQ(precision_threshold(64), 5.0);
  EXPECT_DOUBLE_EQ(precision_threshold(256), 20.0);
  EXPECT_DOUBLE_EQ(precision(std::vector<double>{4.9, 5.0, 5.1}, 5.0), 2.0 / 3);
  // 0 passes all 51 thresholds, 0.1 passes τ ≥ 0.1 (41), 0.6 none.
  EXPECT_NEAR(norm_precision(std::vector<double>{0.0, 0.1, 0.6}), (51 + 41) / 3.0 / 51.0, 1e-15);
}

TEST(MetricsTest, EmptySeriesAreErrors) {
  std::vector<double> none;
  EXPECT_THROW(success_auc(none), ContractError);
  EXPECT_THROW(ao_sr(none), ContractError);
  EXPECT_THROW(precision(none, 1.0), ContractError);
  EXPECT_THROW(norm_precision(none), ContractError);
}

TEST(MetricsTest, Properties) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> ious(1 + rng() % 50);
    for (double& v : ious) v = u(rng);
    double sum = 0.0;
    for (double v : ious) sum += v;
    AoSr a = ao_sr(ious);
    EXPECT_EQ(a.ao, sum / ious.size());
    EXPECT_GE(a.sr50, a.sr75);
    for (double m : {a.ao, a.sr50, a.sr75, success_auc(ious)}) {
      EXPECT_GE(m, 0.0);
      EXPECT_LE(m, 1.0);
    }
    std::vector<double> shuffled = ious;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    EXPECT_EQ(success_auc(shuffled), success_auc(ious));
  }
}

TEST(MetricsTest, CentreErrors) {
  PixelBox gt{0, 0, 4, 9}, pred{3, 4, 4, 9};
  EXPECT_DOUBLE_EQ(center_error(pred, gt), 5.0);
  EXPECT_DOUBLE_EQ(normalized_center_error(pred, gt), 5.0 / 6.0);
}

// ---- sequences ---------------------------------------------------------------------

Sequence labelled(const std::string& name, std::size_t distractors, std::size_t frames = 6) {
  Scenario sc;
  sc.frames = frames;
  sc.distractors = distractors;
  Sequence s = generate_sequence(sc, 100 + distractors + name.size());
  s.name = name;
  return s;
}

std::vector<FrameResult> oracle(const Sequence& s) {
  std::vector<FrameResult> out;
  for (std::size_t t = 0; t < s.size(); ++t) out.push_back({t, s.groundtruth[t], 1.0});
  return out;
}

TEST(SequenceMetricsTest, OraclePredictionsScorePerfectly) {
  Sequence s = labelled("a", 0);
  auto results = oracle(s);
  results[0].box = {0, 0, 1, 1};  // the initialisation frame is not scored
  SequenceMetrics m = evaluate_sequence(s, results);
  EXPECT_EQ(m.ious.size(), s.size() - 1);
  EXPECT_EQ(m.metrics.ao, 1.0);
  EXPECT_EQ(m.metrics.precision, 1.0);
  EXPECT_EQ(m.metrics.norm_precision, 1.0);
  results.pop_back();
  EXPECT_THROW(evaluate_sequence(s, results), DimensionError);
}

TEST(SequenceMetricsTest, SubsetSummaryEqualsSummaryOfTheSubset) {
  std::vector<SequenceMetrics> all, heavy;
  for (std::size_t d : {0u, 2u, 1u, 3u, 2u}) {
    Sequence s = labelled("s" + std::to_string(all.size()), d);
    auto results = oracle(s);
    for (auto& r : results) r.box.x += static_cast<double>(all.size());  // varied quality
    all.push_back(evaluate_sequence(s, results));
    if (d >= 2) heavy.push_back(all.back());
  }
  MetricReport filtered = summarize_if(all, [](const SequenceMetrics& m) { return m.tags.distractor_heavy(); });
  MetricReport direct = summarize(heavy);
  EXPECT_EQ(filtered.sequences, 3u);
  EXPECT_EQ(filtered.ao, direct.ao);
  EXPECT_EQ(filtered.auc, direct.auc);
  EXPECT_EQ(filtered.precision, direct.precision);
  double mean = 0.0;
  for (const auto& m : all) mean += m.metrics.ao;
  EXPECT_DOUBLE_EQ(summarize(all).ao, mean / all.size());
}

TEST(WorkersTest, DeterministicModeAndEnvironmentCap) {
  EXPECT_EQ(resolve_workers(8, true), 1u);
  setenv("ROMTRACK_THREADS", "2", 1);
  EXPECT_EQ(resolve_workers(8, false), 2u);
  EXPECT_EQ(resolve_workers(1, false), 1u);
  setenv("ROMTRACK_THREADS", "junk", 1);
  EXPECT_EQ(resolve_workers(3, false), 3u);
  unsetenv("ROMTRACK_THREADS");
}

// ---- corpus evaluation and ablation ------------------------------------------------

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.dim = 16;
  cfg.depth = 1;
  cfg.head_channels = 8;
  cfg.head_layers = 2;
  return cfg;
}

Corpus small_corpus() {
  CorpusOptions o;
  o.sequences = 5;
  o.frames = 4;
  return generate_corpus(o, 31);
}

TEST(EvaluateTest, WorkerCountDoesNotChangeResults) {
  Model m(small_config());
  Rng rng(1);
  m.initialize(rng);
  Corpus c = small_corpus();
  EvalRun one = evaluate(m, c, TrackerOptions{}, 1), three = evaluate(m, c, TrackerOptions{}, 3);
  for (std::size_t s = 0; s < c.size(); ++s)
    for (std::size_t t = 0; t < c[s].size(); ++t) EXPECT_EQ(one.results[s][t].box, three.results[s][t].box);
  EXPECT_EQ(one.all.ao, three.all.ao);
  EXPECT_EQ(one.all.sequences, 5u);
}

TEST(AblationTest, TableShapeMissingEntriesAndDeterminism) {
  auto dir = std::filesystem::temp_directory_path() / "romtrack_ablation_test";
  std::filesystem::create_directories(dir);
  RunConfig rc;
  rc.model = small_config();
  Model m(rc.model);
  Rng rng(2);
  m.initialize(rng);
  save_checkpoint(dir / "rom.romc", m, rc);
  Corpus c = small_corpus();
  std::vector<AblationEntry> entries = {
      {"rom+vt", {dir / "rom.romc", dir / "absent.romc"}},
      {"htm", {dir / "also_absent.romc"}},
  };
  auto rows = run_ablation(c, entries, TrackerOptions{});
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].block, "all");
  EXPECT_EQ(rows[2].block, "distractor-heavy");
  EXPECT_EQ(rows[0].seeds, 1u);
  EXPECT_EQ(rows[0].missing.size(), 1u);
  EXPECT_EQ(rows[1].seeds, 0u);

  EvalRun direct = evaluate(m, c, TrackerOptions{});
  EXPECT_EQ(rows[0].metrics.ao, direct.all.ao);
  EXPECT_EQ(rows[2].metrics.ao, direct.distractor_heavy.ao);

  auto again = run_ablation(c, entries, TrackerOptions{});
  EXPECT_EQ(report_tsv(again), report_tsv(rows));

  EXPECT_EQ(report_columns(), (std::vector<std::string>{"AUC", "P_Norm", "P", "AO", "SR_0.5", "SR_0.75"}));
  const std::string tsv = report_tsv(rows);
  EXPECT_EQ(tsv.substr(0, tsv.find('\n')),
            "variant\tblock\tseeds\tAUC\tP_Norm\tP\tAO\tSR_0.5\tSR_0.75\tsequences\tmissing");
  auto json = report_json(rows);
  ASSERT_EQ(json.size(), 4u);
  EXPECT_EQ(json[0]["variant"], "rom+vt");
  EXPECT_TRUE(json[0]["metrics"].contains("SR_0.75"));
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace romtrack
