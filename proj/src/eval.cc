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

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <mutex>
#include <optional>
#include <thread>

#include "romtrack/checkpoint.h"
#include "romtrack/errors.h"

namespace romtrack {
namespace {

void require_nonempty(std::size_t n, const char* what) {
  if (n == 0) throw ContractError(std::string(what) + ": empty series");
}

double fraction_above(std::span<const double> v, double tau) {
  std::size_t k = 0;
  for (double x : v) k += x > tau;
  return static_cast<double>(k) / static_cast<double>(v.size());
}

double fraction_at_most(std::span<const double> v, double tau) {
  std::size_t k = 0;
  for (double x : v) k += x <= tau;
  return static_cast<double>(k) / static_cast<double>(v.size());
}

}  // namespace

double success_auc(std::span<const double> ious) {
  require_nonempty(ious.size(), "success_auc");
  double sum = 0.0;
  for (int k = 0; k <= 20; ++k) sum += fraction_above(ious, k / 20.0);
  return sum / 21.0;
}

double precision(std::span<const double> center_errors, double threshold_px) {
  require_nonempty(center_errors.size(), "precision");
  return fraction_at_most(center_errors, threshold_px);
}

double norm_precision(std::span<const double> normalized_errors) {
  require_nonempty(normalized_errors.size(), "norm_precision");
  double sum = 0.0;
  for (int k = 0; k <= 50; ++k) sum += fraction_at_most(normalized_errors, k / 100.0);
  return sum / 51.0;
}

double precision_threshold(std::size_t frame_size) { return 20.0 * static_cast<double>(frame_size) / 256.0; }

AoSr ao_sr(std::span<const double> ious) {
  require_nonempty(ious.size(), "ao_sr");
  double sum = 0.0;
  for (double x : ious) sum += x;
  return {sum / static_cast<double>(ious.size()), fraction_above(ious, 0.5), fraction_above(ious, 0.75)};
}

double center_error(const PixelBox& pred, const PixelBox& gt) {
  return std::hypot(pred.cx() - gt.cx(), pred.cy() - gt.cy());
}

double normalized_center_error(const PixelBox& pred, const PixelBox& gt) {
  return center_error(pred, gt) / std::sqrt(gt.w * gt.h);
}

SequenceMetrics evaluate_sequence(const Sequence& seq, std::span<const FrameResult> results) {
  if (results.size() != seq.size())
    throw DimensionError("evaluate_sequence: " + seq.name + " has " + std::to_string(seq.size()) + " frames but " +
                         std::to_string(results.size()) + " results");
  if (seq.size() < 2) throw ContractError("evaluate_sequence: need at least two frames");
  SequenceMetrics m;
  m.name = seq.name;
  m.tags = seq.tags;
  for (std::size_t t = 1; t < seq.size(); ++t) {
    const PixelBox& gt = seq.groundtruth[t];
    m.ious.push_back(iou(results[t].box, gt));
    m.center_errors.push_back(center_error(results[t].box, gt));
    m.normalized_errors.push_back(normalized_center_error(results[t].box, gt));
  }
  const std::size_t frame_size = seq.frames.empty() ? 256 : seq.frames[0].width;
  AoSr a = ao_sr(m.ious);
  m.metrics = {success_auc(m.ious), norm_precision(m.normalized_errors),
               precision(m.center_errors, precision_threshold(frame_size)), a.ao, a.sr50, a.sr75, 1, m.ious.size()};
  return m;
}

MetricReport summarize_if(std::span<const SequenceMetrics> sequences,
                          const std::function<bool(const SequenceMetrics&)>& keep) {
  MetricReport r;
  for (const auto& s : sequences) {
    if (keep && !keep(s)) continue;
    r.auc += s.metrics.auc;
    r.norm_precision += s.metrics.norm_precision;
    r.precision += s.metrics.precision;
    r.ao += s.metrics.ao;
    r.sr50 += s.metrics.sr50;
    r.sr75 += s.metrics.sr75;
    r.frames += s.metrics.frames;
    ++r.sequences;
  }
  if (r.sequences) {
    const double n = static_cast<double>(r.sequences);
    for (double* v : {&r.auc, &r.norm_precision, &r.precision, &r.ao, &r.sr50, &r.sr75}) *v /= n;
  }
  return r;
}

MetricReport summarize(std::span<const SequenceMetrics> sequences) { return summarize_if(sequences, {}); }

std::size_t resolve_workers(std::size_t requested, bool deterministic) {
  if (deterministic) return 1;
  std::size_t n = requested ? requested : std::max(1u, std::thread::hardware_concurrency());
  if (const char* cap = std::getenv("ROMTRACK_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(cap, &end, 10);
    if (end != cap && *end == '\0' && v > 0) n = std::min<std::size_t>(n, static_cast<std::size_t>(v));
  }
  return std::max<std::size_t>(n, 1);
}

EvalRun evaluate(Model& model, const Corpus& corpus, const TrackerOptions& options, std::size_t workers) {
  Tracker tracker(model, options);
  EvalRun run;
  run.results.resize(corpus.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < corpus.size(); i = next++) {
      try {
        run.results[i] = run_sequence(tracker, corpus[i].frames, corpus[i].groundtruth.at(0));
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t n = std::min(std::max<std::size_t>(workers, 1), std::max<std::size_t>(corpus.size(), 1));
  if (n == 1) {
    work();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t i = 0; i < n; ++i) threads.emplace_back(work);
    for (auto& t : threads) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  for (std::size_t i = 0; i < corpus.size(); ++i) run.sequences.push_back(evaluate_sequence(corpus[i], run.results[i]));
  run.all = summarize(run.sequences);
  run.distractor_heavy = summarize_if(run.sequences, [](const SequenceMetrics& s) { return s.tags.distractor_heavy(); });
  return run;
}

namespace {

void accumulate(MetricReport& into, const MetricReport& r) {
  into.auc += r.auc;
  into.norm_precision += r.norm_precision;
  into.precision += r.precision;
  into.ao += r.ao;
  into.sr50 += r.sr50;
  into.sr75 += r.sr75;
  into.sequences = r.sequences;
  into.frames = r.frames;
}

void divide(MetricReport& r, std::size_t n) {
  if (!n) return;
  for (double* v : {&r.auc, &r.norm_precision, &r.precision, &r.ao, &r.sr50, &r.sr75}) *v /= static_cast<double>(n);
}

}  // namespace

std::vector<AblationRow> run_ablation(const Corpus& corpus, std::span<const AblationEntry> entries,
                                      const TrackerOptions& options, std::size_t workers) {
  std::vector<AblationRow> all_rows, heavy_rows;
  for (const auto& entry : entries) {
    AblationRow all{entry.label, "all"}, heavy{entry.label, "distractor-heavy"};
    for (const auto& path : entry.checkpoints) {
      std::optional<Checkpoint> ck;
      try {
        ck.emplace(load_checkpoint(path));
      } catch (const Error&) {
        all.missing.push_back(path.string());
        continue;
      }
      EvalRun run = evaluate(ck->model, corpus, options, workers);
      accumulate(all.metrics, run.all);
      accumulate(heavy.metrics, run.distractor_heavy);
      ++all.seeds;
    }
    divide(all.metrics, all.seeds);
    divide(heavy.metrics, all.seeds);
    heavy.seeds = all.seeds;
    heavy.missing = all.missing;
    all_rows.push_back(std::move(all));
    heavy_rows.push_back(std::move(heavy));
  }
  all_rows.insert(all_rows.end(), heavy_rows.begin(), heavy_rows.end());
  return all_rows;
}

std::vector<std::string> report_columns() { return {"AUC", "P_Norm", "P", "AO", "SR_0.5", "SR_0.75"}; }

std::string report_tsv(std::span<const AblationRow> rows) {
  std::string out = "variant\tblock\tseeds";
  for (const auto& c : report_columns()) out += "\t" + c;
  out += "\tsequences\tmissing\n";
  char buf[64];
  for (const auto& r : rows) {
    out += r.label + "\t" + r.block + "\t" + std::to_string(r.seeds);
    for (double v : {r.metrics.auc, r.metrics.norm_precision, r.metrics.precision, r.metrics.ao, r.metrics.sr50,
                     r.metrics.sr75}) {
      std::snprintf(buf, sizeof buf, "\t%.6f", v);
      out += buf;
    }
    out += "\t" + std::to_string(r.metrics.sequences) + "\t";
    for (std::size_t i = 0; i < r.missing.size(); ++i) out += (i ? "," : "") + r.missing[i];
    out += "\n";
  }
  return out;
}

nlohmann::json to_json(const MetricReport& r) {
  return {{"AUC", r.auc}, {"P_Norm", r.norm_precision}, {"P", r.precision}, {"AO", r.ao},
          {"SR_0.5", r.sr50}, {"SR_0.75", r.sr75}, {"sequences", r.sequences}, {"frames", r.frames}};
}

nlohmann::json report_json(std::span<const AblationRow> rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows)
    out.push_back({{"variant", r.label}, {"block", r.block}, {"seeds", r.seeds}, {"missing", r.missing},
                   {"metrics", to_json(r.metrics)}});
  return out;
}

}  // namespace romtrack
