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

#include "cli.h"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "romtrack/checkpoint.h"
#include "romtrack/complexity.h"
#include "romtrack/config.h"
#include "romtrack/encoder.h"
#include "romtrack/errors.h"
#include "romtrack/eval.h"
#include "romtrack/model.h"
#include "romtrack/rng.h"
#include "romtrack/synthetic.h"
#include "romtrack/tracker.h"
#include "romtrack/train.h"

namespace romtrack {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Globals {
  std::string config_path;
  bool deterministic = false;
  std::size_t threads = 0;
  std::optional<std::uint64_t> seed;
};

RunConfig load_run_config(const Globals& g) {
  RunConfig rc = g.config_path.empty() ? RunConfig{} : parse_config(g.config_path);
  if (g.seed) rc.seed = *g.seed;
  return rc;
}

fs::path pick_path(const std::string& flag, const fs::path& fallback, const char* what) {
  if (!flag.empty()) return flag;
  if (!fallback.empty()) return fallback;
  throw ConfigError(std::string("no ") + what + " given (flag or [paths] entry)");
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
  if (!f) throw Error("write failed: " + path.string());
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// Model flags shared by train and bench. Empty means keep.
struct ModelOverrides {
  std::string variant;
  bool vt = false;
  bool no_vt = false;

  void apply(ModelConfig& m) const {
    if (!variant.empty()) m.variant = parse_variant(variant);
    if (vt) m.variation_tokens = true;
    if (no_vt) m.variation_tokens = false;
  }
};

void add_model_flags(CLI::App* cmd, ModelOverrides& o) {
  cmd->add_option("--variant", o.variant, "stm, htm or rom");
  auto* vt = cmd->add_flag("--vt", o.vt, "enable variation tokens");
  auto* no_vt = cmd->add_flag("--no-vt", o.no_vt, "disable variation tokens");
  vt->excludes(no_vt);
}

// The variation-token flag adds no tensors, so a checkpoint's values carry
// over to a model that differs only in it.
void copy_state(const Model& from, Model& to) {
  auto copy = [](const std::vector<NamedTensor>& src, const std::vector<NamedTensor>& dst) {
    for (std::size_t i = 0; i < dst.size(); ++i) {
      auto in = src[i].tensor.values();
      Tensor t = dst[i].tensor;
      std::copy(in.begin(), in.end(), t.values().begin());
    }
  };
  copy(from.parameters(), to.parameters());
  copy(from.buffers(), to.buffers());
}

// gen-data ---------------------------------------------------------------

struct GenArgs {
  std::string out;
  std::optional<std::size_t> train_sequences, eval_sequences;
};

int cmd_gen_data(const Globals& g, const GenArgs& a, std::ostream& out) {
  RunConfig rc = load_run_config(g);
  if (a.train_sequences) rc.train_data.sequences = *a.train_sequences;
  if (a.eval_sequences) rc.eval_data.sequences = *a.eval_sequences;
  const fs::path root = a.out;
  Corpus train = generate_corpus(rc.train_data, rc.train_data_seed, "train");
  save_corpus(root / "train", train);
  Corpus held = generate_corpus(rc.eval_data, rc.eval_data_seed, "eval");
  save_corpus(root / "eval", held);
  out << "train\t" << train.size() << " sequences\t" << (root / "train").string() << "\n";
  out << "eval\t" << held.size() << " sequences\t" << (root / "eval").string() << "\n";
  return 0;
}

// train ------------------------------------------------------------------

struct TrainArgs {
  int stage = 1;
  std::string corpus, out, init, trace;
  ModelOverrides model;
  std::optional<std::size_t> steps, batch;
  std::string sampling;
  std::size_t log_every = 100;
};

int cmd_train(const Globals& g, const TrainArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig rc = load_run_config(g);
  const fs::path corpus_dir = pick_path(a.corpus, rc.train_corpus, "training corpus");

  std::optional<Model> model;
  std::int64_t step0 = 0;
  if (a.stage == 2) {
    if (a.init.empty()) throw ConfigError("train --stage 2 needs --init <stage-1 checkpoint>");
    Checkpoint ck = load_checkpoint(a.init);
    if (!a.model.variant.empty() && parse_variant(a.model.variant) != ck.model.config().variant)
      throw ConfigError("train --stage 2: --variant differs from the checkpoint");
    ModelConfig mc = ck.model.config();
    a.model.apply(mc);
    mc.validate();
    model.emplace(mc);
    copy_state(ck.model, *model);
    step0 = ck.step;
  } else {
    if (!a.init.empty()) throw ConfigError("train --stage 1 starts from a fresh initialisation; drop --init");
    a.model.apply(rc.model);
    rc.model.validate();
    model.emplace(rc.model);
    Rng init_rng = make_stream(rc.seed, "init");
    model->initialize(init_rng);
  }
  rc.model = model->config();

  TrainConfig& tc = a.stage == 1 ? rc.stage1 : rc.stage2;
  tc.stage = a.stage;
  if (a.steps) tc.steps = *a.steps;
  if (a.batch) tc.batch = *a.batch;
  if (!a.sampling.empty()) tc.sampling = parse_sampling(a.sampling);
  tc.seed = rc.seed;
  rc.validate();

  Corpus corpus = load_corpus(corpus_dir);
  const fs::path trace_path = a.trace.empty() ? fs::path(a.out + ".trace.tsv") : fs::path(a.trace);

  const auto t0 = std::chrono::steady_clock::now();
  auto on_step = [&](const StepRecord& r) {
    if (a.log_every == 0 || (r.step % a.log_every != 0 && r.step + 1 != tc.steps)) return;
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    char buf[160];
    std::snprintf(buf, sizeof buf, "stage %d step %zu/%zu loss %.4f l1 %.4f giou %.4f cls %.4f lr %.2e %.0fs\n",
                  a.stage, r.step, tc.steps, r.loss, r.l1, r.giou, r.cls, r.lr, s);
    err << buf << std::flush;
  };
  TrainResult res = train(*model, corpus, tc, on_step);

  std::ostringstream trace;
  trace << "step\tlr\tloss\tl1\tgiou\tcls\tgrad_norm\n";
  for (const StepRecord& r : res.trace) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%zu\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\n", r.step, r.lr, r.loss, r.l1,
                  r.giou, r.cls, r.grad_norm);
    trace << buf;
  }
  write_text(trace_path, trace.str());
  const std::int64_t step = step0 + static_cast<std::int64_t>(tc.steps);
  save_checkpoint(a.out, *model, rc, &res.optim, step);
  out << "checkpoint\t" << a.out << "\nstep\t" << step << "\n";
  if (!res.trace.empty()) out << "final_loss\t" << fmt(res.trace.back().loss) << "\n";
  return 0;
}

// track ------------------------------------------------------------------

struct TrackArgs {
  std::string checkpoint, corpus, out;
  bool no_window = false;
};

int cmd_track(const Globals& g, const TrackArgs& a, std::ostream& out) {
  RunConfig rc = load_run_config(g);
  Checkpoint ck = load_checkpoint(a.checkpoint);
  TrackerOptions opts = ck.config.tracker;
  if (a.no_window) opts.use_window = false;
  Corpus corpus = load_corpus(pick_path(a.corpus, rc.eval_corpus, "evaluation corpus"));
  EvalRun run = evaluate(ck.model, corpus, opts, resolve_workers(g.threads, g.deterministic));
  const fs::path dir = a.out;
  fs::create_directories(dir);
  for (std::size_t i = 0; i < corpus.size(); ++i)
    write_results(dir / (corpus[i].name + ".txt"), run.results[i]);
  out << "tracked\t" << corpus.size() << " sequences\t" << dir.string() << "\n";
  out << "AO\t" << fmt(run.all.ao) << "\n";
  return 0;
}

// eval -------------------------------------------------------------------

struct EvalArgs {
  std::string corpus, results, out, label;
};

std::string metric_cells(const MetricReport& m) {
  return fmt(m.auc) + "\t" + fmt(m.norm_precision) + "\t" + fmt(m.precision) + "\t" + fmt(m.ao) + "\t" +
         fmt(m.sr50) + "\t" + fmt(m.sr75);
}

int cmd_eval(const Globals& g, const EvalArgs& a, std::ostream& out) {
  RunConfig rc = load_run_config(g);
  Corpus corpus = load_corpus(pick_path(a.corpus, rc.eval_corpus, "evaluation corpus"));
  std::vector<SequenceMetrics> per;
  for (const Sequence& seq : corpus) {
    const fs::path p = fs::path(a.results) / (seq.name + ".txt");
    if (!fs::exists(p)) throw FormatError("eval: missing result file " + p.string());
    std::vector<FrameResult> r = read_results(p);
    per.push_back(evaluate_sequence(seq, r));
  }
  const MetricReport all = summarize(per);
  const MetricReport heavy = summarize_if(per, [](const SequenceMetrics& s) { return s.tags.distractor_heavy(); });

  std::ostringstream tsv;
  tsv << "sequence\tdistractors";
  for (const auto& c : report_columns()) tsv << "\t" << c;
  tsv << "\tframes\n";
  for (const SequenceMetrics& s : per)
    tsv << s.name << "\t" << s.tags.distractors << "\t" << metric_cells(s.metrics) << "\t" << s.metrics.frames
        << "\n";
  tsv << "ALL\t-\t" << metric_cells(all) << "\t" << all.frames << "\n";
  tsv << "DISTRACTOR_HEAVY\t-\t" << metric_cells(heavy) << "\t" << heavy.frames << "\n";

  json j;
  j["label"] = a.label;
  j["all"] = to_json(all);
  j["distractor_heavy"] = to_json(heavy);
  json seqs = json::array();
  for (const SequenceMetrics& s : per) {
    json e = to_json(s.metrics);
    e["name"] = s.name;
    e["distractors"] = s.tags.distractors;
    seqs.push_back(std::move(e));
  }
  j["sequences"] = std::move(seqs);

  if (!a.out.empty()) {
    write_text(a.out + ".tsv", tsv.str());
    write_text(a.out + ".json", j.dump(2) + "\n");
  }
  out << "block\tsequences";
  for (const auto& c : report_columns()) out << "\t" << c;
  out << "\nall\t" << all.sequences << "\t" << metric_cells(all) << "\n";
  out << "distractor-heavy\t" << heavy.sequences << "\t" << metric_cells(heavy) << "\n";
  return 0;
}

// bench ------------------------------------------------------------------

struct BenchArgs {
  std::string preset, json_out;
  ModelOverrides model;
};

int cmd_bench(const Globals& g, const BenchArgs& a, std::ostream& out) {
  ModelConfig mc = a.preset.empty() ? load_run_config(g).model : preset_config(a.preset);
  a.model.apply(mc);
  mc.validate();
  const ComplexityReport macs = count_macs(mc);
  const ComplexityReport params = count_params(mc);
  const std::uint64_t vt_macs = mc.variation_tokens ? variation_token_macs(mc, mc.variant) : 0;
  char buf[128];
  out << "variant\t" << variant_name(mc.variant) << "\nvariation_tokens\t" << (mc.variation_tokens ? 1 : 0) << "\n";
  for (const auto& [name, v] : macs.components) {
    std::snprintf(buf, sizeof buf, "macs.%s\t%.4f G\n", name.c_str(), v * 1e-9);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "macs.vt_overhead\t%.4f G\n", vt_macs * 1e-9);
  out << buf;
  std::snprintf(buf, sizeof buf, "MACs\t%.2f G\n", macs.total() * 1e-9);
  out << buf;
  for (const auto& [name, v] : params.components) {
    std::snprintf(buf, sizeof buf, "params.%s\t%.4f M\n", name.c_str(), v * 1e-6);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "Params\t%.2f M\n", params.total() * 1e-6);
  out << buf;

  if (!a.json_out.empty()) {
    json j;
    j["variant"] = std::string(variant_name(mc.variant));
    j["variation_tokens"] = mc.variation_tokens;
    j["macs_total"] = macs.total();
    j["vt_overhead"] = vt_macs;
    j["params_total"] = params.total();
    for (const auto& [name, v] : macs.components) j["macs"][name] = v;
    for (const auto& [name, v] : params.components) j["params"][name] = v;
    write_text(a.json_out, j.dump(2) + "\n");
  }
  return 0;
}

// ablate -----------------------------------------------------------------

struct AblateArgs {
  std::string corpus, out;
  std::vector<std::string> entries;
  bool no_window = false;
};

AblationEntry parse_entry(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == text.size())
    throw ConfigError("ablate: entry '" + text + "' is not label=ckpt[,ckpt...]");
  AblationEntry e;
  e.label = text.substr(0, eq);
  std::stringstream rest(text.substr(eq + 1));
  std::string item;
  while (std::getline(rest, item, ','))
    if (!item.empty()) e.checkpoints.emplace_back(item);
  return e;
}

int cmd_ablate(const Globals& g, const AblateArgs& a, std::ostream& out) {
  RunConfig rc = load_run_config(g);
  Corpus corpus = load_corpus(pick_path(a.corpus, rc.eval_corpus, "evaluation corpus"));
  std::vector<AblationEntry> entries;
  for (const auto& e : a.entries) entries.push_back(parse_entry(e));
  TrackerOptions opts = rc.tracker;
  if (a.no_window) opts.use_window = false;
  std::vector<AblationRow> rows = run_ablation(corpus, entries, opts, resolve_workers(g.threads, g.deterministic));
  const std::string tsv = report_tsv(rows);
  if (!a.out.empty()) {
    write_text(a.out + ".tsv", tsv);
    write_text(a.out + ".json", report_json(rows).dump(2) + "\n");
  }
  out << tsv;
  return 0;
}

// inspect-attn -----------------------------------------------------------

struct InspectArgs {
  std::string checkpoint, corpus, sequence, out;
  std::size_t frame = 1;
  std::size_t layer = 0;
};

const char* segment_name(Segment s) {
  switch (s) {
    case Segment::kVt: return "vt";
    case Segment::kIt: return "it";
    case Segment::kHt: return "ht";
    case Segment::kSr: return "sr";
  }
  return "?";
}

int cmd_inspect(const Globals& g, const InspectArgs& a, std::ostream& out) {
  RunConfig rc = load_run_config(g);
  Checkpoint ck = load_checkpoint(a.checkpoint);
  Model& model = ck.model;
  const ModelConfig& mc = model.config();
  if (a.layer >= mc.depth) throw ConfigError("inspect-attn: --layer out of range");
  Corpus corpus = load_corpus(pick_path(a.corpus, rc.eval_corpus, "evaluation corpus"));
  if (corpus.empty()) throw ConfigError("inspect-attn: empty corpus");
  const Sequence* seq = &corpus.front();
  if (!a.sequence.empty()) {
    seq = nullptr;
    for (const Sequence& s : corpus)
      if (s.name == a.sequence) seq = &s;
    if (!seq) throw ConfigError("inspect-attn: no sequence named '" + a.sequence + "'");
  }
  if (a.frame == 0 || a.frame >= seq->size())
    throw ConfigError("inspect-attn: --frame must be in [1, " + std::to_string(seq->size()) + ")");

  Tracker tracker(model, ck.config.tracker);
  TrackerState state = tracker.init(seq->frames[0], seq->groundtruth[0]);
  for (std::size_t t = 1; t < a.frame; ++t) tracker.track(state, seq->frames[t]);

  // Same crop and cache the tracker would use on this frame.
  NoGradGuard no_grad;
  Crop crop = crop_region(seq->frames[a.frame], state.box, ck.config.tracker.search_factor, mc.search_size);
  Image images[] = {crop.image};
  Tensor sr = model.embed_search(model.patches(images));
  const bool use_cache = mc.variation_tokens && mc.uses_hybrid() && !state.cache.empty();
  BackboneOutput bb = forward_backbone(mc.uses_inherent() ? state.it_tokens : Tensor{},
                                       mc.uses_hybrid() ? state.ht_tokens : Tensor{}, sr,
                                       use_cache ? &state.cache : nullptr, model.layers, model.encoder_settings(),
                                       mc.template_tokens(), mc.search_tokens(), 1, true);
  const Tensor vt = use_cache ? state.cache.layers[a.layer] : Tensor{};
  CorrelationBlocks cb = layer_correlation(bb.layer_inputs[a.layer], vt, model.layers[a.layer],
                                           model.encoder_settings());

  json j;
  j["sequence"] = seq->name;
  j["frame"] = a.frame;
  j["layer"] = a.layer;
  j["variant"] = std::string(variant_name(mc.variant));
  j["variation_tokens"] = use_cache;
  j["heads"] = cb.per_head.size();
  j["template_grid"] = mc.template_grid();
  j["search_grid"] = mc.search_grid();
  j["layout"] = {{"vt", cb.layout.n_vt}, {"it", cb.layout.n_it}, {"ht", cb.layout.n_ht}, {"sr", cb.layout.n_sr}};
  j["search_box"] = {crop.spec.left(), crop.spec.top(), crop.spec.side, crop.spec.side};
  j["tracked_box"] = {state.box.x, state.box.y, state.box.w, state.box.h};
  j["groundtruth"] = {seq->groundtruth[a.frame].x, seq->groundtruth[a.frame].y, seq->groundtruth[a.frame].w,
                      seq->groundtruth[a.frame].h};
  json blocks = json::array();
  for (std::size_t h = 0; h < cb.per_head.size(); ++h) {
    for (Segment q : {Segment::kHt, Segment::kSr}) {
      for (Segment k : {Segment::kVt, Segment::kIt, Segment::kHt, Segment::kSr}) {
        Tensor b = cb.block(h, q, k);
        if (!b.defined()) continue;
        json vals = json::array();
        for (std::size_t r = 0; r < b.rows(); ++r) {
          json row = json::array();
          for (std::size_t c = 0; c < b.cols(); ++c) row.push_back(b.at(r, c));
          vals.push_back(std::move(row));
        }
        blocks.push_back({{"head", h},
                          {"query", segment_name(q)},
                          {"key", segment_name(k)},
                          {"rows", b.rows()},
                          {"cols", b.cols()},
                          {"values", std::move(vals)}});
      }
    }
  }
  j["blocks"] = std::move(blocks);
  write_text(a.out, j.dump() + "\n");
  out << "blocks\t" << j["blocks"].size() << "\t" << a.out << "\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"romtrack: tracker training, tracking and evaluation"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "run configuration file")->check(CLI::ExistingFile);
  app.add_flag("--deterministic", g.deterministic, "single worker, fixed order");
  app.add_option("--threads", g.threads, "worker threads for track/eval/ablate (0 = all cores)");
  app.add_option("--seed", g.seed, "override [run] seed");

  GenArgs gen;
  auto* c_gen = app.add_subcommand("gen-data", "render the training and held-out corpora");
  c_gen->add_option("--out", gen.out, "output root (train/ and eval/ below it)")->required();
  c_gen->add_option("--train-sequences", gen.train_sequences);
  c_gen->add_option("--eval-sequences", gen.eval_sequences);

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "run training stage 1 or 2");
  c_train->add_option("--stage", tr.stage)->required()->check(CLI::IsMember({1, 2}));
  c_train->add_option("--corpus", tr.corpus, "training corpus directory");
  c_train->add_option("--out", tr.out, "checkpoint to write")->required();
  c_train->add_option("--init", tr.init, "stage-1 checkpoint (stage 2)");
  c_train->add_option("--trace", tr.trace, "loss trace TSV (default <out>.trace.tsv)");
  c_train->add_option("--steps", tr.steps);
  c_train->add_option("--batch", tr.batch);
  c_train->add_option("--sampling", tr.sampling, "consecutive|random");
  c_train->add_option("--log-every", tr.log_every, "progress line interval on stderr (0 = quiet)");
  add_model_flags(c_train, tr.model);

  TrackArgs tk;
  auto* c_track = app.add_subcommand("track", "track every sequence of a corpus");
  c_track->add_option("--checkpoint", tk.checkpoint)->required();
  c_track->add_option("--corpus", tk.corpus);
  c_track->add_option("--out", tk.out, "directory for <sequence>.txt results")->required();
  c_track->add_flag("--no-window", tk.no_window, "plain argmax decoding");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "score result files against the annotation");
  c_eval->add_option("--corpus", ev.corpus);
  c_eval->add_option("--results", ev.results)->required();
  c_eval->add_option("--out", ev.out, "report prefix (.tsv and .json)");
  c_eval->add_option("--label", ev.label);

  BenchArgs bn;
  auto* c_bench = app.add_subcommand("bench", "analytic MACs and parameter counts");
  c_bench->add_option("--preset", bn.preset, "desk, paper-256 or paper-384");
  c_bench->add_option("--json", bn.json_out);
  add_model_flags(c_bench, bn.model);

  AblateArgs ab;
  auto* c_ablate = app.add_subcommand("ablate", "evaluate labelled checkpoint sets");
  c_ablate->add_option("--corpus", ab.corpus);
  c_ablate->add_option("--entry", ab.entries, "label=ckpt[,ckpt...], repeatable")->required();
  c_ablate->add_option("--out", ab.out, "report prefix (.tsv and .json)");
  c_ablate->add_flag("--no-window", ab.no_window);

  InspectArgs in;
  auto* c_inspect = app.add_subcommand("inspect-attn", "dump one layer's attention blocks as JSON");
  c_inspect->add_option("--checkpoint", in.checkpoint)->required();
  c_inspect->add_option("--corpus", in.corpus);
  c_inspect->add_option("--sequence", in.sequence);
  c_inspect->add_option("--frame", in.frame);
  c_inspect->add_option("--layer", in.layer);
  c_inspect->add_option("--out", in.out)->required();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (c_gen->parsed()) return cmd_gen_data(g, gen, out);
    if (c_train->parsed()) return cmd_train(g, tr, out, err);
    if (c_track->parsed()) return cmd_track(g, tk, out);
    if (c_eval->parsed()) return cmd_eval(g, ev, out);
    if (c_bench->parsed()) return cmd_bench(g, bn, out);
    if (c_ablate->parsed()) return cmd_ablate(g, ab, out);
    if (c_inspect->parsed()) return cmd_inspect(g, in, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace romtrack
