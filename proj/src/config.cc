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

#include "romtrack/config.h"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <vector>

#include "romtrack/errors.h"

namespace romtrack {
namespace {

struct Field {
  std::string section;
  std::string key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
T parse_number(const std::string& v) {
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) throw ConfigError("not a number: '" + v + "'");
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("not a boolean: '" + v + "'");
}

template <typename T>
Field number(std::string section, std::string key, T& ref) {
  return {std::move(section), std::move(key),
          [&ref] {
            if constexpr (std::is_floating_point_v<T>) return format_double(ref);
            else return std::to_string(ref);
          },
          [&ref](const std::string& v) { ref = parse_number<T>(v); }};
}

Field boolean(std::string section, std::string key, bool& ref) {
  return {std::move(section), std::move(key), [&ref] { return std::string(ref ? "true" : "false"); },
          [&ref](const std::string& v) { ref = parse_bool(v); }};
}

Field path(std::string section, std::string key, std::filesystem::path& ref) {
  return {std::move(section), std::move(key), [&ref] { return ref.string(); },
          [&ref](const std::string& v) { ref = v; }};
}

Field triple(std::string section, std::string key, std::array<double, 3>& ref) {
  return {std::move(section), std::move(key),
          [&ref] { return format_double(ref[0]) + "," + format_double(ref[1]) + "," + format_double(ref[2]); },
          [&ref](const std::string& v) {
            std::array<double, 3> out;
            std::size_t start = 0;
            for (std::size_t i = 0; i < 3; ++i) {
              const auto comma = v.find(',', start);
              if ((i < 2) != (comma != std::string::npos)) throw ConfigError("expected three comma-separated values");
              out[i] = parse_number<double>(trim(v.substr(start, comma - start)));
              start = comma + 1;
            }
            ref = out;
          }};
}

void corpus_fields(std::vector<Field>& f, const std::string& s, CorpusOptions& c, std::uint64_t& seed) {
  f.push_back(number(s, "sequences", c.sequences));
  f.push_back(number(s, "frames", c.frames));
  f.push_back(number(s, "frame_size", c.frame_size));
  f.push_back(number(s, "max_distractors", c.max_distractors));
  f.push_back(number(s, "max_deformation", c.max_deformation));
  f.push_back(number(s, "max_drift", c.max_drift));
  f.push_back(number(s, "seed", seed));
}

void train_fields(std::vector<Field>& f, const std::string& s, TrainConfig& t) {
  f.push_back(number(s, "steps", t.steps));
  f.push_back(number(s, "batch", t.batch));
  f.push_back(number(s, "lr", t.lr));
  f.push_back(number(s, "lr_decay", t.lr_decay));
  f.push_back(number(s, "decay_fraction", t.decay_fraction));
  f.push_back(number(s, "weight_decay", t.weight_decay));
  f.push_back(number(s, "clip_norm", t.clip_norm));
  f.push_back({s, "sampling", [&t] { return std::string(sampling_name(t.sampling)); },
               [&t](const std::string& v) { t.sampling = parse_sampling(v); }});
  f.push_back(number(s, "center_jitter", t.sample.center_jitter));
  f.push_back(number(s, "scale_jitter", t.sample.scale_jitter));
  f.push_back(number(s, "flip_probability", t.augment.flip_probability));
  f.push_back(number(s, "brightness", t.augment.brightness));
  f.push_back(number(s, "l1_weight", t.loss.l1));
  f.push_back(number(s, "giou_weight", t.loss.giou));
  f.push_back(number(s, "cls_weight", t.loss.cls));
  f.push_back(number(s, "divergence_factor", t.divergence_factor));
  f.push_back(number(s, "divergence_patience", t.divergence_patience));
  f.push_back(boolean(s, "pass_b_variation_tokens", t.pass_b_variation_tokens));
}

std::vector<Field> fields(RunConfig& c) {
  std::vector<Field> f;
  ModelConfig& m = c.model;
  f.push_back(number("model", "template_size", m.template_size));
  f.push_back(number("model", "search_size", m.search_size));
  f.push_back(number("model", "patch_size", m.patch_size));
  f.push_back(number("model", "dim", m.dim));
  f.push_back(number("model", "heads", m.heads));
  f.push_back(number("model", "depth", m.depth));
  f.push_back(number("model", "mlp_ratio", m.mlp_ratio));
  f.push_back(number("model", "head_channels", m.head_channels));
  f.push_back(number("model", "head_layers", m.head_layers));
  f.push_back(number("model", "pos_grid_template", m.pos_grid_template));
  f.push_back(number("model", "pos_grid_search", m.pos_grid_search));
  f.push_back({"model", "variant", [&m] { return std::string(variant_name(m.variant)); },
               [&m](const std::string& v) { m.variant = parse_variant(v); }});
  f.push_back(boolean("model", "variation_tokens", m.variation_tokens));
  f.push_back(number("model", "ln_eps", m.ln_eps));
  f.push_back(triple("model", "pixel_mean", m.pixel_mean));
  f.push_back(triple("model", "pixel_std", m.pixel_std));
  corpus_fields(f, "train_data", c.train_data, c.train_data_seed);
  corpus_fields(f, "eval_data", c.eval_data, c.eval_data_seed);
  train_fields(f, "stage1", c.stage1);
  train_fields(f, "stage2", c.stage2);
  f.push_back(number("tracker", "template_factor", c.tracker.template_factor));
  f.push_back(number("tracker", "search_factor", c.tracker.search_factor));
  f.push_back(boolean("tracker", "use_window", c.tracker.use_window));
  f.push_back(number("run", "seed", c.seed));
  f.push_back(path("paths", "train_corpus", c.train_corpus));
  f.push_back(path("paths", "eval_corpus", c.eval_corpus));
  f.push_back(path("paths", "work_dir", c.work_dir));
  return f;
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  auto fail = [](const std::string& what) { throw ConfigError("invalid run config: " + what); };
  for (const TrainConfig* t : {&stage1, &stage2}) {
    const std::string s = t == &stage1 ? "stage1." : "stage2.";
    if (t->batch == 0) fail(s + "batch > 0");
    if (!(t->lr > 0.0)) fail(s + "lr > 0");
    if (!(t->lr_decay >= 1.0)) fail(s + "lr_decay >= 1");
    if (!(t->decay_fraction >= 0.0 && t->decay_fraction <= 1.0)) fail(s + "decay_fraction in [0, 1]");
    if (!(t->weight_decay >= 0.0)) fail(s + "weight_decay >= 0");
    if (!(t->clip_norm > 0.0)) fail(s + "clip_norm > 0");
    if (!(t->augment.flip_probability >= 0.0 && t->augment.flip_probability <= 1.0))
      fail(s + "flip_probability in [0, 1]");
    if (!(t->augment.brightness >= 0.0 && t->augment.brightness < 1.0)) fail(s + "brightness in [0, 1)");
    if (!(t->sample.center_jitter >= 0.0 && t->sample.center_jitter <= 1.5)) fail(s + "center_jitter in [0, 1.5]");
    if (!(t->sample.scale_jitter >= 0.0 && t->sample.scale_jitter <= 0.5)) fail(s + "scale_jitter in [0, 0.5]");
  }
  for (const CorpusOptions* d : {&train_data, &eval_data}) {
    if (d->frames < 2) fail("data frames >= 2");
    if (d->frame_size < 32) fail("data frame_size >= 32");
    if (!(d->max_deformation >= 0.0 && d->max_deformation < 1.0)) fail("data max_deformation in [0, 1)");
  }
  if (!(tracker.template_factor > 0.0) || !(tracker.search_factor > 0.0)) fail("tracker factors > 0");
}

RunConfig parse_config_text(std::string_view text, std::string_view origin) {
  struct Entry {
    std::string value;
    std::size_t line;
  };
  std::map<std::string, Entry> entries;  // "section.key"
  std::string section;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t lineno = 0;
  auto where = [&](std::size_t n) { return std::string(origin) + ":" + std::to_string(n) + ": "; };
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = raw;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where(lineno) + "unterminated section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where(lineno) + "expected key = value");
    const std::string key = section + "." + trim(std::string_view(line).substr(0, eq));
    if (entries.count(key)) throw ConfigError(where(lineno) + "duplicate key '" + key + "'");
    entries[key] = {trim(std::string_view(line).substr(eq + 1)), lineno};
  }

  RunConfig config;
  if (auto it = entries.find("model.preset"); it != entries.end()) {
    try {
      config.model = preset_config(it->second.value);
    } catch (const ConfigError& e) {
      throw ConfigError(where(it->second.line) + e.what());
    }
    entries.erase(it);
  }
  auto table = fields(config);
  for (const auto& [key, entry] : entries) {
    const Field* field = nullptr;
    for (const auto& f : table)
      if (f.section + "." + f.key == key) field = &f;
    if (!field) throw ConfigError(where(entry.line) + "unknown key '" + key + "'");
    try {
      field->set(entry.value);
    } catch (const ConfigError& e) {
      throw ConfigError(where(entry.line) + key + ": " + e.what());
    }
  }
  config.stage1.stage = 1;
  config.stage2.stage = 2;
  config.validate();
  return config;
}

RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

std::string serialize_config(const RunConfig& config) {
  RunConfig copy = config;
  std::string out, section;
  for (const auto& f : fields(copy)) {
    if (f.section != section) {
      if (!section.empty()) out += "\n";
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += f.key + " = " + f.get() + "\n";
  }
  return out;
}

}  // namespace romtrack
