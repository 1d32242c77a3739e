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

#include "romtrack/synthetic.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "romtrack/errors.h"
#include "romtrack/rng.h"

namespace romtrack {
namespace {

using Rgb = std::array<double, 3>;

enum class Shape { kEllipse, kRect, kDiamond };

// Stripe texture shared by a target and its distractors.
struct Texture {
  double angle = 0.0;
  double period = 4.0;
  Rgb a{}, b{};
};

struct Object {
  Shape shape = Shape::kEllipse;
  Texture texture;
  Rgb drift_a{}, drift_b{};
  double cx = 0, cy = 0, vx = 0, vy = 0;
  double half_w = 0, half_h = 0;
  double phase = 0, omega = 0;
};

Rgb random_colour(Rng& rng) { return {uniform(rng, 0.05, 0.95), uniform(rng, 0.05, 0.95), uniform(rng, 0.05, 0.95)}; }

Rgb jitter(const Rgb& c, Rng& rng, double amount) {
  Rgb out;
  for (std::size_t i = 0; i < 3; ++i) out[i] = std::clamp(c[i] + uniform(rng, -amount, amount), 0.0, 1.0);
  return out;
}

Rgb mix(const Rgb& x, const Rgb& y, double t) {
  return {x[0] + t * (y[0] - x[0]), x[1] + t * (y[1] - x[1]), x[2] + t * (y[2] - x[2])};
}

double round4(double v) { return std::round(v * 1e4) / 1e4; }

bool inside(Shape shape, double dx, double dy, double hw, double hh) {
  const double u = dx / hw, v = dy / hh;
  switch (shape) {
    case Shape::kEllipse: return u * u + v * v <= 1.0;
    case Shape::kRect: return std::abs(u) <= 1.0 && std::abs(v) <= 1.0;
    case Shape::kDiamond: return std::abs(u) + std::abs(v) <= 1.0;
  }
  return false;
}

Object make_object(const Scenario& sc, const Texture& texture, Rng& rng) {
  Object o;
  o.shape = static_cast<Shape>(uniform_index(rng, 3));
  o.texture = texture;
  o.drift_a = random_colour(rng);
  o.drift_b = random_colour(rng);
  o.half_w = uniform(rng, sc.min_half_extent, sc.max_half_extent);
  o.half_h = uniform(rng, sc.min_half_extent, sc.max_half_extent);
  const double n = static_cast<double>(sc.frame_size);
  const double margin = (1.0 + sc.deformation) * std::max(o.half_w, o.half_h) + 1.0;
  o.cx = uniform(rng, margin, n - margin);
  o.cy = uniform(rng, margin, n - margin);
  const double speed = uniform(rng, 0.0, sc.max_speed), heading = uniform(rng, 0.0, 2 * std::numbers::pi);
  o.vx = speed * std::cos(heading);
  o.vy = speed * std::sin(heading);
  o.phase = uniform(rng, 0.0, 2 * std::numbers::pi);
  o.omega = uniform(rng, 0.1, 0.3);
  return o;
}

// Half extents at frame t under the deformation cycle.
std::array<double, 2> extents(const Object& o, double deformation, std::size_t t) {
  const double s = deformation * std::sin(o.omega * static_cast<double>(t) + o.phase);
  return {o.half_w * (1.0 + s), o.half_h * (1.0 - s)};
}

void advance(Object& o, const Scenario& sc, Rng& rng, std::size_t t_next) {
  if (sc.max_speed <= 0.0) return;
  o.vx += uniform(rng, -sc.acceleration, sc.acceleration);
  o.vy += uniform(rng, -sc.acceleration, sc.acceleration);
  const double speed = std::hypot(o.vx, o.vy);
  if (speed > sc.max_speed) {
    o.vx *= sc.max_speed / speed;
    o.vy *= sc.max_speed / speed;
  }
  o.cx += o.vx;
  o.cy += o.vy;
  // Reflect off the borders so the whole object stays in view.
  auto [hw, hh] = extents(o, sc.deformation, t_next);
  const double n = static_cast<double>(sc.frame_size);
  auto bounce = [](double& c, double& v, double lo, double hi) {
    if (c < lo) {
      c = 2 * lo - c;
      v = -v;
    }
    if (c > hi) {
      c = 2 * hi - c;
      v = -v;
    }
    c = std::clamp(c, lo, hi);
  };
  bounce(o.cx, o.vx, hw, n - hw);
  bounce(o.cy, o.vy, hh, n - hh);
}

}  // namespace

Sequence generate_sequence(const Scenario& sc, std::uint64_t seed) {
  if (sc.frames == 0 || sc.frame_size < 8 || sc.render_scale == 0)
    throw ContractError("generate_sequence: need frames > 0, frame_size >= 8, render_scale > 0");
  if (2.0 * (1.0 + sc.deformation) * sc.max_half_extent + 2.0 > static_cast<double>(sc.frame_size) ||
      sc.min_half_extent <= 0.0 || sc.min_half_extent > sc.max_half_extent || sc.deformation < 0.0 ||
      sc.deformation >= 1.0)
    throw ContractError("generate_sequence: object extents do not fit the frame");

  Rng rng(seed);
  const std::size_t n = sc.frame_size, s = sc.render_scale, big = n * s;

  // Static background: smooth colour field plus a few low-contrast patches.
  const Rgb base = random_colour(rng);
  std::array<std::array<double, 4>, 4> waves;  // fx, fy, phase, amplitude
  for (auto& w : waves) w = {uniform(rng, -0.15, 0.15), uniform(rng, -0.15, 0.15), uniform(rng, 0, 6.3), uniform(rng, 0.02, 0.08)};
  struct Patch {
    double x0, y0, x1, y1;
    Rgb delta;
  };
  std::vector<Patch> patches(4);
  for (auto& p : patches) {
    p.x0 = uniform(rng, 0, n);
    p.y0 = uniform(rng, 0, n);
    p.x1 = p.x0 + uniform(rng, 4, 20);
    p.y1 = p.y0 + uniform(rng, 4, 20);
    p.delta = {uniform(rng, -0.1, 0.1), uniform(rng, -0.1, 0.1), uniform(rng, -0.1, 0.1)};
  }
  std::vector<double> background(big * big * 3);
  for (std::size_t i = 0; i < big; ++i)
    for (std::size_t j = 0; j < big; ++j) {
      const double x = (j + 0.5) / s, y = (i + 0.5) / s;
      double shade = 0.0;
      for (const auto& w : waves) shade += w[3] * std::sin(w[0] * x + w[1] * y + w[2]);
      for (std::size_t c = 0; c < 3; ++c) {
        double v = base[c] + shade;
        for (const auto& p : patches)
          if (x >= p.x0 && x < p.x1 && y >= p.y0 && y < p.y1) v += p.delta[c];
        background[(i * big + j) * 3 + c] = std::clamp(v, 0.0, 1.0);
      }
    }

  Texture texture{uniform(rng, 0.0, std::numbers::pi), uniform(rng, 3.0, 6.0), random_colour(rng), random_colour(rng)};
  Object target = make_object(sc, texture, rng);
  std::vector<Object> distractors;
  for (std::size_t k = 0; k < sc.distractors; ++k) {
    Texture t = texture;
    t.a = jitter(texture.a, rng, 0.08);
    t.b = jitter(texture.b, rng, 0.08);
    distractors.push_back(make_object(sc, t, rng));
  }

  Sequence seq;
  seq.seed = seed;
  seq.tags = {sc.deformation, sc.drift, sc.distractors};
  std::vector<double> canvas;
  for (std::size_t t = 0; t < sc.frames; ++t) {
    canvas = background;
    const double progress = sc.frames > 1 ? double(t) / double(sc.frames - 1) : 0.0;
    auto draw = [&](const Object& o) {
      auto [hw, hh] = extents(o, sc.deformation, t);
      const Rgb ca = mix(o.texture.a, o.drift_a, sc.drift * progress);
      const Rgb cb = mix(o.texture.b, o.drift_b, sc.drift * progress);
      const double ct = std::cos(o.texture.angle), st = std::sin(o.texture.angle);
      const long i0 = std::max(0L, static_cast<long>(std::floor((o.cy - hh) * s)));
      const long i1 = std::min(static_cast<long>(big), static_cast<long>(std::ceil((o.cy + hh) * s)) + 1);
      const long j0 = std::max(0L, static_cast<long>(std::floor((o.cx - hw) * s)));
      const long j1 = std::min(static_cast<long>(big), static_cast<long>(std::ceil((o.cx + hw) * s)) + 1);
      for (long i = i0; i < i1; ++i)
        for (long j = j0; j < j1; ++j) {
          const double dx = (j + 0.5) / s - o.cx, dy = (i + 0.5) / s - o.cy;
          if (!inside(o.shape, dx, dy, hw, hh)) continue;
          const bool stripe = std::sin(2 * std::numbers::pi * (dx * ct + dy * st) / o.texture.period) >= 0.0;
          const Rgb& c = stripe ? ca : cb;
          for (std::size_t ch = 0; ch < 3; ++ch) canvas[(i * big + j) * 3 + ch] = c[ch];
        }
    };
    for (const auto& d : distractors) draw(d);
    draw(target);

    Frame frame(n, n);
    const double norm = 255.0 / static_cast<double>(s * s);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t c = 0; c < 3; ++c) {
          double sum = 0.0;
          for (std::size_t a = 0; a < s; ++a)
            for (std::size_t b = 0; b < s; ++b) sum += canvas[((i * s + a) * big + j * s + b) * 3 + c];
          frame.at(i, j, c) = static_cast<std::uint8_t>(std::clamp(std::lround(sum * norm), 0L, 255L));
        }
    seq.frames.push_back(std::move(frame));

    auto [hw, hh] = extents(target, sc.deformation, t);
    seq.groundtruth.push_back(
        {round4(target.cx - hw), round4(target.cy - hh), round4(2 * hw), round4(2 * hh)});

    if (t + 1 < sc.frames) {
      advance(target, sc, rng, t + 1);
      for (auto& d : distractors) advance(d, sc, rng, t + 1);
    }
  }
  return seq;
}

Corpus generate_corpus(const CorpusOptions& options, std::uint64_t seed, const std::string& prefix) {
  Rng rng = make_stream(seed, "data");
  Corpus corpus;
  for (std::size_t k = 0; k < options.sequences; ++k) {
    Scenario sc;
    sc.frames = options.frames;
    sc.frame_size = options.frame_size;
    sc.distractors = uniform_index(rng, options.max_distractors + 1);
    sc.deformation = uniform(rng, 0.0, options.max_deformation);
    sc.drift = uniform(rng, 0.0, options.max_drift);
    const std::uint64_t sequence_seed = rng();
    Sequence seq = generate_sequence(sc, sequence_seed);
    char name[64];
    std::snprintf(name, sizeof name, "%s_%04zu", prefix.c_str(), k);
    seq.name = name;
    corpus.push_back(std::move(seq));
  }
  return corpus;
}

std::vector<PixelBox> read_groundtruth(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read " + path.string());
  std::vector<PixelBox> boxes;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    PixelBox b;
    char c[3];
    std::istringstream ss(line);
    if (!(ss >> b.x >> c[0] >> b.y >> c[1] >> b.w >> c[2] >> b.h) || std::string(c, 3) != ",,,")
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected x,y,w,h");
    boxes.push_back(b);
  }
  return boxes;
}

void write_groundtruth(const std::filesystem::path& path, const std::vector<PixelBox>& boxes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  char buf[128];
  for (const auto& b : boxes) {
    std::snprintf(buf, sizeof buf, "%.4f,%.4f,%.4f,%.4f\n", b.x, b.y, b.w, b.h);
    out << buf;
  }
}

void save_sequence(const std::filesystem::path& dir, const Sequence& seq) {
  std::filesystem::create_directories(dir);
  for (std::size_t t = 0; t < seq.frames.size(); ++t) {
    char name[32];
    std::snprintf(name, sizeof name, "%05zu.romi", t);
    write_romi(dir / name, seq.frames[t]);
  }
  write_groundtruth(dir / "groundtruth.txt", seq.groundtruth);
  std::ofstream meta(dir / "meta.txt", std::ios::binary);
  char buf[256];
  std::snprintf(buf, sizeof buf, "seed = %llu\ndistractors = %zu\ndeformation = %.6f\ndrift = %.6f\n",
                static_cast<unsigned long long>(seq.seed), seq.tags.distractors, seq.tags.deformation, seq.tags.drift);
  meta << buf;
}

Sequence load_sequence(const std::filesystem::path& dir) {
  Sequence seq;
  seq.name = dir.filename().string();
  std::vector<std::filesystem::path> frames;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.path().extension() == ".romi") frames.push_back(entry.path());
  std::sort(frames.begin(), frames.end());
  for (const auto& f : frames) seq.frames.push_back(read_romi(f));
  seq.groundtruth = read_groundtruth(dir / "groundtruth.txt");
  if (seq.groundtruth.size() != seq.frames.size())
    throw FormatError(dir.string() + ": " + std::to_string(seq.frames.size()) + " frames but " +
                      std::to_string(seq.groundtruth.size()) + " ground-truth boxes");
  std::ifstream meta(dir / "meta.txt");
  std::string line;
  while (std::getline(meta, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    key.erase(key.find_last_not_of(' ') + 1);
    if (key == "seed") seq.seed = std::stoull(value);
    else if (key == "distractors") seq.tags.distractors = std::stoul(value);
    else if (key == "deformation") seq.tags.deformation = std::stod(value);
    else if (key == "drift") seq.tags.drift = std::stod(value);
  }
  return seq;
}

void save_corpus(const std::filesystem::path& root, const Corpus& corpus) {
  for (const auto& seq : corpus) save_sequence(root / seq.name, seq);
}

Corpus load_corpus(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root)) throw FormatError("not a corpus directory: " + root.string());
  std::vector<std::filesystem::path> dirs;
  for (const auto& entry : std::filesystem::directory_iterator(root))
    if (entry.is_directory() && std::filesystem::exists(entry.path() / "groundtruth.txt")) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  Corpus corpus;
  for (const auto& d : dirs) corpus.push_back(load_sequence(d));
  return corpus;
}

}  // namespace romtrack
