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

#include "romtrack/head.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "romtrack/errors.h"

namespace romtrack {

namespace {

constexpr double kClampLo = 1e-6;
constexpr double kClampHi = 1.0 - 1e-6;

Tensor branch_forward(const Tensor& x, HeadBranch& branch, std::size_t batch, std::size_t side, bool training) {
  Tensor h = x;
  for (auto& layer : branch.layers) {
    Tensor y = linear(im2col3x3(h, batch, side, side), layer.weight, layer.bias);
    y = batch_norm(y, layer.bn_gain, layer.bn_bias, {layer.running_mean.values(), layer.running_var.values()},
                   training);
    h = relu(y);
  }
  return sigmoid(linear(h, branch.out_weight, branch.out_bias));
}

struct Corners {
  double x1, y1, x2, y2;
};

Corners corners(const Box& b) { return {b.cx - b.w / 2, b.cy - b.h / 2, b.cx + b.w / 2, b.cy + b.h / 2}; }

void require_area(const Box& b, const char* what) {
  if (!(b.w > 0.0) || !(b.h > 0.0)) {
    throw ContractError(std::string(what) + ": degenerate box (zero area)");
  }
}

// GIoU loss of one pair and its gradient with respect to (cx, cy, w, h) of
// the prediction.
double giou_loss_and_grad(const Box& pred, const Box& gt, double* grad) {
  require_area(pred, "giou_loss");
  require_area(gt, "giou_loss");
  const Corners p = corners(pred), g = corners(gt);
  const double pw = p.x2 - p.x1, ph = p.y2 - p.y1;
  const double ap = pw * ph, ag = (g.x2 - g.x1) * (g.y2 - g.y1);
  const double iw = std::max(0.0, std::min(p.x2, g.x2) - std::max(p.x1, g.x1));
  const double ih = std::max(0.0, std::min(p.y2, g.y2) - std::max(p.y1, g.y1));
  const double inter = iw * ih;
  const double uni = ap + ag - inter;
  const double ew = std::max(p.x2, g.x2) - std::min(p.x1, g.x1);
  const double eh = std::max(p.y2, g.y2) - std::min(p.y1, g.y1);
  const double enc = ew * eh;
  const double loss = 2.0 - inter / uni - uni / enc;
  note_branch((p.x1 < g.x1) | (p.x2 < g.x2) << 1 | (p.y1 < g.y1) << 2 | (p.y2 < g.y2) << 3 |
              (std::min(p.x2, g.x2) > std::max(p.x1, g.x1)) << 4 | (std::min(p.y2, g.y2) > std::max(p.y1, g.y1)) << 5);
  if (!grad) return loss;

  // L = 2 - I/U - U/E with U = A_p + A_g - I.
  const double c_inter = -1.0 / uni - inter / (uni * uni) + 1.0 / enc;
  const double c_area = inter / (uni * uni) - 1.0 / enc;
  const double c_enc = uni / (enc * enc);
  double dx1 = -c_area * ph, dx2 = c_area * ph, dy1 = -c_area * pw, dy2 = c_area * pw;
  if (iw > 0.0 && ih > 0.0) {
    if (p.x2 < g.x2) dx2 += c_inter * ih;
    if (p.x1 > g.x1) dx1 -= c_inter * ih;
    if (p.y2 < g.y2) dy2 += c_inter * iw;
    if (p.y1 > g.y1) dy1 -= c_inter * iw;
  }
  if (p.x2 > g.x2) dx2 += c_enc * eh;
  if (p.x1 < g.x1) dx1 -= c_enc * eh;
  if (p.y2 > g.y2) dy2 += c_enc * ew;
  if (p.y1 < g.y1) dy1 -= c_enc * ew;
  grad[0] = dx1 + dx2;
  grad[1] = dy1 + dy2;
  grad[2] = (dx2 - dx1) / 2;
  grad[3] = (dy2 - dy1) / 2;
  return loss;
}

Box row_box(std::span<const double> v, std::size_t r) { return {v[r * 4], v[r * 4 + 1], v[r * 4 + 2], v[r * 4 + 3]}; }

void require_boxes(const Tensor& pred, std::span<const Box> gt, const char* what) {
  if (pred.rank() != 2 || pred.cols() != 4 || pred.rows() != gt.size() || gt.empty()) {
    throw DimensionError(std::string(what) + ": expected [" + std::to_string(gt.size()) + "x4] boxes, got " +
                         shape_string(pred.shape()));
  }
}

}  // namespace

std::size_t square_grid_side(std::size_t tokens) {
  auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(tokens))));
  if (tokens == 0 || side * side != tokens) {
    throw GeometryError("search token count " + std::to_string(tokens) + " is not a square grid");
  }
  return side;
}

HeadMaps head_forward(const Tensor& sr_features, HeadParams& params, std::size_t batch, bool training) {
  if (batch == 0 || sr_features.rank() != 2 || sr_features.rows() % batch != 0) {
    throw DimensionError("head_forward: feature rows not divisible by batch");
  }
  const std::size_t side = square_grid_side(sr_features.rows() / batch);
  HeadMaps maps;
  maps.batch = batch;
  maps.grid_height = side;
  maps.grid_width = side;
  maps.cls = branch_forward(sr_features, params.cls, batch, side, training);
  maps.offset = branch_forward(sr_features, params.offset, batch, side, training);
  maps.size = branch_forward(sr_features, params.size, batch, side, training);
  return maps;
}

double adaptive_sigma(double width_cells, double height_cells) {
  return std::max(0.75, std::sqrt(std::max(0.0, width_cells * height_cells)) / 6.0);
}

std::vector<double> gaussian_target(std::size_t center_x, std::size_t center_y, double sigma,
                                    std::size_t grid_width, std::size_t grid_height) {
  if (center_x >= grid_width || center_y >= grid_height) {
    throw ContractError("gaussian_target: center (" + std::to_string(center_x) + "," + std::to_string(center_y) +
                        ") outside the " + std::to_string(grid_width) + "x" + std::to_string(grid_height) +
                        " grid");
  }
  if (!(sigma > 0.0)) throw ContractError("gaussian_target: sigma must be positive");
  std::vector<double> out(grid_width * grid_height);
  for (std::size_t y = 0; y < grid_height; ++y)
    for (std::size_t x = 0; x < grid_width; ++x) {
      const double dx = double(x) - double(center_x), dy = double(y) - double(center_y);
      out[y * grid_width + x] = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
    }
  return out;
}

std::vector<double> gaussian_target(std::size_t center_x, std::size_t center_y, double width_cells,
                                    double height_cells, std::size_t grid_width, std::size_t grid_height) {
  return gaussian_target(center_x, center_y, adaptive_sigma(width_cells, height_cells), grid_width, grid_height);
}

std::pair<std::size_t, std::size_t> center_cell(const Box& box, std::size_t grid_width, std::size_t grid_height) {
  auto cell = [](double c, std::size_t n) {
    const double f = std::floor(c * double(n));
    return static_cast<std::size_t>(std::clamp(f, 0.0, double(n - 1)));
  };
  return {cell(box.cx, grid_width), cell(box.cy, grid_height)};
}

Tensor focal_loss(const Tensor& scores, std::span<const double> target, std::size_t batch, double alpha,
                  double beta) {
  if (scores.numel() != target.size()) {
    throw DimensionError("focal_loss: " + std::to_string(scores.numel()) + " scores vs " +
                         std::to_string(target.size()) + " target cells");
  }
  if (batch == 0 || target.size() % batch != 0) throw DimensionError("focal_loss: cells not divisible by batch");
  auto c = scores.values();
  double total = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double p = std::clamp(c[i], kClampLo, kClampHi);
    note_branch((c[i] < kClampLo) + 2 * (c[i] > kClampHi));
    if (target[i] == 1.0) {
      total -= std::pow(1.0 - p, alpha) * std::log(p);
    } else {
      total -= std::pow(1.0 - target[i], beta) * std::pow(p, alpha) * std::log(1.0 - p);
    }
  }
  const double inv_batch = 1.0 / double(batch);
  std::vector<double> tgt(target.begin(), target.end());
  return make_node({1}, Storage{total * inv_batch}, {scores},
                   [scores, tgt = std::move(tgt), alpha, beta, inv_batch](
                       std::span<const double>, std::span<const double> g, std::span<double* const> gi) {
                     auto c = scores.values();
                     for (std::size_t i = 0; i < c.size(); ++i) {
                       if (c[i] < kClampLo || c[i] > kClampHi) continue;
                       const double p = c[i];
                       double d;
                       if (tgt[i] == 1.0) {
                         d = alpha * std::pow(1.0 - p, alpha - 1.0) * std::log(p) - std::pow(1.0 - p, alpha) / p;
                       } else {
                         d = -std::pow(1.0 - tgt[i], beta) *
                             (alpha * std::pow(p, alpha - 1.0) * std::log(1.0 - p) - std::pow(p, alpha) / (1.0 - p));
                       }
                       gi[0][i] += g[0] * d * inv_batch;
                     }
                   });
}

double iou(const Box& a, const Box& b) {
  const Corners p = corners(a), g = corners(b);
  const double iw = std::max(0.0, std::min(p.x2, g.x2) - std::max(p.x1, g.x1));
  const double ih = std::max(0.0, std::min(p.y2, g.y2) - std::max(p.y1, g.y1));
  const double inter = iw * ih;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double giou(const Box& a, const Box& b) { return 1.0 - giou_loss_and_grad(a, b, nullptr); }

double giou_loss(const Box& pred, const Box& gt) { return giou_loss_and_grad(pred, gt, nullptr); }

double l1_loss(const Box& pred, const Box& gt) {
  return (std::abs(pred.cx - gt.cx) + std::abs(pred.cy - gt.cy) + std::abs(pred.w - gt.w) + std::abs(pred.h - gt.h)) /
         4.0;
}

Tensor giou_loss(const Tensor& pred, std::span<const Box> gt) {
  require_boxes(pred, gt, "giou_loss");
  const std::size_t n = gt.size();
  std::vector<double> grads(n * 4);
  double total = 0.0;
  auto v = pred.values();
  for (std::size_t r = 0; r < n; ++r) total += giou_loss_and_grad(row_box(v, r), gt[r], grads.data() + r * 4);
  const double inv = 1.0 / double(n);
  return make_node({1}, Storage{total * inv}, {pred},
                   [grads = std::move(grads), inv](std::span<const double>, std::span<const double> g,
                                                   std::span<double* const> gi) {
                     for (std::size_t i = 0; i < grads.size(); ++i) gi[0][i] += g[0] * grads[i] * inv;
                   });
}

Tensor l1_loss(const Tensor& pred, std::span<const Box> gt) {
  require_boxes(pred, gt, "l1_loss");
  const std::size_t n = gt.size();
  std::vector<double> sign(n * 4);
  double total = 0.0;
  auto v = pred.values();
  for (std::size_t r = 0; r < n; ++r) {
    const double t[4] = {gt[r].cx, gt[r].cy, gt[r].w, gt[r].h};
    for (std::size_t j = 0; j < 4; ++j) {
      const double d = v[r * 4 + j] - t[j];
      total += std::abs(d);
      note_branch(d > 0.0);
      sign[r * 4 + j] = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
    }
  }
  const double inv = 1.0 / (4.0 * double(n));
  return make_node({1}, Storage{total * inv}, {pred},
                   [sign = std::move(sign), inv](std::span<const double>, std::span<const double> g,
                                                 std::span<double* const> gi) {
                     for (std::size_t i = 0; i < sign.size(); ++i) gi[0][i] += g[0] * sign[i] * inv;
                   });
}

Tensor boxes_at_cells(const HeadMaps& maps, std::span<const std::size_t> cell_per_sample) {
  if (cell_per_sample.size() != maps.batch) throw DimensionError("boxes_at_cells: one cell per sample");
  const std::size_t n = maps.cells(), gw = maps.grid_width, gh = maps.grid_height;
  std::vector<std::size_t> rows(maps.batch);
  Storage out(maps.batch * 4);
  auto o = maps.offset.values();
  auto s = maps.size.values();
  for (std::size_t b = 0; b < maps.batch; ++b) {
    if (cell_per_sample[b] >= n) throw ContractError("boxes_at_cells: cell outside the grid");
    const std::size_t row = b * n + cell_per_sample[b];
    rows[b] = row;
    const double x = double(cell_per_sample[b] % gw), y = double(cell_per_sample[b] / gw);
    out[b * 4 + 0] = (x + o[row * 2]) / double(gw);
    out[b * 4 + 1] = (y + o[row * 2 + 1]) / double(gh);
    out[b * 4 + 2] = s[row * 2];
    out[b * 4 + 3] = s[row * 2 + 1];
  }
  return make_node({maps.batch, 4}, std::move(out), {maps.offset, maps.size},
                   [rows = std::move(rows), gw, gh](std::span<const double>, std::span<const double> g,
                                                    std::span<double* const> gi) {
                     for (std::size_t b = 0; b < rows.size(); ++b) {
                       const std::size_t r = rows[b];
                       if (gi[0]) {
                         gi[0][r * 2] += g[b * 4] / double(gw);
                         gi[0][r * 2 + 1] += g[b * 4 + 1] / double(gh);
                       }
                       if (gi[1]) {
                         gi[1][r * 2] += g[b * 4 + 2];
                         gi[1][r * 2 + 1] += g[b * 4 + 3];
                       }
                     }
                   });
}

Tensor total_loss(const Tensor& l1, const Tensor& giou, const Tensor& cls, const LossWeights& weights) {
  return add(add(scale(l1, weights.l1), scale(giou, weights.giou)), scale(cls, weights.cls));
}

LossTerms total_loss(const HeadMaps& maps, std::span<const Box> gt, const LossWeights& weights) {
  if (gt.size() != maps.batch) throw DimensionError("total_loss: one ground-truth box per sample");
  const std::size_t n = maps.cells();
  std::vector<double> target;
  target.reserve(maps.batch * n);
  std::vector<std::size_t> cells(maps.batch);
  for (std::size_t b = 0; b < maps.batch; ++b) {
    auto [cx, cy] = center_cell(gt[b], maps.grid_width, maps.grid_height);
    auto t = gaussian_target(cx, cy, gt[b].w * double(maps.grid_width), gt[b].h * double(maps.grid_height),
                             maps.grid_width, maps.grid_height);
    target.insert(target.end(), t.begin(), t.end());
    cells[b] = cy * maps.grid_width + cx;
  }
  Tensor cls = focal_loss(maps.cls, target, maps.batch, weights.focal_alpha, weights.focal_beta);
  Tensor boxes = boxes_at_cells(maps, cells);
  Tensor l1 = l1_loss(boxes, gt);
  Tensor gi = giou_loss(boxes, gt);
  LossTerms terms;
  terms.total = total_loss(l1, gi, cls, weights);
  terms.l1 = l1.item();
  terms.giou = gi.item();
  terms.cls = cls.item();
  return terms;
}

Decoded decode_box(const HeadMaps& maps, std::size_t sample, const Tensor* window) {
  const std::size_t n = maps.cells();
  if (sample >= maps.batch) throw ContractError("decode_box: sample index out of range");
  if (window && window->numel() != n) {
    throw DimensionError("decode_box: window has " + std::to_string(window->numel()) + " cells, grid has " +
                         std::to_string(n));
  }
  auto c = maps.cls.values();
  std::size_t best = 0;
  double best_value = -1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double value = window ? c[sample * n + i] * window->at(i) : c[sample * n + i];
    if (value > best_value) {
      best_value = value;
      best = i;
    }
  }
  const std::size_t row = sample * n + best;
  auto o = maps.offset.values();
  auto s = maps.size.values();
  Decoded d;
  d.cell = best;
  d.score = c[row];
  d.box = {(double(best % maps.grid_width) + o[row * 2]) / double(maps.grid_width),
           (double(best / maps.grid_width) + o[row * 2 + 1]) / double(maps.grid_height), s[row * 2], s[row * 2 + 1]};
  return d;
}

}  // namespace romtrack
