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

#ifndef ROMTRACK_HEAD_H_
#define ROMTRACK_HEAD_H_

// Center-based localization head, its training losses and box decoding.

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "romtrack/tensor.h"

namespace romtrack {

// Box normalised to the search region: center and size in [0, 1].
struct Box {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  bool operator==(const Box&) const = default;
};

struct LossWeights {
  double l1 = 5.0;
  double giou = 2.0;
  double cls = 1.0;
  double focal_alpha = 2.0;
  double focal_beta = 4.0;
};

struct ConvBnLayer {
  Tensor weight;  // [9·c_in × c_out]
  Tensor bias;    // [c_out]
  Tensor bn_gain, bn_bias;
  Tensor running_mean, running_var;  // buffers, not trained
};

struct HeadBranch {
  std::vector<ConvBnLayer> layers;
  Tensor out_weight;  // 1×1 conv [c_last × outputs]
  Tensor out_bias;
};

struct HeadParams {
  HeadBranch cls;     // 1 output
  HeadBranch offset;  // 2 outputs
  HeadBranch size;    // 2 outputs
};

// Classification, offset and size maps over the search feature grid, all
// after a terminal sigmoid. Rows are grid cells (row-major) of each sample.
struct HeadMaps {
  std::size_t batch = 1;
  std::size_t grid_height = 0;
  std::size_t grid_width = 0;
  Tensor cls;     // [B·H·W × 1]
  Tensor offset;  // [B·H·W × 2]
  Tensor size;    // [B·H·W × 2]

  std::size_t cells() const { return grid_height * grid_width; }
};

// Side of the square grid for a token count; GeometryError when not square.
std::size_t square_grid_side(std::size_t tokens);

// Three branches of (3×3 conv, batch norm, ReLU) × L followed by a 1×1 conv
// and a sigmoid. `sr_features` holds the search tokens, batch-major.
HeadMaps head_forward(const Tensor& sr_features, HeadParams& params, std::size_t batch, bool training);

// Gaussian-width rule for a box measured in grid cells.
double adaptive_sigma(double width_cells, double height_cells);

// Ĉ_xy = exp(-((x - cx)² + (y - cy)²) / 2σ²) over a grid, row-major.
std::vector<double> gaussian_target(std::size_t center_x, std::size_t center_y, double sigma,
                                    std::size_t grid_width, std::size_t grid_height);
std::vector<double> gaussian_target(std::size_t center_x, std::size_t center_y, double width_cells,
                                    double height_cells, std::size_t grid_width, std::size_t grid_height);

// Grid cell containing a normalised box center.
std::pair<std::size_t, std::size_t> center_cell(const Box& box, std::size_t grid_width, std::size_t grid_height);

// Gaussian-weighted focal loss, summed over cells and averaged over the
// batch. Cells with Ĉ == 1 take the positive branch, all others the
// Ĉ-weighted negative branch. Predictions are clamped to [1e-6, 1 - 1e-6].
Tensor focal_loss(const Tensor& scores, std::span<const double> target, std::size_t batch,
                  double alpha = 2.0, double beta = 4.0);

double iou(const Box& a, const Box& b);
double giou(const Box& a, const Box& b);
// 1 - GIoU; ContractError for zero-area boxes.
double giou_loss(const Box& pred, const Box& gt);
// Mean absolute difference over (cx, cy, w, h).
double l1_loss(const Box& pred, const Box& gt);

// Batched differentiable versions over [B × 4] rows (cx, cy, w, h), averaged.
Tensor giou_loss(const Tensor& pred, std::span<const Box> gt);
Tensor l1_loss(const Tensor& pred, std::span<const Box> gt);

// Boxes read from the maps at given cells: ((x + O_x)/W, (y + O_y)/H, S_w, S_h).
Tensor boxes_at_cells(const HeadMaps& maps, std::span<const std::size_t> cell_per_sample);

struct LossTerms {
  Tensor total;
  double l1 = 0.0;
  double giou = 0.0;
  double cls = 0.0;
};

// Weighted sum l1·L1 + giou·LGIoU + cls·Lcls, given component tensors.
Tensor total_loss(const Tensor& l1, const Tensor& giou, const Tensor& cls, const LossWeights& weights);

// Full training loss for a batch: heatmaps from the gt boxes, regression at
// each gt center cell.
LossTerms total_loss(const HeadMaps& maps, std::span<const Box> gt, const LossWeights& weights);

struct Decoded {
  Box box;
  double score = 0.0;  // raw classification score at the chosen cell
  std::size_t cell = 0;
};

// Argmax of C (optionally multiplied by a window of the same grid) for one
// sample; ties go to the smallest row-major index.
Decoded decode_box(const HeadMaps& maps, std::size_t sample = 0, const Tensor* window = nullptr);

}  // namespace romtrack

#endif  // ROMTRACK_HEAD_H_
