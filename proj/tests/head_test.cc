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

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "romtrack/errors.h"
#include "romtrack/model.h"
#include "test_util.h"

namespace romtrack {
namespace {

using testing::check_gradients;
using testing::random_tensor;

Model small_model(std::uint64_t seed, std::size_t search_size = 64) {
  ModelConfig cfg;
  cfg.search_size = search_size;
  cfg.pos_grid_search = search_size / cfg.patch_size;
  cfg.dim = 16;
  cfg.depth = 1;
  Model m(cfg);
  Rng rng(seed);
  m.initialize(rng);
  return m;
}

HeadMaps constant_maps(std::size_t grid, double c, double ox, double oy, double sw, double sh) {
  HeadMaps m;
  m.grid_height = m.grid_width = grid;
  const std::size_t n = grid * grid;
  m.cls = Tensor({n, 1}, c);
  m.offset = Tensor({n, 2});
  m.size = Tensor({n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    m.offset.at(i, 0) = ox;
    m.offset.at(i, 1) = oy;
    m.size.at(i, 0) = sw;
    m.size.at(i, 1) = sh;
  }
  return m;
}

// ---- head_forward ----------------------------------------------------------------

TEST(HeadForwardTest, ZeroFeaturesGiveHalfEverywhere) {
  Model m(ModelConfig{});
  Tensor zeros({64, m.config().dim}, 0.0);
  for (bool training : {false, true}) {
    HeadMaps maps = head_forward(zeros, m.head, 1, training);
    for (const Tensor* t : {&maps.cls, &maps.offset, &maps.size})
      for (double v : t->values()) EXPECT_EQ(v, 0.5);
  }
}

TEST(HeadForwardTest, FullScaleGridIsSixteenBySixteen) {
  ModelConfig cfg = full256_config();
  EXPECT_EQ(square_grid_side(cfg.search_tokens()), 16u);
  EXPECT_EQ(cfg.search_size / cfg.patch_size, 16u);
}

TEST(HeadForwardTest, NonSquareTokenCountIsGeometryError) {
  Model m = small_model(1);
  EXPECT_THROW(head_forward(Tensor({12, 16}, 0.1), m.head, 1, false), GeometryError);
  EXPECT_THROW(square_grid_side(0), GeometryError);
}

TEST(HeadForwardTest, ShiftingFeaturesShiftsScores) {
  // Inference-mode normalisation is a fixed affine map, so the head is a
  // translation-equivariant conv stack away from the zero padding.
  Model m = small_model(2, 128);
  std::mt19937_64 rng(3);
  for (auto& b : m.buffers())
    for (double& v : b.tensor.values()) v = b.name.ends_with("var") ? 0.5 + double(rng() % 100) / 100.0 : 0.1;
  const std::size_t g = 16, d = 16;
  Tensor f = random_tensor({g * g, d}, rng);
  Tensor shifted({g * g, d}, 0.0);
  for (std::size_t y = 0; y < g; ++y)
    for (std::size_t x = 1; x < g; ++x)
      for (std::size_t c = 0; c < d; ++c) shifted.at(y * g + x, c) = f.at(y * g + x - 1, c);
  HeadMaps a = head_forward(f, m.head, 1, false);
  HeadMaps b = head_forward(shifted, m.head, 1, false);
  const std::size_t reach = m.config().head_layers;
  for (std::size_t y = reach; y + reach < g; ++y)
    for (std::size_t x = reach + 1; x + reach < g; ++x)
      EXPECT_NEAR(b.cls.at(y * g + x), a.cls.at(y * g + x - 1), 1e-8);
}

TEST(HeadForwardTest, TrainingModeUpdatesRunningStatistics) {
  Model m = small_model(4);
  std::mt19937_64 rng(5);
  Tensor f = random_tensor({2 * 64, 16}, rng);
  auto before = m.head.cls.layers[0].running_mean.detach();
  head_forward(f, m.head, 2, true);
  EXPECT_FALSE(testing::bit_identical(before, m.head.cls.layers[0].running_mean));
  auto frozen = m.head.cls.layers[0].running_mean.detach();
  head_forward(f, m.head, 2, false);
  EXPECT_TRUE(testing::bit_identical(frozen, m.head.cls.layers[0].running_mean));
}

// ---- gaussian_target ------------------------------------------------------------

TEST(GaussianTargetTest, PeakIsExactlyOneAndUnique) {
  auto t = gaussian_target(5, 7, 1.3, 16, 16);
  EXPECT_EQ(t[7 * 16 + 5], 1.0);
  for (std::size_t i = 0; i < t.size(); ++i)
    if (i != 7 * 16 + 5) EXPECT_LT(t[i], 1.0);
}

TEST(GaussianTargetTest, RootTwoSigmaGivesInverseE) {
  // (1, 1) away from the center is √2 cells; with σ = 1 the value is e^-1.
  auto t = gaussian_target(4, 4, 1.0, 9, 9);
  EXPECT_NEAR(t[5 * 9 + 5], std::exp(-1.0), 1e-15);
}

TEST(GaussianTargetTest, MatchesPerCellOracle) {
  const double sigma = adaptive_sigma(6.0, 4.0);
  EXPECT_DOUBLE_EQ(sigma, std::max(0.75, std::sqrt(24.0) / 6.0));
  auto t = gaussian_target(2, 9, 6.0, 4.0, 12, 10);
  for (std::size_t y = 0; y < 10; ++y)
    for (std::size_t x = 0; x < 12; ++x) {
      const double r2 = (double(x) - 2.0) * (double(x) - 2.0) + (double(y) - 9.0) * (double(y) - 9.0);
      EXPECT_NEAR(t[y * 12 + x], std::exp(-r2 / (2 * sigma * sigma)), 1e-12);
    }
}

TEST(GaussianTargetTest, SigmaHasAFloor) { EXPECT_EQ(adaptive_sigma(0.5, 0.5), 0.75); }

TEST(GaussianTargetTest, CenterOutsideGridIsContractError) {
  EXPECT_THROW(gaussian_target(16, 0, 1.0, 16, 16), ContractError);
}

// ---- focal loss ----------------------------------------------------------------------

TEST(FocalLossTest, SinglePositiveHalf) {
  EXPECT_NEAR(focal_loss(Tensor({1, 1}, 0.5), std::vector<double>{1.0}, 1).item(), 0.25 * std::log(2.0), 1e-12);
  EXPECT_NEAR(focal_loss(Tensor({1, 1}, 0.5), std::vector<double>{1.0}, 1).item(), 0.1733, 1e-4);
}

TEST(FocalLossTest, SingleNegativeHalf) {
  const double l = focal_loss(Tensor({1, 1}, 0.5), std::vector<double>{0.5}, 1).item();
  EXPECT_NEAR(l, 0.0625 * 0.25 * std::log(2.0), 1e-12);
  EXPECT_NEAR(l, 0.01083, 1e-5);
}

TEST(FocalLossTest, PerfectPredictionIsZero) {
  auto target = gaussian_target(3, 3, 1.0, 8, 8);
  Tensor c({64, 1}, 0.0);
  c.at(3 * 8 + 3) = 1.0;
  const double l = focal_loss(c, target, 1).item();
  EXPECT_GE(l, 0.0);
  EXPECT_LT(l, 1e-15);
}

TEST(FocalLossTest, NonNegativeOnRandomMaps) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 50; ++i) {
    auto target = gaussian_target(rng() % 8, rng() % 8, 1.2, 8, 8);
    EXPECT_GT(focal_loss(random_tensor({64, 1}, rng, 0.0, 1.0), target, 1).item(), 0.0);
  }
}

TEST(FocalLossTest, GridMismatchIsDimensionError) {
  EXPECT_THROW(focal_loss(Tensor({4, 1}, 0.5), std::vector<double>(5, 0.0), 1), DimensionError);
}

TEST(FocalLossTest, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  Tensor c = random_tensor({2 * 36, 1}, rng, 0.05, 0.95).set_requires_grad();
  auto t1 = gaussian_target(1, 4, 1.0, 6, 6), t2 = gaussian_target(5, 0, 0.8, 6, 6);
  t1.insert(t1.end(), t2.begin(), t2.end());
  auto r = check_gradients([&] { return focal_loss(c, t1, 2); }, {c});
  EXPECT_LT(r.max_rel_error, 1e-6);
}

// ---- box losses -----------------------------------------------------------------------

TEST(BoxLossTest, IdenticalBoxesHaveZeroLoss) {
  Box b{0.4, 0.6, 0.2, 0.3};
  EXPECT_EQ(giou_loss(b, b), 0.0);
  EXPECT_EQ(l1_loss(b, b), 0.0);
}

TEST(BoxLossTest, SideBySideBoxesHaveUnitLoss) {
  EXPECT_NEAR(giou_loss({0.25, 0.5, 0.5, 1.0}, {0.75, 0.5, 0.5, 1.0}), 1.0, 1e-12);
}

TEST(BoxLossTest, SeparationDrivesLossTowardTwoMonotonically) {
  double previous = 0.0;
  for (double gap = 0.0; gap <= 100.0; gap += 2.5) {
    const double l = giou_loss({0.0, 0.0, 0.01, 0.01}, {0.02 + gap, 0.0, 0.01, 0.01});
    EXPECT_GT(l, previous);
    EXPECT_LT(l, 2.0);
    previous = l;
  }
  EXPECT_GT(previous, 1.999);
}

TEST(BoxLossTest, GiouNeverExceedsIou) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (int i = 0; i < 1000; ++i) {
    Box a{u(rng), u(rng), u(rng) * 0.5, u(rng) * 0.5}, b{u(rng), u(rng), u(rng) * 0.5, u(rng) * 0.5};
    const double l = giou_loss(a, b);
    EXPECT_GE(l, 0.0);
    EXPECT_LT(l, 2.0);
    EXPECT_LE(giou(a, b), iou(a, b) + 1e-15);
  }
}

TEST(BoxLossTest, ZeroAreaIsContractError) {
  EXPECT_THROW(giou_loss({0.5, 0.5, 0.0, 0.2}, {0.5, 0.5, 0.2, 0.2}), ContractError);
}

TEST(BoxLossTest, L1IsMeanAbsoluteDifference) {
  EXPECT_NEAR(l1_loss({0.1, 0.2, 0.3, 0.4}, {0.2, 0.0, 0.3, 0.8}), (0.1 + 0.2 + 0.0 + 0.4) / 4, 1e-15);
}

TEST(BoxLossTest, BatchedLossesMatchScalarsAndGradients) {
  std::mt19937_64 rng(9);
  std::vector<Box> gt{{0.4, 0.5, 0.3, 0.2}, {0.6, 0.3, 0.1, 0.4}, {0.5, 0.5, 0.2, 0.2}};
  Tensor pred = Tensor::matrix({{0.45, 0.52, 0.25, 0.3}, {0.2, 0.8, 0.2, 0.1}, {0.515, 0.487, 0.22, 0.18}});
  pred.set_requires_grad();
  double g = 0.0, l = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    Box p{pred.at(i, 0), pred.at(i, 1), pred.at(i, 2), pred.at(i, 3)};
    g += giou_loss(p, gt[i]) / 3;
    l += l1_loss(p, gt[i]) / 3;
  }
  EXPECT_NEAR(giou_loss(pred, gt).item(), g, 1e-15);
  EXPECT_NEAR(l1_loss(pred, gt).item(), l, 1e-15);
  auto r = check_gradients([&] { return add(giou_loss(pred, gt), l1_loss(pred, gt)); }, {pred});
  EXPECT_LT(r.max_rel_error, 1e-6);
}

// ---- total loss ------------------------------------------------------------------------

TEST(TotalLossTest, WeightsAreFiveTwoOne) {
  LossWeights w;
  EXPECT_EQ(w.l1, 5.0);
  EXPECT_EQ(w.giou, 2.0);
  EXPECT_EQ(w.cls, 1.0);
  EXPECT_EQ(w.focal_alpha, 2.0);
  EXPECT_EQ(w.focal_beta, 4.0);
  EXPECT_NEAR(total_loss(Tensor::scalar(0.1), Tensor::scalar(0.2), Tensor::scalar(0.3), w).item(), 1.2, 1e-15);
  EXPECT_EQ(total_loss(Tensor::scalar(0), Tensor::scalar(0), Tensor::scalar(0), w).item(), 0.0);
}

TEST(TotalLossTest, LinearInEachComponent) {
  LossWeights w;
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int i = 0; i < 100; ++i) {
    const double a = u(rng), b = u(rng), c = u(rng);
    const double t = total_loss(Tensor::scalar(a), Tensor::scalar(b), Tensor::scalar(c), w).item();
    EXPECT_NEAR(t, 5 * a + 2 * b + c, 1e-12);
  }
}

TEST(TotalLossTest, GradientReachesEveryBranch) {
  Model m = small_model(11);
  std::mt19937_64 rng(12);
  Tensor f = random_tensor({2 * 64, 16}, rng);
  std::vector<Box> gt{{0.4, 0.55, 0.2, 0.25}, {0.6, 0.45, 0.3, 0.2}};
  HeadMaps maps = head_forward(f, m.head, 2, true);
  LossTerms terms = total_loss(maps, gt, LossWeights{});
  EXPECT_NEAR(terms.total.item(), 5 * terms.l1 + 2 * terms.giou + terms.cls, 1e-12);
  backward(terms.total);
  for (const HeadBranch* br : {&m.head.cls, &m.head.offset, &m.head.size}) {
    ASSERT_TRUE(br->out_weight.has_grad());
    double norm = 0.0;
    for (double g : br->out_weight.grad()) norm += g * g;
    EXPECT_GT(norm, 0.0);
  }
}

TEST(TotalLossTest, FullHeadGradientsMatchFiniteDifferences) {
  Model m = small_model(13);
  std::mt19937_64 rng(14);
  Tensor f = random_tensor({2 * 64, 16}, rng).set_requires_grad();
  std::vector<Box> gt{{0.4, 0.55, 0.2, 0.25}, {0.6, 0.45, 0.3, 0.2}};
  auto loss = [&] {
    // Fresh running statistics each call keep the perturbed passes independent.
    for (auto& b : m.buffers())
      for (double& v : b.tensor.values()) v = b.name.ends_with("var") ? 1.0 : 0.0;
    return total_loss(head_forward(f, m.head, 2, true), gt, LossWeights{}).total;
  };
  std::vector<Tensor> params{f, m.head.cls.layers[0].weight, m.head.offset.out_weight, m.head.size.layers[3].bn_gain,
                             m.head.cls.out_bias};
  auto r = check_gradients(loss, params, 1e-6, 7);
  EXPECT_GE(r.fraction_below_1e4(), 0.99);
  EXPECT_LT(r.max_rel_error, 1e-3);
}

// ---- decode ----------------------------------------------------------------------------

TEST(DecodeTest, HandArithmetic) {
  HeadMaps m = constant_maps(16, 0.1, 0.5, 0.5, 0.25, 0.25);
  m.cls.at(4 * 16 + 3) = 0.9;
  Decoded d = decode_box(m);
  EXPECT_EQ(d.cell, 4u * 16 + 3);
  EXPECT_EQ(d.box, (Box{0.21875, 0.28125, 0.25, 0.25}));
  EXPECT_EQ(d.score, 0.9);
}

TEST(DecodeTest, TiesGoToSmallestIndex) {
  HeadMaps m = constant_maps(4, 0.3, 0.0, 0.0, 0.1, 0.1);
  m.cls.at(9) = 0.8;
  m.cls.at(6) = 0.8;
  EXPECT_EQ(decode_box(m).cell, 6u);
  EXPECT_EQ(decode_box(constant_maps(4, 0.3, 0, 0, 0.1, 0.1)).cell, 0u);
}

TEST(DecodeTest, WindowPicksCenterOfUniformMap) {
  HeadMaps m = constant_maps(5, 0.4, 0.5, 0.5, 0.2, 0.2);
  Tensor window({25}, 0.0);
  for (std::size_t y = 0; y < 5; ++y)
    for (std::size_t x = 0; x < 5; ++x) {
      const double wy = 0.5 * (1 - std::cos(2 * M_PI * double(y) / 4)), wx = 0.5 * (1 - std::cos(2 * M_PI * double(x) / 4));
      window.at(y * 5 + x) = wy * wx;
    }
  Decoded d = decode_box(m, 0, &window);
  EXPECT_EQ(d.cell, 12u);
  EXPECT_EQ(d.score, 0.4);
}

TEST(DecodeTest, ArgmaxInvariantToPositiveScale) {
  std::mt19937_64 rng(15);
  HeadMaps m = constant_maps(8, 0.0, 0.3, 0.7, 0.2, 0.1);
  m.cls = random_tensor({64, 1}, rng, 0.0, 1.0);
  Tensor window = random_tensor({64}, rng, 0.0, 1.0);
  HeadMaps scaled = m;
  scaled.cls = scale(m.cls, 0.37);
  EXPECT_EQ(decode_box(m).cell, decode_box(scaled).cell);
  EXPECT_EQ(decode_box(m, 0, &window).cell, decode_box(scaled, 0, &window).cell);
}

TEST(DecodeTest, RoundTripThroughGaussianTarget) {
  const std::size_t g = 16;
  for (std::size_t cy = 0; cy < g; ++cy)
    for (std::size_t cx = 0; cx < g; ++cx) {
      Box gt{(double(cx) + 0.3) / g, (double(cy) + 0.8) / g, 0.2, 0.15};
      auto [x, y] = center_cell(gt, g, g);
      ASSERT_EQ(x, cx);
      ASSERT_EQ(y, cy);
      HeadMaps m = constant_maps(g, 0.0, gt.cx * g - double(cx), gt.cy * g - double(cy), gt.w, gt.h);
      auto t = gaussian_target(x, y, gt.w * g, gt.h * g, g, g);
      for (std::size_t i = 0; i < t.size(); ++i) m.cls.at(i) = t[i];
      Box d = decode_box(m).box;
      EXPECT_LE(std::abs(d.cx - gt.cx), 0.5 / g);
      EXPECT_LE(std::abs(d.cy - gt.cy), 0.5 / g);
      EXPECT_EQ(d.w, gt.w);
      EXPECT_EQ(d.h, gt.h);
    }
}

TEST(DecodeTest, WindowSizeMismatchIsDimensionError) {
  HeadMaps m = constant_maps(4, 0.3, 0, 0, 0.1, 0.1);
  Tensor w({15}, 1.0);
  EXPECT_THROW(decode_box(m, 0, &w), DimensionError);
}

}  // namespace
}  // namespace romtrack
