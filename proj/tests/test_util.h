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

#ifndef ROMTRACK_TESTS_TEST_UTIL_H_
#define ROMTRACK_TESTS_TEST_UTIL_H_

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "romtrack/encoder.h"
#include "romtrack/tensor.h"

namespace romtrack::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v));
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
  return m;
}

inline bool bit_identical(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::equal(a.values().begin(), a.values().end(), b.values().begin());
}

// Per-element comparison of analytic and central-difference gradients.
struct GradCheckResult {
  std::size_t checked = 0;
  std::size_t below_1e4 = 0;
  double max_rel_error = 0.0;
  std::size_t refined = 0;     // stencils shrunk to clear a kink
  std::size_t straddling = 0;  // still across a kink at the smallest step

  double fraction_below_1e4() const { return checked ? double(below_1e4) / double(checked) : 1.0; }
};

// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps gradients
// that are zero up to round-off from dividing by ~0.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// `loss` must rebuild the scalar from the current parameter values each call.
// A central difference is only a reference where the loss is smooth over the
// stencil, so when a stencil point takes different relu/clamp branches than
// the unperturbed point the step shrinks tenfold, at most three times.
inline GradCheckResult check_gradients(const std::function<Tensor()>& loss, std::vector<Tensor> params,
                                       double h = 1e-5, std::size_t stride = 1) {
  for (auto& p : params) p.zero_grad();
  backward(loss());
  GradCheckResult r;
  NoGradGuard no_grad;
  auto eval = [&](std::uint64_t& signature) {
    thread_branch_signature() = 0;
    const double v = loss().item();
    signature = thread_branch_signature();
    return v;
  };
  std::uint64_t base = 0;
  eval(base);
  for (auto& p : params) {
    std::vector<double> analytic(p.numel(), 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());
    auto v = p.values();
    for (std::size_t i = 0; i < v.size(); i += stride) {
      const double saved = v[i];
      double step = h, numeric = 0.0;
      for (int attempt = 0;; ++attempt) {
        std::uint64_t s_up = 0, s_down = 0;
        v[i] = saved + step;
        const double up = eval(s_up);
        v[i] = saved - step;
        const double down = eval(s_down);
        v[i] = saved;
        numeric = (up - down) / (2.0 * step);
        const bool smooth = s_up == base && s_down == base;
        if (smooth) break;
        if (attempt == 3) {
          r.straddling += 1;
          break;
        }
        if (attempt == 0) r.refined += 1;
        step /= 10.0;
      }
      const double e = relative_error(analytic[i], numeric);
      r.checked += 1;
      if (e < 1e-4) r.below_1e4 += 1;
      r.max_rel_error = std::max(r.max_rel_error, e);
    }
  }
  return r;
}

// Encoder layer with uniform random weights in [-scale, scale] and LN gains
// near one. Every tensor is a gradient leaf when `trainable`.
inline EncoderLayerParams random_layer(std::size_t dim, std::mt19937_64& rng, double scale = 0.3,
                                       bool trainable = false) {
  auto w = [&](Shape s) { return random_tensor(std::move(s), rng, -scale, scale); };
  auto g = [&] { return random_tensor({dim}, rng, 0.8, 1.2); };
  EncoderLayerParams p{g(),          w({dim}),         w({dim, dim}), w({dim}), w({dim, dim}), w({dim}),
                       w({dim, dim}), w({dim}),        w({dim, dim}), w({dim}), g(),           w({dim}),
                       w({dim, 4 * dim}), w({4 * dim}), w({4 * dim, dim}), w({dim})};
  if (trainable) {
    for (Tensor* t : {&p.ln1_gain, &p.ln1_bias, &p.wq, &p.bq, &p.wk, &p.bk, &p.wv, &p.bv, &p.wo, &p.bo,
                      &p.ln2_gain, &p.ln2_bias, &p.w1, &p.b1, &p.w2, &p.b2}) {
      t->set_requires_grad();
    }
  }
  return p;
}

inline std::vector<Tensor> layer_tensors(const EncoderLayerParams& p) {
  return {p.ln1_gain, p.ln1_bias, p.wq, p.bq, p.wk, p.bk, p.wv, p.bv,
          p.wo,       p.bo,       p.ln2_gain, p.ln2_bias, p.w1, p.b1, p.w2, p.b2};
}

}  // namespace romtrack::testing

#endif  // ROMTRACK_TESTS_TEST_UTIL_H_
