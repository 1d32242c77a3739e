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

#include "romtrack/optim.h"

#include <cmath>

#include "romtrack/errors.h"

namespace romtrack {

OptimState make_optim_state(std::span<const Tensor> params, AdamWOptions options) {
  OptimState state;
  state.options = options;
  for (const auto& p : params) {
    state.first_moment.emplace_back(p.numel(), 0.0);
    state.second_moment.emplace_back(p.numel(), 0.0);
  }
  return state;
}

void adamw_step(std::span<Tensor> params, std::span<const Tensor> grads, OptimState& state) {
  const auto& o = state.options;
  if (!(o.lr > 0.0)) throw ContractError("adamw_step: learning rate must be positive");
  if (grads.size() != params.size() || state.first_moment.size() != params.size()) {
    throw DimensionError("adamw_step: parameter/gradient/state counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].numel() != params[i].numel() || state.first_moment[i].size() != params[i].numel()) {
      throw DimensionError("adamw_step: shape mismatch for parameter " + std::to_string(i));
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(o.beta1, t);
  const double bc2 = 1.0 - std::pow(o.beta2, t);
  const double decay = 1.0 - o.lr * o.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].values();
    auto g = grads[i].values();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = o.beta1 * m[j] + (1.0 - o.beta1) * g[j];
      v[j] = o.beta2 * v[j] + (1.0 - o.beta2) * g[j] * g[j];
      p[j] *= decay;
      p[j] -= o.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + o.eps);
    }
  }
}

void adamw_step(std::span<Tensor> params, OptimState& state) {
  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (const auto& p : params) grads.push_back(p.grad_tensor());
  adamw_step(params, grads, state);
}

double global_grad_norm(std::span<const Tensor> params) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (norm > max_norm) {
    const double factor = max_norm / (norm + 1e-12);
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (double& g : p.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

double step_decay_lr(double initial, double factor, std::int64_t decay_at, std::int64_t step) {
  return step < decay_at ? initial : initial / factor;
}

}  // namespace romtrack
