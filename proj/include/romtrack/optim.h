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

#ifndef ROMTRACK_OPTIM_H_
#define ROMTRACK_OPTIM_H_

#include <cstdint>
#include <span>
#include <vector>

#include "romtrack/tensor.h"

namespace romtrack {

struct AdamWOptions {
  double lr = 4e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moments for one parameter list, in list order.
struct OptimState {
  AdamWOptions options;
  std::int64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

OptimState make_optim_state(std::span<const Tensor> params, AdamWOptions options);

// One AdamW update. Decoupled decay shrinks each parameter by (1 - lr·λ)
// before the bias-corrected Adam step. `grads` pairs with `params`.
void adamw_step(std::span<Tensor> params, std::span<const Tensor> grads, OptimState& state);

// Same, reading each parameter's accumulated gradient.
void adamw_step(std::span<Tensor> params, OptimState& state);

// Global L2 norm over all parameter gradients.
double global_grad_norm(std::span<const Tensor> params);

// Rescales gradients so the global norm is at most `max_norm`. Returns the
// norm measured before clipping.
double clip_grad_norm(std::span<Tensor> params, double max_norm);

// Step-decay schedule: `initial` until `decay_at`, then initial / factor.
double step_decay_lr(double initial, double factor, std::int64_t decay_at, std::int64_t step);

}  // namespace romtrack

#endif  // ROMTRACK_OPTIM_H_
