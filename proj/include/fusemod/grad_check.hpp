/* Copyright 2026 The FuseMOD Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 */

#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "fusemod/autograd.hpp"

namespace fusemod::nn {

struct GradCheckOptions {
  double h = 1e-5;
  /// Coordinates sampled per input; all coordinates when the input is smaller.
  int max_coords = 64;
  std::uint64_t seed = 0;
  /// A coordinate whose one-sided differences disagree by more than
  /// kink_tolerance * max(1, |numeric|) straddles a non-differentiable point
  /// (a ReLU or max-pool switch). Its step is divided by 10 up to
  /// `kink_refinements` times.
  double kink_tolerance = 1e-3;
  int kink_refinements = 2;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  int coords_checked = 0;
  int kinks_refined = 0;
};

/**
 * Compares reverse-mode gradients with central differences.
 *
 * `loss` must build a fresh graph from the current values of `inputs` and
 * return a scalar. Per coordinate the relative error is
 * |analytic - numeric| / max(|analytic| + |numeric|, 1e-6).
 */
GradCheckResult grad_check(const std::function<Var()>& loss, std::span<Var> inputs,
                           const GradCheckOptions& options = {});

}  // namespace fusemod::nn
