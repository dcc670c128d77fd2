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

#include "fusemod/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace fusemod::nn {

GradCheckResult grad_check(const std::function<Var()>& loss, std::span<Var> inputs,
                           const GradCheckOptions& options)
{
  for (auto& v : inputs) v.zero_grad();
  loss().backward();
  std::vector<Tensor> analytic;
  for (auto& v : inputs) analytic.push_back(v.has_grad() ? v.grad() : Tensor(v.shape()));

  GradCheckResult result;
  std::mt19937_64 rng(options.seed);
  NoGradGuard no_grad;
  const double center = loss().value()[0];
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor& value = inputs[k].mutable_value();
    std::vector<std::size_t> coords(value.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > static_cast<std::size_t>(options.max_coords)) {
      for (std::size_t i = 0; i < static_cast<std::size_t>(options.max_coords); ++i) {
        std::swap(coords[i], coords[i + rng() % (coords.size() - i)]);
      }
      coords.resize(static_cast<std::size_t>(options.max_coords));
    }
    for (auto i : coords) {
      const double saved = value[i];
      double h = options.h;
      double numeric = 0.0;
      for (int attempt = 0;; ++attempt) {
        value[i] = saved + h;
        const double up = loss().value()[0];
        value[i] = saved - h;
        const double down = loss().value()[0];
        value[i] = saved;
        numeric = (up - down) / (2.0 * h);
        const double jump = std::abs((up - center) - (center - down)) / h;
        if (jump <= options.kink_tolerance * std::max(1.0, std::abs(numeric))) break;
        if (attempt == options.kink_refinements) break;
        if (attempt == 0) ++result.kinks_refined;
        h /= 10.0;
      }
      const double a = analytic[k][i];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max(std::abs(a) + std::abs(numeric), 1e-6);
      result.max_rel_error = std::max(result.max_rel_error, rel);
      result.max_abs_error = std::max(result.max_abs_error, abs_err);
      ++result.coords_checked;
    }
  }
  return result;
}

}  // namespace fusemod::nn
