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

#include "fusemod/optim.hpp"

#include <cmath>

namespace fusemod::nn {

void Adam::add_param(std::string name, Var param, bool decay)
{
  const Shape s = param.shape();
  slots_.push_back({std::move(name), std::move(param), decay, Tensor(s), Tensor(s)});
}

void Adam::step()
{
  ++step_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (auto& slot : slots_) {
    Tensor& w = slot.param.mutable_value();
    const bool has_grad = slot.param.has_grad();
    for (std::size_t i = 0; i < w.numel(); ++i) {
      double g = has_grad ? slot.param.grad()[i] : 0.0;
      if (slot.decay) g += config_.l2_decay * w[i];
      slot.m[i] = config_.beta1 * slot.m[i] + (1.0 - config_.beta1) * g;
      slot.v[i] = config_.beta2 * slot.v[i] + (1.0 - config_.beta2) * g * g;
      const double m_hat = slot.m[i] / c1;
      const double v_hat = slot.v[i] / c2;
      w[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
  }
}

void Adam::zero_grad()
{
  for (auto& slot : slots_) slot.param.zero_grad();
}

}  // namespace fusemod::nn
