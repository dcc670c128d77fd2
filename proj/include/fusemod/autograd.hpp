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

/**
 * @file  autograd.hpp
 * @brief Reverse-mode differentiation over Tensor values.
 *
 * A Var is a shared handle to a graph node. Ops record their inputs and a
 * backward closure when any input requires a gradient and recording is
 * enabled; `backward()` on a scalar walks the graph in reverse topological
 * order. Ops never modify their inputs.
 */

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "fusemod/kernels.hpp"
#include "fusemod/tensor.hpp"

namespace fusemod::nn {

namespace detail {
struct Node;
}

class Var {
 public:
  Var() = default;

  /// Leaf without gradient.
  static Var constant(Tensor value);
  /// Leaf that accumulates a gradient.
  static Var parameter(Tensor value);

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const;
  /// Mutable access for optimizers and initializers; only valid on leaves.
  Tensor& mutable_value();
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

  /// Gradient slot; empty until a backward pass reaches this node.
  const Tensor& grad() const;
  bool has_grad() const;
  void zero_grad();

  /// Backpropagates from a single-element value, seeding d(self) = 1.
  void backward() const;

  /// Used by op implementations.
  static Var from_op(Tensor value, std::vector<Var> inputs,
                     std::function<void(const Tensor& grad_out, std::span<Var> inputs)> backward);
  void accumulate_grad(const Tensor& g) const;

 private:
  explicit Var(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

bool grad_enabled();

/// Disables graph recording in its scope (inference, finite differences).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

using kernels::ConvGeometry;

/// w: (C_out, C_in / groups, k, k). `bias` may be undefined.
Var conv2d(const Var& x, const Var& w, const Var& bias, ConvGeometry geometry);

/// w: (C_in, C_out, k, k). Output spatial size (H - 1) * stride - 2 pad + k.
Var conv_transpose2d(const Var& x, const Var& w, int stride, int pad);

enum class BatchNormMode { Train, Eval };

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormState(int channels = 0) : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

/// Per-channel normalization followed by gamma/beta (both shape (1, C, 1, 1)).
/// Train mode normalizes with batch statistics and updates `state`.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, BatchNormMode mode);

Var relu(const Var& x);
Var max_pool2d(const Var& x, int k, int stride, int pad);
/// Padding counts toward the divisor (always k * k).
Var avg_pool2d(const Var& x, int k, int stride, int pad);
Var concat_channels(std::span<const Var> xs);
Var add(const Var& a, const Var& b);

/// Output channel g + groups * i takes input channel i + (C / groups) * g.
Var channel_shuffle(const Var& x, int groups);

/// Keeps the top-left `h` x `w` window.
Var crop(const Var& x, int h, int w);

/// Softmax over the channel axis of N x 2 x H x W logits; mean over pixels of
/// weight[t] * -log p[t]. `labels` holds N * H * W entries in {0, 1}.
Var weighted_cross_entropy(const Var& logits, std::span<const std::uint8_t> labels,
                           std::array<double, 2> class_weights);

/// Scalar sum(x * r); used to reduce an op to a scalar in gradient checks.
Var dot(const Var& x, const Tensor& r);

/// Per-pixel two-class softmax probabilities (no graph).
Tensor softmax_channels(const Tensor& logits);

}  // namespace fusemod::nn
