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
 * @file  kernels.hpp
 * @brief Compute kernels behind the autograd ops.
 *
 * Every kernel exists twice: `ref::` is the plain serial loop nest kept as
 * the testing oracle, `par::` is the OpenMP version used at run time. Each
 * output element is produced by exactly one thread and its terms are summed
 * in the same order as in `ref::`, so the two agree bit for bit for any
 * thread count.
 */

#pragma once

#include <vector>

#include "fusemod/tensor.hpp"

namespace fusemod::nn::kernels {

struct ConvGeometry {
  int stride = 1;
  int pad = 0;
  int groups = 1;
};

/// floor((in + 2 pad - k) / stride) + 1
int conv_out_size(int in, int k, int stride, int pad);

/// Validates shapes and returns the output shape of conv2d.
Shape conv2d_output_shape(const Shape& x, const Shape& w, const ConvGeometry& g);

struct BatchNormForward {
  Tensor y;
  Tensor xhat;
  std::vector<double> mean;
  std::vector<double> var;      // biased
  std::vector<double> inv_std;
};

struct BatchNormGrads {
  Tensor dx;
  std::vector<double> dgamma;
  std::vector<double> dbeta;
};

#define FUSEMOD_KERNEL_SET                                                                                \
  Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor* bias, const ConvGeometry& g);    \
  Tensor conv2d_backward_input(const Tensor& dy, const Tensor& w, const ConvGeometry& g,                 \
                               const Shape& x_shape);                                                    \
  Tensor conv2d_backward_weight(const Tensor& dy, const Tensor& x, const ConvGeometry& g,                \
                                const Shape& w_shape);                                                   \
  Tensor max_pool_forward(const Tensor& x, int k, int stride, int pad, std::vector<long>& argmax);       \
  Tensor max_pool_backward(const Tensor& dy, const std::vector<long>& argmax, const Shape& x_shape);     \
  Tensor avg_pool_forward(const Tensor& x, int k, int stride, int pad);                                  \
  Tensor avg_pool_backward(const Tensor& dy, const Shape& x_shape, int k, int stride, int pad);          \
  BatchNormForward batch_norm_train(const Tensor& x, const std::vector<double>& gamma,                   \
                                    const std::vector<double>& beta, double eps);                        \
  Tensor batch_norm_eval(const Tensor& x, const std::vector<double>& gamma, const std::vector<double>& beta, \
                         const std::vector<double>& mean, const std::vector<double>& var, double eps);   \
  BatchNormGrads batch_norm_backward(const Tensor& dy, const Tensor& xhat, const std::vector<double>& gamma, \
                                     const std::vector<double>& inv_std);

namespace ref {
FUSEMOD_KERNEL_SET
}  // namespace ref

namespace par {
FUSEMOD_KERNEL_SET
}  // namespace par

#undef FUSEMOD_KERNEL_SET

// The run-time path.
using par::avg_pool_backward;
using par::avg_pool_forward;
using par::batch_norm_backward;
using par::batch_norm_eval;
using par::batch_norm_train;
using par::conv2d_backward_input;
using par::conv2d_backward_weight;
using par::conv2d_forward;
using par::max_pool_backward;
using par::max_pool_forward;

/// Threads used by `par::` kernels (1 when built without OpenMP).
int max_threads();
void set_threads(int n);

}  // namespace fusemod::nn::kernels
