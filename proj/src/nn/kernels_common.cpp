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

#include "fusemod/error.hpp"
#include "fusemod/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fusemod::nn::kernels {

int conv_out_size(int in, int k, int stride, int pad)
{
  const int span = in + 2 * pad - k;
  if (span < 0) return 0;
  return span / stride + 1;
}

Shape conv2d_output_shape(const Shape& x, const Shape& w, const ConvGeometry& g)
{
  if (g.groups < 1 || g.stride < 1 || g.pad < 0) throw Error(ErrorCode::ShapeMismatch, "conv geometry");
  if (x.c % g.groups != 0 || w.n % g.groups != 0) {
    throw Error(ErrorCode::ShapeMismatch,
                "channels " + std::to_string(x.c) + "->" + std::to_string(w.n) + " not divisible by groups " +
                    std::to_string(g.groups));
  }
  if (w.c != x.c / g.groups || w.h != w.w) {
    throw Error(ErrorCode::ShapeMismatch, "conv weight " + w.str() + " for input " + x.str());
  }
  const int oh = conv_out_size(x.h, w.h, g.stride, g.pad);
  const int ow = conv_out_size(x.w, w.w, g.stride, g.pad);
  if (oh <= 0 || ow <= 0) throw Error(ErrorCode::ShapeMismatch, "conv input " + x.str() + " too small");
  return {x.n, w.n, oh, ow};
}

int max_threads()
{
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n)
{
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

}  // namespace fusemod::nn::kernels
