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

#include "fusemod/tensor.hpp"

#include "fusemod/error.hpp"

namespace fusemod::nn {

std::string Shape::str() const
{
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), data_(shape.numel(), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data))
{
  if (data_.size() != shape_.numel()) {
    throw Error(ErrorCode::ShapeMismatch,
                "data length " + std::to_string(data_.size()) + " vs shape " + shape_.str());
  }
}

void Tensor::fill(double v)
{
  for (auto& x : data_) x = v;
}

void Tensor::accumulate(const Tensor& other)
{
  expect_shape(shape_, other.shape_, "accumulate");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

void expect_shape(const Shape& a, const Shape& b, const char* what)
{
  if (!(a == b)) throw Error(ErrorCode::ShapeMismatch, std::string(what) + ": " + a.str() + " vs " + b.str());
}

}  // namespace fusemod::nn
