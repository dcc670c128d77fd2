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

#include <cstddef>
#include <cstdint>
#include <vector>

namespace fusemod {

/// Interleaved H x W x C pixel buffer.
template <typename T>
struct Raster {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<T> data;

  Raster() = default;
  Raster(int h, int w, int c = 1, T fill = T{})
    : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill)
  {
  }

  std::size_t index(int y, int x, int c = 0) const
  {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  T& at(int y, int x, int c = 0) { return data[index(y, x, c)]; }
  const T& at(int y, int x, int c = 0) const { return data[index(y, x, c)]; }

  template <typename U>
  bool same_size(const Raster<U>& o) const { return height == o.height && width == o.width; }
  bool empty() const { return data.empty(); }

  friend bool operator==(const Raster&, const Raster&) = default;
};

/// Binary label image: 0 = static/background, 1 = moving.
using MaskImage = Raster<std::uint8_t>;

/// Color image with channel values in [0, 1].
using RgbImage = Raster<float>;

/// Depth in meters, 0 where no measurement exists.
using DepthMap = Raster<float>;

/// Per-pixel displacement field. Used for both camera and LiDAR derived flow.
struct FlowMap {
  Raster<float> u;
  Raster<float> v;
  Raster<std::uint8_t> valid;

  FlowMap() = default;
  FlowMap(int h, int w) : u(h, w), v(h, w), valid(h, w, 1, 1) {}

  int height() const { return u.height; }
  int width() const { return u.width; }

  friend bool operator==(const FlowMap&, const FlowMap&) = default;
};

}  // namespace fusemod
