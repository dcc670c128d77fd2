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
#include <span>
#include <vector>

namespace fusemod::kitti::png {

/// Decoded PNG with samples widened to 16 bits. Palette images are expanded
/// and alpha channels are dropped.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;   // 1 or 3
  int bit_depth = 0;  // 8 or 16
  std::vector<std::uint16_t> samples;  // interleaved, row-major
};

Image decode(std::span<const std::uint8_t> bytes);

/// Encodes interleaved samples. `bit_depth` 16 writes big-endian samples as
/// the format requires.
std::vector<std::uint8_t> encode(const Image& image);

bool has_signature(std::span<const std::uint8_t> bytes);

}  // namespace fusemod::kitti::png
