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
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fusemod/tensor.hpp"

namespace fusemod::nn {

/**
 * Versioned binary container for model and optimizer state.
 *
 * Layout (all integers little-endian, floats IEEE-754 binary64 little-endian):
 *
 *     "FMCK"  u32 version
 *     u32 n_meta     { u32 len, key bytes, u32 len, value bytes } * n_meta
 *     u32 n_tensors  { u32 len, name bytes, i32 n, c, h, w, f64 * numel } * n_tensors
 *     u32 n_scalars  { u32 len, name bytes, f64 } * n_scalars
 *
 * Tensor names follow `layer_name/param_name`. Entries are written in
 * insertion order so identical state always yields identical bytes.
 */
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::vector<std::pair<std::string, double>> scalars;

  std::vector<std::uint8_t> serialize() const;
  static Checkpoint parse(std::span<const std::uint8_t> bytes);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  const Tensor* find_tensor(std::string_view name) const;
  const double* find_scalar(std::string_view name) const;
  const std::string* find_meta(std::string_view key) const;
};

}  // namespace fusemod::nn
