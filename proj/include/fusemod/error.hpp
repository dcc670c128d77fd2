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
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace fusemod {

/// Every failure the library reports. The CLI maps the category of a code to
/// its exit status.
enum class ErrorCode {
  // parsers and file formats
  MissingKey,
  MalformedNumber,
  WrongFieldCount,
  XmlStructure,
  TruncatedRecord,
  BadMagic,
  DimensionMismatch,
  TooSmall,
  BadPixelValue,
  IoFailure,
  // geometry
  NonOrthonormal,
  PoleSingularity,
  BehindCamera,
  NonMonotonicTime,
  // annotation
  FrameOutOfRange,
  IncompleteDrive,
  // tensor core and models
  ShapeMismatch,
  InvalidPlan,
  // evaluation
  UndefinedIoU,
  EmptySplit,
  // synthetic data
  ObjectOutOfBounds,
  // configuration
  InvalidConfig,
};

enum class ErrorCategory { Config, Data, Runtime };

std::string_view to_string(ErrorCode code);
ErrorCategory category_of(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string detail, std::optional<std::int64_t> value = std::nullopt);

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }
  /// Numeric payload carried by some codes (field count, byte offset, pixel value).
  std::optional<std::int64_t> value() const noexcept { return value_; }

 private:
  ErrorCode code_;
  std::string detail_;
  std::optional<std::int64_t> value_;
};

}  // namespace fusemod
