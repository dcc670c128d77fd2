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

namespace fusemod {

std::string_view to_string(ErrorCode code)
{
  switch (code) {
    case ErrorCode::MissingKey: return "MissingKey";
    case ErrorCode::MalformedNumber: return "MalformedNumber";
    case ErrorCode::WrongFieldCount: return "WrongFieldCount";
    case ErrorCode::XmlStructure: return "XmlStructure";
    case ErrorCode::TruncatedRecord: return "TruncatedRecord";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::TooSmall: return "TooSmall";
    case ErrorCode::BadPixelValue: return "BadPixelValue";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::NonOrthonormal: return "NonOrthonormal";
    case ErrorCode::PoleSingularity: return "PoleSingularity";
    case ErrorCode::BehindCamera: return "BehindCamera";
    case ErrorCode::NonMonotonicTime: return "NonMonotonicTime";
    case ErrorCode::FrameOutOfRange: return "FrameOutOfRange";
    case ErrorCode::IncompleteDrive: return "IncompleteDrive";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::InvalidPlan: return "InvalidPlan";
    case ErrorCode::UndefinedIoU: return "UndefinedIoU";
    case ErrorCode::EmptySplit: return "EmptySplit";
    case ErrorCode::ObjectOutOfBounds: return "ObjectOutOfBounds";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

ErrorCategory category_of(ErrorCode code)
{
  switch (code) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::InvalidPlan: return ErrorCategory::Config;
    case ErrorCode::ShapeMismatch:
    case ErrorCode::UndefinedIoU:
    case ErrorCode::NonOrthonormal:
    case ErrorCode::BehindCamera: return ErrorCategory::Runtime;
    default: return ErrorCategory::Data;
  }
}

namespace {
std::string compose_message(ErrorCode code, const std::string& detail)
{
  std::string msg(to_string(code));
  if (!detail.empty()) {
    msg += ": ";
    msg += detail;
  }
  return msg;
}
}  // namespace

Error::Error(ErrorCode code, std::string detail, std::optional<std::int64_t> value)
  : std::runtime_error(compose_message(code, detail)),
    code_(code),
    detail_(std::move(detail)),
    value_(value)
{
}

}  // namespace fusemod
