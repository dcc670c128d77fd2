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
 * @file  kitti_ingest.hpp
 * @brief Readers and writers for the KITTI raw drive layout, optical flow
 *        files and the mask/depth/color PNGs exchanged by the pipeline.
 *
 * All functions are pure over their byte or text inputs. The file helpers at
 * the bottom are thin wrappers that add path context to I/O failures.
 */

#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fusemod/error.hpp"
#include "fusemod/raster.hpp"

namespace fusemod::kitti {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

/// Rectifying rotation of the reference camera and projection of camera 02.
struct CalibCamToCam {
  Eigen::Matrix3d r_rect_00 = Eigen::Matrix3d::Identity();
  Eigen::Matrix<double, 3, 4> p_rect_02 = Eigen::Matrix<double, 3, 4>::Identity();
};

struct CalibVeloToCam {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
};

/// One OXTS GPS/IMU sample. The first eleven devkit fields are named, the
/// remaining nineteen are kept verbatim.
struct OxtsRecord {
  double lat = 0, lon = 0, alt = 0;
  double roll = 0, pitch = 0, yaw = 0;
  double vn = 0, ve = 0;
  double vf = 0, vl = 0, vu = 0;
  std::array<double, 19> rest{};
};

struct TrackletPose {
  double tx = 0, ty = 0, tz = 0;  // velodyne frame, meters
  double rz = 0;                  // yaw, radians
};

struct Tracklet {
  std::string object_type;
  double h = 0, w = 0, l = 0;
  int first_frame = 0;
  std::vector<TrackletPose> poses;

  int last_frame() const { return first_frame + static_cast<int>(poses.size()) - 1; }
  bool covers(int frame) const { return frame >= first_frame && frame <= last_frame(); }
};

struct PointCloud {
  std::vector<std::array<float, 4>> points;  // x, y, z, reflectance
};

enum class FlowFormat { Flo, KittiPng16 };

// Text formats

std::pair<CalibCamToCam, CalibVeloToCam> parse_calib(std::string_view cam_to_cam_text,
                                                     std::string_view velo_to_cam_text);

OxtsRecord parse_oxts(std::string_view line);

/// Parses `tracklet_labels.xml`. Roll and pitch of each pose are discarded.
std::vector<Tracklet> parse_tracklets(std::string_view xml_text);

/// `oxts/timestamps.txt`: one `YYYY-MM-DD hh:mm:ss.nnnnnnnnn` per line.
/// Returns seconds relative to the first line.
std::vector<double> parse_timestamps(std::string_view text);

// Binary formats

PointCloud read_velodyne(ByteView bytes);
Bytes write_velodyne(const PointCloud& cloud);

FlowMap read_flow(ByteView bytes, FlowFormat format);
Bytes write_flow(const FlowMap& flow, FlowFormat format);

/// 8-bit single channel PNG, 0 <-> 0 and 1 <-> 255.
Bytes write_mask_png(const MaskImage& mask);
MaskImage read_mask_png(ByteView bytes);

/// 8-bit RGB PNG. Values are quantized to round(255 * x).
Bytes write_rgb_png(const RgbImage& image);
RgbImage read_rgb_png(ByteView bytes);

/// 16-bit single channel PNG storing round(256 * meters), 0 = no measurement.
Bytes write_depth_png(const DepthMap& depth);
DepthMap read_depth_png(ByteView bytes);

/// 16-bit single channel instance id image (0 = none, k = instance k).
Raster<std::uint16_t> read_instance_png(ByteView bytes);
Bytes write_instance_png(const Raster<std::uint16_t>& ids);

/// Width and height from a PNG header without decoding pixels.
std::pair<int, int> png_size(ByteView bytes);

// Cropping

inline constexpr int kStandardHeight = 256;
inline constexpr int kStandardWidth = 1224;

/// Keeps the bottom-most `height` rows and a horizontally centered window of
/// `width` columns (left offset floor((W - width) / 2)).
template <typename T>
Raster<T> crop_bottom_center(const Raster<T>& in, int height, int width)
{
  if (in.height < height || in.width < width) {
    throw Error(ErrorCode::TooSmall,
                std::to_string(in.height) + "x" + std::to_string(in.width) + " < " +
                    std::to_string(height) + "x" + std::to_string(width));
  }
  const int top = in.height - height;
  const int left = (in.width - width) / 2;
  Raster<T> out(height, width, in.channels);
  for (int y = 0; y < height; ++y) {
    const auto src = in.data.begin() + static_cast<std::ptrdiff_t>(in.index(top + y, left));
    std::copy(src, src + static_cast<std::ptrdiff_t>(width) * in.channels,
              out.data.begin() + static_cast<std::ptrdiff_t>(out.index(y, 0)));
  }
  return out;
}

inline FlowMap crop_bottom_center(const FlowMap& in, int height, int width)
{
  FlowMap out;
  out.u = crop_bottom_center(in.u, height, width);
  out.v = crop_bottom_center(in.v, height, width);
  out.valid = crop_bottom_center(in.valid, height, width);
  return out;
}

/// Crop to 256 x 1224.
template <typename Image>
Image crop_standard(const Image& in)
{
  return crop_bottom_center(in, kStandardHeight, kStandardWidth);
}

// Files

Bytes read_file(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, ByteView bytes);
void write_text_file(const std::filesystem::path& path, std::string_view text);

/// Picks the flow format from the extension: `.flo` or `.png`.
FlowMap read_flow_file(const std::filesystem::path& path);
void write_flow_file(const std::filesystem::path& path, const FlowMap& flow);

}  // namespace fusemod::kitti
