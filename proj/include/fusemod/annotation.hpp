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
 * @file  annotation.hpp
 * @brief Motion-mask ground truth from KITTI raw drives.
 *
 * Each tracked object is given a world-frame velocity (ego motion removed
 * through the OXTS poses), labeled Moving when its speed exceeds a threshold,
 * projected to a 2D box, and finally rasterized. Instance masks, when
 * available, replace the box rectangles they overlap.
 */

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fusemod/geometry.hpp"
#include "fusemod/kitti_ingest.hpp"
#include "fusemod/raster.hpp"

namespace fusemod::annotation {

using geometry::Vec3;

enum class MotionLabel { Static = 0, Moving = 1 };

struct ObjectMotionLabel {
  int tracklet_id = 0;
  int frame_index = 0;
  double speed_abs = 0;  // m/s, world frame
  MotionLabel label = MotionLabel::Static;
  geometry::BBox2d bbox2d;
};

struct Instance {
  int id = 0;
  std::string category;
  Raster<std::uint8_t> mask;  // 0/1
};

struct InstanceMaskSet {
  int height = 0;
  int width = 0;
  std::vector<Instance> instances;
};

enum class EgoVelocityMode { PoseDiff, OxtsChannels };

inline constexpr double kDefaultThreshold = 1.0;
inline constexpr double kInstanceOverlap = 0.5;

std::vector<Vec3> ego_velocity(std::span<const kitti::OxtsRecord> oxts, std::span<const double> times,
                               EgoVelocityMode mode = EgoVelocityMode::PoseDiff);

/// Ego poses relative to the Mercator frame anchored at the first record.
std::vector<geometry::RigidTransform> ego_poses(std::span<const kitti::OxtsRecord> oxts);

/// World-frame velocity per tracklet pose. `ego_poses` and `times` are indexed
/// by absolute frame number.
std::vector<Vec3> object_world_velocity(const kitti::Tracklet& t,
                                        std::span<const geometry::RigidTransform> ego_poses,
                                        std::span<const double> times);

MotionLabel classify_motion(double speed_abs, double threshold = kDefaultThreshold);

/// Pixels whose cell overlaps the box: columns floor(u_min)..ceil(u_max)-1,
/// clipped to the image.
void rasterize_bbox(MaskImage& mask, const geometry::BBox2d& box);

MaskImage refine_mask(std::span<const ObjectMotionLabel> labels, const InstanceMaskSet& instances,
                      int height, int width);

/// Decodes a 16-bit instance id PNG plus its sidecar (`frame_id instance_id
/// category` per line), keeping the sidecar entries of `frame_id`.
InstanceMaskSet load_instances(kitti::ByteView png_bytes, std::string_view sidecar, int frame_id);

// Drive-level processing

struct DriveData {
  std::string name;
  geometry::CameraModel camera;
  std::vector<kitti::OxtsRecord> oxts;
  std::vector<double> timestamps;
  std::vector<kitti::Tracklet> tracklets;
  int frame_count = 0;
  int image_width = 0;
  int image_height = 0;
};

struct LabelOptions {
  double threshold = kDefaultThreshold;
  EgoVelocityMode mode = EgoVelocityMode::PoseDiff;
};

/// Labels for every frame of a drive; objects fully behind the camera or
/// outside the image are omitted.
std::vector<std::vector<ObjectMotionLabel>> label_drive(const DriveData& drive,
                                                        const LabelOptions& options);

/// Reads calibration, OXTS, timestamps and tracklets of a raw drive folder.
/// Calibration files are looked up in the drive folder, then its parent.
DriveData load_drive(const std::filesystem::path& root);

// Manifest

enum class Split { Train, Test };

struct FrameRecord {
  Split split = Split::Train;
  std::string rgb;
  std::string rgb_flow;
  std::string lidar_flow;
  std::string mask;
  std::string depth;       // "-" when absent
  std::string rgb_next;    // "-" when absent
  std::string depth_next;  // "-" when absent
};

struct DatasetManifest {
  std::vector<FrameRecord> records;

  /// One record per line: `split rgb flow lidarflow mask depth rgb_next depth_next`.
  std::string to_text() const;
  /// Accepts 5 to 8 fields per line; missing trailing fields become "-".
  static DatasetManifest parse(std::string_view text);

  std::size_t count(Split split) const;
};

/// Whole-drive split whose train share is the closest achievable to
/// `train_fraction`; deterministic in `seed`.
std::vector<Split> assign_splits(std::span<const int> frame_counts, std::uint64_t seed,
                                 double train_fraction = 0.8);

struct ExportOptions {
  std::filesystem::path output_dir;
  LabelOptions labels;
  std::uint64_t split_seed = 0;
  double train_fraction = 0.8;
  std::string rgbflow_dir = "flow_rgb";
  std::string lidarflow_dir = "flow_lidar";
  std::string flow_extension = ".png";
  std::string instance_dir = "instances";
  bool write_depth = true;
};

struct DriveStats {
  std::string name;
  int frames = 0;
  int moving = 0;  // object-frame labels
  int statics = 0;
  Split split = Split::Train;
};

struct ExportResult {
  DatasetManifest manifest;
  std::vector<DriveStats> drives;
};

/// Writes `masks/<drive>/NNNNNNNNNN.png`, optional `depth/<drive>/...` and
/// `manifest.txt` under `options.output_dir`. Manifest paths are relative to
/// the output directory.
ExportResult export_dataset(std::span<const std::filesystem::path> drives, const ExportOptions& options);

std::string frame_name(int frame);

}  // namespace fusemod::annotation
