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
 * @file  synth.hpp
 * @brief Deterministic synthetic scenes, low-light degradations and KITTI-style
 *        drive folders for tests and desk-scale experiments.
 *
 * Scenes are textured rectangles sliding over a procedural background at
 * integer pixel velocities, so ground-truth flow, masks and the next frame
 * agree exactly. All generators are pure functions of their spec and seed.
 */

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fusemod/annotation.hpp"
#include "fusemod/geometry.hpp"
#include "fusemod/models.hpp"

namespace fusemod::synth {

using models::FrameSample;

struct ObjectSpec {
  int x = 0;  // top-left corner at frame 0
  int y = 0;
  int width = 8;
  int height = 8;
  int vx = 0;  // px/frame relative to the background
  int vy = 0;
  double contrast = 0.3;
  std::array<double, 3> color{0.5, 0.5, 0.5};

  bool moving() const { return vx != 0 || vy != 0; }
};

struct SceneSpec {
  std::uint64_t seed = 0;
  int height = 64;
  int width = 128;
  int frames = 1;
  std::vector<ObjectSpec> objects;  // painter's order: later objects on top
  double background_scale = 8.0;    // texture cell size, px
  double lidar_fraction = 0.15;
  std::array<int, 2> ego_flow{0, 0};  // image displacement of the background, px/frame

  /// Throws ObjectOutOfBounds when an object leaves the image at any frame
  /// 0..frames (the last is the `next` image of the final sample), or
  /// InvalidConfig on non-positive sizes or a sample fraction outside (0, 1].
  void validate() const;
};

/// Frame t carries rgb(t), rgb(t+1), the exact flow t -> t+1 (dense, all
/// valid), lidarFlow (the exact flow on a seeded pixel subset of density
/// `lidar_fraction`), sparse depth on the same subset for t and t+1, and the
/// mask of pixels covered by objects with nonzero velocity.
std::vector<FrameSample> gen_scene(const SceneSpec& spec);

struct DegradeSpec {
  double gain = 1.0;
  double gamma = 1.0;
  double noise_sigma = 0.0;
  double flow_noise_sigma = 0.0;
  double flow_dropout = 0.0;

  /// Throws InvalidConfig outside gain in (0, 1], gamma >= 1, sigmas >= 0,
  /// dropout in [0, 1).
  void validate() const;
};

/// clamp(gain * in^gamma + N(0, noise_sigma), 0, 1) per channel value.
RgbImage degrade_low_light(const RgbImage& image, const DegradeSpec& spec, std::uint64_t seed);

/// Adds N(0, flow_noise_sigma) to u and v, then zeroes both on a seeded
/// fraction `flow_dropout` of pixels. Validity flags are kept.
FlowMap degrade_flow(const FlowMap& flow, const DegradeSpec& spec, std::uint64_t seed);

// Random datasets

struct DatasetOptions {
  int height = 64;
  int width = 128;
  int moving_objects = 2;
  int static_objects = 2;
  int min_size = 8;
  int max_size = 16;
  int min_speed = 1;  // per-axis magnitude bounds for moving objects
  int max_speed = 3;
  std::array<int, 2> ego_flow{0, 0};
  double lidar_fraction = 0.15;
  double background_scale = 8.0;
  double contrast = 0.3;
  /// Applied to rgb, rgb_next and rgbFlow; lidarFlow and depth stay clean.
  std::optional<DegradeSpec> degrade;
};

/// One scene with randomly placed moving and static objects whose
/// appearance is drawn from the same distribution.
SceneSpec random_scene(const DatasetOptions& options, std::uint64_t seed, int frames = 1);

/// `count` independent single-frame scenes.
std::vector<FrameSample> make_dataset(const DatasetOptions& options, int count, std::uint64_t seed);

/// Writes rgb, rgb_next, flow_rgb, flow_lidar (KITTI 16-bit PNG), depth,
/// depth_next and masks under `root` plus `manifest.txt`. `splits` holds one
/// entry per sample; empty means all Train.
annotation::DatasetManifest write_dataset(std::span<const FrameSample> samples, const std::filesystem::path& root,
                                          std::span<const annotation::Split> splits = {});

// Raw drive folders

struct DriveObject {
  std::string type = "Car";
  double h = 1.5;
  double w = 1.8;
  double l = 4.2;
  geometry::Vec3 position{15.0, 0.0, -1.73};  // box bottom center, ego frame at frame 0
  geometry::Vec3 velocity{0.0, 0.0, 0.0};     // world frame, m/s
};

struct DriveSpec {
  int frames = 10;
  double dt = 0.1;
  double ego_speed = 10.0;  // m/s due east, level
  double lat = 49.011;
  double lon = 8.4235;
  double alt = 112.0;
  int image_width = 1242;
  int image_height = 375;
  std::vector<DriveObject> objects;
  bool velodyne = true;
  bool flows = true;  // zero flow files in the export's default folders
};

/// Writes a KITTI raw drive: calibration files, image_02/data, oxts (data and
/// timestamps), velodyne_points/data and tracklet_labels.xml.
void write_kitti_drive(const std::filesystem::path& drive_dir, const DriveSpec& spec);

}  // namespace fusemod::synth
