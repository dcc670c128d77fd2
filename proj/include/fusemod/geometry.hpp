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

#include <Eigen/Dense>

#include <array>
#include <span>
#include <vector>

#include "fusemod/kitti_ingest.hpp"

namespace fusemod::geometry {

using Vec3 = Eigen::Vector3d;

/// Rotation + translation. Construction does not validate; the operations
/// below reject rotations that are off SO(3) by more than 1e-4.
struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }
};

RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
RigidTransform invert(const RigidTransform& a);
Vec3 apply(const RigidTransform& a, const Vec3& p);

Eigen::Matrix3d rot_x(double angle);
Eigen::Matrix3d rot_y(double angle);
Eigen::Matrix3d rot_z(double angle);

/// Throws NonOrthonormal if |R^T R - I| or |det R - 1| exceeds `tolerance`.
void check_rotation(const Eigen::Matrix3d& r, double tolerance = 1e-4);

inline constexpr double kEarthRadius = 6378137.0;

/// Mercator scale for a drive anchored at `origin_lat_deg`.
double mercator_scale(double origin_lat_deg);

/// World pose of the OXTS unit, in a Mercator frame scaled by the latitude of
/// `origin` (x east, y north, z up).
RigidTransform oxts_to_pose(const kitti::OxtsRecord& rec, const kitti::OxtsRecord& origin);

struct CameraModel {
  Eigen::Matrix<double, 3, 4> p_rect = Eigen::Matrix<double, 3, 4>::Identity();
  Eigen::Matrix3d r_rect = Eigen::Matrix3d::Identity();
  RigidTransform velo_to_cam;

  static CameraModel from_calib(const kitti::CalibCamToCam& cam, const kitti::CalibVeloToCam& velo);
  /// Combined 3x4 matrix P_rect * pad(R_rect) * pad(velo_to_cam).
  Eigen::Matrix<double, 3, 4> projection_matrix() const;
};

struct PixelProjection {
  double u = 0;
  double v = 0;
  double depth = 0;
};

inline constexpr double kMinDepth = 1e-9;

/// Velodyne point to pixel. Throws BehindCamera when depth <= 1e-9.
PixelProjection project(const CameraModel& cam, const Vec3& p_velo);

/// Same chain without the throw; `depth <= kMinDepth` marks behind-camera.
PixelProjection project_unchecked(const CameraModel& cam, const Vec3& p_velo);

struct BoxCorners {
  std::array<Vec3, 8> corners;
};

/// Corner order: bottom face (z = tz) then top face (z = tz + h); within a
/// face (+l/2,+w/2), (+l/2,-w/2), (-l/2,-w/2), (-l/2,+w/2) before rotation.
BoxCorners box_corners(const kitti::Tracklet& t, std::size_t pose_index);

struct BBox2d {
  double u_min = 0, v_min = 0, u_max = 0, v_max = 0;
  bool all_behind = false;

  bool empty() const { return all_behind || u_max <= u_min || v_max <= v_min; }
};

/// Axis-aligned hull of the in-front corners, clamped to [0, width] x [0, height].
BBox2d corners_to_bbox2d(const CameraModel& cam, const BoxCorners& box, int image_width,
                         int image_height);

/// Forward differences; the last sample repeats the previous velocity.
std::vector<Vec3> finite_velocity(std::span<const Vec3> positions, std::span<const double> times);

}  // namespace fusemod::geometry
