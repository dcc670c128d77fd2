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

#include "fusemod/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace fusemod::geometry {

void check_rotation(const Eigen::Matrix3d& r, double tolerance)
{
  const double ortho = (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  const double det = std::abs(r.determinant() - 1.0);
  if (!(ortho <= tolerance && det <= tolerance)) {
    throw Error(ErrorCode::NonOrthonormal,
                "|R^T R - I| = " + std::to_string(ortho) + ", |det - 1| = " + std::to_string(det));
  }
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b)
{
  check_rotation(a.rotation);
  check_rotation(b.rotation);
  return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

RigidTransform invert(const RigidTransform& a)
{
  check_rotation(a.rotation);
  const Eigen::Matrix3d rt = a.rotation.transpose();
  return {rt, -(rt * a.translation)};
}

Vec3 apply(const RigidTransform& a, const Vec3& p)
{
  check_rotation(a.rotation);
  return a.rotation * p + a.translation;
}

Eigen::Matrix3d rot_x(double angle)
{
  const double c = std::cos(angle), s = std::sin(angle);
  Eigen::Matrix3d r;
  r << 1, 0, 0, 0, c, -s, 0, s, c;
  return r;
}

Eigen::Matrix3d rot_y(double angle)
{
  const double c = std::cos(angle), s = std::sin(angle);
  Eigen::Matrix3d r;
  r << c, 0, s, 0, 1, 0, -s, 0, c;
  return r;
}

Eigen::Matrix3d rot_z(double angle)
{
  const double c = std::cos(angle), s = std::sin(angle);
  Eigen::Matrix3d r;
  r << c, -s, 0, s, c, 0, 0, 0, 1;
  return r;
}

double mercator_scale(double origin_lat_deg)
{
  return std::cos(origin_lat_deg * std::numbers::pi / 180.0);
}

RigidTransform oxts_to_pose(const kitti::OxtsRecord& rec, const kitti::OxtsRecord& origin)
{
  if (std::abs(rec.lat) >= 90.0 || std::abs(origin.lat) >= 90.0) {
    throw Error(ErrorCode::PoleSingularity, "lat " + std::to_string(rec.lat));
  }
  const double s = mercator_scale(origin.lat);
  RigidTransform pose;
  pose.translation = Vec3(s * kEarthRadius * rec.lon * std::numbers::pi / 180.0,
                          s * kEarthRadius *
                              std::log(std::tan(std::numbers::pi / 4.0 + rec.lat * std::numbers::pi / 360.0)),
                          rec.alt);
  pose.rotation = rot_z(rec.yaw) * rot_y(rec.pitch) * rot_x(rec.roll);
  return pose;
}

CameraModel CameraModel::from_calib(const kitti::CalibCamToCam& cam, const kitti::CalibVeloToCam& velo)
{
  CameraModel m;
  m.p_rect = cam.p_rect_02;
  m.r_rect = cam.r_rect_00;
  m.velo_to_cam.rotation = velo.rotation;
  m.velo_to_cam.translation = velo.translation;
  return m;
}

Eigen::Matrix<double, 3, 4> CameraModel::projection_matrix() const
{
  Eigen::Matrix4d rect = Eigen::Matrix4d::Identity();
  rect.topLeftCorner<3, 3>() = r_rect;
  Eigen::Matrix4d extrinsic = Eigen::Matrix4d::Identity();
  extrinsic.topLeftCorner<3, 3>() = velo_to_cam.rotation;
  extrinsic.topRightCorner<3, 1>() = velo_to_cam.translation;
  return p_rect * rect * extrinsic;
}

PixelProjection project_unchecked(const CameraModel& cam, const Vec3& p_velo)
{
  const Eigen::Vector3d y = cam.projection_matrix() * p_velo.homogeneous();
  if (y.z() <= kMinDepth) return {0.0, 0.0, y.z()};
  return {y.x() / y.z(), y.y() / y.z(), y.z()};
}

PixelProjection project(const CameraModel& cam, const Vec3& p_velo)
{
  const auto p = project_unchecked(cam, p_velo);
  if (p.depth <= kMinDepth) throw Error(ErrorCode::BehindCamera, "depth " + std::to_string(p.depth));
  return p;
}

BoxCorners box_corners(const kitti::Tracklet& t, std::size_t pose_index)
{
  if (pose_index >= t.poses.size()) {
    throw Error(ErrorCode::FrameOutOfRange, "pose " + std::to_string(pose_index));
  }
  const auto& pose = t.poses[pose_index];
  const Eigen::Matrix3d r = rot_z(pose.rz);
  const Vec3 center(pose.tx, pose.ty, pose.tz);
  const double hl = t.l / 2, hw = t.w / 2;
  const std::array<std::array<double, 2>, 4> face{{{hl, hw}, {hl, -hw}, {-hl, -hw}, {-hl, hw}}};
  BoxCorners box;
  for (int level = 0; level < 2; ++level) {
    for (int k = 0; k < 4; ++k) {
      box.corners[level * 4 + k] = r * Vec3(face[k][0], face[k][1], level * t.h) + center;
    }
  }
  return box;
}

BBox2d corners_to_bbox2d(const CameraModel& cam, const BoxCorners& box, int image_width,
                         int image_height)
{
  BBox2d out;
  double u0 = std::numeric_limits<double>::infinity(), v0 = u0;
  double u1 = -u0, v1 = -u0;
  int in_front = 0;
  for (const auto& c : box.corners) {
    const auto p = project_unchecked(cam, c);
    if (p.depth <= kMinDepth) continue;
    ++in_front;
    u0 = std::min(u0, p.u);
    v0 = std::min(v0, p.v);
    u1 = std::max(u1, p.u);
    v1 = std::max(v1, p.v);
  }
  if (in_front == 0) {
    out.all_behind = true;
    return out;
  }
  const double w = image_width, h = image_height;
  out.u_min = std::clamp(u0, 0.0, w);
  out.u_max = std::clamp(u1, 0.0, w);
  out.v_min = std::clamp(v0, 0.0, h);
  out.v_max = std::clamp(v1, 0.0, h);
  return out;
}

std::vector<Vec3> finite_velocity(std::span<const Vec3> positions, std::span<const double> times)
{
  if (positions.size() != times.size()) {
    throw Error(ErrorCode::DimensionMismatch, "positions and times differ in length");
  }
  if (positions.size() < 2) {
    throw Error(ErrorCode::NonMonotonicTime, "need at least two samples");
  }
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (!(times[i] > times[i - 1])) {
      throw Error(ErrorCode::NonMonotonicTime, "sample " + std::to_string(i));
    }
  }
  std::vector<Vec3> v(positions.size());
  for (std::size_t i = 0; i + 1 < positions.size(); ++i) {
    v[i] = (positions[i + 1] - positions[i]) / (times[i + 1] - times[i]);
  }
  v.back() = v[v.size() - 2];
  return v;
}

}  // namespace fusemod::geometry
