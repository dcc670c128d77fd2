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

#include "fusemod/annotation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <random>
#include <sstream>

namespace fusemod::annotation {

namespace fs = std::filesystem;

std::vector<geometry::RigidTransform> ego_poses(std::span<const kitti::OxtsRecord> oxts)
{
  std::vector<geometry::RigidTransform> poses;
  poses.reserve(oxts.size());
  for (const auto& rec : oxts) poses.push_back(geometry::oxts_to_pose(rec, oxts.front()));
  return poses;
}

std::vector<Vec3> ego_velocity(std::span<const kitti::OxtsRecord> oxts, std::span<const double> times,
                               EgoVelocityMode mode)
{
  if (oxts.size() != times.size()) {
    throw Error(ErrorCode::DimensionMismatch, "oxts and timestamps differ in length");
  }
  if (mode == EgoVelocityMode::OxtsChannels) {
    std::vector<Vec3> v;
    v.reserve(oxts.size());
    for (const auto& rec : oxts) v.emplace_back(rec.ve, rec.vn, 0.0);
    return v;
  }
  const auto poses = ego_poses(oxts);
  std::vector<Vec3> positions;
  positions.reserve(poses.size());
  for (const auto& p : poses) positions.push_back(p.translation);
  return geometry::finite_velocity(positions, times);
}

namespace {

void check_coverage(const kitti::Tracklet& t, std::size_t frames)
{
  if (t.first_frame < 0 || t.last_frame() >= static_cast<int>(frames)) {
    throw Error(ErrorCode::FrameOutOfRange,
                "tracklet frames " + std::to_string(t.first_frame) + ".." +
                    std::to_string(t.last_frame()) + " vs " + std::to_string(frames) + " ego poses");
  }
}

}  // namespace

std::vector<Vec3> object_world_velocity(const kitti::Tracklet& t,
                                        std::span<const geometry::RigidTransform> ego_poses,
                                        std::span<const double> times)
{
  check_coverage(t, std::min(ego_poses.size(), times.size()));
  if (t.poses.size() < 2) return std::vector<Vec3>(t.poses.size(), Vec3::Zero());
  std::vector<Vec3> positions;
  std::vector<double> stamps;
  for (std::size_t i = 0; i < t.poses.size(); ++i) {
    const auto frame = static_cast<std::size_t>(t.first_frame) + i;
    const auto& p = t.poses[i];
    positions.push_back(geometry::apply(ego_poses[frame], Vec3(p.tx, p.ty, p.tz)));
    stamps.push_back(times[frame]);
  }
  return geometry::finite_velocity(positions, stamps);
}

MotionLabel classify_motion(double speed_abs, double threshold)
{
  return speed_abs > threshold ? MotionLabel::Moving : MotionLabel::Static;
}

void rasterize_bbox(MaskImage& mask, const geometry::BBox2d& box)
{
  if (box.empty()) return;
  const int x0 = std::max(0, static_cast<int>(std::floor(box.u_min)));
  const int x1 = std::min(mask.width, static_cast<int>(std::ceil(box.u_max)));
  const int y0 = std::max(0, static_cast<int>(std::floor(box.v_min)));
  const int y1 = std::min(mask.height, static_cast<int>(std::ceil(box.v_max)));
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) mask.at(y, x) = 1;
}

MaskImage refine_mask(std::span<const ObjectMotionLabel> labels, const InstanceMaskSet& instances,
                      int height, int width)
{
  if (!instances.instances.empty() && (instances.height != height || instances.width != width)) {
    throw Error(ErrorCode::DimensionMismatch, "instance masks vs image size");
  }
  for (const auto& inst : instances.instances) {
    if (inst.mask.height != height || inst.mask.width != width) {
      throw Error(ErrorCode::DimensionMismatch, "instance " + std::to_string(inst.id));
    }
  }

  std::vector<MaskImage> boxes;
  for (const auto& l : labels) {
    if (l.label != MotionLabel::Moving) continue;
    MaskImage r(height, width);
    rasterize_bbox(r, l.bbox2d);
    boxes.push_back(std::move(r));
  }

  MaskImage out(height, width);
  std::vector<bool> box_claimed(boxes.size(), false);
  for (const auto& inst : instances.instances) {
    std::size_t area = 0;
    for (auto v : inst.mask.data) area += v ? 1 : 0;
    if (area == 0) continue;
    bool moving = false;
    for (std::size_t b = 0; b < boxes.size(); ++b) {
      std::size_t inter = 0;
      for (std::size_t i = 0; i < inst.mask.data.size(); ++i) {
        inter += (inst.mask.data[i] && boxes[b].data[i]) ? 1 : 0;
      }
      if (static_cast<double>(inter) / static_cast<double>(area) >= kInstanceOverlap) {
        moving = true;
        box_claimed[b] = true;
      }
    }
    if (!moving) continue;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] |= inst.mask.data[i] ? 1 : 0;
  }
  // Weak-label fallback: a Moving box no instance was assigned to is emitted as is.
  for (std::size_t b = 0; b < boxes.size(); ++b) {
    if (box_claimed[b]) continue;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] |= boxes[b].data[i];
  }
  return out;
}

InstanceMaskSet load_instances(kitti::ByteView png_bytes, std::string_view sidecar, int frame_id)
{
  const auto ids = kitti::read_instance_png(png_bytes);
  InstanceMaskSet set;
  set.height = ids.height;
  set.width = ids.width;
  std::istringstream in{std::string(sidecar)};
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    int frame = 0, id = 0;
    std::string category;
    if (!(fields >> frame)) continue;
    if (!(fields >> id >> category)) throw Error(ErrorCode::MalformedNumber, line);
    if (frame != frame_id) continue;
    Instance inst;
    inst.id = id;
    inst.category = category;
    inst.mask = Raster<std::uint8_t>(ids.height, ids.width);
    for (std::size_t i = 0; i < ids.data.size(); ++i) inst.mask.data[i] = ids.data[i] == id ? 1 : 0;
    set.instances.push_back(std::move(inst));
  }
  return set;
}

std::vector<std::vector<ObjectMotionLabel>> label_drive(const DriveData& drive, const LabelOptions& options)
{
  const auto poses = ego_poses(drive.oxts);
  std::vector<Vec3> ego_v;
  if (options.mode == EgoVelocityMode::OxtsChannels) {
    ego_v = ego_velocity(drive.oxts, drive.timestamps, options.mode);
  }
  std::vector<std::vector<ObjectMotionLabel>> frames(static_cast<std::size_t>(drive.frame_count));
  for (std::size_t id = 0; id < drive.tracklets.size(); ++id) {
    const auto& t = drive.tracklets[id];
    check_coverage(t, std::min<std::size_t>(poses.size(), static_cast<std::size_t>(drive.frame_count)));
    std::vector<Vec3> velocity;
    if (options.mode == EgoVelocityMode::PoseDiff) {
      velocity = object_world_velocity(t, poses, drive.timestamps);
    } else {
      // Ego velocity from the OXTS channels plus the object's motion relative
      // to the ego, expressed in world axes.
      velocity.assign(t.poses.size(), Vec3::Zero());
      if (t.poses.size() >= 2) {
        std::vector<Vec3> rel;
        std::vector<double> stamps;
        for (std::size_t i = 0; i < t.poses.size(); ++i) {
          const auto frame = static_cast<std::size_t>(t.first_frame) + i;
          const auto& p = t.poses[i];
          rel.push_back(poses[frame].rotation * Vec3(p.tx, p.ty, p.tz));
          stamps.push_back(drive.timestamps[frame]);
        }
        const auto rel_v = geometry::finite_velocity(rel, stamps);
        for (std::size_t i = 0; i < rel_v.size(); ++i) {
          velocity[i] = ego_v[static_cast<std::size_t>(t.first_frame) + i] + rel_v[i];
        }
      }
    }
    for (std::size_t i = 0; i < t.poses.size(); ++i) {
      const int frame = t.first_frame + static_cast<int>(i);
      ObjectMotionLabel label;
      label.tracklet_id = static_cast<int>(id);
      label.frame_index = frame;
      label.speed_abs = velocity[i].norm();
      label.label = classify_motion(label.speed_abs, options.threshold);
      label.bbox2d = geometry::corners_to_bbox2d(drive.camera, geometry::box_corners(t, i),
                                                 drive.image_width, drive.image_height);
      if (label.bbox2d.empty()) continue;
      frames[static_cast<std::size_t>(frame)].push_back(label);
    }
  }
  return frames;
}

std::string frame_name(int frame)
{
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%010d", frame);
  return buf;
}

namespace {

fs::path require(const fs::path& p)
{
  if (!fs::exists(p)) throw Error(ErrorCode::IncompleteDrive, "missing " + p.string());
  return p;
}

fs::path find_calib(const fs::path& root, const std::string& name)
{
  if (fs::exists(root / name)) return root / name;
  const auto parent = fs::absolute(root).parent_path();
  if (fs::exists(parent / name)) return parent / name;
  throw Error(ErrorCode::IncompleteDrive, "missing " + (root / name).string());
}

int count_files(const fs::path& dir, const std::string& extension)
{
  int n = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == extension) ++n;
  }
  return n;
}

template <typename Fn>
auto with_file_context(const fs::path& p, Fn&& fn)
{
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.code(), p.string() + ": " + e.detail(), e.value());
  }
}

}  // namespace

DriveData load_drive(const fs::path& root)
{
  DriveData drive;
  drive.name = fs::absolute(root).lexically_normal().filename().string();
  if (drive.name.empty()) drive.name = fs::absolute(root).lexically_normal().parent_path().filename().string();

  const auto cam_path = find_calib(root, "calib_cam_to_cam.txt");
  const auto velo_path = find_calib(root, "calib_velo_to_cam.txt");
  const auto cam_text = kitti::read_text_file(cam_path);
  const auto velo_text = kitti::read_text_file(velo_path);
  const auto [c2c, v2c] = with_file_context(cam_path.parent_path(), [&] { return kitti::parse_calib(cam_text, velo_text); });
  drive.camera = geometry::CameraModel::from_calib(c2c, v2c);

  const auto image_dir = require(root / "image_02" / "data");
  drive.frame_count = count_files(image_dir, ".png");
  if (drive.frame_count == 0) throw Error(ErrorCode::IncompleteDrive, "no images in " + image_dir.string());
  const auto first_image = image_dir / (frame_name(0) + ".png");
  const auto header = kitti::read_file(require(first_image));
  std::tie(drive.image_width, drive.image_height) = kitti::png_size(header);

  const auto oxts_dir = require(root / "oxts" / "data");
  for (int f = 0; f < drive.frame_count; ++f) {
    const auto p = require(oxts_dir / (frame_name(f) + ".txt"));
    const auto text = kitti::read_text_file(p);
    drive.oxts.push_back(with_file_context(p, [&] { return kitti::parse_oxts(text); }));
  }
  const auto ts_path = require(root / "oxts" / "timestamps.txt");
  const auto ts_text = kitti::read_text_file(ts_path);
  drive.timestamps = with_file_context(ts_path, [&] { return kitti::parse_timestamps(ts_text); });
  if (static_cast<int>(drive.timestamps.size()) != drive.frame_count) {
    throw Error(ErrorCode::IncompleteDrive,
                ts_path.string() + " lists " + std::to_string(drive.timestamps.size()) +
                    " stamps for " + std::to_string(drive.frame_count) + " frames");
  }
  const auto tracklet_path = require(root / "tracklet_labels.xml");
  const auto xml = kitti::read_text_file(tracklet_path);
  drive.tracklets = with_file_context(tracklet_path, [&] { return kitti::parse_tracklets(xml); });
  return drive;
}

std::string DatasetManifest::to_text() const
{
  std::string out;
  for (const auto& r : records) {
    out += r.split == Split::Train ? "train" : "test";
    for (const auto* field : {&r.rgb, &r.rgb_flow, &r.lidar_flow, &r.mask, &r.depth, &r.rgb_next, &r.depth_next}) {
      out += ' ';
      out += field->empty() ? std::string("-") : *field;
    }
    out += '\n';
  }
  return out;
}

DatasetManifest DatasetManifest::parse(std::string_view text)
{
  DatasetManifest m;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::vector<std::string> f;
    for (std::string tok; fields >> tok;) f.push_back(tok);
    if (f.empty() || f[0].starts_with('#')) continue;
    if (f.size() < 5 || f.size() > 8) {
      throw Error(ErrorCode::WrongFieldCount, "manifest line " + std::to_string(line_no),
                  static_cast<std::int64_t>(f.size()));
    }
    FrameRecord r;
    if (f[0] == "train") r.split = Split::Train;
    else if (f[0] == "test") r.split = Split::Test;
    else throw Error(ErrorCode::MalformedNumber, "manifest line " + std::to_string(line_no) + ": split " + f[0]);
    f.resize(8, "-");
    r.rgb = f[1];
    r.rgb_flow = f[2];
    r.lidar_flow = f[3];
    r.mask = f[4];
    r.depth = f[5];
    r.rgb_next = f[6];
    r.depth_next = f[7];
    m.records.push_back(std::move(r));
  }
  return m;
}

std::size_t DatasetManifest::count(Split split) const
{
  return static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [&](const auto& r) { return r.split == split; }));
}

std::vector<Split> assign_splits(std::span<const int> frame_counts, std::uint64_t seed, double train_fraction)
{
  const std::size_t n = frame_counts.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  // Fisher-Yates on raw engine output so the permutation does not depend on
  // the standard library's distribution implementations.
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

  int total = 0;
  for (auto c : frame_counts) total += c;
  // reachable[i][s]: some subset of the first i drives (in shuffled order) sums to s
  std::vector<std::vector<char>> reachable(n + 1, std::vector<char>(static_cast<std::size_t>(total) + 1, 0));
  reachable[0][0] = 1;
  for (std::size_t i = 0; i < n; ++i) {
    const int c = frame_counts[order[i]];
    for (int s = 0; s <= total; ++s) {
      if (!reachable[i][s]) continue;
      reachable[i + 1][s] = 1;
      reachable[i + 1][s + c] = 1;
    }
  }
  const double target = train_fraction * total;
  int best = 0;
  for (int s = 0; s <= total; ++s) {
    if (reachable[n][s] && std::abs(s - target) <= std::abs(best - target)) best = s;
  }
  std::vector<Split> splits(n, Split::Test);
  int s = best;
  for (std::size_t i = n; i > 0; --i) {
    if (reachable[i - 1][s]) continue;
    splits[order[i - 1]] = Split::Train;
    s -= frame_counts[order[i - 1]];
  }
  return splits;
}

namespace {

std::string relative_to(const fs::path& p, const fs::path& base)
{
  return fs::absolute(p).lexically_normal().lexically_relative(fs::absolute(base).lexically_normal()).generic_string();
}

/// Nearest LiDAR return per pixel.
DepthMap project_depth(const kitti::PointCloud& cloud, const geometry::CameraModel& cam, int width, int height)
{
  DepthMap depth(height, width);
  const auto proj = cam.projection_matrix();
  for (const auto& pt : cloud.points) {
    const Eigen::Vector3d y = proj * Eigen::Vector4d(pt[0], pt[1], pt[2], 1.0);
    if (y.z() <= 1e-3) continue;
    const int u = static_cast<int>(std::floor(y.x() / y.z()));
    const int v = static_cast<int>(std::floor(y.y() / y.z()));
    if (u < 0 || v < 0 || u >= width || v >= height) continue;
    float& d = depth.at(v, u);
    if (d == 0.0f || y.z() < d) d = static_cast<float>(y.z());
  }
  return depth;
}

}  // namespace

ExportResult export_dataset(std::span<const fs::path> drives, const ExportOptions& options)
{
  std::vector<DriveData> data;
  std::vector<int> counts;
  for (const auto& root : drives) {
    data.push_back(load_drive(root));
    counts.push_back(data.back().frame_count);
  }
  const auto splits = assign_splits(counts, options.split_seed, options.train_fraction);
  const fs::path out = options.output_dir;
  fs::create_directories(out);

  ExportResult result;
  for (std::size_t d = 0; d < data.size(); ++d) {
    const auto& drive = data[d];
    const fs::path root = drives[d];
    const auto labels = label_drive(drive, options.labels);
    DriveStats stats;
    stats.name = drive.name;
    stats.frames = drive.frame_count;
    stats.split = splits[d];

    const fs::path inst_dir = root / options.instance_dir;
    std::string sidecar;
    if (fs::exists(inst_dir / "instances.txt")) sidecar = kitti::read_text_file(inst_dir / "instances.txt");
    const bool has_velodyne = options.write_depth && fs::exists(root / "velodyne_points" / "data");

    std::vector<FrameRecord> records(static_cast<std::size_t>(drive.frame_count));
    for (int f = 0; f < drive.frame_count; ++f) {
      for (const auto& l : labels[static_cast<std::size_t>(f)]) {
        (l.label == MotionLabel::Moving ? stats.moving : stats.statics) += 1;
      }
    }

    // Frames are independent; each iteration writes only its own files.
    std::vector<std::string> errors(records.size());
#pragma omp parallel for schedule(dynamic)
    for (int f = 0; f < drive.frame_count; ++f) {
      try {
        const auto name = frame_name(f);
        InstanceMaskSet inst;
        const auto inst_png = inst_dir / (name + ".png");
        if (!sidecar.empty() && fs::exists(inst_png)) {
          inst = load_instances(kitti::read_file(inst_png), sidecar, f);
        }
        const auto& frame_labels = labels[static_cast<std::size_t>(f)];
        const auto mask = refine_mask(frame_labels, inst, drive.image_height, drive.image_width);
        const auto mask_path = out / "masks" / drive.name / (name + ".png");
        kitti::write_file(mask_path, kitti::write_mask_png(mask));

        FrameRecord& r = records[static_cast<std::size_t>(f)];
        r.split = splits[d];
        r.rgb = relative_to(root / "image_02" / "data" / (name + ".png"), out);
        r.rgb_flow = relative_to(root / options.rgbflow_dir / (name + options.flow_extension), out);
        r.lidar_flow = relative_to(root / options.lidarflow_dir / (name + options.flow_extension), out);
        r.mask = relative_to(mask_path, out);
        r.depth = "-";
        r.rgb_next = "-";
        r.depth_next = "-";
        if (f + 1 < drive.frame_count) {
          r.rgb_next = relative_to(root / "image_02" / "data" / (frame_name(f + 1) + ".png"), out);
        }
        if (has_velodyne) {
          const auto velo_path = root / "velodyne_points" / "data" / (name + ".bin");
          if (fs::exists(velo_path)) {
            const auto cloud = kitti::read_velodyne(kitti::read_file(velo_path));
            const auto depth = project_depth(cloud, drive.camera, drive.image_width, drive.image_height);
            const auto depth_path = out / "depth" / drive.name / (name + ".png");
            kitti::write_file(depth_path, kitti::write_depth_png(depth));
            r.depth = relative_to(depth_path, out);
          }
        }
      } catch (const std::exception& e) {
        errors[static_cast<std::size_t>(f)] = e.what();
      }
    }
    for (std::size_t f = 0; f < errors.size(); ++f) {
      if (!errors[f].empty()) {
        throw Error(ErrorCode::IncompleteDrive, drive.name + " frame " + std::to_string(f) + ": " + errors[f]);
      }
    }
    if (has_velodyne) {
      for (std::size_t f = 0; f + 1 < records.size(); ++f) records[f].depth_next = records[f + 1].depth;
    }
    for (auto& r : records) result.manifest.records.push_back(std::move(r));
    result.drives.push_back(stats);
  }
  kitti::write_text_file(out / "manifest.txt", result.manifest.to_text());
  return result;
}

}  // namespace fusemod::annotation
