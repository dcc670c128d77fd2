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

#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "fusemod/kitti_ingest.hpp"
#include "fusemod/synth.hpp"

namespace fusemod::synth {

namespace fs = std::filesystem;

namespace {

constexpr double kFocal = 721.5377;
constexpr double kCx = 609.5593;
constexpr double kCy = 172.854;
constexpr double kVelodyneHeight = 1.73;

std::string fmt(const char* f, double v)
{
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string timestamp(int frame, double dt)
{
  // 2011-09-26 13:02:25.000000000 plus frame * dt
  const auto ns = static_cast<std::int64_t>(std::llround(frame * dt * 1e9));
  std::int64_t total_s = 25 + ns / 1'000'000'000;
  const std::int64_t frac = ns % 1'000'000'000;
  const std::int64_t minute = 2 + total_s / 60;
  total_s %= 60;
  char buf[64];
  std::snprintf(buf, sizeof buf, "2011-09-26 13:%02lld:%02lld.%09lld", static_cast<long long>(minute),
                static_cast<long long>(total_s), static_cast<long long>(frac));
  return buf;
}

std::string tracklets_xml(const DriveSpec& spec)
{
  std::ostringstream x;
  x << "<?xml version=\"1.0\" encoding=\"UTF-8\" standalone=\"yes\" ?>\n"
       "<!DOCTYPE boost_serialization>\n"
       "<boost_serialization signature=\"serialization::archive\" version=\"9\">\n"
       "<tracklets class_id=\"0\" tracking_level=\"0\" version=\"0\">\n"
    << "\t<count>" << spec.objects.size() << "</count>\n\t<item_version>1</item_version>\n";
  for (const auto& o : spec.objects) {
    x << "\t<item class_id=\"1\" tracking_level=\"0\" version=\"1\">\n"
      << "\t\t<objectType>" << o.type << "</objectType>\n"
      << "\t\t<h>" << fmt("%.6f", o.h) << "</h>\n\t\t<w>" << fmt("%.6f", o.w) << "</w>\n\t\t<l>" << fmt("%.6f", o.l)
      << "</l>\n\t\t<first_frame>0</first_frame>\n"
      << "\t\t<poses class_id=\"2\" tracking_level=\"0\" version=\"0\">\n"
      << "\t\t\t<count>" << spec.frames << "</count>\n\t\t\t<item_version>2</item_version>\n";
    const double heading = (o.velocity.x() == 0 && o.velocity.y() == 0) ? 0.0 : std::atan2(o.velocity.y(), o.velocity.x());
    for (int f = 0; f < spec.frames; ++f) {
      const double t = f * spec.dt;
      // Level ego driving along +x: relative position = world position - ego offset.
      const geometry::Vec3 rel = o.position + o.velocity * t - geometry::Vec3(spec.ego_speed * t, 0, 0);
      x << "\t\t\t<item class_id=\"3\" tracking_level=\"0\" version=\"2\">\n"
        << "\t\t\t\t<tx>" << fmt("%.9f", rel.x()) << "</tx>\n\t\t\t\t<ty>" << fmt("%.9f", rel.y())
        << "</ty>\n\t\t\t\t<tz>" << fmt("%.9f", rel.z()) << "</tz>\n"
        << "\t\t\t\t<rx>0.000000</rx>\n\t\t\t\t<ry>0.000000</ry>\n\t\t\t\t<rz>" << fmt("%.9f", heading) << "</rz>\n"
        << "\t\t\t\t<state>1</state>\n\t\t\t\t<occlusion>0</occlusion>\n\t\t\t\t<occlusion_kf>0</occlusion_kf>\n"
        << "\t\t\t\t<truncation>0</truncation>\n\t\t\t\t<amt_occlusion>-1</amt_occlusion>\n"
        << "\t\t\t\t<amt_occlusion_kf>-1</amt_occlusion_kf>\n\t\t\t\t<amt_border_l>-1</amt_border_l>\n"
        << "\t\t\t\t<amt_border_r>-1</amt_border_r>\n\t\t\t\t<amt_border_kf>-1</amt_border_kf>\n"
        << "\t\t\t</item>\n";
    }
    x << "\t\t</poses>\n\t\t<finished>1</finished>\n\t</item>\n";
  }
  x << "</tracklets>\n</boost_serialization>\n";
  return x.str();
}

kitti::PointCloud velodyne_scan(const DriveSpec& spec, int frame)
{
  kitti::PointCloud cloud;
  for (double gx = 3.0; gx <= 40.0; gx += 0.5)
    for (double gy = -12.0; gy <= 12.0; gy += 0.5)
      cloud.points.push_back({static_cast<float>(gx), static_cast<float>(gy), static_cast<float>(-kVelodyneHeight), 0.3f});
  const double t = frame * spec.dt;
  for (const auto& o : spec.objects) {
    const geometry::Vec3 c = o.position + o.velocity * t - geometry::Vec3(spec.ego_speed * t, 0, 0);
    // Rear face as seen from the ego, sampled on a 0.2 m grid.
    for (double dy = -o.w / 2; dy <= o.w / 2 + 1e-9; dy += 0.2)
      for (double dz = 0.0; dz <= o.h + 1e-9; dz += 0.2)
        cloud.points.push_back({static_cast<float>(c.x() - o.l / 2), static_cast<float>(c.y() + dy),
                                static_cast<float>(c.z() + dz), 0.8f});
  }
  return cloud;
}

}  // namespace

void write_kitti_drive(const fs::path& dir, const DriveSpec& spec)
{
  fs::create_directories(dir);
  kitti::write_text_file(dir / "calib_cam_to_cam.txt",
                         "calib_time: 09-Jan-2012 13:57:47\n"
                         "corner_dist: 9.950000e-02\n"
                         "R_rect_00: 1 0 0 0 1 0 0 0 1\n"
                         "P_rect_02: " + fmt("%.6e", kFocal) + " 0 " + fmt("%.6e", kCx) + " 0 0 " + fmt("%.6e", kFocal) +
                             " " + fmt("%.6e", kCy) + " 0 0 0 1 0\n");
  kitti::write_text_file(dir / "calib_velo_to_cam.txt",
                         "calib_time: 15-Mar-2012 11:37:16\n"
                         "R: 0 -1 0 0 0 -1 1 0 0\n"
                         "T: 0 -0.08 -0.27\n"
                         "delta_f: 0 0\n"
                         "delta_c: 0 0\n");

  const double scale = geometry::mercator_scale(spec.lat);
  std::string stamps;
  for (int f = 0; f < spec.frames; ++f) {
    const double t = f * spec.dt;
    const double lon = spec.lon + spec.ego_speed * t / (scale * geometry::kEarthRadius) * 180.0 / std::numbers::pi;
    std::ostringstream line;
    line << fmt("%.12f", spec.lat) << ' ' << fmt("%.12f", lon) << ' ' << fmt("%.6f", spec.alt) << " 0 0 0 0 "
         << fmt("%.6f", spec.ego_speed) << ' ' << fmt("%.6f", spec.ego_speed) << " 0 0";
    for (int k = 11; k < 25; ++k) line << " 0";
    line << " 4 11 6 6 6";  // accuracy fields, satellites and modes
    const std::string name = annotation::frame_name(f);
    kitti::write_text_file(dir / "oxts" / "data" / (name + ".txt"), line.str() + "\n");
    stamps += timestamp(f, spec.dt) + "\n";

    RgbImage img(spec.image_height, spec.image_width, 3);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(0.3 + 0.4 * y / img.height + 0.05 * c);
    kitti::write_file(dir / "image_02" / "data" / (name + ".png"), kitti::write_rgb_png(img));
    if (spec.velodyne) {
      kitti::write_file(dir / "velodyne_points" / "data" / (name + ".bin"), kitti::write_velodyne(velodyne_scan(spec, f)));
    }
    if (spec.flows) {
      const FlowMap zero(spec.image_height, spec.image_width);
      const auto bytes = kitti::write_flow(zero, kitti::FlowFormat::KittiPng16);
      kitti::write_file(dir / "flow_rgb" / (name + ".png"), bytes);
      kitti::write_file(dir / "flow_lidar" / (name + ".png"), bytes);
    }
  }
  kitti::write_text_file(dir / "oxts" / "timestamps.txt", stamps);
  kitti::write_text_file(dir / "tracklet_labels.xml", tracklets_xml(spec));
}

}  // namespace fusemod::synth
