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

#include "fusemod/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "fusemod/error.hpp"
#include "fusemod/kitti_ingest.hpp"

namespace fusemod::synth {

namespace {

std::uint64_t mix(std::uint64_t x)
{
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Uniform [0, 1) from a seed and integer lattice coordinates.
double lattice(std::uint64_t seed, std::int64_t a, std::int64_t b, std::uint64_t salt = 0)
{
  const std::uint64_t h = mix(mix(mix(seed ^ salt) + static_cast<std::uint64_t>(a)) + static_cast<std::uint64_t>(b));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

/// Smooth value noise over a square lattice of `cell` px plus fine grain.
double background(std::uint64_t seed, std::int64_t x, std::int64_t y, int cell, int c)
{
  const std::int64_t gx = floor_div(x, cell), gy = floor_div(y, cell);
  const double fx = static_cast<double>(x - gx * cell) / cell;
  const double fy = static_cast<double>(y - gy * cell) / cell;
  const auto salt = static_cast<std::uint64_t>(c + 1);
  const double v00 = lattice(seed, gx, gy, salt), v10 = lattice(seed, gx + 1, gy, salt);
  const double v01 = lattice(seed, gx, gy + 1, salt), v11 = lattice(seed, gx + 1, gy + 1, salt);
  const double smooth = (v00 * (1 - fx) + v10 * fx) * (1 - fy) + (v01 * (1 - fx) + v11 * fx) * fy;
  const double grain = lattice(seed, x, y, 100 + salt);
  return 0.2 + 0.45 * smooth + 0.15 * grain;
}

struct Rendered {
  RgbImage rgb;
  std::vector<int> owner;  // topmost object per pixel, -1 for background
};

Rendered render(const SceneSpec& spec, int t)
{
  Rendered r{RgbImage(spec.height, spec.width, 3), std::vector<int>(static_cast<std::size_t>(spec.height) * spec.width, -1)};
  const int cell = std::max(1, static_cast<int>(std::lround(spec.background_scale)));
  for (int y = 0; y < spec.height; ++y)
    for (int x = 0; x < spec.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const std::int64_t bx = x - static_cast<std::int64_t>(spec.ego_flow[0]) * t;
        const std::int64_t by = y - static_cast<std::int64_t>(spec.ego_flow[1]) * t;
        r.rgb.at(y, x, c) = static_cast<float>(background(spec.seed, bx, by, cell, c));
      }
  for (std::size_t k = 0; k < spec.objects.size(); ++k) {
    const ObjectSpec& o = spec.objects[k];
    const int ox = o.x + (o.vx + spec.ego_flow[0]) * t;
    const int oy = o.y + (o.vy + spec.ego_flow[1]) * t;
    const std::uint64_t oseed = mix(spec.seed ^ (0x51ed27ULL + k));
    for (int v = 0; v < o.height; ++v)
      for (int u = 0; u < o.width; ++u) {
        const int x = ox + u, y = oy + v;
        // Checker of 2 px cells with per-cell jitter, in object coordinates.
        const double jitter = lattice(oseed, u / 2, v / 2);
        const double pattern = ((u / 2 + v / 2) % 2 ? 0.5 : -0.5) * o.contrast + (jitter - 0.5) * 0.5 * o.contrast;
        for (int c = 0; c < 3; ++c) r.rgb.at(y, x, c) = static_cast<float>(std::clamp(o.color[c] + pattern, 0.0, 1.0));
        r.owner[static_cast<std::size_t>(y) * spec.width + x] = static_cast<int>(k);
      }
  }
  return r;
}

double object_depth(const SceneSpec& spec, std::size_t k)
{
  return 8.0 + 22.0 * lattice(spec.seed, static_cast<std::int64_t>(k), 0, 0xde97ULL);
}

double background_depth(const SceneSpec& spec, int y) { return 40.0 - 25.0 * y / std::max(1, spec.height - 1); }

bool lidar_hit(const SceneSpec& spec, int t, int x, int y)
{
  return lattice(spec.seed ^ 0x11da4ULL, static_cast<std::int64_t>(t) * spec.height + y, x) < spec.lidar_fraction;
}

DepthMap sparse_depth(const SceneSpec& spec, const Rendered& r, int t)
{
  DepthMap d(spec.height, spec.width, 1);
  for (int y = 0; y < spec.height; ++y)
    for (int x = 0; x < spec.width; ++x) {
      if (!lidar_hit(spec, t, x, y)) continue;
      const int k = r.owner[static_cast<std::size_t>(y) * spec.width + x];
      d.at(y, x) = static_cast<float>(k < 0 ? background_depth(spec, y) : object_depth(spec, static_cast<std::size_t>(k)));
    }
  return d;
}

}  // namespace

void SceneSpec::validate() const
{
  if (height < 1 || width < 1 || frames < 1) throw Error(ErrorCode::InvalidConfig, "scene size and frame count must be positive");
  if (!(lidar_fraction > 0 && lidar_fraction <= 1)) throw Error(ErrorCode::InvalidConfig, "lidar fraction must lie in (0, 1]");
  if (!(background_scale > 0)) throw Error(ErrorCode::InvalidConfig, "background scale must be positive");
  for (std::size_t k = 0; k < objects.size(); ++k) {
    const ObjectSpec& o = objects[k];
    if (o.width < 1 || o.height < 1) throw Error(ErrorCode::InvalidConfig, "object size must be positive");
    for (int t : {0, frames}) {
      const int x = o.x + (o.vx + ego_flow[0]) * t;
      const int y = o.y + (o.vy + ego_flow[1]) * t;
      if (x < 0 || y < 0 || x + o.width > width || y + o.height > height) {
        throw Error(ErrorCode::ObjectOutOfBounds, "object " + std::to_string(k) + " at frame " + std::to_string(t),
                    static_cast<std::int64_t>(k));
      }
    }
  }
}

std::vector<FrameSample> gen_scene(const SceneSpec& spec)
{
  spec.validate();
  std::vector<Rendered> frames;
  for (int t = 0; t <= spec.frames; ++t) frames.push_back(render(spec, t));

  std::vector<FrameSample> out;
  for (int t = 0; t < spec.frames; ++t) {
    const Rendered& r = frames[static_cast<std::size_t>(t)];
    FrameSample s;
    s.rgb = r.rgb;
    s.rgb_next = frames[static_cast<std::size_t>(t) + 1].rgb;
    s.rgb_flow = FlowMap(spec.height, spec.width);
    s.lidar_flow = FlowMap(spec.height, spec.width);
    s.mask = MaskImage(spec.height, spec.width, 1);
    for (int y = 0; y < spec.height; ++y)
      for (int x = 0; x < spec.width; ++x) {
        const int k = r.owner[static_cast<std::size_t>(y) * spec.width + x];
        float u = static_cast<float>(spec.ego_flow[0]);
        float v = static_cast<float>(spec.ego_flow[1]);
        if (k >= 0) {
          const ObjectSpec& o = spec.objects[static_cast<std::size_t>(k)];
          u += static_cast<float>(o.vx);
          v += static_cast<float>(o.vy);
          s.mask.at(y, x) = o.moving() ? 1 : 0;
        }
        s.rgb_flow.u.at(y, x) = u;
        s.rgb_flow.v.at(y, x) = v;
        const bool hit = lidar_hit(spec, t, x, y);
        s.lidar_flow.u.at(y, x) = hit ? u : 0.0f;
        s.lidar_flow.v.at(y, x) = hit ? v : 0.0f;
        s.lidar_flow.valid.at(y, x) = hit ? 1 : 0;
      }
    s.depth = sparse_depth(spec, r, t);
    s.depth_next = sparse_depth(spec, frames[static_cast<std::size_t>(t) + 1], t + 1);
    out.push_back(std::move(s));
  }
  return out;
}

void DegradeSpec::validate() const
{
  if (!(gain > 0 && gain <= 1)) throw Error(ErrorCode::InvalidConfig, "gain must lie in (0, 1]");
  if (!(gamma >= 1)) throw Error(ErrorCode::InvalidConfig, "gamma must be at least 1");
  if (!(noise_sigma >= 0) || !(flow_noise_sigma >= 0)) throw Error(ErrorCode::InvalidConfig, "noise sigma must be non-negative");
  if (!(flow_dropout >= 0 && flow_dropout < 1)) throw Error(ErrorCode::InvalidConfig, "flow dropout must lie in [0, 1)");
}

RgbImage degrade_low_light(const RgbImage& image, const DegradeSpec& spec, std::uint64_t seed)
{
  spec.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  RgbImage out = image;
  for (auto& v : out.data) {
    double x = spec.gain * std::pow(static_cast<double>(v), spec.gamma);
    if (spec.noise_sigma > 0) x += spec.noise_sigma * noise(rng);
    v = static_cast<float>(std::clamp(x, 0.0, 1.0));
  }
  return out;
}

FlowMap degrade_flow(const FlowMap& flow, const DegradeSpec& spec, std::uint64_t seed)
{
  spec.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  FlowMap out = flow;
  for (std::size_t i = 0; i < out.u.data.size(); ++i) {
    if (spec.flow_noise_sigma > 0) {
      out.u.data[i] += static_cast<float>(spec.flow_noise_sigma * noise(rng));
      out.v.data[i] += static_cast<float>(spec.flow_noise_sigma * noise(rng));
    }
    if (spec.flow_dropout > 0 && coin(rng) < spec.flow_dropout) {
      out.u.data[i] = 0.0f;
      out.v.data[i] = 0.0f;
    }
  }
  return out;
}

SceneSpec random_scene(const DatasetOptions& o, std::uint64_t seed, int frames)
{
  if (o.min_size < 1 || o.max_size < o.min_size || o.min_speed < 1 || o.max_speed < o.min_speed) {
    throw Error(ErrorCode::InvalidConfig, "object size and speed ranges");
  }
  std::mt19937_64 rng(seed);
  auto uniform_int = [&](int lo, int hi) { return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1)); };
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * static_cast<double>(rng() >> 11) * 0x1.0p-53; };

  SceneSpec spec;
  spec.seed = mix(seed);
  spec.height = o.height;
  spec.width = o.width;
  spec.frames = frames;
  spec.background_scale = o.background_scale;
  spec.lidar_fraction = o.lidar_fraction;
  spec.ego_flow = o.ego_flow;

  const int total = o.moving_objects + o.static_objects;
  // Moving and static objects are interleaved so neither kind is always on top.
  for (int k = 0; k < total; ++k) {
    const bool moving = (k % 2 == 0 && k / 2 < o.moving_objects) || k >= 2 * o.static_objects;
    ObjectSpec obj;
    obj.width = uniform_int(o.min_size, o.max_size);
    obj.height = uniform_int(o.min_size, o.max_size);
    if (moving) {
      do {
        obj.vx = uniform_int(-o.max_speed, o.max_speed);
        obj.vy = uniform_int(-o.max_speed, o.max_speed);
      } while (std::max(std::abs(obj.vx), std::abs(obj.vy)) < o.min_speed);
    }
    obj.contrast = o.contrast;
    for (auto& c : obj.color) c = uniform(0.2, 0.8);
    // Start positions keep the whole trajectory inside the image.
    const int dx = (obj.vx + o.ego_flow[0]) * frames;
    const int dy = (obj.vy + o.ego_flow[1]) * frames;
    const int x_lo = std::max(0, -dx), x_hi = std::min(o.width - obj.width, o.width - obj.width - dx);
    const int y_lo = std::max(0, -dy), y_hi = std::min(o.height - obj.height, o.height - obj.height - dy);
    if (x_hi < x_lo || y_hi < y_lo) throw Error(ErrorCode::ObjectOutOfBounds, "scene too small for object " + std::to_string(k), k);
    obj.x = uniform_int(x_lo, x_hi);
    obj.y = uniform_int(y_lo, y_hi);
    spec.objects.push_back(obj);
  }
  return spec;
}

std::vector<FrameSample> make_dataset(const DatasetOptions& options, int count, std::uint64_t seed)
{
  std::vector<FrameSample> out;
  for (int i = 0; i < count; ++i) {
    const std::uint64_t s = mix(seed * 0x100000001b3ULL + static_cast<std::uint64_t>(i));
    FrameSample f = gen_scene(random_scene(options, s)).front();
    if (options.degrade) {
      f.rgb = degrade_low_light(f.rgb, *options.degrade, mix(s + 1));
      f.rgb_next = degrade_low_light(f.rgb_next, *options.degrade, mix(s + 2));
      f.rgb_flow = degrade_flow(f.rgb_flow, *options.degrade, mix(s + 3));
    }
    out.push_back(std::move(f));
  }
  return out;
}

annotation::DatasetManifest write_dataset(std::span<const FrameSample> samples, const std::filesystem::path& root,
                                          std::span<const annotation::Split> splits)
{
  if (!splits.empty() && splits.size() != samples.size()) {
    throw Error(ErrorCode::DimensionMismatch, "one split per sample required");
  }
  annotation::DatasetManifest manifest;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const FrameSample& s = samples[i];
    const std::string name = annotation::frame_name(static_cast<int>(i)) + ".png";
    annotation::FrameRecord r;
    r.split = splits.empty() ? annotation::Split::Train : splits[i];
    auto put = [&](const std::string& dir, const kitti::Bytes& bytes) {
      kitti::write_file(root / dir / name, bytes);
      return dir + "/" + name;
    };
    r.rgb = put("rgb", kitti::write_rgb_png(s.rgb));
    r.rgb_flow = put("flow_rgb", kitti::write_flow(s.rgb_flow, kitti::FlowFormat::KittiPng16));
    r.lidar_flow = put("flow_lidar", kitti::write_flow(s.lidar_flow, kitti::FlowFormat::KittiPng16));
    r.mask = put("masks", kitti::write_mask_png(s.mask));
    r.depth = s.depth.empty() ? "-" : put("depth", kitti::write_depth_png(s.depth));
    r.rgb_next = s.rgb_next.empty() ? "-" : put("rgb_next", kitti::write_rgb_png(s.rgb_next));
    r.depth_next = s.depth_next.empty() ? "-" : put("depth_next", kitti::write_depth_png(s.depth_next));
    manifest.records.push_back(std::move(r));
  }
  kitti::write_text_file(root / "manifest.txt", manifest.to_text());
  return manifest;
}

}  // namespace fusemod::synth
