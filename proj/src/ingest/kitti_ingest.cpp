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

#include "fusemod/kitti_ingest.hpp"

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include <algorithm>
#include <bit>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "png_codec.hpp"

namespace fusemod::kitti {

namespace {

std::string_view trim(std::string_view s)
{
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_whitespace(std::string_view s)
{
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    const std::size_t start = i;
    while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

std::vector<std::string_view> split_lines(std::string_view text)
{
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = text.find('\n', start);
    const auto line = text.substr(start, end == std::string_view::npos ? text.size() - start
                                                                      : end - start);
    lines.push_back(line);
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return lines;
}

bool parse_double(std::string_view token, double& out)
{
  token = trim(token);
  if (token.empty()) return false;
  if (token.front() == '+') token.remove_prefix(1);
  const auto* end = token.data() + token.size();
  const auto result = std::from_chars(token.data(), end, out);
  return result.ec == std::errc() && result.ptr == end && std::isfinite(out);
}

std::vector<double> parse_numbers(std::string_view values, std::string_view context)
{
  std::vector<double> out;
  for (auto token : split_whitespace(values)) {
    double v = 0;
    if (!parse_double(token, v)) throw Error(ErrorCode::MalformedNumber, std::string(context));
    out.push_back(v);
  }
  return out;
}

/// `KEY: v1 v2 ...` records; values kept as raw text until a key is requested.
std::map<std::string, std::string_view, std::less<>> parse_key_values(std::string_view text)
{
  std::map<std::string, std::string_view, std::less<>> records;
  for (auto line : split_lines(text)) {
    const auto colon = line.find(':');
    if (colon == std::string_view::npos) continue;
    const auto key = trim(line.substr(0, colon));
    if (key.empty()) continue;
    records.emplace(std::string(key), line);
  }
  return records;
}

std::vector<double> lookup(const std::map<std::string, std::string_view, std::less<>>& records,
                           std::string_view key, std::size_t expected)
{
  const auto it = records.find(key);
  if (it == records.end()) throw Error(ErrorCode::MissingKey, std::string(key));
  const auto line = it->second;
  auto values = parse_numbers(line.substr(line.find(':') + 1), trim(line));
  if (values.size() != expected) throw Error(ErrorCode::MalformedNumber, std::string(trim(line)));
  return values;
}

template <int Rows, int Cols>
Eigen::Matrix<double, Rows, Cols> row_major(const std::vector<double>& values)
{
  Eigen::Matrix<double, Rows, Cols> m;
  for (int r = 0; r < Rows; ++r)
    for (int c = 0; c < Cols; ++c) m(r, c) = values[static_cast<std::size_t>(r * Cols + c)];
  return m;
}

// Little-endian helpers; independent of host byte order.
std::uint32_t load_u32(const std::uint8_t* p)
{
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void store_u32(std::uint8_t* p, std::uint32_t v)
{
  p[0] = static_cast<std::uint8_t>(v);
  p[1] = static_cast<std::uint8_t>(v >> 8);
  p[2] = static_cast<std::uint8_t>(v >> 16);
  p[3] = static_cast<std::uint8_t>(v >> 24);
}

float load_f32(const std::uint8_t* p) { return std::bit_cast<float>(load_u32(p)); }
void store_f32(std::uint8_t* p, float v) { store_u32(p, std::bit_cast<std::uint32_t>(v)); }

constexpr float kFloMagic = 202021.25f;

std::uint16_t to_u16(double v)
{
  return static_cast<std::uint16_t>(std::clamp(std::round(v), 0.0, 65535.0));
}

}  // namespace

std::pair<CalibCamToCam, CalibVeloToCam> parse_calib(std::string_view cam_to_cam_text,
                                                     std::string_view velo_to_cam_text)
{
  const auto cam = parse_key_values(cam_to_cam_text);
  const auto velo = parse_key_values(velo_to_cam_text);

  CalibCamToCam c2c;
  c2c.r_rect_00 = row_major<3, 3>(lookup(cam, "R_rect_00", 9));
  c2c.p_rect_02 = row_major<3, 4>(lookup(cam, "P_rect_02", 12));

  CalibVeloToCam v2c;
  v2c.rotation = row_major<3, 3>(lookup(velo, "R", 9));
  const auto t = lookup(velo, "T", 3);
  v2c.translation = Eigen::Vector3d(t[0], t[1], t[2]);
  return {c2c, v2c};
}

OxtsRecord parse_oxts(std::string_view line)
{
  const auto tokens = split_whitespace(line);
  if (tokens.size() != 30) {
    throw Error(ErrorCode::WrongFieldCount, "expected 30 fields, got " + std::to_string(tokens.size()),
                static_cast<std::int64_t>(tokens.size()));
  }
  std::array<double, 30> f{};
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!parse_double(tokens[i], f[i])) {
      throw Error(ErrorCode::MalformedNumber, std::string(trim(line)));
    }
  }
  OxtsRecord r;
  r.lat = f[0];
  r.lon = f[1];
  r.alt = f[2];
  r.roll = f[3];
  r.pitch = f[4];
  r.yaw = f[5];
  r.vn = f[6];
  r.ve = f[7];
  r.vf = f[8];
  r.vl = f[9];
  r.vu = f[10];
  std::copy(f.begin() + 11, f.end(), r.rest.begin());
  return r;
}

std::vector<Tracklet> parse_tracklets(std::string_view xml_text)
{
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream in{std::string(xml_text)};
    pt::read_xml(in, tree);
  } catch (const pt::xml_parser_error& e) {
    throw Error(ErrorCode::XmlStructure, std::string("document: ") + e.message());
  }

  auto tracklets_node = tree.get_child_optional("boost_serialization.tracklets");
  if (!tracklets_node) tracklets_node = tree.get_child_optional("tracklets");
  if (!tracklets_node) throw Error(ErrorCode::XmlStructure, "tracklets");

  auto number = [](const pt::ptree& node, const std::string& key, const std::string& path) {
    const auto child = node.get_optional<std::string>(key);
    if (!child) throw Error(ErrorCode::XmlStructure, path + "/" + key);
    double v = 0;
    if (!parse_double(*child, v)) throw Error(ErrorCode::MalformedNumber, path + "/" + key);
    return v;
  };
  auto declared_count = [&](const pt::ptree& node, const std::string& path) {
    if (!node.get_optional<std::string>("count")) return -1.0;
    return number(node, "count", path);
  };

  std::vector<Tracklet> out;
  const double expected_items = declared_count(*tracklets_node, "tracklets");
  int index = 0;
  for (const auto& [tag, item] : *tracklets_node) {
    if (tag != "item") continue;
    const std::string path = "tracklets/item[" + std::to_string(index++) + "]";
    Tracklet t;
    const auto type = item.get_optional<std::string>("objectType");
    if (!type) throw Error(ErrorCode::XmlStructure, path + "/objectType");
    t.object_type = std::string(trim(*type));
    t.h = number(item, "h", path);
    t.w = number(item, "w", path);
    t.l = number(item, "l", path);
    const double first = number(item, "first_frame", path);
    if (first < 0 || first != std::floor(first)) {
      throw Error(ErrorCode::MalformedNumber, path + "/first_frame");
    }
    t.first_frame = static_cast<int>(first);
    if (!(t.h > 0 && t.w > 0 && t.l > 0)) throw Error(ErrorCode::MalformedNumber, path + "/h,w,l");

    const auto poses = item.get_child_optional("poses");
    if (!poses) throw Error(ErrorCode::XmlStructure, "poses");
    int pose_index = 0;
    for (const auto& [pose_tag, pose] : *poses) {
      if (pose_tag != "item") continue;
      const std::string pose_path = path + "/poses/item[" + std::to_string(pose_index++) + "]";
      TrackletPose p;
      p.tx = number(pose, "tx", pose_path);
      p.ty = number(pose, "ty", pose_path);
      p.tz = number(pose, "tz", pose_path);
      number(pose, "rx", pose_path);
      number(pose, "ry", pose_path);
      p.rz = number(pose, "rz", pose_path);
      t.poses.push_back(p);
    }
    const double pose_count = declared_count(*poses, path + "/poses");
    if (pose_count >= 0 && pose_count != static_cast<double>(t.poses.size())) {
      throw Error(ErrorCode::XmlStructure, "poses");
    }
    if (t.poses.empty()) throw Error(ErrorCode::XmlStructure, "poses");
    out.push_back(std::move(t));
  }
  if (expected_items >= 0 && expected_items != static_cast<double>(out.size())) {
    throw Error(ErrorCode::XmlStructure, "tracklets");
  }
  return out;
}

std::vector<double> parse_timestamps(std::string_view text)
{
  std::vector<std::int64_t> nanos;
  for (auto raw : split_lines(text)) {
    const auto line = trim(raw);
    if (line.empty()) continue;
    int year = 0;
    unsigned month = 0, day = 0;
    int hour = 0, minute = 0;
    int second = 0;
    std::int64_t frac_ns = 0;
    // YYYY-MM-DD hh:mm:ss.fffffffff
    const auto bad = [&] { return Error(ErrorCode::MalformedNumber, std::string(line)); };
    if (line.size() < 19 || line[4] != '-' || line[7] != '-' || line[13] != ':' || line[16] != ':') {
      throw bad();
    }
    auto field = [&](std::size_t pos, std::size_t len, auto& value) {
      const auto* b = line.data() + pos;
      const auto r = std::from_chars(b, b + len, value);
      if (r.ec != std::errc() || r.ptr != b + len) throw bad();
    };
    field(0, 4, year);
    field(5, 2, month);
    field(8, 2, day);
    field(11, 2, hour);
    field(14, 2, minute);
    field(17, 2, second);
    if (line.size() > 19) {
      if (line[19] != '.') throw bad();
      auto digits = line.substr(20);
      if (digits.empty() || digits.size() > 9) throw bad();
      field(20, digits.size(), frac_ns);
      for (std::size_t k = digits.size(); k < 9; ++k) frac_ns *= 10;
    }
    const std::chrono::year_month_day ymd{std::chrono::year{year}, std::chrono::month{month},
                                          std::chrono::day{day}};
    if (!ymd.ok()) throw bad();
    const std::int64_t days = std::chrono::sys_days(ymd).time_since_epoch().count();
    const std::int64_t secs = days * 86400 + hour * 3600 + minute * 60 + second;
    nanos.push_back(secs * 1'000'000'000 + frac_ns);
  }
  std::vector<double> out;
  out.reserve(nanos.size());
  for (auto ns : nanos) out.push_back(static_cast<double>(ns - nanos.front()) * 1e-9);
  return out;
}

PointCloud read_velodyne(ByteView bytes)
{
  if (bytes.size() % 16 != 0) {
    const auto offset = static_cast<std::int64_t>(bytes.size() / 16 * 16);
    throw Error(ErrorCode::TruncatedRecord, "byte offset " + std::to_string(offset), offset);
  }
  PointCloud cloud;
  cloud.points.resize(bytes.size() / 16);
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    for (int k = 0; k < 4; ++k) cloud.points[i][k] = load_f32(bytes.data() + 16 * i + 4 * k);
  }
  return cloud;
}

Bytes write_velodyne(const PointCloud& cloud)
{
  Bytes out(cloud.points.size() * 16);
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    for (int k = 0; k < 4; ++k) store_f32(out.data() + 16 * i + 4 * k, cloud.points[i][k]);
  }
  return out;
}

FlowMap read_flow(ByteView bytes, FlowFormat format)
{
  if (format == FlowFormat::Flo) {
    if (bytes.size() < 12 || load_f32(bytes.data()) != kFloMagic) throw Error(ErrorCode::BadMagic, "FLO");
    const auto width = static_cast<std::int32_t>(load_u32(bytes.data() + 4));
    const auto height = static_cast<std::int32_t>(load_u32(bytes.data() + 8));
    if (width < 0 || height < 0 ||
        bytes.size() != 12 + static_cast<std::size_t>(width) * height * 8) {
      throw Error(ErrorCode::DimensionMismatch,
                  "FLO header " + std::to_string(width) + "x" + std::to_string(height) +
                      " vs payload " + std::to_string(bytes.size() - 12) + " bytes");
    }
    FlowMap flow(height, width);
    const std::uint8_t* p = bytes.data() + 12;
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x, p += 8) {
        flow.u.at(y, x) = load_f32(p);
        flow.v.at(y, x) = load_f32(p + 4);
      }
    }
    return flow;
  }

  const auto image = png::decode(bytes);
  if (image.channels != 3 || image.bit_depth != 16) {
    throw Error(ErrorCode::DimensionMismatch, "KITTI flow PNG must be 16-bit with 3 channels");
  }
  FlowMap flow(image.height, image.width);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const std::size_t i = (static_cast<std::size_t>(y) * image.width + x) * 3;
      const bool valid = image.samples[i + 2] > 0;
      flow.valid.at(y, x) = valid ? 1 : 0;
      flow.u.at(y, x) = valid ? (static_cast<float>(image.samples[i]) - 32768.0f) / 64.0f : 0.0f;
      flow.v.at(y, x) = valid ? (static_cast<float>(image.samples[i + 1]) - 32768.0f) / 64.0f : 0.0f;
    }
  }
  return flow;
}

Bytes write_flow(const FlowMap& flow, FlowFormat format)
{
  const int h = flow.height();
  const int w = flow.width();
  if (!flow.u.same_size(flow.v) || !flow.u.same_size(flow.valid)) {
    throw Error(ErrorCode::DimensionMismatch, "flow components differ in size");
  }
  if (format == FlowFormat::Flo) {
    Bytes out(12 + static_cast<std::size_t>(w) * h * 8);
    store_f32(out.data(), kFloMagic);
    store_u32(out.data() + 4, static_cast<std::uint32_t>(w));
    store_u32(out.data() + 8, static_cast<std::uint32_t>(h));
    std::uint8_t* p = out.data() + 12;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x, p += 8) {
        store_f32(p, flow.u.at(y, x));
        store_f32(p + 4, flow.v.at(y, x));
      }
    }
    return out;
  }
  png::Image image{w, h, 3, 16, {}};
  image.samples.resize(static_cast<std::size_t>(w) * h * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = (static_cast<std::size_t>(y) * w + x) * 3;
      image.samples[i] = to_u16(flow.u.at(y, x) * 64.0 + 32768.0);
      image.samples[i + 1] = to_u16(flow.v.at(y, x) * 64.0 + 32768.0);
      image.samples[i + 2] = flow.valid.at(y, x) ? 1 : 0;
    }
  }
  return png::encode(image);
}

Bytes write_mask_png(const MaskImage& mask)
{
  png::Image image{mask.width, mask.height, 1, 8, {}};
  image.samples.resize(mask.data.size());
  for (std::size_t i = 0; i < mask.data.size(); ++i) {
    if (mask.data[i] > 1) {
      throw Error(ErrorCode::BadPixelValue, "mask label " + std::to_string(mask.data[i]),
                  mask.data[i]);
    }
    image.samples[i] = mask.data[i] ? 255 : 0;
  }
  return png::encode(image);
}

MaskImage read_mask_png(ByteView bytes)
{
  const auto image = png::decode(bytes);
  if (image.channels != 1 || image.bit_depth != 8) {
    throw Error(ErrorCode::DimensionMismatch, "mask PNG must be 8-bit single channel");
  }
  MaskImage mask(image.height, image.width);
  for (std::size_t i = 0; i < image.samples.size(); ++i) {
    const auto v = image.samples[i];
    if (v != 0 && v != 255) {
      throw Error(ErrorCode::BadPixelValue, "mask pixel " + std::to_string(v), v);
    }
    mask.data[i] = v ? 1 : 0;
  }
  return mask;
}

Bytes write_rgb_png(const RgbImage& rgb)
{
  if (rgb.channels != 3) throw Error(ErrorCode::DimensionMismatch, "RGB image needs 3 channels");
  png::Image image{rgb.width, rgb.height, 3, 8, {}};
  image.samples.resize(rgb.data.size());
  for (std::size_t i = 0; i < rgb.data.size(); ++i) {
    image.samples[i] = static_cast<std::uint16_t>(
        std::clamp(std::round(static_cast<double>(rgb.data[i]) * 255.0), 0.0, 255.0));
  }
  return png::encode(image);
}

RgbImage read_rgb_png(ByteView bytes)
{
  const auto image = png::decode(bytes);
  const float scale = image.bit_depth == 16 ? 1.0f / 65535.0f : 1.0f / 255.0f;
  RgbImage rgb(image.height, image.width, 3);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * image.width + x;
      for (int c = 0; c < 3; ++c) {
        const int src = image.channels == 3 ? c : 0;
        rgb.at(y, x, c) = static_cast<float>(image.samples[p * image.channels + src]) * scale;
      }
    }
  }
  return rgb;
}

Bytes write_depth_png(const DepthMap& depth)
{
  png::Image image{depth.width, depth.height, 1, 16, {}};
  image.samples.resize(depth.data.size());
  for (std::size_t i = 0; i < depth.data.size(); ++i) {
    image.samples[i] = depth.data[i] > 0 ? std::max<std::uint16_t>(1, to_u16(depth.data[i] * 256.0)) : 0;
  }
  return png::encode(image);
}

DepthMap read_depth_png(ByteView bytes)
{
  const auto image = png::decode(bytes);
  if (image.channels != 1 || image.bit_depth != 16) {
    throw Error(ErrorCode::DimensionMismatch, "depth PNG must be 16-bit single channel");
  }
  DepthMap depth(image.height, image.width);
  for (std::size_t i = 0; i < image.samples.size(); ++i) {
    depth.data[i] = static_cast<float>(image.samples[i]) / 256.0f;
  }
  return depth;
}

Raster<std::uint16_t> read_instance_png(ByteView bytes)
{
  const auto image = png::decode(bytes);
  if (image.channels != 1) throw Error(ErrorCode::DimensionMismatch, "instance PNG must be single channel");
  Raster<std::uint16_t> ids(image.height, image.width);
  ids.data = image.samples;
  return ids;
}

Bytes write_instance_png(const Raster<std::uint16_t>& ids)
{
  png::Image image{ids.width, ids.height, 1, 16, ids.data};
  return png::encode(image);
}

std::pair<int, int> png_size(ByteView bytes)
{
  // IHDR is always the first chunk: signature(8) length(4) type(4) width(4) height(4).
  if (!png::has_signature(bytes) || bytes.size() < 24) {
    throw Error(ErrorCode::IoFailure, "not a PNG stream");
  }
  auto be32 = [&](std::size_t off) {
    return static_cast<int>((static_cast<std::uint32_t>(bytes[off]) << 24) |
                            (static_cast<std::uint32_t>(bytes[off + 1]) << 16) |
                            (static_cast<std::uint32_t>(bytes[off + 2]) << 8) |
                            static_cast<std::uint32_t>(bytes[off + 3]));
  };
  return {be32(16), be32(20)};
}

Bytes read_file(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::string read_text_file(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, ByteView bytes)
{
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoFailure, "short write to " + path.string());
}

void write_text_file(const std::filesystem::path& path, std::string_view text)
{
  write_file(path, ByteView(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

FlowMap read_flow_file(const std::filesystem::path& path)
{
  const auto ext = path.extension().string();
  const auto format = ext == ".flo" ? FlowFormat::Flo : FlowFormat::KittiPng16;
  try {
    return read_flow(read_file(path), format);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::IoFailure) throw;
    throw Error(e.code(), path.string() + ": " + e.detail(), e.value());
  }
}

void write_flow_file(const std::filesystem::path& path, const FlowMap& flow)
{
  const auto format = path.extension() == ".flo" ? FlowFormat::Flo : FlowFormat::KittiPng16;
  write_file(path, write_flow(flow, format));
}

}  // namespace fusemod::kitti
