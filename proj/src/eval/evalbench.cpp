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

#include "fusemod/evalbench.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "json.hpp"

#include "fusemod/error.hpp"
#include "fusemod/kitti_ingest.hpp"

namespace fusemod::eval {

void ConfusionMatrix::update(const MaskImage& predicted, const MaskImage& truth)
{
  if (!predicted.same_size(truth) || predicted.channels != truth.channels) {
    throw Error(ErrorCode::DimensionMismatch,
                "prediction " + std::to_string(predicted.height) + "x" + std::to_string(predicted.width) +
                    " vs truth " + std::to_string(truth.height) + "x" + std::to_string(truth.width));
  }
  update(std::span<const std::uint8_t>(predicted.data), std::span<const std::uint8_t>(truth.data));
}

void ConfusionMatrix::update(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth)
{
  if (predicted.size() != truth.size()) {
    throw Error(ErrorCode::DimensionMismatch, "label counts differ");
  }
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ++counts[truth[i] != 0][predicted[i] != 0];
  }
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& o)
{
  for (int t = 0; t < 2; ++t)
    for (int p = 0; p < 2; ++p) counts[t][p] += o.counts[t][p];
  return *this;
}

std::int64_t ConfusionMatrix::total() const
{
  return counts[0][0] + counts[0][1] + counts[1][0] + counts[1][1];
}

double iou(const ConfusionMatrix& cm, int cls)
{
  const std::int64_t denom = cm.tp(cls) + cm.fp(cls) + cm.fn(cls);
  if (denom == 0) {
    throw Error(ErrorCode::UndefinedIoU, cls == kMoving ? "Moving" : "Static", cls);
  }
  return static_cast<double>(cm.tp(cls)) / static_cast<double>(denom);
}

double miou(const ConfusionMatrix& cm) { return 0.5 * (iou(cm, kStatic) + iou(cm, kMoving)); }

double relative_improvement(double new_value, double base)
{
  if (!(base > 0)) throw std::invalid_argument("relative_improvement: base must be positive");
  return 100.0 * (new_value - base) / base;
}

std::array<double, 2> class_weights_from_frequency(std::array<double, 2> p, double c)
{
  return {1.0 / std::log(c + p[0]), 1.0 / std::log(c + p[1])};
}

std::array<double, 2> class_weights(std::span<const MaskImage> masks, double c)
{
  std::int64_t moving = 0;
  std::int64_t total = 0;
  for (const auto& m : masks) {
    for (auto v : m.data) moving += v != 0;
    total += static_cast<std::int64_t>(m.data.size());
  }
  if (total == 0) throw Error(ErrorCode::EmptySplit, "no training pixels");
  const double pm = static_cast<double>(moving) / static_cast<double>(total);
  return class_weights_from_frequency({1.0 - pm, pm}, c);
}

std::array<double, 2> class_weights(const annotation::DatasetManifest& manifest,
                                    const std::filesystem::path& root, double c)
{
  std::vector<MaskImage> masks;
  for (const auto& r : manifest.records) {
    if (r.split == annotation::Split::Train) masks.push_back(kitti::read_mask_png(kitti::read_file(root / r.mask)));
  }
  if (masks.empty()) throw Error(ErrorCode::EmptySplit, "manifest has no training frames");
  return class_weights(masks, c);
}

namespace {

nlohmann::json iou_or_null(const ConfusionMatrix& cm, int cls)
{
  const std::int64_t denom = cm.tp(cls) + cm.fp(cls) + cm.fn(cls);
  if (denom == 0) return nullptr;
  return iou(cm, cls);
}

std::string percent_or_dash(const nlohmann::json& v)
{
  if (v.is_null()) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v.get<double>());
  return buf;
}

std::string pad(std::string s, std::size_t width)
{
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

}  // namespace

std::string metrics_json(const MetricsRow& row)
{
  const auto st = iou_or_null(row.cm, kStatic);
  const auto mv = iou_or_null(row.cm, kMoving);
  nlohmann::json j;
  j["type"] = row.type;
  j["miou"] = (st.is_null() || mv.is_null()) ? nlohmann::json(nullptr) : nlohmann::json(0.5 * (st.get<double>() + mv.get<double>()));
  j["moving_iou"] = mv;
  j["static_iou"] = st;
  j["confusion"] = {{"tn", row.cm.counts[0][0]}, {"fp", row.cm.counts[0][1]},
                    {"fn", row.cm.counts[1][0]}, {"tp", row.cm.counts[1][1]}};
  return j.dump();
}

std::string metrics_table(std::span<const MetricsRow> rows)
{
  std::size_t w = 4;
  for (const auto& r : rows) w = std::max(w, r.type.size());
  std::string out = pad("Type", w) + " | mIoU   | Moving IoU\n" + std::string(w, '-') + "-+--------+-----------\n";
  for (const auto& r : rows) {
    const auto j = nlohmann::json::parse(metrics_json(r));
    out += pad(r.type, w) + " | " + pad(percent_or_dash(j["miou"]), 6) + " | " + percent_or_dash(j["moving_iou"]) + "\n";
  }
  return out;
}

BenchReport make_bench_report(std::string label, int height, int width, int warmup,
                              std::vector<double> latencies_ms)
{
  BenchReport r;
  r.label = std::move(label);
  r.height = height;
  r.width = width;
  r.warmup = warmup;
  r.iterations = static_cast<int>(latencies_ms.size());
  double total_ms = 0;
  for (double l : latencies_ms) total_ms += l;
  r.fps = total_ms > 0 ? r.iterations / (total_ms / 1000.0) : 0.0;
  r.latencies_ms = std::move(latencies_ms);
  return r;
}

BenchReport bench_fps(const std::function<void()>& forward, std::string label, int height, int width,
                      int warmup, int iterations)
{
  using clock = std::chrono::steady_clock;
  for (int i = 0; i < warmup; ++i) forward();
  std::vector<double> latencies;
  latencies.reserve(static_cast<std::size_t>(iterations));
  for (int i = 0; i < iterations; ++i) {
    const auto t0 = clock::now();
    forward();
    const auto t1 = clock::now();
    latencies.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return make_bench_report(std::move(label), height, width, warmup, std::move(latencies));
}

std::string bench_json(const BenchReport& r)
{
  nlohmann::json j;
  j["label"] = r.label;
  j["resolution"] = {r.height, r.width};
  j["warmup"] = r.warmup;
  j["iterations"] = r.iterations;
  j["fps"] = r.fps;
  j["latencies_ms"] = r.latencies_ms;
  return j.dump();
}

std::string bench_table(std::span<const BenchReport> reports)
{
  std::size_t w = 4;
  for (const auto& r : reports) w = std::max(w, r.label.size());
  std::string out = pad("Type", w) + " | fps\n" + std::string(w, '-') + "-+--------\n";
  for (const auto& r : reports) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", r.fps);
    out += pad(r.label, w) + " | " + buf + "\n";
  }
  return out;
}

}  // namespace fusemod::eval
