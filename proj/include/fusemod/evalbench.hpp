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
 * @file  evalbench.hpp
 * @brief Two-class segmentation metrics, loss class weights and fps timing.
 */

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fusemod/annotation.hpp"
#include "fusemod/raster.hpp"

namespace fusemod::eval {

inline constexpr int kStatic = 0;
inline constexpr int kMoving = 1;

/// counts[truth][predicted]
struct ConfusionMatrix {
  std::array<std::array<std::int64_t, 2>, 2> counts{};

  /// Throws DimensionMismatch when the masks differ in size. Nonzero mask
  /// values count as Moving.
  void update(const MaskImage& predicted, const MaskImage& truth);
  void update(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth);

  ConfusionMatrix& operator+=(const ConfusionMatrix& o);
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

  std::int64_t total() const;
  std::int64_t tp(int cls) const { return counts[cls][cls]; }
  std::int64_t fp(int cls) const { return counts[1 - cls][cls]; }
  std::int64_t fn(int cls) const { return counts[cls][1 - cls]; }
};

/// TP / (TP + FP + FN); throws UndefinedIoU when the denominator is zero.
double iou(const ConfusionMatrix& cm, int cls);
/// Unweighted mean of the two class IoUs.
double miou(const ConfusionMatrix& cm);

/// The background IoU implied by a reported mIoU and Moving IoU.
inline double background_iou(double miou_value, double moving_iou) { return 2.0 * miou_value - moving_iou; }

/// 100 (new - base) / base, in percent. `base` must be positive.
double relative_improvement(double new_value, double base);

inline constexpr double kClassWeightConstant = 1.02;

/// w_c = 1 / ln(c + p_c).
std::array<double, 2> class_weights_from_frequency(std::array<double, 2> p, double c = kClassWeightConstant);

/// Pixel frequencies over `masks`; throws EmptySplit when there is none.
std::array<double, 2> class_weights(std::span<const MaskImage> masks, double c = kClassWeightConstant);

/// Reads the masks of the training split (paths relative to `root`).
std::array<double, 2> class_weights(const annotation::DatasetManifest& manifest,
                                    const std::filesystem::path& root, double c = kClassWeightConstant);

// Reporting

struct MetricsRow {
  std::string type;
  ConfusionMatrix cm;
};

/// One JSON object: type, miou, moving_iou, static_iou, confusion counts.
/// IoUs with a zero denominator are written as null.
std::string metrics_json(const MetricsRow& row);
/// Type / mIoU / Moving IoU in percent.
std::string metrics_table(std::span<const MetricsRow> rows);

struct BenchReport {
  std::string label;
  int height = 0;
  int width = 0;
  int warmup = 0;
  int iterations = 0;
  double fps = 0;
  std::vector<double> latencies_ms;
};

/// fps = iterations / total timed seconds.
BenchReport make_bench_report(std::string label, int height, int width, int warmup,
                              std::vector<double> latencies_ms);

/// Times `forward` (one sample per call) on a monotonic clock after `warmup`
/// untimed calls.
BenchReport bench_fps(const std::function<void()>& forward, std::string label, int height, int width,
                      int warmup = 10, int iterations = 100);

std::string bench_json(const BenchReport& report);
std::string bench_table(std::span<const BenchReport> reports);

}  // namespace fusemod::eval
