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
#include "doctest.h"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <random>
#include <thread>

#include "json.hpp"

#include "fusemod/error.hpp"
#include "fusemod/evalbench.hpp"
#include "fusemod/models.hpp"
#include "fusemod/synth.hpp"

using namespace fusemod;
using namespace fusemod::eval;
namespace fs = std::filesystem;

namespace {

MaskImage mask_of(int h, int w, std::initializer_list<int> v)
{
  MaskImage m(h, w);
  std::size_t i = 0;
  for (int x : v) m.data[i++] = static_cast<std::uint8_t>(x);
  return m;
}

MaskImage random_mask(int h, int w, double p, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution d(p);
  MaskImage m(h, w);
  for (auto& v : m.data) v = d(rng) ? 255 : 0;
  return m;
}

// Independent tally: counts[truth][pred].
std::array<std::array<long, 2>, 2> tally(const MaskImage& pred, const MaskImage& truth)
{
  std::array<std::array<long, 2>, 2> c{};
  for (int y = 0; y < truth.height; ++y)
    for (int x = 0; x < truth.width; ++x) {
      const int t = truth.at(y, x) > 0 ? 1 : 0;
      const int p = pred.at(y, x) > 0 ? 1 : 0;
      c[t][p] += 1;
    }
  return c;
}

ErrorCode code_of(auto&& f)
{
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::InvalidConfig;
}

fs::path scratch(const std::string& name)
{
  const auto p = fs::temp_directory_path() / ("fusemod_evalbench_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("confusion matrix")
{
  SUBCASE("identical masks")
  {
    const auto m = random_mask(9, 11, 0.3, 1);
    ConfusionMatrix cm;
    cm.update(m, m);
    CHECK(cm.counts[0][1] == 0);
    CHECK(cm.counts[1][0] == 0);
    CHECK(cm.total() == 99);
  }
  SUBCASE("hand counted")
  {
    // Truth: the 4 pixels of the left 2x2 block. Prediction: two of them plus one outside.
    const auto truth = mask_of(2, 3, {1, 1, 0, 1, 1, 0});
    const auto pred = mask_of(2, 3, {1, 0, 1, 0, 1, 0});
    ConfusionMatrix cm;
    cm.update(pred, truth);
    CHECK(cm.counts[kMoving][kMoving] == 2);
    CHECK(cm.counts[kMoving][kStatic] == 2);
    CHECK(cm.counts[kStatic][kMoving] == 1);
    CHECK(cm.counts[kStatic][kStatic] == 1);
    CHECK(iou(cm, kMoving) == doctest::Approx(0.4).epsilon(1e-15));
  }
  SUBCASE("random masks against a tally")
  {
    for (std::uint64_t s = 0; s < 10; ++s) {
      const auto t = random_mask(17, 23, 0.2, s), p = random_mask(17, 23, 0.4, 100 + s);
      ConfusionMatrix cm;
      cm.update(p, t);
      const auto ref = tally(p, t);
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) CHECK(cm.counts[a][b] == ref[a][b]);
    }
  }
  SUBCASE("merge equals concatenation")
  {
    ConfusionMatrix merged, whole;
    std::vector<std::uint8_t> all_p, all_t;
    for (std::uint64_t s = 0; s < 5; ++s) {
      const auto t = random_mask(8, 8, 0.3, s), p = random_mask(8, 8, 0.3, 50 + s);
      ConfusionMatrix one;
      one.update(p, t);
      merged += one;
      all_p.insert(all_p.end(), p.data.begin(), p.data.end());
      all_t.insert(all_t.end(), t.data.begin(), t.data.end());
    }
    whole.update(all_p, all_t);
    CHECK(merged == whole);
  }
  SUBCASE("dimension mismatch")
  {
    ConfusionMatrix cm;
    CHECK(code_of([&] { cm.update(MaskImage(2, 3), MaskImage(3, 2)); }) == ErrorCode::DimensionMismatch);
  }
}

TEST_CASE("iou")
{
  SUBCASE("perfect prediction")
  {
    const auto m = random_mask(10, 10, 0.5, 3);
    ConfusionMatrix cm;
    cm.update(m, m);
    CHECK(iou(cm, kMoving) == 1.0);
    CHECK(iou(cm, kStatic) == 1.0);
    CHECK(miou(cm) == 1.0);
  }
  SUBCASE("swapping prediction and truth")
  {
    for (std::uint64_t s = 0; s < 5; ++s) {
      const auto a = random_mask(12, 12, 0.3, s), b = random_mask(12, 12, 0.5, 9 + s);
      ConfusionMatrix ab, ba;
      ab.update(a, b);
      ba.update(b, a);
      CHECK(iou(ab, kMoving) == iou(ba, kMoving));
      CHECK(iou(ab, kStatic) == iou(ba, kStatic));
      CHECK(miou(ab) == doctest::Approx(0.5 * (iou(ab, kStatic) + iou(ab, kMoving))).epsilon(1e-15));
    }
  }
  SUBCASE("undefined")
  {
    ConfusionMatrix cm;
    cm.update(MaskImage(2, 2), MaskImage(2, 2));
    CHECK(iou(cm, kStatic) == 1.0);
    try {
      iou(cm, kMoving);
      FAIL("expected UndefinedIoU");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::UndefinedIoU);
    }
    const auto j = nlohmann::json::parse(metrics_json({"empty", cm}));
    CHECK(j["moving_iou"].is_null());
    CHECK(j["miou"].is_null());
    CHECK(j["static_iou"] == 1.0);
  }
  SUBCASE("reported rows imply a plausible background IoU")
  {
    // Dark-KITTI three-stream row: mIoU 71.2, Moving IoU 43.5.
    CHECK(background_iou(71.2, 43.5) == doctest::Approx(98.9).epsilon(1e-12));
    CHECK(0.5 * (98.9 + 43.5) == doctest::Approx(71.2).epsilon(1e-12));
    const double rows[][2] = {{62.6, 26.5},   {69.2, 39.5},   {61.68, 24.86}, {68.7, 38.5},  {66.26, 33.83},
                              {69.92, 40.93}, {69.8, 40.75},  {71.2, 43.5},   {65.6, 32.7},  {74.24, 49.36},
                              {70.27, 41.64}, {66.68, 34.67}, {72.21, 45.45}, {75.3, 51.46}};
    for (const auto& r : rows) {
      const double bg = background_iou(r[0], r[1]);
      CHECK(bg > 94.0);
      CHECK(bg < 99.5);
    }
  }
}

TEST_CASE("relative improvement")
{
  CHECK(relative_improvement(43.5, 39.5) == doctest::Approx(10.13).epsilon(1e-3));
  CHECK(std::round(relative_improvement(43.5, 39.5) * 10) / 10 == doctest::Approx(10.1));
  CHECK(relative_improvement(51.46, 49.36) == doctest::Approx(4.25).epsilon(1e-3));
  CHECK(relative_improvement(0.3, 0.3) == 0.0);
  CHECK_THROWS(relative_improvement(1.0, 0.0));
}

TEST_CASE("class weights")
{
  const auto half = class_weights_from_frequency({0.5, 0.5});
  CHECK(half[0] == doctest::Approx(1.0 / std::log(1.52)).epsilon(1e-14));
  CHECK(half[0] == doctest::Approx(2.38829).epsilon(1e-5));
  CHECK(half[1] == half[0]);

  const auto skew = class_weights_from_frequency({0.99, 0.01});
  CHECK(skew[1] / skew[0] == doctest::Approx(std::log(2.01) / std::log(1.03)).epsilon(1e-12));
  CHECK(skew[1] / skew[0] == doctest::Approx(23.6).epsilon(2e-3));

  const auto all_static = class_weights_from_frequency({1.0, 0.0});
  CHECK(std::isfinite(all_static[1]));
  CHECK(all_static[1] == doctest::Approx(1.0 / std::log(1.02)).epsilon(1e-14));

  for (int i = 0; i <= 100; ++i) {
    const double p = i / 100.0;
    const auto w = class_weights_from_frequency({1 - p, p});
    CHECK((std::isfinite(w[0]) && std::isfinite(w[1]) && w[0] > 0 && w[1] > 0));
  }

  SUBCASE("from masks")
  {
    std::vector<MaskImage> masks = {mask_of(2, 2, {1, 0, 0, 0}), mask_of(2, 2, {1, 1, 1, 0})};
    const auto w = class_weights(masks);
    const auto expect = class_weights_from_frequency({0.5, 0.5});
    CHECK(w[0] == doctest::Approx(expect[0]));
    CHECK(w[1] == doctest::Approx(expect[1]));
    CHECK(code_of([] { class_weights(std::span<const MaskImage>{}); }) == ErrorCode::EmptySplit);
  }

  SUBCASE("from the training split of a manifest")
  {
    synth::DatasetOptions o;
    o.height = 32;
    o.width = 64;
    o.max_size = 10;
    const auto samples = synth::make_dataset(o, 4, 7);
    const auto root = scratch("weights");
    const std::vector<annotation::Split> splits = {annotation::Split::Train, annotation::Split::Test,
                                                   annotation::Split::Train, annotation::Split::Test};
    const auto manifest = synth::write_dataset(samples, root, splits);
    const std::vector<MaskImage> train = {samples[0].mask, samples[2].mask};
    const auto expect = class_weights(train);
    const auto got = class_weights(manifest, root);
    CHECK(got[0] == doctest::Approx(expect[0]).epsilon(1e-15));
    CHECK(got[1] == doctest::Approx(expect[1]).epsilon(1e-15));

    annotation::DatasetManifest test_only = manifest;
    for (auto& r : test_only.records) r.split = annotation::Split::Test;
    CHECK(code_of([&] { class_weights(test_only, root); }) == ErrorCode::EmptySplit);
    fs::remove_all(root);
  }
}

TEST_CASE("reports")
{
  ConfusionMatrix cm;
  cm.counts = {{{90, 2}, {3, 5}}};
  const auto j = nlohmann::json::parse(metrics_json({"RGB + rgbFlow", cm}));
  CHECK(j["type"] == "RGB + rgbFlow");
  CHECK(j["moving_iou"].get<double>() == doctest::Approx(0.5));
  CHECK(j["static_iou"].get<double>() == doctest::Approx(90.0 / 95.0));
  CHECK(j["confusion"]["fp"] == 2);
  CHECK(j["confusion"]["fn"] == 3);
  const MetricsRow rows[] = {{"RGB + rgbFlow", cm}};
  const auto table = metrics_table(rows);
  CHECK(table.find("mIoU") != std::string::npos);
  CHECK(table.find("Moving IoU") != std::string::npos);
  CHECK(table.find("50.00") != std::string::npos);
}

TEST_CASE("bench")
{
  SUBCASE("fps arithmetic")
  {
    const auto r = make_bench_report("m", 256, 1224, 10, std::vector<double>(10, 50.0));
    CHECK(r.fps == doctest::Approx(20.0));
    CHECK(r.iterations == 10);
    const auto j = nlohmann::json::parse(bench_json(r));
    CHECK(j["fps"].get<double>() == doctest::Approx(20.0));
    CHECK(j["resolution"][1] == 1224);
    CHECK(j["latencies_ms"].size() == 10);
  }
  SUBCASE("warmup calls are untimed")
  {
    int calls = 0;
    const auto r = bench_fps([&] { ++calls; std::this_thread::sleep_for(std::chrono::milliseconds(2)); }, "sleep", 1, 1,
                             3, 5);
    CHECK(calls == 8);
    CHECK(r.latencies_ms.size() == 5);
    for (double l : r.latencies_ms) CHECK(l >= 2.0);
    CHECK(r.fps <= 500.0);
    CHECK(r.fps > 0.0);
  }
  SUBCASE("more streams are slower")
  {
    const auto spec = models::EncoderSpec::tiny();
    std::vector<double> fps;
    for (const char* p : {"baseline", "two", "three"}) {
      models::Model m(models::FusionPlan::parse(p), spec);
      fps.push_back(models::bench_model(m, p, 64, 256, 1, 4).fps);
    }
    CHECK(fps[0] > fps[1]);
    CHECK(fps[1] > fps[2]);
  }
}
