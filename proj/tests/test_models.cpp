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

#include <cmath>
#include <random>

#include "fusemod/error.hpp"
#include "fusemod/grad_check.hpp"
#include "fusemod/models.hpp"
#include "fusemod/synth.hpp"

using namespace fusemod;
using namespace fusemod::models;
using nn::Shape;

namespace {

Tensor randn(Shape s, std::uint64_t seed, double scale = 1.0)
{
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, scale);
  Tensor t(s);
  for (auto& v : t.data()) v = d(rng);
  return t;
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

std::vector<int> encoder_channels(const Model& m)
{
  std::vector<int> out;
  for (std::size_t i = 0; i < m.plan().streams.size(); ++i) {
    for (const auto& p : m.parameters())
      if (p.name == "encoder" + std::to_string(i) + "/conv1/weight") out.push_back(p.param.shape().c);
  }
  return out;
}

// Parameter count worked out layer by layer.
std::size_t encoder_params(int cin, const EncoderSpec& s)
{
  std::size_t n = static_cast<std::size_t>(cin) * s.conv1_channels * 9 + 2 * s.conv1_channels;
  int in = s.conv1_channels;
  for (int st = 0; st < 3; ++st) {
    for (int u = 0; u < s.stage_units[st]; ++u) {
      const int out = s.stage_channels[st];
      const int mid = out / 4;
      const int branch = u == 0 ? out - in : out;
      n += static_cast<std::size_t>(mid) * (in / s.groups) + 2 * mid;  // gconv1, bn1
      n += static_cast<std::size_t>(mid) * 9 + 2 * mid;                // dwconv, bn2
      n += static_cast<std::size_t>(branch) * (mid / s.groups) + 2 * branch;
      in = out;
    }
  }
  return n;
}

std::size_t decoder_params(int streams, const EncoderSpec& s)
{
  std::size_t n = 0;
  for (int c : s.stage_channels) n += static_cast<std::size_t>(streams) * c * 2 + 2;
  return n + 2 * (2 * 2 * 4 * 4) + 2 * 2 * 16 * 16;
}

std::vector<Var> constants(const std::vector<Tensor>& ts)
{
  std::vector<Var> v;
  for (const auto& t : ts) v.push_back(Var::constant(t));
  return v;
}

std::vector<Tensor> random_inputs(const FusionPlan& plan, int n, int h, int w, std::uint64_t seed)
{
  std::vector<Tensor> out;
  for (std::size_t s = 0; s < plan.streams.size(); ++s) out.push_back(randn({n, plan.stream_channels(s), h, w}, seed + s));
  return out;
}

}  // namespace

TEST_CASE("signals and plans")
{
  CHECK(signal_channels(SignalKind::Rgb) == 3);
  CHECK(signal_channels(SignalKind::RgbFlow) == 2);
  CHECK(signal_channels(SignalKind::LidarFlow) == 2);
  CHECK(signal_channels(SignalKind::LidarDepth) == 1);
  CHECK(signal_channels(SignalKind::RgbT1) == 3);
  CHECK(signal_channels(SignalKind::DepthT1) == 1);
  CHECK(parse_signal("RGB_Flow") == SignalKind::RgbFlow);
  CHECK_FALSE(parse_signal("thermal").has_value());

  const auto three = FusionPlan::parse("rgb + rgbflow + lidarflow");
  CHECK(three.streams.size() == 3);
  CHECK(FusionPlan::parse("three") == three);
  CHECK(FusionPlan::parse(three.to_string()) == three);
  CHECK(FusionPlan::parse("(RGB x rgbFlow) + (LiDAR x lidarFlow)").streams ==
        std::vector<std::vector<SignalKind>>{{SignalKind::Rgb, SignalKind::RgbFlow},
                                             {SignalKind::LidarDepth, SignalKind::LidarFlow}});
  CHECK(FusionPlan::parse("rgb_t x rgb_t1").stream_channels(0) == 6);

  for (const char* bad : {"", "rgb +", "rgb x rgb", "rgb + x flow", "thermal", "(rgb"}) {
    INFO(bad);
    CHECK(code_of([&] { FusionPlan::parse(bad); }) == ErrorCode::InvalidPlan);
  }
  CHECK(code_of([] { FusionPlan{}.validate(); }) == ErrorCode::InvalidPlan);

  CHECK(EncoderSpec::from_name("tiny") == EncoderSpec::tiny());
  CHECK(EncoderSpec::from_name(EncoderSpec::full().to_string()) == EncoderSpec::full());
  CHECK(code_of([] { EncoderSpec::from_name("huge"); }) == ErrorCode::InvalidConfig);
  EncoderSpec odd;
  odd.stage_channels = {18, 32, 64};
  CHECK(code_of([&] { odd.validate(); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("encoders per plan")
{
  const Model three(FusionPlan::parse("rgb + rgbflow + lidarflow"), EncoderSpec::tiny());
  CHECK(encoder_channels(three) == std::vector<int>{3, 2, 2});
  const Model early(FusionPlan::parse("rgb x rgbflow"), EncoderSpec::tiny());
  CHECK(encoder_channels(early) == std::vector<int>{5});
  const Model hybrid(FusionPlan::parse("rgb + (rgbflow x lidarflow)"), EncoderSpec::tiny());
  CHECK(encoder_channels(hybrid) == std::vector<int>{3, 4});
}

TEST_CASE("parameter ledger")
{
  for (const auto& spec : {EncoderSpec::tiny(), EncoderSpec::full()}) {
    for (const char* text : {"rgb", "rgb + rgbflow", "rgb + rgbflow + lidarflow", "rgb x rgbflow",
                             "(rgb x rgbflow) + (depth x lidarflow)"}) {
      const auto plan = FusionPlan::parse(text);
      const Model m(plan, spec);
      const auto ledger = m.ledger();
      REQUIRE(ledger.size() == plan.streams.size() + 1);
      std::size_t total = 0;
      for (std::size_t s = 0; s < plan.streams.size(); ++s) {
        CHECK(ledger[s].component == "encoder" + std::to_string(s));
        CHECK(ledger[s].parameters == encoder_params(plan.stream_channels(s), spec));
        total += ledger[s].parameters;
      }
      CHECK(ledger.back().component == "decoder");
      CHECK(ledger.back().parameters == decoder_params(static_cast<int>(plan.streams.size()), spec));
      total += ledger.back().parameters;
      CHECK(m.parameter_count() == total);
      std::size_t listed = 0;
      for (const auto& p : m.parameters()) listed += p.param.value().numel();
      CHECK(listed == total);
    }
  }
  // Two streams roughly double the encoder weights.
  const Model one(FusionPlan::parse("rgb"), EncoderSpec::tiny());
  const Model two(FusionPlan::parse("rgb + rgbflow"), EncoderSpec::tiny());
  const double enc1 = static_cast<double>(one.ledger()[0].parameters);
  const double enc2 = static_cast<double>(two.ledger()[0].parameters + two.ledger()[1].parameters);
  CHECK(enc2 / enc1 == doctest::Approx(2.0).epsilon(0.05));
  CHECK(one.parameter_count() == 5266);
  CHECK(Model(FusionPlan::parse("three"), EncoderSpec::tiny()).parameter_count() == 13338);
}

TEST_CASE("shuffle unit")
{
  std::mt19937_64 rng(4);
  SUBCASE("stride 1 keeps the shape")
  {
    auto u = make_shuffle_unit(16, 16, 1, 2, rng);
    const auto y = shuffle_unit(u, Var::constant(randn({2, 16, 5, 7}, 1)), Mode::Train);
    CHECK(y.shape() == Shape{2, 16, 5, 7});
  }
  SUBCASE("stride 2 halves the grid")
  {
    auto u = make_shuffle_unit(8, 16, 2, 2, rng);
    for (auto [h, w] : {std::pair{8, 10}, std::pair{7, 9}}) {
      const auto y = shuffle_unit(u, Var::constant(randn({2, 8, h, w}, 2)), Mode::Train);
      CHECK(y.shape() == Shape{2, 16, (h + 2 - 3) / 2 + 1, (w + 2 - 3) / 2 + 1});
    }
  }
  SUBCASE("bad shapes")
  {
    CHECK(code_of([&] { make_shuffle_unit(8, 16, 1, 2, rng); }) == ErrorCode::ShapeMismatch);
    CHECK(code_of([&] { make_shuffle_unit(8, 15, 2, 2, rng); }) == ErrorCode::ShapeMismatch);
    auto u = make_shuffle_unit(16, 16, 1, 2, rng);
    CHECK(code_of([&] { shuffle_unit(u, Var::constant(randn({1, 12, 4, 4}, 3)), Mode::Train); }) ==
          ErrorCode::ShapeMismatch);
  }
  SUBCASE("gradients through one unit")
  {
    for (int stride : {1, 2}) {
      auto u = make_shuffle_unit(16, stride == 1 ? 16 : 32, stride, 2, rng);
      // With beta = 0 and gamma = 1 a batch norm followed by ReLU and another
      // batch norm is scale invariant, which leaves gradients that are zero
      // up to rounding. Moderate random affine parameters avoid that point;
      // gamma stays away from zero so no channel is nearly flat.
      std::mt19937_64 r2(40);
      std::uniform_real_distribution<double> ug(0.5, 1.5), ub(-0.5, 0.5);
      for (auto* bn : {&u.bn1, &u.bn2, &u.bn3}) {
        for (auto& v : bn->gamma.mutable_value().data()) v = ug(r2);
        for (auto& v : bn->beta.mutable_value().data()) v = ub(r2);
      }
      auto x = Var::parameter(randn({2, 16, 8, 8}, 5));
      const auto r = randn(shuffle_unit(u, x, Mode::Train).shape(), 6);
      double worst = 0;
      for (const auto& p : {x, u.gconv1.w, u.dwconv.w, u.gconv2.w, u.bn1.gamma, u.bn1.beta, u.bn3.gamma, u.bn3.beta}) {
        std::vector<Var> in = {p};
        const auto res = nn::grad_check([&] { return nn::dot(shuffle_unit(u, x, Mode::Train), r); }, in, {1e-5, 64, 7});
        worst = std::max(worst, res.max_rel_error);
      }
      INFO("stride " << stride);
      CHECK(worst < 1e-4);
    }
  }
}

TEST_CASE("first layer adaptation")
{
  const auto w = randn({8, 3, 3, 3}, 9);
  CHECK(adapt_first_layer(w, 3, 1) == w);
  const auto two = adapt_first_layer(w, 2, 1);
  REQUIRE(two.shape() == Shape{8, 2, 3, 3});
  for (int o = 0; o < 8; ++o)
    for (int c = 0; c < 2; ++c)
      for (int i = 0; i < 9; ++i) CHECK(two.at(o, c, i / 3, i % 3) == w.at(o, c, i / 3, i % 3));
  const double sigma = 1e-3;
  const auto five = adapt_first_layer(w, 5, 1, sigma);
  REQUIRE(five.shape() == Shape{8, 5, 3, 3});
  const int src[5] = {0, 1, 2, 0, 1};
  double max_dev = 0, any_dev = 0;
  for (int o = 0; o < 8; ++o)
    for (int c = 0; c < 5; ++c)
      for (int i = 0; i < 9; ++i) {
        const double d = five.at(o, c, i / 3, i % 3) - w.at(o, src[c], i / 3, i % 3);
        if (c < 3) CHECK(d == 0.0);
        else {
          max_dev = std::max(max_dev, std::abs(d));
          any_dev += std::abs(d);
        }
      }
  CHECK(max_dev <= 5 * sigma);
  CHECK(any_dev > 0);
  CHECK(adapt_first_layer(w, 5, 1, sigma) == five);
}

TEST_CASE("bilinear kernel")
{
  const auto k = bilinear_kernel(2, 4);
  const double row[4] = {0.25, 0.75, 0.75, 0.25};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      CHECK(k.at(0, 0, i, j) == doctest::Approx(row[i] * row[j]));
      CHECK(k.at(1, 1, i, j) == k.at(0, 0, i, j));
      CHECK(k.at(0, 1, i, j) == 0.0);
    }
}

TEST_CASE("forward shapes")
{
  SUBCASE("32x32, every plan")
  {
    for (const char* text : {"rgb", "two", "three", "rgb x rgbflow", "rgb + (rgbflow x lidarflow)",
                             "(rgb x rgbflow) + (depth x lidarflow)", "rgb_t x rgb_t1"}) {
      Model m(FusionPlan::parse(text), EncoderSpec::tiny(), {3, false});
      const auto y = m.infer(random_inputs(m.plan(), 2, 32, 32, 1));
      CHECK(y.shape() == Shape{2, 2, 32, 32});
    }
  }
  SUBCASE("non-multiples of 32")
  {
    Model m(FusionPlan::parse("two"), EncoderSpec::tiny(), {3, false});
    for (auto [h, w] : {std::pair{40, 56}, std::pair{64, 72}}) {
      CHECK(m.infer(random_inputs(m.plan(), 1, h, w, 2)).shape() == Shape{1, 2, h, w});
    }
  }
  SUBCASE("256x1224")
  {
    Model m(FusionPlan::parse("rgb"), EncoderSpec::tiny(), {3, false});
    CHECK(m.infer(random_inputs(m.plan(), 1, 256, 1224, 3)).shape() == Shape{1, 2, 256, 1224});
  }
  SUBCASE("wrong inputs")
  {
    Model m(FusionPlan::parse("two"), EncoderSpec::tiny());
    auto in = random_inputs(m.plan(), 1, 32, 32, 4);
    in.pop_back();
    CHECK(code_of([&] { m.infer(in); }) == ErrorCode::ShapeMismatch);
    in.push_back(randn({1, 3, 32, 32}, 5));
    CHECK(code_of([&] { m.infer(in); }) == ErrorCode::ShapeMismatch);
  }
  SUBCASE("zero weights give constant logits")
  {
    Model m(FusionPlan::parse("three"), EncoderSpec::tiny());
    for (auto& p : m.parameters()) p.param.mutable_value().fill(0.0);
    const auto y = m.infer(random_inputs(m.plan(), 2, 32, 64, 6));
    for (double v : y.data()) CHECK(v == y[0]);
    for (const auto& mask : argmax_masks(y))
      for (auto v : mask.data) CHECK(v == 0);
  }
}

TEST_CASE("every parameter receives a gradient")
{
  Model m(FusionPlan::parse("three"), EncoderSpec::tiny(), {11, false});
  const auto inputs = constants(random_inputs(m.plan(), 2, 32, 32, 12));
  std::vector<std::uint8_t> labels(2 * 32 * 32);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = (i / 7) % 3 == 0;
  nn::weighted_cross_entropy(m.forward(inputs, Mode::Train), labels, {1.0, 2.0}).backward();
  double largest = 0;
  for (const auto& p : m.parameters())
    for (double g : p.param.grad().data()) largest = std::max(largest, std::abs(g));
  for (const auto& p : m.parameters()) {
    INFO(p.name);
    REQUIRE(p.param.has_grad());
    double mag = 0;
    for (double g : p.param.grad().data()) mag = std::max(mag, std::abs(g));
    if (p.name.ends_with("/bn2/beta")) {
      // The shift feeds a linear 1x1 conv and then a batch norm, whose mean
      // subtraction cancels it: the exact gradient is zero.
      CHECK(mag <= 1e-12 * largest);
    } else {
      CHECK(mag > 0);
    }
  }
}

TEST_CASE("argmax masks")
{
  Tensor l({1, 2, 1, 3});
  l.at(0, 0, 0, 0) = 1.0;
  l.at(0, 1, 0, 0) = 2.0;
  l.at(0, 0, 0, 1) = 0.5;
  l.at(0, 1, 0, 1) = 0.5;
  l.at(0, 0, 0, 2) = 3.0;
  l.at(0, 1, 0, 2) = -1.0;
  CHECK(argmax_masks(l)[0].data == std::vector<std::uint8_t>{1, 0, 0});

  const auto r = randn({3, 2, 9, 11}, 13);
  const auto base = argmax_masks(r);
  std::mt19937_64 rng(14);
  std::normal_distribution<double> d(0, 100);
  auto shifted = r;
  for (int n = 0; n < 3; ++n)
    for (int i = 0; i < 99; ++i) {
      // Dyadic shifts keep the comparison exact.
      const double c = std::ldexp(std::round(d(rng)), -2);
      shifted.at(n, 0, i / 11, i % 11) += c;
      shifted.at(n, 1, i / 11, i % 11) += c;
    }
  CHECK(argmax_masks(shifted) == base);
}

TEST_CASE("state round trip and pretrained encoders")
{
  Model m(FusionPlan::parse("rgb + (rgbflow x lidarflow)"), EncoderSpec::tiny(), {21, false});
  const auto in = random_inputs(m.plan(), 2, 32, 48, 22);
  // A train-mode pass moves the running statistics away from their defaults.
  m.forward(constants(in), Mode::Train);
  const auto before = m.infer(in);
  const auto ck = nn::Checkpoint::parse(m.state().serialize());
  Model restored = load_model(ck);
  CHECK(restored.plan() == m.plan());
  CHECK(restored.infer(in) == before);

  Model other(FusionPlan::parse("rgb"), EncoderSpec::tiny());
  CHECK(code_of([&] { other.load_state(ck); }) == ErrorCode::ShapeMismatch);

  const Model donor(FusionPlan::parse("rgb"), EncoderSpec::tiny(), {30, false});
  Model target(FusionPlan::parse("rgb + (rgbflow x lidarflow)"), EncoderSpec::tiny(), {31, false});
  target.load_pretrained_encoder(donor.state(), 5);
  const auto& dp = donor.parameters();
  const auto& tp = target.parameters();
  auto find = [](const std::vector<NamedParam>& ps, const std::string& name) -> const Tensor& {
    for (const auto& p : ps)
      if (p.name == name) return p.param.value();
    FAIL("missing " << name);
    throw 0;
  };
  CHECK(find(tp, "encoder0/conv1/weight") == find(dp, "encoder0/conv1/weight"));
  CHECK(find(tp, "encoder1/stage3/unit1/gconv1/weight") == find(dp, "encoder0/stage3/unit1/gconv1/weight"));
  CHECK(find(tp, "encoder1/conv1/weight").shape().c == 4);
  (void)tp;
}

TEST_CASE("inputs, flips and samples")
{
  synth::DatasetOptions opt;
  opt.height = 32;
  opt.width = 48;
  const auto samples = synth::make_dataset(opt, 2, 5);
  const auto plan = FusionPlan::parse("(rgb x rgbflow) + (depth x lidarflow)");
  const std::vector<std::size_t> idx = {1, 0};
  const auto in = make_inputs(plan, samples, idx);
  REQUIRE(in.size() == 2);
  CHECK(in[0].shape() == Shape{2, 5, 32, 48});
  const InputScaling sc;
  CHECK(in[0].at(0, 2, 3, 4) == (samples[1].rgb.at(3, 4, 2) - sc.rgb_mean) * sc.rgb_scale);
  CHECK(in[0].at(1, 3, 5, 6) == samples[0].rgb_flow.u.at(5, 6) * sc.flow_scale);
  CHECK(in[1].at(0, 0, 7, 8) == samples[1].depth.at(7, 8) * sc.depth_scale);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 48; ++x)
      if (!samples[0].lidar_flow.valid.at(y, x)) CHECK(in[1].at(1, 1, y, x) == 0.0);

  const auto f = flip_horizontal(samples[0]);
  CHECK(f.rgb.at(3, 0, 1) == samples[0].rgb.at(3, 47, 1));
  CHECK(f.rgb_flow.u.at(4, 2) == -samples[0].rgb_flow.u.at(4, 45));
  CHECK(f.rgb_flow.v.at(4, 2) == samples[0].rgb_flow.v.at(4, 45));
  CHECK(f.mask.at(9, 10) == samples[0].mask.at(9, 37));
  CHECK(flip_horizontal(f).rgb == samples[0].rgb);
}

TEST_CASE("training")
{
  synth::DatasetOptions opt;
  opt.height = 32;
  opt.width = 64;
  const auto samples = synth::make_dataset(opt, 4, 8);
  auto run = [&](double lr, std::uint64_t seed) {
    Model m(FusionPlan::parse("two"), EncoderSpec::tiny(), {seed});
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 4;  // whole set: every epoch sees the same batch
    cfg.adam.lr = lr;
    cfg.seed = seed;
    auto adam = make_optimizer(m, cfg.adam);
    return train(m, adam, samples, cfg).log;
  };
  SUBCASE("lr = 0 keeps the loss constant")
  {
    const auto log = run(0.0, 1);
    REQUIRE(log.size() == 4);
    // Only the order of the samples inside the batch changes between epochs,
    // which reorders floating point sums.
    for (const auto& e : log) CHECK(e.mean_loss == doctest::Approx(log[0].mean_loss).epsilon(1e-12));
  }
  SUBCASE("same seed, same log")
  {
    const auto a = run(1e-3, 2), b = run(1e-3, 2);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].mean_loss == b[i].mean_loss);
  }
  SUBCASE("training state round trip")
  {
    Model m(FusionPlan::parse("rgb"), EncoderSpec::tiny(), {3});
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 2;
    cfg.adam.lr = 1e-3;
    auto adam = make_optimizer(m, cfg.adam);
    train(m, adam, samples, cfg);
    const auto ck = nn::Checkpoint::parse(training_state(m, adam).serialize());
    Model m2(FusionPlan::parse("rgb"), EncoderSpec::tiny(), {99});
    auto adam2 = make_optimizer(m2, {});
    load_training_state(m2, adam2, ck);
    CHECK(adam2.step_count() == adam.step_count());
    CHECK(adam2.config().lr == 1e-3);
    CHECK(adam2.slots()[5].m == adam.slots()[5].m);
    CHECK(predict_mask(m2, samples[0]) == predict_mask(m, samples[0]));
  }
  SUBCASE("empty set")
  {
    Model m(FusionPlan::parse("rgb"), EncoderSpec::tiny());
    auto adam = make_optimizer(m, {});
    CHECK(code_of([&] { train(m, adam, {}, {}); }) == ErrorCode::EmptySplit);
  }
}
