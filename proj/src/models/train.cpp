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

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "fusemod/error.hpp"
#include "fusemod/kitti_ingest.hpp"
#include "fusemod/models.hpp"

namespace fusemod::models {

using nn::Shape;

namespace {

template <typename T>
void check_size(const Raster<T>& r, const Tensor& out, SignalKind kind)
{
  if (r.height != out.shape().h || r.width != out.shape().w) {
    throw Error(ErrorCode::DimensionMismatch,
                std::string(signal_token(kind)) + " is " + std::to_string(r.height) + "x" + std::to_string(r.width) +
                    ", batch is " + std::to_string(out.shape().h) + "x" + std::to_string(out.shape().w));
  }
}

void fill_rgb(Tensor& out, int n, int c0, const RgbImage& img, SignalKind kind, const InputScaling& sc)
{
  check_size(img, out, kind);
  if (img.channels != 3) throw Error(ErrorCode::DimensionMismatch, "rgb image needs 3 channels");
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) out.at(n, c0 + c, y, x) = (img.at(y, x, c) - sc.rgb_mean) * sc.rgb_scale;
}

void fill_flow(Tensor& out, int n, int c0, const FlowMap& f, SignalKind kind, const InputScaling& sc)
{
  check_size(f.u, out, kind);
  for (int y = 0; y < f.u.height; ++y)
    for (int x = 0; x < f.u.width; ++x) {
      const bool ok = f.valid.at(y, x) != 0;
      out.at(n, c0, y, x) = ok ? f.u.at(y, x) * sc.flow_scale : 0.0;
      out.at(n, c0 + 1, y, x) = ok ? f.v.at(y, x) * sc.flow_scale : 0.0;
    }
}

void fill_depth(Tensor& out, int n, int c0, const DepthMap& d, SignalKind kind, const InputScaling& sc)
{
  check_size(d, out, kind);
  for (int y = 0; y < d.height; ++y)
    for (int x = 0; x < d.width; ++x) out.at(n, c0, y, x) = d.at(y, x) * sc.depth_scale;
}

template <typename T>
Raster<T> flip(const Raster<T>& r)
{
  Raster<T> out(r.height, r.width, r.channels);
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x)
      for (int c = 0; c < r.channels; ++c) out.at(y, r.width - 1 - x, c) = r.at(y, x, c);
  return out;
}

FlowMap flip(const FlowMap& f)
{
  FlowMap out;
  out.u = flip(f.u);
  for (auto& v : out.u.data) v = -v;
  out.v = flip(f.v);
  out.valid = flip(f.valid);
  return out;
}

}  // namespace

void fill_signal(Tensor& out, int n, int c0, SignalKind kind, const FrameSample& s, const InputScaling& scaling)
{
  switch (kind) {
    case SignalKind::Rgb:
    case SignalKind::RgbT: fill_rgb(out, n, c0, s.rgb, kind, scaling); break;
    case SignalKind::RgbT1: fill_rgb(out, n, c0, s.rgb_next, kind, scaling); break;
    case SignalKind::RgbFlow: fill_flow(out, n, c0, s.rgb_flow, kind, scaling); break;
    case SignalKind::LidarFlow: fill_flow(out, n, c0, s.lidar_flow, kind, scaling); break;
    case SignalKind::LidarDepth:
    case SignalKind::DepthT: fill_depth(out, n, c0, s.depth, kind, scaling); break;
    case SignalKind::DepthT1: fill_depth(out, n, c0, s.depth_next, kind, scaling); break;
  }
}

std::vector<Tensor> make_inputs(const FusionPlan& plan, std::span<const FrameSample> samples,
                                std::span<const std::size_t> indices, const InputScaling& scaling)
{
  if (indices.empty()) throw Error(ErrorCode::ShapeMismatch, "empty batch");
  const FrameSample& first = samples[indices[0]];
  const int h = first.height();
  const int w = first.width();
  std::vector<Tensor> out;
  for (std::size_t s = 0; s < plan.streams.size(); ++s) {
    Tensor t(Shape{static_cast<int>(indices.size()), plan.stream_channels(s), h, w});
    for (std::size_t n = 0; n < indices.size(); ++n) {
      int c0 = 0;
      for (auto kind : plan.streams[s]) {
        fill_signal(t, static_cast<int>(n), c0, kind, samples[indices[n]], scaling);
        c0 += signal_channels(kind);
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

FrameSample load_sample(const annotation::FrameRecord& r, const std::filesystem::path& root,
                        std::span<const SignalKind> signals, bool with_mask, std::optional<std::array<int, 2>> crop)
{
  auto path = [&](const std::string& rel, SignalKind kind) {
    if (rel.empty() || rel == "-") {
      throw Error(ErrorCode::IncompleteDrive,
                  "manifest has no " + std::string(signal_token(kind)) + " for " + r.rgb);
    }
    return root / rel;
  };
  FrameSample s;
  for (auto kind : signals) {
    switch (kind) {
      case SignalKind::Rgb:
      case SignalKind::RgbT:
        if (s.rgb.empty()) s.rgb = kitti::read_rgb_png(kitti::read_file(path(r.rgb, kind)));
        break;
      case SignalKind::RgbT1: s.rgb_next = kitti::read_rgb_png(kitti::read_file(path(r.rgb_next, kind))); break;
      case SignalKind::RgbFlow: s.rgb_flow = kitti::read_flow_file(path(r.rgb_flow, kind)); break;
      case SignalKind::LidarFlow: s.lidar_flow = kitti::read_flow_file(path(r.lidar_flow, kind)); break;
      case SignalKind::LidarDepth:
      case SignalKind::DepthT:
        if (s.depth.empty()) s.depth = kitti::read_depth_png(kitti::read_file(path(r.depth, kind)));
        break;
      case SignalKind::DepthT1:
        s.depth_next = kitti::read_depth_png(kitti::read_file(path(r.depth_next, kind)));
        break;
    }
  }
  if (with_mask) {
    if (r.mask.empty() || r.mask == "-") throw Error(ErrorCode::IncompleteDrive, "manifest has no mask for " + r.rgb);
    s.mask = kitti::read_mask_png(kitti::read_file(root / r.mask));
    for (auto& v : s.mask.data) v = v != 0;
  }
  if (crop) {
    const auto [h, w] = *crop;
    auto cut = [&](auto& raster) {
      if (!raster.empty()) raster = kitti::crop_bottom_center(raster, h, w);
    };
    cut(s.rgb);
    cut(s.rgb_next);
    cut(s.depth);
    cut(s.depth_next);
    cut(s.mask);
    if (!s.rgb_flow.u.empty()) s.rgb_flow = kitti::crop_bottom_center(s.rgb_flow, h, w);
    if (!s.lidar_flow.u.empty()) s.lidar_flow = kitti::crop_bottom_center(s.lidar_flow, h, w);
  }
  return s;
}

FrameSample flip_horizontal(const FrameSample& s)
{
  FrameSample out;
  auto f = [](const auto& r) { return r.empty() ? std::decay_t<decltype(r)>{} : flip(r); };
  out.rgb = f(s.rgb);
  out.rgb_next = f(s.rgb_next);
  out.depth = f(s.depth);
  out.depth_next = f(s.depth_next);
  out.mask = f(s.mask);
  if (!s.rgb_flow.u.empty()) out.rgb_flow = flip(s.rgb_flow);
  if (!s.lidar_flow.u.empty()) out.lidar_flow = flip(s.lidar_flow);
  return out;
}

// Training

nn::Adam make_optimizer(Model& model, const nn::AdamConfig& config)
{
  nn::Adam adam(config);
  for (auto& p : model.parameters()) adam.add_param(p.name, p.param, p.decay);
  return adam;
}

TrainResult train(Model& model, nn::Adam& optimizer, std::span<const FrameSample> samples, const TrainConfig& config)
{
  if (samples.empty()) throw Error(ErrorCode::EmptySplit, "no training frames");
  if (config.batch_size < 1 || config.epochs < 0) throw Error(ErrorCode::InvalidConfig, "batch size and epochs");
  optimizer.config() = config.adam;

  std::vector<MaskImage> masks;
  for (const auto& s : samples) masks.push_back(s.mask);
  TrainResult result;
  result.class_weights = eval::class_weights(masks, config.class_weight_constant);

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t n = samples.size();
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng() % (i + 1)]);
    double loss_sum = 0;
    eval::ConfusionMatrix cm;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t count = std::min(bs, n - start);
      std::vector<FrameSample> flipped;
      std::span<const FrameSample> pool = samples;
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(start + count));
      if (config.horizontal_flip) {
        for (auto i : idx) flipped.push_back((rng() & 1) ? flip_horizontal(samples[i]) : samples[i]);
        pool = flipped;
        std::iota(idx.begin(), idx.end(), std::size_t{0});
      }
      const auto inputs = make_inputs(model.plan(), pool, idx, config.scaling);
      std::vector<Var> vars;
      for (const auto& t : inputs) vars.push_back(Var::constant(t));
      std::vector<std::uint8_t> labels;
      for (auto i : idx) labels.insert(labels.end(), pool[i].mask.data.begin(), pool[i].mask.data.end());

      const Var logits = model.forward(vars, Mode::Train);
      const Var loss = nn::weighted_cross_entropy(logits, labels, result.class_weights);
      optimizer.zero_grad();
      loss.backward();
      optimizer.step();

      loss_sum += loss.value()[0] * static_cast<double>(count);
      const auto pred = argmax_masks(logits.value());
      for (std::size_t k = 0; k < count; ++k) cm.update(pred[k], pool[idx[k]].mask);
    }
    EpochLog log;
    log.epoch = epoch;
    log.mean_loss = loss_sum / static_cast<double>(n);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const bool moving_defined = cm.tp(1) + cm.fp(1) + cm.fn(1) > 0;
    const bool static_defined = cm.tp(0) + cm.fp(0) + cm.fn(0) > 0;
    log.moving_iou = moving_defined ? eval::iou(cm, eval::kMoving) : nan;
    log.miou = moving_defined && static_defined ? eval::miou(cm) : nan;
    result.log.push_back(log);
    if (config.on_epoch) config.on_epoch(log);
    if (config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04d.fmck", epoch);
      training_state(model, optimizer).save(config.checkpoint_dir / name);
    }
  }
  return result;
}

nn::Checkpoint training_state(const Model& model, const nn::Adam& optimizer)
{
  nn::Checkpoint ck = model.state();
  for (const auto& slot : optimizer.slots()) {
    ck.tensors.emplace_back("adam/" + slot.name + "/m", slot.m);
    ck.tensors.emplace_back("adam/" + slot.name + "/v", slot.v);
  }
  const auto& c = optimizer.config();
  ck.scalars.emplace_back("adam/step", static_cast<double>(optimizer.step_count()));
  ck.scalars.emplace_back("adam/lr", c.lr);
  ck.scalars.emplace_back("adam/beta1", c.beta1);
  ck.scalars.emplace_back("adam/beta2", c.beta2);
  ck.scalars.emplace_back("adam/eps", c.eps);
  ck.scalars.emplace_back("adam/l2_decay", c.l2_decay);
  return ck;
}

void load_training_state(Model& model, nn::Adam& optimizer, const nn::Checkpoint& ck)
{
  model.load_state(ck);
  for (auto& slot : optimizer.slots()) {
    const Tensor* m = ck.find_tensor("adam/" + slot.name + "/m");
    const Tensor* v = ck.find_tensor("adam/" + slot.name + "/v");
    if (!m || !v) throw Error(ErrorCode::ShapeMismatch, "checkpoint lacks optimizer state for " + slot.name);
    nn::expect_shape(m->shape(), slot.m.shape(), slot.name.c_str());
    nn::expect_shape(v->shape(), slot.v.shape(), slot.name.c_str());
    slot.m = *m;
    slot.v = *v;
  }
  auto scalar = [&](const char* name, double fallback) {
    const double* p = ck.find_scalar(name);
    return p ? *p : fallback;
  };
  auto& c = optimizer.config();
  optimizer.set_step_count(static_cast<std::int64_t>(scalar("adam/step", 0)));
  c.lr = scalar("adam/lr", c.lr);
  c.beta1 = scalar("adam/beta1", c.beta1);
  c.beta2 = scalar("adam/beta2", c.beta2);
  c.eps = scalar("adam/eps", c.eps);
  c.l2_decay = scalar("adam/l2_decay", c.l2_decay);
}

MaskImage predict_mask(Model& model, const FrameSample& sample, const InputScaling& scaling)
{
  const std::size_t idx[] = {0};
  const auto inputs = make_inputs(model.plan(), std::span<const FrameSample>(&sample, 1), idx, scaling);
  return argmax_masks(model.infer(inputs)).front();
}

eval::BenchReport bench_model(Model& model, std::string label, int height, int width, int warmup, int iterations)
{
  std::mt19937_64 rng(0);
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<Tensor> inputs;
  for (std::size_t s = 0; s < model.plan().streams.size(); ++s) {
    Tensor t(Shape{1, model.plan().stream_channels(s), height, width});
    for (auto& v : t.data()) v = d(rng);
    inputs.push_back(std::move(t));
  }
  return eval::bench_fps([&] { (void)model.infer(inputs); }, std::move(label), height, width, warmup, iterations);
}

}  // namespace fusemod::models
