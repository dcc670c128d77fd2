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
 * @file  models.hpp
 * @brief ShuffleNet encoders with an FCN8s head, assembled from a fusion plan.
 *
 * A plan is a list of streams. Signals inside a stream are stacked along the
 * channel axis before the first convolution (early fusion, written `x`);
 * each stream has its own encoder and the per-stream feature maps are stacked
 * before the decoder (mid fusion, written `+`).
 */

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fusemod/annotation.hpp"
#include "fusemod/autograd.hpp"
#include "fusemod/checkpoint.hpp"
#include "fusemod/evalbench.hpp"
#include "fusemod/optim.hpp"
#include "fusemod/raster.hpp"

namespace fusemod::models {

using nn::Tensor;
using nn::Var;

enum class SignalKind { Rgb, RgbFlow, LidarFlow, LidarDepth, RgbT, RgbT1, DepthT, DepthT1 };

int signal_channels(SignalKind kind);
/// Canonical lower-case token (`rgb`, `rgbflow`, `lidarflow`, `depth`, ...).
std::string_view signal_token(SignalKind kind);
/// Case-insensitive; accepts a few spellings per signal.
std::optional<SignalKind> parse_signal(std::string_view token);

struct FusionPlan {
  std::vector<std::vector<SignalKind>> streams;

  /// `+`-separated streams of `x`-separated signals, parentheses optional:
  /// `rgb + rgbflow + lidarflow`, `(rgb x rgbflow) + (depth x lidarflow)`.
  /// The aliases `baseline`, `two` and `three` name the RGB-only,
  /// RGB + rgbFlow and RGB + rgbFlow + lidarFlow plans. Throws InvalidPlan.
  static FusionPlan parse(std::string_view text);

  /// Throws InvalidPlan on an empty plan, an empty stream or a signal
  /// repeated within a stream.
  void validate() const;
  std::string to_string() const;
  int stream_channels(std::size_t stream) const;
  /// Distinct signals in order of first use.
  std::vector<SignalKind> signals() const;

  friend bool operator==(const FusionPlan&, const FusionPlan&) = default;
};

struct EncoderSpec {
  int conv1_channels = 8;
  int conv1_stride = 2;
  bool pool = true;
  std::array<int, 3> stage_units{3, 3, 2};
  std::array<int, 3> stage_channels{16, 32, 64};
  int groups = 2;

  static EncoderSpec tiny() { return {}; }
  static EncoderSpec full() { return {24, 2, true, {4, 8, 4}, {240, 480, 960}, 3}; }
  /// `tiny`, `full`, or the form written by `to_string()`; throws
  /// InvalidConfig otherwise.
  static EncoderSpec from_name(std::string_view name);
  /// `conv1=8 stride=2 pool=1 groups=2 units=3,3,2 channels=16,32,64`
  std::string to_string() const;

  friend bool operator==(const EncoderSpec&, const EncoderSpec&) = default;

  /// Throws InvalidConfig when a grouped convolution would not divide evenly.
  void validate() const;
};

/// Adapts pretrained first-layer weights (C_out, 3, k, k) to `n` input
/// channels: truncation for n < 3, cyclic copies of the first channels with a
/// N(0, sigma) perturbation on the appended slices for n > 3.
Tensor adapt_first_layer(const Tensor& pretrained, int n, std::uint64_t seed, double sigma = 1e-3);

/// Bilinear upsampling kernel (C, C, k, k), diagonal in the channel pair.
Tensor bilinear_kernel(int channels, int k);

enum class Mode { Train, Eval };

struct ConvLayer {
  Var w;
  Var b;  // undefined when the conv feeds a batch norm
  nn::ConvGeometry g;
};

struct BatchNormLayer {
  Var gamma;
  Var beta;
  nn::BatchNormState state;
};

/// 1x1 group conv, BN, ReLU, shuffle, 3x3 depthwise conv (stride), BN, 1x1
/// group conv, BN. Stride 1 adds the input back; stride 2 concatenates a
/// 3x3/2 average-pooled copy of it. Both end in a ReLU.
struct ShuffleUnit {
  int stride = 1;
  int groups = 1;
  ConvLayer gconv1;
  BatchNormLayer bn1;
  ConvLayer dwconv;
  BatchNormLayer bn2;
  ConvLayer gconv2;
  BatchNormLayer bn3;
};

/// He-normal conv weights drawn from `rng`.
ConvLayer make_conv_layer(int cin, int cout, int k, nn::ConvGeometry g, bool bias, std::mt19937_64& rng);
BatchNormLayer make_batch_norm_layer(int channels);
/// Bottleneck width out / 4. Stride 1 needs in == out; stride 2 builds an
/// out - in channel branch.
ShuffleUnit make_shuffle_unit(int in, int out, int stride, int groups, std::mt19937_64& rng);
Var shuffle_unit(ShuffleUnit& unit, const Var& x, Mode mode);

struct ModelOptions {
  std::uint64_t seed = 0;
  /// Score convolutions start at zero (standard for FCN heads). Turning this
  /// off draws them like every other convolution.
  bool zero_score_init = true;
};

struct NamedParam {
  std::string name;
  Var param;
  bool decay = false;  // conv and deconv weights
};

struct LedgerEntry {
  std::string component;  // "encoder0", ..., "decoder"
  std::size_t parameters = 0;
};

class Model {
 public:
  Model(FusionPlan plan, EncoderSpec spec, ModelOptions options = {});
  ~Model();
  Model(Model&&) noexcept;
  Model& operator=(Model&&) noexcept;

  /// One input per stream, N x C_s x H x W with a common N, H, W.
  /// Returns N x 2 x H x W logits.
  Var forward(std::span<const Var> stream_inputs, Mode mode);
  /// Eval-mode forward without recording a graph.
  Tensor infer(std::span<const Tensor> stream_inputs);

  const FusionPlan& plan() const;
  const EncoderSpec& spec() const;
  std::vector<NamedParam>& parameters();
  const std::vector<NamedParam>& parameters() const;
  std::size_t parameter_count() const;
  std::vector<LedgerEntry> ledger() const;

  /// Parameters, batch-norm running statistics and the plan/spec as meta.
  nn::Checkpoint state() const;
  /// Restores tensors by name; throws ShapeMismatch on a missing or
  /// mismatched entry.
  void load_state(const nn::Checkpoint& ck);
  /// Copies the first encoder of a checkpoint into every encoder, adapting
  /// the first convolution to each stream's channel count. Decoder weights
  /// are left untouched.
  void load_pretrained_encoder(const nn::Checkpoint& ck, std::uint64_t seed);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Rebuilds a model from the plan and encoder recorded in a checkpoint and
/// restores its state.
Model load_model(const nn::Checkpoint& ck);

/// Per-pixel argmax of N x 2 x H x W logits, ties to Static.
std::vector<MaskImage> argmax_masks(const Tensor& logits);

// Data

struct FrameSample {
  RgbImage rgb;
  FlowMap rgb_flow;
  FlowMap lidar_flow;
  DepthMap depth;
  RgbImage rgb_next;
  DepthMap depth_next;
  MaskImage mask;

  int height() const { return mask.empty() ? rgb.height : mask.height; }
  int width() const { return mask.empty() ? rgb.width : mask.width; }
};

/// Scales applied when signals become network inputs.
struct InputScaling {
  double rgb_mean = 0.5;
  double rgb_scale = 4.0;    // (v - mean) * scale
  double flow_scale = 0.25;  // px * scale; invalid pixels are 0
  double depth_scale = 0.05; // m * scale; missing depth is 0
};

/// Writes the channels of `kind` for `sample` into plane (n, c0...) of `out`.
void fill_signal(Tensor& out, int n, int c0, SignalKind kind, const FrameSample& sample,
                 const InputScaling& scaling = {});

/// One tensor per stream for the samples at `indices`.
std::vector<Tensor> make_inputs(const FusionPlan& plan, std::span<const FrameSample> samples,
                                std::span<const std::size_t> indices, const InputScaling& scaling = {});

/// Loads `signals` (plus the mask) of one manifest record; paths are
/// relative to `root`. With `crop` set, every raster is cut to that
/// height x width (bottom rows, centered columns). Throws IncompleteDrive
/// when a required signal is "-" in the manifest.
FrameSample load_sample(const annotation::FrameRecord& record, const std::filesystem::path& root,
                        std::span<const SignalKind> signals, bool with_mask = true,
                        std::optional<std::array<int, 2>> crop = std::nullopt);

/// Mirrors every raster left to right; horizontal flow components change sign.
FrameSample flip_horizontal(const FrameSample& sample);

// Training

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0;
  double moving_iou = 0;  // train-mode predictions over the epoch; NaN if undefined
  double miou = 0;
};

struct TrainConfig {
  int epochs = 200;
  int batch_size = 6;
  nn::AdamConfig adam;
  std::uint64_t seed = 0;
  double class_weight_constant = eval::kClassWeightConstant;
  /// Save `checkpoint_dir/epoch_NNNN.fmck` every this many epochs (0: never).
  int checkpoint_every = 0;
  std::filesystem::path checkpoint_dir;
  bool horizontal_flip = false;
  InputScaling scaling;
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochLog> log;
  std::array<double, 2> class_weights{};
};

/// Builds an Adam optimizer over the model's parameters.
nn::Adam make_optimizer(Model& model, const nn::AdamConfig& config);

/// Trains on all `samples` with a seeded per-epoch shuffle.
TrainResult train(Model& model, nn::Adam& optimizer, std::span<const FrameSample> samples,
                  const TrainConfig& config);

/// Model plus optimizer state in one checkpoint.
nn::Checkpoint training_state(const Model& model, const nn::Adam& optimizer);
void load_training_state(Model& model, nn::Adam& optimizer, const nn::Checkpoint& ck);

MaskImage predict_mask(Model& model, const FrameSample& sample, const InputScaling& scaling = {});

/// Forward-only timing on one random sample at `height` x `width`.
eval::BenchReport bench_model(Model& model, std::string label, int height, int width, int warmup = 10,
                              int iterations = 100);

}  // namespace fusemod::models
