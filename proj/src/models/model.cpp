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
#include <random>

#include "fusemod/error.hpp"
#include "fusemod/models.hpp"

namespace fusemod::models {

using nn::BatchNormMode;
using nn::BatchNormState;
using nn::ConvGeometry;
using nn::Shape;

namespace {

using Conv = ConvLayer;
using BN = BatchNormLayer;
using Unit = ShuffleUnit;

struct Encoder {
  Conv conv1;
  BN bn1;
  std::array<std::vector<Unit>, 3> stages;
};

Var run_bn(BN& bn, const Var& x, Mode mode)
{
  return nn::batch_norm(x, bn.gamma, bn.beta, bn.state, mode == Mode::Train ? BatchNormMode::Train : BatchNormMode::Eval);
}

Var run_conv(const Conv& c, const Var& x) { return nn::conv2d(x, c.w, c.b, c.g); }

}  // namespace

ConvLayer make_conv_layer(int cin, int cout, int k, ConvGeometry g, bool bias, std::mt19937_64& rng)
{
  if (cin % g.groups != 0 || cout % g.groups != 0) {
    throw Error(ErrorCode::ShapeMismatch, "channels " + std::to_string(cin) + "->" + std::to_string(cout) +
                                              " not divisible by groups " + std::to_string(g.groups));
  }
  const int fan_in = cin / g.groups * k * k;
  std::normal_distribution<double> d(0.0, std::sqrt(2.0 / fan_in));
  Tensor w(Shape{cout, cin / g.groups, k, k});
  for (auto& v : w.data()) v = d(rng);
  ConvLayer c;
  c.g = g;
  c.w = Var::parameter(std::move(w));
  if (bias) c.b = Var::parameter(Tensor(Shape{1, cout, 1, 1}));
  return c;
}

BatchNormLayer make_batch_norm_layer(int c)
{
  return {Var::parameter(Tensor(Shape{1, c, 1, 1}, 1.0)), Var::parameter(Tensor(Shape{1, c, 1, 1})), BatchNormState(c)};
}

ShuffleUnit make_shuffle_unit(int in, int out, int stride, int groups, std::mt19937_64& rng)
{
  if ((stride != 1 && stride != 2) || (stride == 1 && in != out) || (stride == 2 && out <= in)) {
    throw Error(ErrorCode::ShapeMismatch, "shuffle unit " + std::to_string(in) + "->" + std::to_string(out) +
                                              " stride " + std::to_string(stride));
  }
  ShuffleUnit u;
  u.stride = stride;
  u.groups = groups;
  const int mid = out / 4;
  const int branch = stride == 1 ? out : out - in;
  u.gconv1 = make_conv_layer(in, mid, 1, {1, 0, groups}, false, rng);
  u.bn1 = make_batch_norm_layer(mid);
  u.dwconv = make_conv_layer(mid, mid, 3, {stride, 1, mid}, false, rng);
  u.bn2 = make_batch_norm_layer(mid);
  u.gconv2 = make_conv_layer(mid, branch, 1, {1, 0, groups}, false, rng);
  u.bn3 = make_batch_norm_layer(branch);
  return u;
}

Var shuffle_unit(ShuffleUnit& u, const Var& x, Mode mode)
{
  Var y = nn::relu(run_bn(u.bn1, run_conv(u.gconv1, x), mode));
  y = nn::channel_shuffle(y, u.groups);
  y = run_bn(u.bn2, run_conv(u.dwconv, y), mode);
  y = run_bn(u.bn3, run_conv(u.gconv2, y), mode);
  if (u.stride == 1) return nn::relu(nn::add(x, y));
  const Var parts[] = {nn::avg_pool2d(x, 3, 2, 1), y};
  return nn::relu(nn::concat_channels(parts));
}

Tensor bilinear_kernel(int channels, int k)
{
  Tensor w(Shape{channels, channels, k, k});
  const int factor = (k + 1) / 2;
  const double center = (k % 2 == 1) ? factor - 1 : factor - 0.5;
  for (int c = 0; c < channels; ++c)
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j)
        w.at(c, c, i, j) = (1.0 - std::abs(i - center) / factor) * (1.0 - std::abs(j - center) / factor);
  return w;
}

Tensor adapt_first_layer(const Tensor& pretrained, int n, std::uint64_t seed, double sigma)
{
  const Shape s = pretrained.shape();
  if (n < 1) throw Error(ErrorCode::InvalidConfig, "target channel count must be positive");
  if (n == s.c) return pretrained;
  Tensor out(Shape{s.n, n, s.h, s.w});
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  for (int o = 0; o < s.n; ++o) {
    for (int c = 0; c < n; ++c) {
      const int src = c < s.c ? c : (c - s.c) % s.c;
      for (int i = 0; i < s.h; ++i)
        for (int j = 0; j < s.w; ++j) {
          double v = pretrained.at(o, src, i, j);
          if (c >= s.c) v += noise(rng);
          out.at(o, c, i, j) = v;
        }
    }
  }
  return out;
}

struct Model::Impl {
  FusionPlan plan;
  EncoderSpec spec;
  ModelOptions options;
  std::vector<Encoder> encoders;
  Conv score32, score16, score8;
  Var up2_a, up2_b, up8;

  std::vector<NamedParam> params;
  std::vector<std::pair<std::string, BN*>> bns;
  std::vector<LedgerEntry> ledger;

  std::mt19937_64 rng;

  Conv make_conv(int cin, int cout, int k, ConvGeometry g, bool bias)
  {
    return make_conv_layer(cin, cout, k, g, bias, rng);
  }

  static BN make_bn(int c) { return make_batch_norm_layer(c); }

  Unit make_unit(int in, int out, int stride, int g) { return make_shuffle_unit(in, out, stride, g, rng); }

  Encoder make_encoder(int in_channels)
  {
    Encoder e;
    e.conv1 = make_conv(in_channels, spec.conv1_channels, 3, {spec.conv1_stride, 1, 1}, false);
    e.bn1 = make_bn(spec.conv1_channels);
    int in = spec.conv1_channels;
    for (int s = 0; s < 3; ++s) {
      for (int u = 0; u < spec.stage_units[s]; ++u) {
        e.stages[s].push_back(make_unit(in, spec.stage_channels[s], u == 0 ? 2 : 1, spec.groups));
        in = spec.stage_channels[s];
      }
    }
    return e;
  }

  Conv make_score(int cin)
  {
    Conv c = make_conv(cin, 2, 1, {1, 0, 1}, true);
    if (options.zero_score_init) c.w.mutable_value().fill(0.0);
    return c;
  }

  void add_param(const std::string& name, const Var& v, bool decay) { params.push_back({name, v, decay}); }

  void add_conv(const std::string& name, const Conv& c)
  {
    add_param(name + "/weight", c.w, true);
    if (c.b.defined()) add_param(name + "/bias", c.b, false);
  }

  void add_bn(const std::string& name, BN& bn)
  {
    add_param(name + "/gamma", bn.gamma, false);
    add_param(name + "/beta", bn.beta, false);
    bns.emplace_back(name, &bn);
  }

  void build()
  {
    plan.validate();
    spec.validate();
    rng.seed(options.seed);
    for (std::size_t i = 0; i < plan.streams.size(); ++i) encoders.push_back(make_encoder(plan.stream_channels(i)));
    const int k = static_cast<int>(plan.streams.size());
    score32 = make_score(k * spec.stage_channels[2]);
    score16 = make_score(k * spec.stage_channels[1]);
    score8 = make_score(k * spec.stage_channels[0]);
    up2_a = Var::parameter(bilinear_kernel(2, 4));
    up2_b = Var::parameter(bilinear_kernel(2, 4));
    up8 = Var::parameter(bilinear_kernel(2, 16));

    std::size_t counted = 0;
    auto close_ledger = [&](std::string component) {
      std::size_t n = 0;
      for (std::size_t i = counted; i < params.size(); ++i) n += params[i].param.value().numel();
      counted = params.size();
      ledger.push_back({std::move(component), n});
    };
    for (std::size_t i = 0; i < encoders.size(); ++i) {
      Encoder& e = encoders[i];
      const std::string p = "encoder" + std::to_string(i);
      add_conv(p + "/conv1", e.conv1);
      add_bn(p + "/bn1", e.bn1);
      for (int s = 0; s < 3; ++s) {
        for (std::size_t u = 0; u < e.stages[s].size(); ++u) {
          Unit& unit = e.stages[s][u];
          const std::string q = p + "/stage" + std::to_string(s + 2) + "/unit" + std::to_string(u);
          add_conv(q + "/gconv1", unit.gconv1);
          add_bn(q + "/bn1", unit.bn1);
          add_conv(q + "/dwconv", unit.dwconv);
          add_bn(q + "/bn2", unit.bn2);
          add_conv(q + "/gconv2", unit.gconv2);
          add_bn(q + "/bn3", unit.bn3);
        }
      }
      close_ledger(p);
    }
    add_conv("decoder/score32", score32);
    add_conv("decoder/score16", score16);
    add_conv("decoder/score8", score8);
    add_param("decoder/up2_a/weight", up2_a, true);
    add_param("decoder/up2_b/weight", up2_b, true);
    add_param("decoder/up8/weight", up8, true);
    close_ledger("decoder");
  }

  Var forward(std::span<const Var> inputs, Mode mode)
  {
    if (inputs.size() != encoders.size()) {
      throw Error(ErrorCode::ShapeMismatch, "expected " + std::to_string(encoders.size()) + " stream inputs, got " +
                                                std::to_string(inputs.size()));
    }
    const Shape s0 = inputs[0].shape();
    std::vector<Var> f2, f3, f4;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const Shape s = inputs[i].shape();
      if (s.n != s0.n || s.h != s0.h || s.w != s0.w || s.c != plan.stream_channels(i)) {
        throw Error(ErrorCode::ShapeMismatch, "stream " + std::to_string(i) + " input " + s.str());
      }
      Encoder& e = encoders[i];
      Var x = nn::relu(run_bn(e.bn1, run_conv(e.conv1, inputs[i]), mode));
      if (spec.pool) x = nn::max_pool2d(x, 3, 2, 1);
      for (int st = 0; st < 3; ++st) {
        for (auto& u : e.stages[st]) x = shuffle_unit(u, x, mode);
        (st == 0 ? f2 : st == 1 ? f3 : f4).push_back(x);
      }
    }
    auto fuse = [](std::vector<Var>& fs) { return fs.size() == 1 ? fs[0] : nn::concat_channels(fs); };
    const Var s8 = run_conv(score8, fuse(f2));
    const Var s16 = run_conv(score16, fuse(f3));
    const Var s32 = run_conv(score32, fuse(f4));

    Var x = nn::conv_transpose2d(s32, up2_a, 2, 1);
    x = nn::add(nn::crop(x, s16.shape().h, s16.shape().w), s16);
    x = nn::conv_transpose2d(x, up2_b, 2, 1);
    x = nn::add(nn::crop(x, s8.shape().h, s8.shape().w), s8);
    x = nn::conv_transpose2d(x, up8, 8, 4);
    return nn::crop(x, s0.h, s0.w);
  }
};

Model::Model(FusionPlan plan, EncoderSpec spec, ModelOptions options) : impl_(std::make_unique<Impl>())
{
  impl_->plan = std::move(plan);
  impl_->spec = spec;
  impl_->options = options;
  impl_->build();
}

Model::~Model() = default;
Model::Model(Model&&) noexcept = default;
Model& Model::operator=(Model&&) noexcept = default;

Var Model::forward(std::span<const Var> stream_inputs, Mode mode) { return impl_->forward(stream_inputs, mode); }

Tensor Model::infer(std::span<const Tensor> stream_inputs)
{
  nn::NoGradGuard guard;
  std::vector<Var> vars;
  for (const auto& t : stream_inputs) vars.push_back(Var::constant(t));
  return impl_->forward(vars, Mode::Eval).value();
}

const FusionPlan& Model::plan() const { return impl_->plan; }
const EncoderSpec& Model::spec() const { return impl_->spec; }
std::vector<NamedParam>& Model::parameters() { return impl_->params; }
const std::vector<NamedParam>& Model::parameters() const { return impl_->params; }

std::size_t Model::parameter_count() const
{
  std::size_t n = 0;
  for (const auto& e : impl_->ledger) n += e.parameters;
  return n;
}

std::vector<LedgerEntry> Model::ledger() const { return impl_->ledger; }

nn::Checkpoint Model::state() const
{
  nn::Checkpoint ck;
  ck.meta.emplace_back("plan", impl_->plan.to_string());
  ck.meta.emplace_back("encoder", impl_->spec.to_string());
  for (const auto& p : impl_->params) ck.tensors.emplace_back(p.name, p.param.value());
  for (const auto& [name, bn] : impl_->bns) {
    const int c = static_cast<int>(bn->state.running_mean.size());
    ck.tensors.emplace_back(name + "/running_mean", Tensor(Shape{1, c, 1, 1}, bn->state.running_mean));
    ck.tensors.emplace_back(name + "/running_var", Tensor(Shape{1, c, 1, 1}, bn->state.running_var));
  }
  return ck;
}

namespace {

const Tensor& require(const nn::Checkpoint& ck, const std::string& name, const Shape& shape)
{
  const Tensor* t = ck.find_tensor(name);
  if (!t) throw Error(ErrorCode::ShapeMismatch, "checkpoint lacks " + name);
  nn::expect_shape(t->shape(), shape, name.c_str());
  return *t;
}

void load_bn_stats(BN& bn, const nn::Checkpoint& ck, const std::string& name)
{
  const int c = static_cast<int>(bn.state.running_mean.size());
  const Shape s{1, c, 1, 1};
  const auto m = require(ck, name + "/running_mean", s).data();
  const auto v = require(ck, name + "/running_var", s).data();
  bn.state.running_mean.assign(m.begin(), m.end());
  bn.state.running_var.assign(v.begin(), v.end());
}

}  // namespace

void Model::load_state(const nn::Checkpoint& ck)
{
  for (auto& p : impl_->params) p.param.mutable_value() = require(ck, p.name, p.param.shape());
  for (auto& [name, bn] : impl_->bns) load_bn_stats(*bn, ck, name);
}

void Model::load_pretrained_encoder(const nn::Checkpoint& ck, std::uint64_t seed)
{
  for (std::size_t e = 0; e < impl_->encoders.size(); ++e) {
    const std::string prefix = "encoder" + std::to_string(e) + "/";
    auto source_name = [&](const std::string& name) { return "encoder0/" + name.substr(prefix.size()); };
    for (auto& p : impl_->params) {
      if (p.name.rfind(prefix, 0) != 0) continue;
      const std::string src = source_name(p.name);
      if (p.name == prefix + "conv1/weight") {
        const Tensor* t = ck.find_tensor(src);
        if (!t) throw Error(ErrorCode::ShapeMismatch, "checkpoint lacks " + src);
        const Shape want = p.param.shape();
        Tensor adapted = adapt_first_layer(*t, want.c, seed + e);
        nn::expect_shape(adapted.shape(), want, src.c_str());
        p.param.mutable_value() = std::move(adapted);
      } else {
        p.param.mutable_value() = require(ck, src, p.param.shape());
      }
    }
    for (auto& [name, bn] : impl_->bns)
      if (name.rfind(prefix, 0) == 0) load_bn_stats(*bn, ck, source_name(name));
  }
}

Model load_model(const nn::Checkpoint& ck)
{
  const std::string* plan = ck.find_meta("plan");
  const std::string* encoder = ck.find_meta("encoder");
  if (!plan || !encoder) throw Error(ErrorCode::InvalidConfig, "checkpoint has no model description");
  Model m(FusionPlan::parse(*plan), EncoderSpec::from_name(*encoder));
  m.load_state(ck);
  return m;
}

std::vector<MaskImage> argmax_masks(const Tensor& logits)
{
  const Shape s = logits.shape();
  if (s.c != 2) throw Error(ErrorCode::ShapeMismatch, "logits must have 2 channels, got " + s.str());
  std::vector<MaskImage> out;
  for (int n = 0; n < s.n; ++n) {
    MaskImage m(s.h, s.w, 1);
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) m.at(y, x) = logits.at(n, 1, y, x) > logits.at(n, 0, y, x) ? 1 : 0;
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace fusemod::models
