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

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <numeric>
#include <random>

#include "fusemod/autograd.hpp"
#include "fusemod/checkpoint.hpp"
#include "fusemod/error.hpp"
#include "fusemod/grad_check.hpp"
#include "fusemod/kernels.hpp"
#include "fusemod/optim.hpp"

using namespace fusemod;
using namespace fusemod::nn;

namespace {

Tensor randn(Shape s, std::uint64_t seed, double scale = 1.0)
{
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, scale);
  Tensor t(s);
  for (auto& v : t.data()) v = d(rng);
  return t;
}

Tensor ones(Shape s) { return Tensor(s, 1.0); }

ErrorCode code_of(auto&& f)
{
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::InvalidConfig;
}

// Direct summation, one loop per index.
Tensor conv_oracle(const Tensor& x, const Tensor& w, const Tensor* b, int stride, int pad, int groups)
{
  const Shape xs = x.shape(), ws = w.shape();
  const int ho = (xs.h + 2 * pad - ws.h) / stride + 1;
  const int wo = (xs.w + 2 * pad - ws.w) / stride + 1;
  const int cin_g = xs.c / groups, cout_g = ws.n / groups;
  Tensor y(Shape{xs.n, ws.n, ho, wo});
  for (int n = 0; n < xs.n; ++n)
    for (int o = 0; o < ws.n; ++o)
      for (int i = 0; i < ho; ++i)
        for (int j = 0; j < wo; ++j) {
          long double acc = b ? (*b)[static_cast<std::size_t>(o)] : 0.0;
          const int g = o / cout_g;
          for (int c = 0; c < cin_g; ++c)
            for (int ki = 0; ki < ws.h; ++ki)
              for (int kj = 0; kj < ws.w; ++kj) {
                const int yi = i * stride - pad + ki, xj = j * stride - pad + kj;
                if (yi < 0 || yi >= xs.h || xj < 0 || xj >= xs.w) continue;
                acc += static_cast<long double>(x.at(n, g * cin_g + c, yi, xj)) * w.at(o, c, ki, kj);
              }
          y.at(n, o, i, j) = static_cast<double>(acc);
        }
  return y;
}

double inner(const Tensor& a, const Tensor& b)
{
  long double s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += static_cast<long double>(a[i]) * b[i];
  return static_cast<double>(s);
}

Tensor bilinear_oracle(int channels, int k)
{
  // Separable tent: 1 - |x - c| / f with f = ceil(k / 2).
  const double f = std::ceil(k / 2.0);
  const double c = (2 * f - 1 - f * (k % 2)) / (2 * f);
  Tensor w(Shape{channels, channels, k, k});
  for (int ch = 0; ch < channels; ++ch)
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) {
        const double ti = 1 - std::abs(i / f - c), tj = 1 - std::abs(j / f - c);
        w.at(ch, ch, i, j) = ti * tj;
      }
  return w;
}

}  // namespace

TEST_CASE("conv2d forward")
{
  SUBCASE("ones")
  {
    const auto y = conv2d(Var::constant(ones({1, 1, 3, 3})), Var::constant(ones({1, 1, 3, 3})), {}, {1, 0, 1});
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.value()[0] == 9.0);
  }
  SUBCASE("depthwise identity")
  {
    const auto x = randn({2, 4, 5, 5}, 1);
    const auto y = conv2d(Var::constant(x), Var::constant(ones({4, 1, 1, 1})), {}, {1, 0, 4});
    CHECK(y.value() == x);
  }
  SUBCASE("against the direct sum")
  {
    struct Case {
      Shape x;
      int cout, k, stride, pad, groups;
      bool bias;
    };
    for (const auto& c : {Case{{2, 4, 5, 5}, 6, 3, 1, 1, 1, true}, Case{{2, 4, 5, 5}, 6, 3, 2, 1, 2, false},
                          Case{{1, 6, 7, 6}, 6, 3, 2, 1, 6, false}, Case{{2, 6, 4, 4}, 9, 1, 1, 0, 3, true},
                          Case{{1, 3, 9, 8}, 4, 5, 3, 2, 1, true}}) {
      const auto x = randn(c.x, 2);
      const auto w = randn({c.cout, c.x.c / c.groups, c.k, c.k}, 3);
      const auto b = randn({1, c.cout, 1, 1}, 4);
      const auto want = conv_oracle(x, w, c.bias ? &b : nullptr, c.stride, c.pad, c.groups);
      const auto got = conv2d(Var::constant(x), Var::constant(w), c.bias ? Var::constant(b) : Var{},
                              {c.stride, c.pad, c.groups});
      REQUIRE(got.shape() == want.shape());
      double err = 0;
      for (std::size_t i = 0; i < want.numel(); ++i) err = std::max(err, std::abs(got.value()[i] - want[i]));
      CHECK(err <= 1e-12);
    }
  }
  SUBCASE("shape errors")
  {
    const auto x = Var::constant(Tensor({1, 3, 4, 4}));
    CHECK(code_of([&] { conv2d(x, Var::constant(Tensor({4, 3, 3, 3})), {}, {1, 0, 2}); }) == ErrorCode::ShapeMismatch);
    CHECK(code_of([&] { conv2d(x, Var::constant(Tensor({4, 2, 3, 3})), {}, {1, 0, 1}); }) == ErrorCode::ShapeMismatch);
    CHECK(code_of([&] { conv2d(x, Var::constant(Tensor({2, 3, 5, 5})), {}, {1, 0, 1}); }) == ErrorCode::ShapeMismatch);
  }
}

TEST_CASE("channel shuffle")
{
  Tensor x({1, 6, 1, 1});
  for (int c = 0; c < 6; ++c) x[static_cast<std::size_t>(c)] = c;
  const auto y = channel_shuffle(Var::constant(x), 2).value();
  CHECK(std::vector<double>(y.data().begin(), y.data().end()) == std::vector<double>{0, 3, 1, 4, 2, 5});
  CHECK(channel_shuffle(Var::constant(x), 1).value() == x);
  CHECK(code_of([&] { channel_shuffle(Var::constant(x), 4); }) == ErrorCode::ShapeMismatch);

  for (int c = 1; c <= 12; ++c) {
    Tensor t({2, c, 2, 3});
    std::iota(t.data().begin(), t.data().end(), 0.0);
    for (int g = 1; g <= c; ++g) {
      if (c % g) continue;
      const auto once = channel_shuffle(Var::constant(t), g).value();
      // Bijection: every input channel appears exactly once.
      std::vector<int> seen(static_cast<std::size_t>(c), 0);
      for (int o = 0; o < c; ++o) {
        const int src = static_cast<int>(once.at(0, o, 0, 0)) / 6;
        ++seen[static_cast<std::size_t>(src)];
        CHECK(src == (o % g) * (c / g) + o / g);
      }
      CHECK(std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; }));
      CHECK(channel_shuffle(Var::constant(once), c / g).value() == t);
    }
  }
}

TEST_CASE("transposed conv")
{
  SUBCASE("stride-2 block")
  {
    Tensor x({1, 1, 1, 1}, 2.5);
    const auto y = conv_transpose2d(Var::constant(x), Var::constant(ones({1, 1, 2, 2})), 2, 0).value();
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    for (double v : y.data()) CHECK(v == 2.5);
  }
  SUBCASE("adjoint of conv")
  {
    struct Case {
      Shape x;
      int cout, k, stride, pad;
    };
    for (const auto& c : {Case{{2, 3, 6, 6}, 2, 4, 2, 1}, Case{{1, 2, 5, 7}, 3, 3, 1, 1},
                          Case{{1, 2, 16, 16}, 2, 16, 8, 4}, Case{{2, 2, 9, 9}, 4, 3, 2, 0}}) {
      const auto x = randn(c.x, 5);
      const auto w = randn({c.cout, c.x.c, c.k, c.k}, 6);
      const auto cx = conv2d(Var::constant(x), Var::constant(w), {}, {c.stride, c.pad, 1}).value();
      const auto y = randn(cx.shape(), 7);
      // conv weight (C_out, C_in) is a tconv weight from C_out to C_in.
      auto ty = conv_transpose2d(Var::constant(y), Var::constant(w), c.stride, c.pad).value();
      // The transposed output may exceed x when (H + 2p - k) % s != 0; the
      // extra rows are never touched by the forward conv.
      REQUIRE(ty.shape().h >= c.x.h);
      Tensor ty_crop(c.x);
      for (int n = 0; n < c.x.n; ++n)
        for (int ch = 0; ch < c.x.c; ++ch)
          for (int i = 0; i < c.x.h; ++i)
            for (int j = 0; j < c.x.w; ++j) ty_crop.at(n, ch, i, j) = ty.at(n, ch, i, j);
      const double lhs = inner(cx, y), rhs = inner(x, ty_crop);
      CHECK(std::abs(lhs - rhs) <= 1e-10 * std::max(1.0, std::abs(lhs)));
      CHECK(ty.shape().h == (cx.shape().h - 1) * c.stride - 2 * c.pad + c.k);
    }
  }
  SUBCASE("bilinear upsampling keeps a constant image")
  {
    for (auto [k, s, p] : {std::array<int, 3>{4, 2, 1}, {16, 8, 4}}) {
      const Tensor x({1, 2, 5, 6}, 3.25);
      const auto y = conv_transpose2d(Var::constant(x), Var::constant(bilinear_oracle(2, k)), s, p).value();
      CHECK(y.shape() == Shape{1, 2, 5 * s, 6 * s});
      // Away from the borders every output pixel receives full kernel mass.
      double err = 0;
      for (int c = 0; c < 2; ++c)
        for (int i = s; i < 5 * s - s; ++i)
          for (int j = s; j < 6 * s - s; ++j) err = std::max(err, std::abs(y.at(0, c, i, j) - 3.25));
      CHECK(err <= 1e-12);
    }
  }
}

TEST_CASE("batch norm")
{
  const auto x = randn({3, 4, 5, 6}, 8, 4.0);
  Tensor g({1, 4, 1, 1}, 1.0), b({1, 4, 1, 1}, 0.0);
  BatchNormState st(4);
  const auto y = batch_norm(Var::constant(x), Var::constant(g), Var::constant(b), st, BatchNormMode::Train).value();
  const double m = 3.0 * 5 * 6;
  for (int c = 0; c < 4; ++c) {
    double mean = 0, xmean = 0;
    for (int n = 0; n < 3; ++n)
      for (int i = 0; i < 30; ++i) {
        mean += y.at(n, c, i / 6, i % 6);
        xmean += x.at(n, c, i / 6, i % 6);
      }
    mean /= m;
    xmean /= m;
    double var = 0, xvar = 0;
    for (int n = 0; n < 3; ++n)
      for (int i = 0; i < 30; ++i) {
        var += std::pow(y.at(n, c, i / 6, i % 6) - mean, 2);
        xvar += std::pow(x.at(n, c, i / 6, i % 6) - xmean, 2);
      }
    var /= m;
    xvar /= m;
    CHECK(std::abs(mean) <= 1e-9);
    CHECK(std::abs(var - 1.0) <= 1e-6);
    // eps keeps the normalized variance just under one.
    CHECK(var == doctest::Approx(xvar / (xvar + 1e-5)).epsilon(1e-12));
    // Running stats move 10% toward the (biased) batch statistics.
    CHECK(st.running_mean[c] == doctest::Approx(0.1 * xmean).epsilon(1e-12));
    CHECK(st.running_var[c] == doctest::Approx(0.9 + 0.1 * xvar).epsilon(1e-12));
    st.running_mean[c] = xmean;
    st.running_var[c] = xvar;
  }
  const auto e = batch_norm(Var::constant(x), Var::constant(g), Var::constant(b), st, BatchNormMode::Eval).value();
  double err = 0;
  for (std::size_t i = 0; i < y.numel(); ++i) err = std::max(err, std::abs(e[i] - y[i]));
  CHECK(err <= 1e-12);

  auto xv = Var::parameter(randn({2, 3, 4, 4}, 9));
  auto gv = Var::parameter(randn({1, 3, 1, 1}, 10));
  auto bv = Var::parameter(randn({1, 3, 1, 1}, 11));
  const auto r = randn({2, 3, 4, 4}, 12);
  BatchNormState st2(3);
  std::vector<Var> in = {xv, gv, bv};
  const auto res = grad_check(
      [&] { return dot(batch_norm(xv, gv, bv, st2, BatchNormMode::Train), r); }, in, {1e-5, 200, 1});
  CHECK(res.max_rel_error < 1e-4);
  BatchNormState st3(3);
  st3.running_var = {0.5, 2.0, 1.5};
  const auto res_eval = grad_check(
      [&] { return dot(batch_norm(xv, gv, bv, st3, BatchNormMode::Eval), r); }, in, {1e-5, 200, 2});
  CHECK(res_eval.max_rel_error < 1e-4);
}

TEST_CASE("elementwise, pooling and concat")
{
  Tensor t({1, 1, 1, 2});
  t[0] = -1;
  t[1] = 2;
  const auto r = relu(Var::constant(t)).value();
  CHECK(r[0] == 0);
  CHECK(r[1] == 2);

  const auto a = randn({2, 3, 4, 5}, 13), b = randn({2, 2, 4, 5}, 14);
  std::vector<Var> parts = {Var::constant(a), Var::constant(b)};
  const auto cat = concat_channels(parts).value();
  CHECK(cat.shape() == Shape{2, 5, 4, 5});
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 20; ++i) CHECK(cat.at(n, c, i / 5, i % 5) == a.at(n, c, i / 5, i % 5));
  CHECK(cat.at(1, 4, 3, 4) == b.at(1, 1, 3, 4));
  std::vector<Var> bad = {Var::constant(a), Var::constant(Tensor({2, 1, 3, 5}))};
  CHECK(code_of([&] { concat_channels(bad); }) == ErrorCode::ShapeMismatch);
  CHECK(code_of([&] { add(Var::constant(a), Var::constant(b)); }) == ErrorCode::ShapeMismatch);

  // Pooling oracles.
  const auto x = randn({1, 2, 7, 8}, 15);
  const auto mp = max_pool2d(Var::constant(x), 3, 2, 1).value();
  const auto ap = avg_pool2d(Var::constant(x), 3, 2, 1).value();
  CHECK(mp.shape() == Shape{1, 2, 4, 4});
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        double mx = -1e300, sum = 0;
        for (int di = 0; di < 3; ++di)
          for (int dj = 0; dj < 3; ++dj) {
            const int yi = 2 * i - 1 + di, xj = 2 * j - 1 + dj;
            if (yi < 0 || yi >= 7 || xj < 0 || xj >= 8) continue;
            mx = std::max(mx, x.at(0, c, yi, xj));
            sum += x.at(0, c, yi, xj);
          }
        CHECK(mp.at(0, c, i, j) == mx);
        CHECK(ap.at(0, c, i, j) == doctest::Approx(sum / 9).epsilon(1e-14));
      }
  const auto cropped = crop(Var::constant(x), 3, 4).value();
  CHECK(cropped.at(0, 1, 2, 3) == x.at(0, 1, 2, 3));
}

TEST_CASE("gradients of every op")
{
  auto x = Var::parameter(randn({2, 4, 6, 6}, 20));
  auto y = Var::parameter(randn({2, 4, 6, 6}, 21));
  auto z = Var::parameter(randn({2, 2, 6, 6}, 22));
  const GradCheckOptions opt{1e-5, 96, 3};
  auto check = [&](const char* name, std::function<Var()> f, std::vector<Var> in, double tol = 1e-4) {
    const auto r = grad_check(f, in, opt);
    INFO(name);
    CHECK(r.max_rel_error < tol);
    CHECK(r.coords_checked > 0);
  };
  auto reduce = [](const Var& v) { return dot(v, randn(v.shape(), 99)); };

  auto w = Var::parameter(randn({6, 2, 3, 3}, 23));
  auto bias = Var::parameter(randn({1, 6, 1, 1}, 24));
  check("conv", [&] { return reduce(conv2d(x, w, bias, {2, 1, 2})); }, {x, w, bias});
  auto wd = Var::parameter(randn({4, 1, 3, 3}, 25));
  check("depthwise", [&] { return reduce(conv2d(x, wd, {}, {1, 1, 4})); }, {x, wd});
  auto wt = Var::parameter(randn({4, 3, 4, 4}, 26));
  check("tconv", [&] { return reduce(conv_transpose2d(x, wt, 2, 1)); }, {x, wt});
  // Keep relu inputs away from the kink.
  auto xr = Var::parameter([&] {
    auto t = randn({2, 4, 6, 6}, 27);
    for (auto& v : t.data()) v += v >= 0 ? 0.1 : -0.1;
    return t;
  }());
  check("relu", [&] { return reduce(relu(xr)); }, {xr}, 1e-7);
  check("maxpool", [&] { return reduce(max_pool2d(x, 3, 2, 1)); }, {x});
  check("avgpool", [&] { return reduce(avg_pool2d(x, 3, 2, 1)); }, {x});
  check("add", [&] { return reduce(add(x, y)); }, {x, y});
  check("concat", [&] {
    std::vector<Var> v = {x, z};
    return reduce(concat_channels(v));
  }, {x, z});
  check("shuffle", [&] { return reduce(channel_shuffle(x, 2)); }, {x});
  check("crop", [&] { return reduce(crop(x, 4, 5)); }, {x});

  std::vector<std::uint8_t> labels(2 * 6 * 6);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = (i * 7) % 3 == 0;
  check("cross entropy", [&] { return weighted_cross_entropy(z, labels, {0.7, 3.1}); }, {z});

  SUBCASE("conv on 1x2x4x4")
  {
    auto xi = Var::parameter(randn({1, 2, 4, 4}, 30));
    auto wi = Var::parameter(randn({3, 2, 3, 3}, 31));
    check("small conv", [&] { return reduce(conv2d(xi, wi, {}, {1, 1, 1})); }, {xi, wi});
  }
  SUBCASE("conv, bn, relu, tconv chain")
  {
    auto xi = Var::parameter(randn({2, 2, 6, 6}, 32));
    auto w1 = Var::parameter(randn({4, 2, 3, 3}, 33));
    auto g = Var::parameter(randn({1, 4, 1, 1}, 34));
    auto be = Var::parameter(randn({1, 4, 1, 1}, 35));
    auto w2 = Var::parameter(randn({4, 2, 4, 4}, 36));
    BatchNormState st(4);
    check("chain", [&] {
      return reduce(conv_transpose2d(relu(batch_norm(conv2d(xi, w1, {}, {1, 1, 1}), g, be, st, BatchNormMode::Train)),
                                     w2, 2, 1));
    }, {xi, w1, g, be, w2});
  }
}

TEST_CASE("gradient check near a kink")
{
  // relu at 3e-6: a step of 1e-5 straddles zero and the plain central
  // difference reads 0.65 instead of the slope 1.
  auto x = Var::parameter(Tensor({1, 1, 1, 1}, 3e-6));
  std::vector<Var> in = {x};
  auto f = [&] { return dot(relu(x), Tensor({1, 1, 1, 1}, 1.0)); };
  GradCheckOptions plain{1e-5, 1, 0};
  plain.kink_refinements = 0;
  const auto unrefined = grad_check(f, in, plain);
  CHECK(unrefined.max_abs_error == doctest::Approx(0.35).epsilon(1e-6));
  CHECK(unrefined.kinks_refined == 0);
  const auto refined = grad_check(f, in, {1e-5, 1, 0});
  CHECK(refined.kinks_refined == 1);
  CHECK(refined.max_rel_error < 1e-9);
  // Smooth functions never trigger a refinement.
  auto y = Var::parameter(randn({2, 3, 4, 4}, 7));
  std::vector<Var> smooth = {y};
  const auto r = grad_check([&] { return dot(avg_pool2d(y, 2, 2, 0), randn({2, 3, 2, 2}, 8)); }, smooth);
  CHECK(r.kinks_refined == 0);
}

TEST_CASE("weighted cross entropy")
{
  const Tensor equal({2, 2, 3, 4}, 0.3);
  std::vector<std::uint8_t> labels(24);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 5 == 0;
  const auto l = weighted_cross_entropy(Var::constant(equal), labels, {1.0, 1.0});
  CHECK(l.value()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-14));

  const auto logits = randn({2, 2, 3, 4}, 40, 3.0);
  auto lv = Var::parameter(logits);
  const std::array<double, 2> wts = {0.4, 2.5};
  const auto loss = weighted_cross_entropy(lv, labels, wts);
  double plain = 0, weighted = 0;
  Tensor grad({2, 2, 3, 4});
  for (int n = 0; n < 2; ++n)
    for (int i = 0; i < 12; ++i) {
      const double a = logits.at(n, 0, i / 4, i % 4), b = logits.at(n, 1, i / 4, i % 4);
      const double pb = 1.0 / (1.0 + std::exp(a - b));
      const double pa = 1.0 - pb;
      const int t = labels[static_cast<std::size_t>(n * 12 + i)];
      const double nll = -std::log(t ? pb : pa);
      plain += nll;
      weighted += wts[static_cast<std::size_t>(t)] * nll;
      const double scale = wts[static_cast<std::size_t>(t)] / 24.0;
      grad.at(n, 0, i / 4, i % 4) = scale * (pa - (t == 0));
      grad.at(n, 1, i / 4, i % 4) = scale * (pb - (t == 1));
    }
  CHECK(loss.value()[0] == doctest::Approx(weighted / 24).epsilon(1e-13));
  CHECK(loss.value()[0] >= 0);
  CHECK(weighted_cross_entropy(lv, labels, {1.0, 1.0}).value()[0] == doctest::Approx(plain / 24).epsilon(1e-13));
  loss.backward();
  for (std::size_t i = 0; i < grad.numel(); ++i) CHECK(lv.grad()[i] == doctest::Approx(grad[i]).epsilon(1e-12));

  const auto p = softmax_channels(logits);
  for (int n = 0; n < 2; ++n)
    for (int i = 0; i < 12; ++i) CHECK(std::abs(p.at(n, 0, i / 4, i % 4) + p.at(n, 1, i / 4, i % 4) - 1.0) <= 1e-12);

  std::vector<std::uint8_t> short_labels(10);
  CHECK(code_of([&] { weighted_cross_entropy(lv, short_labels, wts); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("adam")
{
  SUBCASE("first step")
  {
    auto w = Var::parameter(Tensor({1, 1, 1, 1}, 0.5));
    Adam opt;
    opt.add_param("w", w, false);
    w.accumulate_grad(Tensor({1, 1, 1, 1}, 1.0));
    opt.step();
    CHECK(w.value()[0] - 0.5 == doctest::Approx(-1e-4 / (1 + 1e-8)).epsilon(1e-9));
  }
  SUBCASE("zero gradient, no decay")
  {
    auto w = Var::parameter(randn({1, 2, 3, 3}, 41));
    const auto before = w.value();
    Adam opt(AdamConfig{1e-3, 0.9, 0.999, 1e-8, 0.0});
    opt.add_param("w", w, true);
    w.accumulate_grad(Tensor(w.shape()));
    for (int i = 0; i < 5; ++i) opt.step();
    CHECK(w.value() == before);
  }
  SUBCASE("quadratic descent")
  {
    auto w = Var::parameter(Tensor({1, 1, 1, 1}, 1.0));
    Adam opt(AdamConfig{1e-3, 0.9, 0.999, 1e-8, 0.0});
    opt.add_param("w", w, false);
    double prev = 1.0;
    for (int i = 0; i < 200; ++i) {
      opt.zero_grad();
      Tensor two_w = w.value();
      two_w[0] *= 2;
      dot(w, two_w).backward();  // gradient 2w, as for w^2
      opt.step();
      const double now = std::abs(w.value()[0]);
      CHECK(now < prev);
      prev = now;
    }
  }
  SUBCASE("coupled decay applies only to decayed parameters")
  {
    const AdamConfig cfg{1e-2, 0.9, 0.999, 1e-8, 5e-4};
    auto wa = Var::parameter(Tensor({1, 1, 1, 1}, 2.0));
    auto wb = Var::parameter(Tensor({1, 1, 1, 1}, 2.0));
    Adam opt(cfg);
    opt.add_param("a", wa, true);
    opt.add_param("b", wb, false);
    double m = 0, v = 0, x = 2.0;
    double mb = 0, vb = 0, xb = 2.0;
    for (int t = 1; t <= 5; ++t) {
      opt.zero_grad();
      const double g = 0.3 * t;
      wa.accumulate_grad(Tensor({1, 1, 1, 1}, g));
      wb.accumulate_grad(Tensor({1, 1, 1, 1}, g));
      opt.step();
      const double ga = g + cfg.l2_decay * x;
      m = 0.9 * m + 0.1 * ga;
      v = 0.999 * v + 0.001 * ga * ga;
      x -= cfg.lr * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + cfg.eps);
      mb = 0.9 * mb + 0.1 * g;
      vb = 0.999 * vb + 0.001 * g * g;
      xb -= cfg.lr * (mb / (1 - std::pow(0.9, t))) / (std::sqrt(vb / (1 - std::pow(0.999, t))) + cfg.eps);
      CHECK(wa.value()[0] == doctest::Approx(x).epsilon(1e-13));
      CHECK(wb.value()[0] == doctest::Approx(xb).epsilon(1e-13));
    }
    CHECK(opt.step_count() == 5);
    CHECK(wa.value()[0] != wb.value()[0]);
  }
}

TEST_CASE("parallel kernels match the serial reference bit for bit")
{
  const int saved = kernels::max_threads();
  for (int threads : {1, 2, 3, 4}) {
    kernels::set_threads(threads);
    for (auto [shape, cout, k, s, p, g] :
         {std::tuple{Shape{2, 4, 9, 11}, 8, 3, 2, 1, 2}, std::tuple{Shape{3, 6, 8, 8}, 6, 3, 1, 1, 6},
          std::tuple{Shape{1, 4, 12, 10}, 6, 1, 1, 0, 2}, std::tuple{Shape{2, 2, 7, 7}, 2, 4, 2, 1, 1}}) {
      const auto x = randn(shape, 50);
      const auto w = randn({cout, shape.c / g, k, k}, 51);
      const auto b = randn({1, cout, 1, 1}, 52);
      const kernels::ConvGeometry geo{s, p, g};
      const auto y = kernels::ref::conv2d_forward(x, w, &b, geo);
      CHECK(kernels::par::conv2d_forward(x, w, &b, geo) == y);
      const auto dy = randn(y.shape(), 53);
      CHECK(kernels::par::conv2d_backward_input(dy, w, geo, shape) ==
            kernels::ref::conv2d_backward_input(dy, w, geo, shape));
      CHECK(kernels::par::conv2d_backward_weight(dy, x, geo, w.shape()) ==
            kernels::ref::conv2d_backward_weight(dy, x, geo, w.shape()));

      std::vector<long> am_ref, am_par;
      const auto mp = kernels::ref::max_pool_forward(x, 3, 2, 1, am_ref);
      CHECK(kernels::par::max_pool_forward(x, 3, 2, 1, am_par) == mp);
      CHECK(am_par == am_ref);
      const auto dmp = randn(mp.shape(), 54);
      CHECK(kernels::par::max_pool_backward(dmp, am_ref, shape) == kernels::ref::max_pool_backward(dmp, am_ref, shape));
      CHECK(kernels::par::avg_pool_forward(x, 3, 2, 1) == kernels::ref::avg_pool_forward(x, 3, 2, 1));
      CHECK(kernels::par::avg_pool_backward(dmp, shape, 3, 2, 1) == kernels::ref::avg_pool_backward(dmp, shape, 3, 2, 1));

      std::vector<double> gamma(static_cast<std::size_t>(shape.c)), beta(gamma.size()), mean(gamma.size()),
          var(gamma.size());
      for (std::size_t c = 0; c < gamma.size(); ++c) {
        gamma[c] = 1.0 + 0.1 * c;
        beta[c] = -0.2 * c;
        mean[c] = 0.05 * c;
        var[c] = 1.0 + 0.3 * c;
      }
      const auto fr = kernels::ref::batch_norm_train(x, gamma, beta, 1e-5);
      const auto fp = kernels::par::batch_norm_train(x, gamma, beta, 1e-5);
      CHECK(fp.y == fr.y);
      CHECK(fp.xhat == fr.xhat);
      CHECK(fp.mean == fr.mean);
      CHECK(fp.var == fr.var);
      CHECK(kernels::par::batch_norm_eval(x, gamma, beta, mean, var, 1e-5) ==
            kernels::ref::batch_norm_eval(x, gamma, beta, mean, var, 1e-5));
      const auto dyb = randn(shape, 55);
      const auto br = kernels::ref::batch_norm_backward(dyb, fr.xhat, gamma, fr.inv_std);
      const auto bp = kernels::par::batch_norm_backward(dyb, fr.xhat, gamma, fr.inv_std);
      CHECK(bp.dx == br.dx);
      CHECK(bp.dgamma == br.dgamma);
      CHECK(bp.dbeta == br.dbeta);
    }
  }
  kernels::set_threads(saved);
}

TEST_CASE("checkpoint format")
{
  Checkpoint ck;
  ck.meta = {{"k", "v"}};
  Tensor t({1, 1, 1, 2});
  t[0] = 1.0;
  t[1] = -2.0;
  ck.tensors = {{"w", t}};
  ck.scalars = {{"s", 0.5}};
  const auto bytes = ck.serialize();
  // Hand-assembled little-endian layout.
  std::vector<std::uint8_t> want = {'F', 'M', 'C', 'K', 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 'k', 1, 0, 0, 0, 'v',
                                    1, 0, 0, 0, 1, 0, 0, 0, 'w', 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0};
  for (double d : {1.0, -2.0}) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    for (int i = 0; i < 8; ++i) want.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  for (std::uint8_t b : {1, 0, 0, 0, 1, 0, 0, 0}) want.push_back(b);
  want.push_back('s');
  for (int i = 0; i < 6; ++i) want.push_back(0);
  want.push_back(0xe0);
  want.push_back(0x3f);
  CHECK(bytes == want);

  const auto back = Checkpoint::parse(bytes);
  CHECK(back.serialize() == bytes);
  CHECK(*back.find_tensor("w") == t);
  CHECK(*back.find_scalar("s") == 0.5);
  CHECK(*back.find_meta("k") == "v");
  CHECK(back.find_tensor("x") == nullptr);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK(code_of([&] { Checkpoint::parse(bad); }) == ErrorCode::BadMagic);
  auto version = bytes;
  version[4] = 2;
  CHECK(code_of([&] { Checkpoint::parse(version); }) == ErrorCode::BadMagic);
  const std::vector<std::uint8_t> cut(bytes.begin(), bytes.end() - 3);
  CHECK(code_of([&] { Checkpoint::parse(cut); }) == ErrorCode::TruncatedRecord);
  auto extra = bytes;
  extra.push_back(0);
  CHECK(code_of([&] { Checkpoint::parse(extra); }) == ErrorCode::DimensionMismatch);

  const auto dir = std::filesystem::temp_directory_path() / "fusemod_test_ckpt";
  std::filesystem::remove_all(dir);
  ck.save(dir / "a" / "b.fmck");
  CHECK(Checkpoint::load(dir / "a" / "b.fmck").serialize() == bytes);
  std::filesystem::remove_all(dir);
  CHECK(code_of([&] { Checkpoint::load(dir / "missing.fmck"); }) == ErrorCode::IoFailure);
}

TEST_CASE("training loop is deterministic")
{
  auto run = [] {
    auto w1 = Var::parameter(randn({4, 3, 3, 3}, 60, 0.3));
    auto g = Var::parameter(Tensor({1, 4, 1, 1}, 1.0));
    auto b = Var::parameter(Tensor({1, 4, 1, 1}, 0.0));
    auto w2 = Var::parameter(randn({2, 4, 1, 1}, 61, 0.3));
    BatchNormState st(4);
    Adam opt(AdamConfig{1e-2});
    opt.add_param("w1", w1, true);
    opt.add_param("g", g, false);
    opt.add_param("b", b, false);
    opt.add_param("w2", w2, true);
    const auto x = Var::constant(randn({3, 3, 8, 8}, 62));
    std::vector<std::uint8_t> labels(3 * 8 * 8);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = (i % 8) < 3;
    std::vector<double> losses;
    for (int step = 0; step < 15; ++step) {
      auto h = relu(batch_norm(conv2d(x, w1, {}, {1, 1, 1}), g, b, st, BatchNormMode::Train));
      auto loss = weighted_cross_entropy(conv2d(h, w2, {}, {1, 0, 1}), labels, {1.0, 1.5});
      opt.zero_grad();
      loss.backward();
      opt.step();
      losses.push_back(loss.value()[0]);
    }
    return losses;
  };
  const auto a = run();
  const auto b = run();
  CHECK(a == b);
  CHECK(a.back() < a.front());
}
