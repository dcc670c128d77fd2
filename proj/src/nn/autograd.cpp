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

#include "fusemod/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "fusemod/error.hpp"

namespace fusemod::nn {

namespace detail {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<Var> inputs;
  std::function<void(const Tensor&, std::span<Var>)> backward;
};

}  // namespace detail

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var Var::constant(Tensor value)
{
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var Var::parameter(Tensor value)
{
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

const Tensor& Var::value() const { return node_->value; }
Tensor& Var::mutable_value() { return node_->value; }
bool Var::requires_grad() const { return node_ && node_->requires_grad; }
const Tensor& Var::grad() const { return node_->grad; }
bool Var::has_grad() const { return node_ && !node_->grad.empty(); }
void Var::zero_grad() { node_->grad = Tensor(); }

void Var::accumulate_grad(const Tensor& g) const
{
  if (!node_->requires_grad) return;
  if (node_->grad.empty()) {
    node_->grad = g;
  } else {
    node_->grad.accumulate(g);
  }
}

Var Var::from_op(Tensor value, std::vector<Var> inputs,
                 std::function<void(const Tensor&, std::span<Var>)> backward)
{
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(value);
  const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.requires_grad(); });
  if (g_grad_enabled && any) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

void Var::backward() const
{
  if (value().numel() != 1) throw Error(ErrorCode::ShapeMismatch, "backward() needs a scalar");
  if (!requires_grad()) return;

  // Iterative post-order DFS.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].node_.get();
      if (child->requires_grad && child->backward && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  accumulate_grad(Tensor(value().shape(), 1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (!node->backward || node->grad.empty()) continue;
    node->backward(node->grad, node->inputs);
    node->grad = Tensor();  // intermediate gradients are not kept
  }
}

// Ops

Var conv2d(const Var& x, const Var& w, const Var& bias, ConvGeometry geometry)
{
  const Tensor* b = nullptr;
  if (bias.defined()) {
    if (bias.value().numel() != static_cast<std::size_t>(w.shape().n)) {
      throw Error(ErrorCode::ShapeMismatch, "conv bias " + bias.shape().str());
    }
    b = &bias.value();
  }
  Tensor y = kernels::conv2d_forward(x.value(), w.value(), b, geometry);
  std::vector<Var> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return Var::from_op(std::move(y), std::move(inputs), [geometry](const Tensor& dy, std::span<Var> in) {
    const Var& xv = in[0];
    const Var& wv = in[1];
    if (xv.requires_grad()) {
      xv.accumulate_grad(kernels::conv2d_backward_input(dy, wv.value(), geometry, xv.shape()));
    }
    if (wv.requires_grad()) {
      wv.accumulate_grad(kernels::conv2d_backward_weight(dy, xv.value(), geometry, wv.shape()));
    }
    if (in.size() > 2 && in[2].requires_grad()) {
      const Shape& s = dy.shape();
      Tensor db(in[2].shape());
      for (int n = 0; n < s.n; ++n)
        for (int o = 0; o < s.c; ++o) {
          const double* p = dy.ptr() + (static_cast<std::size_t>(n) * s.c + o) * s.plane();
          double acc = 0.0;
          for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
          db[static_cast<std::size_t>(o)] += acc;
        }
      in[2].accumulate_grad(db);
    }
  });
}

Var conv_transpose2d(const Var& x, const Var& w, int stride, int pad)
{
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (ws.n != xs.c || ws.h != ws.w) {
    throw Error(ErrorCode::ShapeMismatch, "conv_transpose weight " + ws.str() + " for input " + xs.str());
  }
  const Shape ys{xs.n, ws.c, (xs.h - 1) * stride - 2 * pad + ws.h, (xs.w - 1) * stride - 2 * pad + ws.w};
  if (ys.h <= 0 || ys.w <= 0) throw Error(ErrorCode::ShapeMismatch, "conv_transpose output " + ys.str());
  // The transposed conv is the input-gradient of the conv whose weight is `w`.
  const ConvGeometry g{stride, pad, 1};
  if (kernels::conv_out_size(ys.h, ws.h, stride, pad) != xs.h ||
      kernels::conv_out_size(ys.w, ws.w, stride, pad) != xs.w) {
    throw Error(ErrorCode::ShapeMismatch, "conv_transpose geometry");
  }
  Tensor y = kernels::conv2d_backward_input(x.value(), w.value(), g, ys);
  return Var::from_op(std::move(y), {x, w}, [g](const Tensor& dy, std::span<Var> in) {
    if (in[0].requires_grad()) in[0].accumulate_grad(kernels::conv2d_forward(dy, in[1].value(), nullptr, g));
    if (in[1].requires_grad()) {
      in[1].accumulate_grad(kernels::conv2d_backward_weight(in[0].value(), dy, g, in[1].shape()));
    }
  });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, BatchNormMode mode)
{
  const int c = x.shape().c;
  if (gamma.value().numel() != static_cast<std::size_t>(c) || beta.value().numel() != static_cast<std::size_t>(c) ||
      state.running_mean.size() != static_cast<std::size_t>(c)) {
    throw Error(ErrorCode::ShapeMismatch, "batch_norm params for " + x.shape().str());
  }
  std::vector<double> g(gamma.value().data().begin(), gamma.value().data().end());
  std::vector<double> b(beta.value().data().begin(), beta.value().data().end());

  if (mode == BatchNormMode::Train) {
    auto f = kernels::batch_norm_train(x.value(), g, b, state.eps);
    for (int k = 0; k < c; ++k) {
      state.running_mean[k] = (1.0 - state.momentum) * state.running_mean[k] + state.momentum * f.mean[k];
      state.running_var[k] = (1.0 - state.momentum) * state.running_var[k] + state.momentum * f.var[k];
    }
    auto xhat = std::make_shared<Tensor>(std::move(f.xhat));
    auto inv_std = std::make_shared<std::vector<double>>(std::move(f.inv_std));
    return Var::from_op(std::move(f.y), {x, gamma, beta},
                        [xhat, inv_std, g](const Tensor& dy, std::span<Var> in) {
                          auto grads = kernels::batch_norm_backward(dy, *xhat, g, *inv_std);
                          const Shape ps = in[1].shape();
                          if (in[0].requires_grad()) in[0].accumulate_grad(grads.dx);
                          if (in[1].requires_grad()) in[1].accumulate_grad(Tensor(ps, grads.dgamma));
                          if (in[2].requires_grad()) in[2].accumulate_grad(Tensor(ps, grads.dbeta));
                        });
  }

  Tensor y = kernels::batch_norm_eval(x.value(), g, b, state.running_mean, state.running_var, state.eps);
  std::vector<double> inv_std(c), mean = state.running_mean;
  for (int k = 0; k < c; ++k) inv_std[k] = 1.0 / std::sqrt(state.running_var[k] + state.eps);
  return Var::from_op(std::move(y), {x, gamma, beta}, [g, inv_std, mean](const Tensor& dy, std::span<Var> in) {
    const Shape s = dy.shape();
    Tensor dx(s);
    std::vector<double> dgamma(s.c, 0.0), dbeta(s.c, 0.0);
    const Tensor& xv = in[0].value();
    for (int n = 0; n < s.n; ++n)
      for (int k = 0; k < s.c; ++k) {
        const std::size_t base = (static_cast<std::size_t>(n) * s.c + k) * s.plane();
        for (std::size_t i = 0; i < s.plane(); ++i) {
          dx[base + i] = dy[base + i] * g[k] * inv_std[k];
          dgamma[k] += dy[base + i] * (xv[base + i] - mean[k]) * inv_std[k];
          dbeta[k] += dy[base + i];
        }
      }
    const Shape ps = in[1].shape();
    if (in[0].requires_grad()) in[0].accumulate_grad(dx);
    if (in[1].requires_grad()) in[1].accumulate_grad(Tensor(ps, dgamma));
    if (in[2].requires_grad()) in[2].accumulate_grad(Tensor(ps, dbeta));
  });
}

Var relu(const Var& x)
{
  Tensor y(x.shape());
  const Tensor& xv = x.value();
  const long n = static_cast<long>(y.numel());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) y[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  return Var::from_op(std::move(y), {x}, [](const Tensor& dy, std::span<Var> in) {
    const Tensor& xv = in[0].value();
    Tensor dx(xv.shape());
    const long n = static_cast<long>(dx.numel());
#pragma omp parallel for schedule(static)
    for (long i = 0; i < n; ++i) dx[i] = xv[i] > 0.0 ? dy[i] : 0.0;
    in[0].accumulate_grad(dx);
  });
}

Var max_pool2d(const Var& x, int k, int stride, int pad)
{
  auto argmax = std::make_shared<std::vector<long>>();
  Tensor y = kernels::max_pool_forward(x.value(), k, stride, pad, *argmax);
  return Var::from_op(std::move(y), {x}, [argmax](const Tensor& dy, std::span<Var> in) {
    in[0].accumulate_grad(kernels::max_pool_backward(dy, *argmax, in[0].shape()));
  });
}

Var avg_pool2d(const Var& x, int k, int stride, int pad)
{
  Tensor y = kernels::avg_pool_forward(x.value(), k, stride, pad);
  return Var::from_op(std::move(y), {x}, [k, stride, pad](const Tensor& dy, std::span<Var> in) {
    in[0].accumulate_grad(kernels::avg_pool_backward(dy, in[0].shape(), k, stride, pad));
  });
}

Var concat_channels(std::span<const Var> xs)
{
  if (xs.empty()) throw Error(ErrorCode::ShapeMismatch, "concat of nothing");
  Shape out = xs[0].shape();
  out.c = 0;
  for (const auto& v : xs) {
    const Shape& s = v.shape();
    if (s.n != out.n || s.h != out.h || s.w != out.w) {
      throw Error(ErrorCode::ShapeMismatch, "concat " + xs[0].shape().str() + " with " + s.str());
    }
    out.c += s.c;
  }
  Tensor y(out);
  int c0 = 0;
  for (const auto& v : xs) {
    const Shape& s = v.shape();
    for (int n = 0; n < s.n; ++n) {
      const double* src = v.value().ptr() + static_cast<std::size_t>(n) * s.c * s.plane();
      std::copy(src, src + static_cast<std::size_t>(s.c) * s.plane(), y.ptr() + y.offset(n, c0, 0, 0));
    }
    c0 += s.c;
  }
  return Var::from_op(std::move(y), std::vector<Var>(xs.begin(), xs.end()),
                      [](const Tensor& dy, std::span<Var> in) {
                        int c0 = 0;
                        for (auto& v : in) {
                          const Shape s = v.shape();
                          if (v.requires_grad()) {
                            Tensor dx(s);
                            for (int n = 0; n < s.n; ++n) {
                              const double* src = dy.ptr() + dy.offset(n, c0, 0, 0);
                              std::copy(src, src + static_cast<std::size_t>(s.c) * s.plane(),
                                        dx.ptr() + static_cast<std::size_t>(n) * s.c * s.plane());
                            }
                            v.accumulate_grad(dx);
                          }
                          c0 += s.c;
                        }
                      });
}

Var add(const Var& a, const Var& b)
{
  expect_shape(a.shape(), b.shape(), "add");
  Tensor y = a.value();
  y.accumulate(b.value());
  return Var::from_op(std::move(y), {a, b}, [](const Tensor& dy, std::span<Var> in) {
    in[0].accumulate_grad(dy);
    in[1].accumulate_grad(dy);
  });
}

namespace {

/// out[perm[c]] = in[c]
Tensor permute_channels(const Tensor& in, const std::vector<int>& target)
{
  const Shape& s = in.shape();
  Tensor out(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const double* src = in.ptr() + in.offset(n, c, 0, 0);
      std::copy(src, src + s.plane(), out.ptr() + out.offset(n, target[c], 0, 0));
    }
  return out;
}

}  // namespace

Var channel_shuffle(const Var& x, int groups)
{
  const int c = x.shape().c;
  if (groups < 1 || c % groups != 0) {
    throw Error(ErrorCode::ShapeMismatch, std::to_string(c) + " channels, " + std::to_string(groups) + " groups");
  }
  const int per = c / groups;
  std::vector<int> target(c), inverse(c);
  for (int g = 0; g < groups; ++g)
    for (int i = 0; i < per; ++i) {
      target[i + per * g] = g + groups * i;
      inverse[g + groups * i] = i + per * g;
    }
  Tensor y = permute_channels(x.value(), target);
  return Var::from_op(std::move(y), {x}, [inverse](const Tensor& dy, std::span<Var> in) {
    in[0].accumulate_grad(permute_channels(dy, inverse));
  });
}

Var crop(const Var& x, int h, int w)
{
  const Shape s = x.shape();
  if (h > s.h || w > s.w || h <= 0 || w <= 0) {
    throw Error(ErrorCode::ShapeMismatch, "crop " + s.str() + " to " + std::to_string(h) + "x" + std::to_string(w));
  }
  if (h == s.h && w == s.w) return x;
  const Shape out{s.n, s.c, h, w};
  Tensor y(out);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int r = 0; r < h; ++r) {
        const double* src = x.value().ptr() + x.value().offset(n, c, r, 0);
        std::copy(src, src + w, y.ptr() + y.offset(n, c, r, 0));
      }
  return Var::from_op(std::move(y), {x}, [s, h, w](const Tensor& dy, std::span<Var> in) {
    Tensor dx(s);
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c)
        for (int r = 0; r < h; ++r) {
          const double* src = dy.ptr() + dy.offset(n, c, r, 0);
          std::copy(src, src + w, dx.ptr() + dx.offset(n, c, r, 0));
        }
    in[0].accumulate_grad(dx);
  });
}

Tensor softmax_channels(const Tensor& logits)
{
  const Shape s = logits.shape();
  Tensor p(s);
  for (int n = 0; n < s.n; ++n)
    for (int h = 0; h < s.h; ++h)
      for (int w = 0; w < s.w; ++w) {
        double m = -INFINITY;
        for (int c = 0; c < s.c; ++c) m = std::max(m, logits.at(n, c, h, w));
        double z = 0.0;
        for (int c = 0; c < s.c; ++c) z += std::exp(logits.at(n, c, h, w) - m);
        for (int c = 0; c < s.c; ++c) p.at(n, c, h, w) = std::exp(logits.at(n, c, h, w) - m) / z;
      }
  return p;
}

Var weighted_cross_entropy(const Var& logits, std::span<const std::uint8_t> labels,
                           std::array<double, 2> class_weights)
{
  const Shape s = logits.shape();
  if (s.c != 2 || labels.size() != static_cast<std::size_t>(s.n) * s.plane()) {
    throw Error(ErrorCode::ShapeMismatch,
                "cross entropy logits " + s.str() + " with " + std::to_string(labels.size()) + " labels");
  }
  if (!(class_weights[0] > 0 && class_weights[1] > 0)) {
    throw Error(ErrorCode::ShapeMismatch, "class weights must be positive");
  }
  const double count = static_cast<double>(s.n) * s.plane();
  const Tensor& z = logits.value();
  auto grad = std::make_shared<Tensor>(s);
  double loss = 0.0;
  for (int n = 0; n < s.n; ++n) {
    const double* z0 = z.ptr() + z.offset(n, 0, 0, 0);
    const double* z1 = z.ptr() + z.offset(n, 1, 0, 0);
    double* g0 = grad->ptr() + grad->offset(n, 0, 0, 0);
    double* g1 = grad->ptr() + grad->offset(n, 1, 0, 0);
    for (std::size_t i = 0; i < s.plane(); ++i) {
      const int t = labels[static_cast<std::size_t>(n) * s.plane() + i];
      if (t > 1) throw Error(ErrorCode::ShapeMismatch, "label " + std::to_string(t));
      const double m = std::max(z0[i], z1[i]);
      const double lse = m + std::log(std::exp(z0[i] - m) + std::exp(z1[i] - m));
      const double p0 = std::exp(z0[i] - lse);
      const double p1 = std::exp(z1[i] - lse);
      const double wt = class_weights[t];
      loss += wt * (lse - (t == 0 ? z0[i] : z1[i]));
      g0[i] = wt * (p0 - (t == 0 ? 1.0 : 0.0)) / count;
      g1[i] = wt * (p1 - (t == 1 ? 1.0 : 0.0)) / count;
    }
  }
  Tensor out(Shape{1, 1, 1, 1}, loss / count);
  return Var::from_op(std::move(out), {logits}, [grad](const Tensor& dy, std::span<Var> in) {
    Tensor g = *grad;
    const double scale = dy[0];
    for (auto& v : g.data()) v *= scale;
    in[0].accumulate_grad(g);
  });
}

Var dot(const Var& x, const Tensor& r)
{
  expect_shape(x.shape(), r.shape(), "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < r.numel(); ++i) acc += x.value()[i] * r[i];
  return Var::from_op(Tensor(Shape{1, 1, 1, 1}, acc), {x}, [r](const Tensor& dy, std::span<Var> in) {
    Tensor g = r;
    for (auto& v : g.data()) v *= dy[0];
    in[0].accumulate_grad(g);
  });
}

}  // namespace fusemod::nn
