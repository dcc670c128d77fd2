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

// Serial reference kernels. Straight loop nests, one output element at a
// time; these define the summation order the parallel kernels reproduce.

#include <cmath>
#include <limits>

#include "fusemod/error.hpp"
#include "fusemod/kernels.hpp"

namespace fusemod::nn::kernels::ref {

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor* bias, const ConvGeometry& g)
{
  const Shape ys = conv2d_output_shape(x.shape(), w.shape(), g);
  const Shape& xs = x.shape();
  const int k = w.shape().h;
  const int cin_g = xs.c / g.groups;
  const int cout_g = ys.c / g.groups;
  Tensor y(ys);
  for (int n = 0; n < ys.n; ++n) {
    for (int o = 0; o < ys.c; ++o) {
      const int group = o / cout_g;
      for (int oh = 0; oh < ys.h; ++oh) {
        for (int ow = 0; ow < ys.w; ++ow) {
          double acc = 0.0;
          for (int ci = 0; ci < cin_g; ++ci) {
            const int c = group * cin_g + ci;
            for (int kh = 0; kh < k; ++kh) {
              const int ih = oh * g.stride - g.pad + kh;
              if (ih < 0 || ih >= xs.h) continue;
              for (int kw = 0; kw < k; ++kw) {
                const int iw = ow * g.stride - g.pad + kw;
                if (iw < 0 || iw >= xs.w) continue;
                acc += x.at(n, c, ih, iw) * w.at(o, ci, kh, kw);
              }
            }
          }
          y.at(n, o, oh, ow) = acc + (bias ? (*bias)[static_cast<std::size_t>(o)] : 0.0);
        }
      }
    }
  }
  return y;
}

Tensor conv2d_backward_input(const Tensor& dy, const Tensor& w, const ConvGeometry& g, const Shape& xs)
{
  const Shape& ys = dy.shape();
  const int k = w.shape().h;
  const int cin_g = xs.c / g.groups;
  const int cout_g = ys.c / g.groups;
  Tensor dx(xs);
  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < xs.c; ++c) {
      const int group = c / cin_g;
      const int ci = c % cin_g;
      for (int h = 0; h < xs.h; ++h) {
        for (int x = 0; x < xs.w; ++x) {
          double acc = 0.0;
          for (int o = group * cout_g; o < (group + 1) * cout_g; ++o) {
            for (int kh = 0; kh < k; ++kh) {
              const int th = h + g.pad - kh;
              if (th < 0 || th % g.stride != 0 || th / g.stride >= ys.h) continue;
              for (int kw = 0; kw < k; ++kw) {
                const int tw = x + g.pad - kw;
                if (tw < 0 || tw % g.stride != 0 || tw / g.stride >= ys.w) continue;
                acc += dy.at(n, o, th / g.stride, tw / g.stride) * w.at(o, ci, kh, kw);
              }
            }
          }
          dx.at(n, c, h, x) = acc;
        }
      }
    }
  }
  return dx;
}

Tensor conv2d_backward_weight(const Tensor& dy, const Tensor& x, const ConvGeometry& g, const Shape& ws)
{
  const Shape& ys = dy.shape();
  const Shape& xs = x.shape();
  const int cin_g = xs.c / g.groups;
  const int cout_g = ys.c / g.groups;
  Tensor dw(ws);
  for (int o = 0; o < ws.n; ++o) {
    const int group = o / cout_g;
    for (int ci = 0; ci < ws.c; ++ci) {
      const int c = group * cin_g + ci;
      for (int kh = 0; kh < ws.h; ++kh) {
        for (int kw = 0; kw < ws.w; ++kw) {
          double acc = 0.0;
          for (int n = 0; n < ys.n; ++n) {
            for (int oh = 0; oh < ys.h; ++oh) {
              const int ih = oh * g.stride - g.pad + kh;
              if (ih < 0 || ih >= xs.h) continue;
              for (int ow = 0; ow < ys.w; ++ow) {
                const int iw = ow * g.stride - g.pad + kw;
                if (iw < 0 || iw >= xs.w) continue;
                acc += dy.at(n, o, oh, ow) * x.at(n, c, ih, iw);
              }
            }
          }
          dw.at(o, ci, kh, kw) = acc;
        }
      }
    }
  }
  return dw;
}

Tensor max_pool_forward(const Tensor& x, int k, int stride, int pad, std::vector<long>& argmax)
{
  const Shape& xs = x.shape();
  const Shape ys{xs.n, xs.c, conv_out_size(xs.h, k, stride, pad), conv_out_size(xs.w, k, stride, pad)};
  if (ys.h <= 0 || ys.w <= 0) throw Error(ErrorCode::ShapeMismatch, "max_pool input " + xs.str());
  Tensor y(ys);
  argmax.assign(ys.numel(), -1);
  for (int n = 0; n < ys.n; ++n)
    for (int c = 0; c < ys.c; ++c)
      for (int oh = 0; oh < ys.h; ++oh)
        for (int ow = 0; ow < ys.w; ++ow) {
          double best = -std::numeric_limits<double>::infinity();
          long where = -1;
          for (int kh = 0; kh < k; ++kh) {
            const int ih = oh * stride - pad + kh;
            if (ih < 0 || ih >= xs.h) continue;
            for (int kw = 0; kw < k; ++kw) {
              const int iw = ow * stride - pad + kw;
              if (iw < 0 || iw >= xs.w) continue;
              const double v = x.at(n, c, ih, iw);
              if (v > best || where < 0) {
                best = v;
                where = static_cast<long>(x.offset(n, c, ih, iw));
              }
            }
          }
          y.at(n, c, oh, ow) = best;
          argmax[y.offset(n, c, oh, ow)] = where;
        }
  return y;
}

Tensor max_pool_backward(const Tensor& dy, const std::vector<long>& argmax, const Shape& xs)
{
  Tensor dx(xs);
  for (std::size_t i = 0; i < dy.numel(); ++i) {
    if (argmax[i] >= 0) dx[static_cast<std::size_t>(argmax[i])] += dy[i];
  }
  return dx;
}

Tensor avg_pool_forward(const Tensor& x, int k, int stride, int pad)
{
  const Shape& xs = x.shape();
  const Shape ys{xs.n, xs.c, conv_out_size(xs.h, k, stride, pad), conv_out_size(xs.w, k, stride, pad)};
  if (ys.h <= 0 || ys.w <= 0) throw Error(ErrorCode::ShapeMismatch, "avg_pool input " + xs.str());
  const double scale = 1.0 / (k * k);
  Tensor y(ys);
  for (int n = 0; n < ys.n; ++n)
    for (int c = 0; c < ys.c; ++c)
      for (int oh = 0; oh < ys.h; ++oh)
        for (int ow = 0; ow < ys.w; ++ow) {
          double acc = 0.0;
          for (int kh = 0; kh < k; ++kh) {
            const int ih = oh * stride - pad + kh;
            if (ih < 0 || ih >= xs.h) continue;
            for (int kw = 0; kw < k; ++kw) {
              const int iw = ow * stride - pad + kw;
              if (iw < 0 || iw >= xs.w) continue;
              acc += x.at(n, c, ih, iw);
            }
          }
          y.at(n, c, oh, ow) = acc * scale;
        }
  return y;
}

Tensor avg_pool_backward(const Tensor& dy, const Shape& xs, int k, int stride, int pad)
{
  const Shape& ys = dy.shape();
  const double scale = 1.0 / (k * k);
  Tensor dx(xs);
  for (int n = 0; n < ys.n; ++n)
    for (int c = 0; c < ys.c; ++c)
      for (int oh = 0; oh < ys.h; ++oh)
        for (int ow = 0; ow < ys.w; ++ow) {
          const double g = dy.at(n, c, oh, ow) * scale;
          for (int kh = 0; kh < k; ++kh) {
            const int ih = oh * stride - pad + kh;
            if (ih < 0 || ih >= xs.h) continue;
            for (int kw = 0; kw < k; ++kw) {
              const int iw = ow * stride - pad + kw;
              if (iw < 0 || iw >= xs.w) continue;
              dx.at(n, c, ih, iw) += g;
            }
          }
        }
  return dx;
}

BatchNormForward batch_norm_train(const Tensor& x, const std::vector<double>& gamma,
                                  const std::vector<double>& beta, double eps)
{
  const Shape& s = x.shape();
  const double count = static_cast<double>(s.n) * s.h * s.w;
  BatchNormForward f{Tensor(s), Tensor(s), std::vector<double>(s.c), std::vector<double>(s.c),
                     std::vector<double>(s.c)};
  for (int c = 0; c < s.c; ++c) {
    double sum = 0.0;
    for (int n = 0; n < s.n; ++n)
      for (int h = 0; h < s.h; ++h)
        for (int w = 0; w < s.w; ++w) sum += x.at(n, c, h, w);
    const double mean = sum / count;
    double sq = 0.0;
    for (int n = 0; n < s.n; ++n)
      for (int h = 0; h < s.h; ++h)
        for (int w = 0; w < s.w; ++w) {
          const double d = x.at(n, c, h, w) - mean;
          sq += d * d;
        }
    const double var = sq / count;
    const double inv_std = 1.0 / std::sqrt(var + eps);
    f.mean[c] = mean;
    f.var[c] = var;
    f.inv_std[c] = inv_std;
    for (int n = 0; n < s.n; ++n)
      for (int h = 0; h < s.h; ++h)
        for (int w = 0; w < s.w; ++w) {
          const double xh = (x.at(n, c, h, w) - mean) * inv_std;
          f.xhat.at(n, c, h, w) = xh;
          f.y.at(n, c, h, w) = gamma[c] * xh + beta[c];
        }
  }
  return f;
}

Tensor batch_norm_eval(const Tensor& x, const std::vector<double>& gamma, const std::vector<double>& beta,
                       const std::vector<double>& mean, const std::vector<double>& var, double eps)
{
  const Shape& s = x.shape();
  Tensor y(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const double inv_std = 1.0 / std::sqrt(var[c] + eps);
      for (int h = 0; h < s.h; ++h)
        for (int w = 0; w < s.w; ++w) {
          y.at(n, c, h, w) = gamma[c] * ((x.at(n, c, h, w) - mean[c]) * inv_std) + beta[c];
        }
    }
  return y;
}

BatchNormGrads batch_norm_backward(const Tensor& dy, const Tensor& xhat, const std::vector<double>& gamma,
                                   const std::vector<double>& inv_std)
{
  const Shape& s = dy.shape();
  const double count = static_cast<double>(s.n) * s.h * s.w;
  BatchNormGrads g{Tensor(s), std::vector<double>(s.c), std::vector<double>(s.c)};
  for (int c = 0; c < s.c; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int n = 0; n < s.n; ++n)
      for (int h = 0; h < s.h; ++h)
        for (int w = 0; w < s.w; ++w) {
          sum_dy += dy.at(n, c, h, w);
          sum_dy_xhat += dy.at(n, c, h, w) * xhat.at(n, c, h, w);
        }
    g.dgamma[c] = sum_dy_xhat;
    g.dbeta[c] = sum_dy;
    const double scale = gamma[c] * inv_std[c] / count;
    for (int n = 0; n < s.n; ++n)
      for (int h = 0; h < s.h; ++h)
        for (int w = 0; w < s.w; ++w) {
          g.dx.at(n, c, h, w) =
              scale * (count * dy.at(n, c, h, w) - sum_dy - xhat.at(n, c, h, w) * sum_dy_xhat);
        }
  }
  return g;
}

}  // namespace fusemod::nn::kernels::ref
