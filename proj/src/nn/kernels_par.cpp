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

#include "fusemod/error.hpp"
#include "fusemod/kernels.hpp"

namespace fusemod::nn::kernels::par {

namespace {

/// Range of output columns whose tap `kw` lands inside [0, in_w).
inline void valid_range(int out_w, int in_w, int stride, int pad, int kw, int& lo, int& hi)
{
  // iw = ow * stride - pad + kw, need 0 <= iw < in_w
  const int a = pad - kw;
  lo = a <= 0 ? 0 : (a + stride - 1) / stride;
  const int b = in_w - 1 + pad - kw;
  hi = b < 0 ? 0 : std::min(out_w, b / stride + 1);
}

}  // namespace

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor* bias, const ConvGeometry& g)
{
  const Shape ys = conv2d_output_shape(x.shape(), w.shape(), g);
  const Shape xs = x.shape();
  const int k = w.shape().h;
  const int cin_g = xs.c / g.groups;
  const int cout_g = ys.c / g.groups;
  const int s = g.stride, p = g.pad;
  Tensor y(ys);
  const double* xp = x.ptr();
  const double* wp = w.ptr();
  double* yp = y.ptr();
  const long jobs = static_cast<long>(ys.n) * ys.c;

#pragma omp parallel for schedule(static)
  for (long job = 0; job < jobs; ++job) {
    const int n = static_cast<int>(job / ys.c);
    const int o = static_cast<int>(job % ys.c);
    const int group = o / cout_g;
    double* acc = yp + (static_cast<std::size_t>(n) * ys.c + o) * ys.plane();
    std::fill(acc, acc + ys.plane(), 0.0);
    for (int ci = 0; ci < cin_g; ++ci) {
      const int c = group * cin_g + ci;
      const double* xplane = xp + (static_cast<std::size_t>(n) * xs.c + c) * xs.plane();
      for (int kh = 0; kh < k; ++kh) {
        for (int kw = 0; kw < k; ++kw) {
          const double wv = wp[((static_cast<std::size_t>(o) * cin_g + ci) * k + kh) * k + kw];
          int lo = 0, hi = 0;
          valid_range(ys.w, xs.w, s, p, kw, lo, hi);
          for (int oh = 0; oh < ys.h; ++oh) {
            const int ih = oh * s - p + kh;
            if (ih < 0 || ih >= xs.h) continue;
            const double* xrow = xplane + static_cast<std::size_t>(ih) * xs.w - p + kw;
            double* arow = acc + static_cast<std::size_t>(oh) * ys.w;
            for (int ow = lo; ow < hi; ++ow) arow[ow] += xrow[ow * s] * wv;
          }
        }
      }
    }
    const double b = bias ? (*bias)[static_cast<std::size_t>(o)] : 0.0;
    for (std::size_t i = 0; i < ys.plane(); ++i) acc[i] = acc[i] + b;
  }
  return y;
}

Tensor conv2d_backward_input(const Tensor& dy, const Tensor& w, const ConvGeometry& g, const Shape& xs)
{
  const Shape ys = dy.shape();
  const int k = w.shape().h;
  const int cin_g = xs.c / g.groups;
  const int cout_g = ys.c / g.groups;
  const int s = g.stride, p = g.pad;
  Tensor dx(xs);
  const double* dyp = dy.ptr();
  const double* wp = w.ptr();
  double* dxp = dx.ptr();
  const long jobs = static_cast<long>(xs.n) * xs.c;

#pragma omp parallel for schedule(static)
  for (long job = 0; job < jobs; ++job) {
    const int n = static_cast<int>(job / xs.c);
    const int c = static_cast<int>(job % xs.c);
    const int group = c / cin_g;
    const int ci = c % cin_g;
    double* acc = dxp + (static_cast<std::size_t>(n) * xs.c + c) * xs.plane();
    for (int o = group * cout_g; o < (group + 1) * cout_g; ++o) {
      const double* dplane = dyp + (static_cast<std::size_t>(n) * ys.c + o) * ys.plane();
      for (int kh = 0; kh < k; ++kh) {
        for (int kw = 0; kw < k; ++kw) {
          const double wv = wp[((static_cast<std::size_t>(o) * cin_g + ci) * k + kh) * k + kw];
          int lo = 0, hi = 0;
          valid_range(ys.w, xs.w, s, p, kw, lo, hi);
          for (int oh = 0; oh < ys.h; ++oh) {
            const int ih = oh * s - p + kh;
            if (ih < 0 || ih >= xs.h) continue;
            double* xrow = acc + static_cast<std::size_t>(ih) * xs.w - p + kw;
            const double* drow = dplane + static_cast<std::size_t>(oh) * ys.w;
            for (int ow = lo; ow < hi; ++ow) xrow[ow * s] += drow[ow] * wv;
          }
        }
      }
    }
  }
  return dx;
}

Tensor conv2d_backward_weight(const Tensor& dy, const Tensor& x, const ConvGeometry& g, const Shape& ws)
{
  const Shape ys = dy.shape();
  const Shape xs = x.shape();
  const int cin_g = xs.c / g.groups;
  const int cout_g = ys.c / g.groups;
  const int s = g.stride, p = g.pad;
  Tensor dw(ws);
  const double* dyp = dy.ptr();
  const double* xp = x.ptr();
  double* dwp = dw.ptr();
  const long jobs = static_cast<long>(ws.n) * ws.c;

#pragma omp parallel for schedule(static)
  for (long job = 0; job < jobs; ++job) {
    const int o = static_cast<int>(job / ws.c);
    const int ci = static_cast<int>(job % ws.c);
    const int c = (o / cout_g) * cin_g + ci;
    for (int kh = 0; kh < ws.h; ++kh) {
      for (int kw = 0; kw < ws.w; ++kw) {
        int lo = 0, hi = 0;
        valid_range(ys.w, xs.w, s, p, kw, lo, hi);
        double acc = 0.0;
        for (int n = 0; n < ys.n; ++n) {
          const double* dplane = dyp + (static_cast<std::size_t>(n) * ys.c + o) * ys.plane();
          const double* xplane = xp + (static_cast<std::size_t>(n) * xs.c + c) * xs.plane();
          for (int oh = 0; oh < ys.h; ++oh) {
            const int ih = oh * s - p + kh;
            if (ih < 0 || ih >= xs.h) continue;
            const double* drow = dplane + static_cast<std::size_t>(oh) * ys.w;
            const double* xrow = xplane + static_cast<std::size_t>(ih) * xs.w - p + kw;
            for (int ow = lo; ow < hi; ++ow) acc += drow[ow] * xrow[ow * s];
          }
        }
        dwp[((static_cast<std::size_t>(o) * ws.c + ci) * ws.h + kh) * ws.w + kw] = acc;
      }
    }
  }
  return dw;
}

Tensor max_pool_forward(const Tensor& x, int k, int stride, int pad, std::vector<long>& argmax)
{
  const Shape xs = x.shape();
  const Shape ys{xs.n, xs.c, conv_out_size(xs.h, k, stride, pad), conv_out_size(xs.w, k, stride, pad)};
  if (ys.h <= 0 || ys.w <= 0) throw Error(ErrorCode::ShapeMismatch, "max_pool input " + xs.str());
  Tensor y(ys);
  argmax.assign(ys.numel(), -1);
  const long planes = static_cast<long>(ys.n) * ys.c;

#pragma omp parallel for schedule(static)
  for (long pl = 0; pl < planes; ++pl) {
    const std::size_t in_base = static_cast<std::size_t>(pl) * xs.plane();
    const std::size_t out_base = static_cast<std::size_t>(pl) * ys.plane();
    const double* xplane = x.ptr() + in_base;
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
            const double v = xplane[static_cast<std::size_t>(ih) * xs.w + iw];
            if (v > best || where < 0) {
              best = v;
              where = static_cast<long>(in_base + static_cast<std::size_t>(ih) * xs.w + iw);
            }
          }
        }
        const std::size_t oi = out_base + static_cast<std::size_t>(oh) * ys.w + ow;
        y[oi] = best;
        argmax[oi] = where;
      }
  }
  return y;
}

Tensor max_pool_backward(const Tensor& dy, const std::vector<long>& argmax, const Shape& xs)
{
  Tensor dx(xs);
  const Shape ys = dy.shape();
  const long planes = static_cast<long>(ys.n) * ys.c;

#pragma omp parallel for schedule(static)
  for (long pl = 0; pl < planes; ++pl) {
    const std::size_t base = static_cast<std::size_t>(pl) * ys.plane();
    for (std::size_t i = base; i < base + ys.plane(); ++i) {
      if (argmax[i] >= 0) dx[static_cast<std::size_t>(argmax[i])] += dy[i];
    }
  }
  return dx;
}

Tensor avg_pool_forward(const Tensor& x, int k, int stride, int pad)
{
  const Shape xs = x.shape();
  const Shape ys{xs.n, xs.c, conv_out_size(xs.h, k, stride, pad), conv_out_size(xs.w, k, stride, pad)};
  if (ys.h <= 0 || ys.w <= 0) throw Error(ErrorCode::ShapeMismatch, "avg_pool input " + xs.str());
  const double scale = 1.0 / (k * k);
  Tensor y(ys);
  const long planes = static_cast<long>(ys.n) * ys.c;

#pragma omp parallel for schedule(static)
  for (long pl = 0; pl < planes; ++pl) {
    const double* xplane = x.ptr() + static_cast<std::size_t>(pl) * xs.plane();
    double* yplane = y.ptr() + static_cast<std::size_t>(pl) * ys.plane();
    for (int oh = 0; oh < ys.h; ++oh)
      for (int ow = 0; ow < ys.w; ++ow) {
        double acc = 0.0;
        for (int kh = 0; kh < k; ++kh) {
          const int ih = oh * stride - pad + kh;
          if (ih < 0 || ih >= xs.h) continue;
          for (int kw = 0; kw < k; ++kw) {
            const int iw = ow * stride - pad + kw;
            if (iw < 0 || iw >= xs.w) continue;
            acc += xplane[static_cast<std::size_t>(ih) * xs.w + iw];
          }
        }
        yplane[static_cast<std::size_t>(oh) * ys.w + ow] = acc * scale;
      }
  }
  return y;
}

Tensor avg_pool_backward(const Tensor& dy, const Shape& xs, int k, int stride, int pad)
{
  const Shape ys = dy.shape();
  const double scale = 1.0 / (k * k);
  Tensor dx(xs);
  const long planes = static_cast<long>(ys.n) * ys.c;

#pragma omp parallel for schedule(static)
  for (long pl = 0; pl < planes; ++pl) {
    const double* dplane = dy.ptr() + static_cast<std::size_t>(pl) * ys.plane();
    double* xplane = dx.ptr() + static_cast<std::size_t>(pl) * xs.plane();
    for (int oh = 0; oh < ys.h; ++oh)
      for (int ow = 0; ow < ys.w; ++ow) {
        const double g = dplane[static_cast<std::size_t>(oh) * ys.w + ow] * scale;
        for (int kh = 0; kh < k; ++kh) {
          const int ih = oh * stride - pad + kh;
          if (ih < 0 || ih >= xs.h) continue;
          for (int kw = 0; kw < k; ++kw) {
            const int iw = ow * stride - pad + kw;
            if (iw < 0 || iw >= xs.w) continue;
            xplane[static_cast<std::size_t>(ih) * xs.w + iw] += g;
          }
        }
      }
  }
  return dx;
}

BatchNormForward batch_norm_train(const Tensor& x, const std::vector<double>& gamma,
                                  const std::vector<double>& beta, double eps)
{
  const Shape s = x.shape();
  const double count = static_cast<double>(s.n) * s.h * s.w;
  const std::size_t plane = s.plane();
  BatchNormForward f{Tensor(s), Tensor(s), std::vector<double>(s.c), std::vector<double>(s.c),
                     std::vector<double>(s.c)};

#pragma omp parallel for schedule(static)
  for (int c = 0; c < s.c; ++c) {
    double sum = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const double* xp = x.ptr() + (static_cast<std::size_t>(n) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) sum += xp[i];
    }
    const double mean = sum / count;
    double sq = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const double* xp = x.ptr() + (static_cast<std::size_t>(n) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double d = xp[i] - mean;
        sq += d * d;
      }
    }
    const double var = sq / count;
    const double inv_std = 1.0 / std::sqrt(var + eps);
    f.mean[c] = mean;
    f.var[c] = var;
    f.inv_std[c] = inv_std;
    for (int n = 0; n < s.n; ++n) {
      const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double xh = (x[base + i] - mean) * inv_std;
        f.xhat[base + i] = xh;
        f.y[base + i] = gamma[c] * xh + beta[c];
      }
    }
  }
  return f;
}

Tensor batch_norm_eval(const Tensor& x, const std::vector<double>& gamma, const std::vector<double>& beta,
                       const std::vector<double>& mean, const std::vector<double>& var, double eps)
{
  const Shape s = x.shape();
  const std::size_t plane = s.plane();
  Tensor y(s);
  const long planes = static_cast<long>(s.n) * s.c;

#pragma omp parallel for schedule(static)
  for (long pl = 0; pl < planes; ++pl) {
    const int c = static_cast<int>(pl % s.c);
    const double inv_std = 1.0 / std::sqrt(var[c] + eps);
    const std::size_t base = static_cast<std::size_t>(pl) * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      y[base + i] = gamma[c] * ((x[base + i] - mean[c]) * inv_std) + beta[c];
    }
  }
  return y;
}

BatchNormGrads batch_norm_backward(const Tensor& dy, const Tensor& xhat, const std::vector<double>& gamma,
                                   const std::vector<double>& inv_std)
{
  const Shape s = dy.shape();
  const double count = static_cast<double>(s.n) * s.h * s.w;
  const std::size_t plane = s.plane();
  BatchNormGrads g{Tensor(s), std::vector<double>(s.c), std::vector<double>(s.c)};

#pragma omp parallel for schedule(static)
  for (int c = 0; c < s.c; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += dy[base + i];
        sum_dy_xhat += dy[base + i] * xhat[base + i];
      }
    }
    g.dgamma[c] = sum_dy_xhat;
    g.dbeta[c] = sum_dy;
    const double scale = gamma[c] * inv_std[c] / count;
    for (int n = 0; n < s.n; ++n) {
      const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        g.dx[base + i] = scale * (count * dy[base + i] - sum_dy - xhat[base + i] * sum_dy_xhat);
      }
    }
  }
  return g;
}

}  // namespace fusemod::nn::kernels::par
