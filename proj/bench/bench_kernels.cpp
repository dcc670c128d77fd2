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
// Times the serial reference kernels against the OpenMP ones and checks that
// both produce identical bits.
//
//   bench_kernels [--threads N] [--repeat R]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "fusemod/kernels.hpp"

namespace k = fusemod::nn::kernels;
using fusemod::nn::Shape;
using fusemod::nn::Tensor;

namespace {

Tensor randn(Shape s, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  Tensor t(s);
  for (auto& v : t.data()) v = d(rng);
  return t;
}

double best_ms(int repeat, const std::function<void()>& f)
{
  double best = 1e300;
  for (int i = 0; i < repeat; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

struct Row {
  std::string name;
  double ref_ms;
  double par_ms;
  bool equal;
};

template <typename Ref, typename Par>
Row measure(const std::string& name, int repeat, Ref ref, Par par)
{
  Tensor a, b;
  const double r = best_ms(repeat, [&] { a = ref(); });
  const double p = best_ms(repeat, [&] { b = par(); });
  return {name, r, p, a == b};
}

}  // namespace

int main(int argc, char** argv)
{
  int threads = k::max_threads();
  int repeat = 5;
  for (int i = 1; i + 1 < argc; i += 2) {
    if (!std::strcmp(argv[i], "--threads")) threads = std::atoi(argv[i + 1]);
    else if (!std::strcmp(argv[i], "--repeat")) repeat = std::atoi(argv[i + 1]);
  }
  k::set_threads(threads);

  // Shapes of the tiny encoder at 256 x 1224.
  const Tensor x = randn({1, 16, 64, 306}, 1);
  const Tensor w1 = randn({16, 8, 1, 1}, 2);
  const Tensor wd = randn({16, 1, 3, 3}, 3);
  const Tensor w3 = randn({16, 16, 3, 3}, 4);
  const k::ConvGeometry g1{1, 0, 2}, gd{1, 1, 16}, g3{1, 1, 1};
  const Tensor dy = randn({1, 16, 64, 306}, 5);
  std::vector<double> gamma(16, 1.2), beta(16, 0.1);

  std::vector<Row> rows;
  rows.push_back(measure("conv 1x1 g2", repeat, [&] { return k::ref::conv2d_forward(x, w1, nullptr, g1); },
                         [&] { return k::par::conv2d_forward(x, w1, nullptr, g1); }));
  rows.push_back(measure("conv 3x3 depthwise", repeat, [&] { return k::ref::conv2d_forward(x, wd, nullptr, gd); },
                         [&] { return k::par::conv2d_forward(x, wd, nullptr, gd); }));
  rows.push_back(measure("conv 3x3 dense", repeat, [&] { return k::ref::conv2d_forward(x, w3, nullptr, g3); },
                         [&] { return k::par::conv2d_forward(x, w3, nullptr, g3); }));
  rows.push_back(measure("conv 3x3 d/dx", repeat, [&] { return k::ref::conv2d_backward_input(dy, w3, g3, x.shape()); },
                         [&] { return k::par::conv2d_backward_input(dy, w3, g3, x.shape()); }));
  rows.push_back(measure("conv 3x3 d/dw", repeat, [&] { return k::ref::conv2d_backward_weight(dy, x, g3, w3.shape()); },
                         [&] { return k::par::conv2d_backward_weight(dy, x, g3, w3.shape()); }));
  rows.push_back(measure("batch norm train", repeat, [&] { return k::ref::batch_norm_train(x, gamma, beta, 1e-5).y; },
                         [&] { return k::par::batch_norm_train(x, gamma, beta, 1e-5).y; }));
  rows.push_back(measure("avg pool 3x3/2", repeat, [&] { return k::ref::avg_pool_forward(x, 3, 2, 1); },
                         [&] { return k::par::avg_pool_forward(x, 3, 2, 1); }));
  rows.push_back(measure("max pool 3x3/2", repeat, [&] {
    std::vector<long> arg;
    return k::ref::max_pool_forward(x, 3, 2, 1, arg);
  }, [&] {
    std::vector<long> arg;
    return k::par::max_pool_forward(x, 3, 2, 1, arg);
  }));

  std::printf("threads %d, best of %d\n", threads, repeat);
  std::printf("%-20s %10s %10s %8s %s\n", "kernel", "ref ms", "par ms", "speedup", "bits");
  bool all_equal = true;
  for (const auto& r : rows) {
    std::printf("%-20s %10.3f %10.3f %8.2f %s\n", r.name.c_str(), r.ref_ms, r.par_ms, r.ref_ms / r.par_ms,
                r.equal ? "equal" : "DIFFER");
    all_equal = all_equal && r.equal;
  }
  return all_equal ? 0 : 1;
}
