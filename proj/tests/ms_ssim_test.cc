// Copyright (c) the SDVC Project Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "sdvc/common.h"
#include "sdvc/ms_ssim.h"
#include "test_util.h"

namespace sdvc {
namespace {

using Plane = std::vector<std::vector<double>>;

// Straight-line MS-SSIM: full 2-D Gaussian window, valid positions only,
// 2x2 box downsampling between scales.
double OracleMsSsim(Plane a, Plane b) {
  const int win = 11;
  const double sigma = 1.5;
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const double weights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  double g[win][win];
  double gsum = 0;
  for (int i = 0; i < win; ++i) {
    for (int j = 0; j < win; ++j) {
      const double di = i - 5.0, dj = j - 5.0;
      g[i][j] = std::exp(-(di * di + dj * dj) / (2 * sigma * sigma));
      gsum += g[i][j];
    }
  }
  double result = 1.0;
  for (int scale = 0; scale < 5; ++scale) {
    if (scale > 0) {
      Plane da(a.size() / 2, std::vector<double>(a[0].size() / 2));
      Plane db = da;
      for (size_t y = 0; y < da.size(); ++y) {
        for (size_t x = 0; x < da[0].size(); ++x) {
          da[y][x] = (a[2 * y][2 * x] + a[2 * y][2 * x + 1] +
                      a[2 * y + 1][2 * x] + a[2 * y + 1][2 * x + 1]) / 4;
          db[y][x] = (b[2 * y][2 * x] + b[2 * y][2 * x + 1] +
                      b[2 * y + 1][2 * x] + b[2 * y + 1][2 * x + 1]) / 4;
        }
      }
      a = da;
      b = db;
    }
    const int h = static_cast<int>(a.size()), w = static_cast<int>(a[0].size());
    double cs_sum = 0, ssim_sum = 0;
    int count = 0;
    for (int y = 0; y + win <= h; ++y) {
      for (int x = 0; x + win <= w; ++x) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int i = 0; i < win; ++i) {
          for (int j = 0; j < win; ++j) {
            const double wt = g[i][j] / gsum;
            const double va = a[y + i][x + j], vb = b[y + i][x + j];
            ma += wt * va;
            mb += wt * vb;
            saa += wt * va * va;
            sbb += wt * vb * vb;
            sab += wt * va * vb;
          }
        }
        saa -= ma * ma;
        sbb -= mb * mb;
        sab -= ma * mb;
        const double cs = (2 * sab + c2) / (saa + sbb + c2);
        const double l = (2 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        cs_sum += cs;
        ssim_sum += l * cs;
        ++count;
      }
    }
    const double term = scale < 4 ? cs_sum / count : ssim_sum / count;
    result *= std::pow(term, weights[scale]);
  }
  return result;
}

Plane PlaneOf(const Tensor& t, size_t c) {
  const size_t h = t.dim(2), w = t.dim(3);
  Plane p(h, std::vector<double>(w));
  for (size_t y = 0; y < h; ++y) {
    for (size_t x = 0; x < w; ++x) p[y][x] = t[(c * h + y) * w + x];
  }
  return p;
}

TEST(MsSsim, SelfSimilarityIsOne) {
  ScopedPrecision p(Precision::kReference);
  std::mt19937_64 rng(1);
  const Tensor x = testing::RandomTensor({1, 3, 160, 176}, rng, 0, 1);
  EXPECT_NEAR(MsSsim(x, x).item(), 1.0, 1e-9);
}

TEST(MsSsim, Symmetric) {
  ScopedPrecision p(Precision::kReference);
  std::mt19937_64 rng(2);
  const Tensor a = testing::RandomTensor({2, 3, 160, 160}, rng, 0, 1);
  const Tensor b = testing::RandomTensor({2, 3, 160, 160}, rng, 0, 1);
  EXPECT_NEAR(MsSsim(a, b).item(), MsSsim(b, a).item(), 1e-9);
}

TEST(MsSsim, GrayVersusNoisyGrayMatchesStraightLineOracle) {
  ScopedPrecision p(Precision::kReference);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> noise(0.0, 0.1);
  const size_t h = 176, w = 192;
  std::vector<double> clean(h * w, 0.5), noisy(h * w);
  for (size_t i = 0; i < noisy.size(); ++i) noisy[i] = 0.5 + noise(rng);
  const Tensor a = Tensor::FromData({1, 1, h, w}, clean);
  const Tensor b = Tensor::FromData({1, 1, h, w}, noisy);
  const double got = MsSsim(a, b).item();
  const double want = OracleMsSsim(PlaneOf(a, 0), PlaneOf(b, 0));
  EXPECT_LT(got, 1.0);
  EXPECT_NEAR(got, want, 1e-6);
}

TEST(MsSsim, RejectsImagesBelowTheMinimumSide) {
  const Tensor a = Tensor::Zeros({1, 1, 159, 200});
  EXPECT_THROW(MsSsim(a, a), Error);
  MsSsimConfig cfg;
  cfg.scales = 2;
  EXPECT_NO_THROW(MsSsim(a, a, cfg));
}

}  // namespace
}  // namespace sdvc
