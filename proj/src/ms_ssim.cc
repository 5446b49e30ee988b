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

#include "sdvc/ms_ssim.h"

#include <cmath>
#include <numeric>

#include "sdvc/common.h"
#include "sdvc/ops.h"

namespace sdvc {

size_t MsSsimConfig::MinSide() const {
  return (window - 1) * (size_t{1} << (scales - 1));
}

std::vector<double> MsSsimConfig::ScaleWeights() const {
  std::vector<double> w(weights.begin(), weights.begin() + scales);
  if (scales < weights.size()) {
    const double s = std::accumulate(w.begin(), w.end(), 0.0);
    for (double& v : w) v /= s;
  }
  return w;
}

std::vector<double> GaussianTaps(size_t window, double sigma) {
  std::vector<double> taps(window);
  const double c = (static_cast<double>(window) - 1.0) / 2.0;
  double sum = 0.0;
  for (size_t i = 0; i < window; ++i) {
    const double d = static_cast<double>(i) - c;
    taps[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += taps[i];
  }
  for (double& t : taps) t /= sum;
  return taps;
}

Tensor MsSsim(const Tensor& a, const Tensor& b, const MsSsimConfig& cfg) {
  if (a.shape() != b.shape() || a.rank() != 4) {
    Fail(ErrorCode::kDimension, "ms_ssim: shape mismatch " +
                                    ShapeString(a.shape()) + " vs " +
                                    ShapeString(b.shape()));
  }
  if (cfg.scales < 1 || cfg.scales > 5) {
    Fail(ErrorCode::kInvalidArgument, "ms_ssim: scales must be in [1, 5]");
  }
  const size_t min_side = std::min(a.dim(2), a.dim(3));
  if (min_side < cfg.MinSide()) {
    Fail(ErrorCode::kDimension,
         "ms_ssim: image side " + std::to_string(min_side) + " is below " +
             std::to_string(cfg.MinSide()) + " required for " +
             std::to_string(cfg.scales) +
             " scales; lower MsSsimConfig::scales for small images");
  }
  const std::vector<double> taps = GaussianTaps(cfg.window, cfg.sigma);
  const std::vector<double> weights = cfg.ScaleWeights();
  const double c1 = std::pow(cfg.k1 * cfg.data_range, 2);
  const double c2 = std::pow(cfg.k2 * cfg.data_range, 2);

  Tensor x = a, y = b;
  Tensor product;  // [N,C,1,1]
  for (size_t s = 0; s < cfg.scales; ++s) {
    if (s > 0) {
      x = AvgPool2x2(x);
      y = AvgPool2x2(y);
    }
    Tensor mu_x = SeparableFilterValid(x, taps);
    Tensor mu_y = SeparableFilterValid(y, taps);
    Tensor mu_xx = Square(mu_x), mu_yy = Square(mu_y), mu_xy = Mul(mu_x, mu_y);
    Tensor s_xx = Sub(SeparableFilterValid(Square(x), taps), mu_xx);
    Tensor s_yy = Sub(SeparableFilterValid(Square(y), taps), mu_yy);
    Tensor s_xy = Sub(SeparableFilterValid(Mul(x, y), taps), mu_xy);
    Tensor cs_map = Div(AddScalar(MulScalar(s_xy, 2.0), c2),
                        AddScalar(Add(s_xx, s_yy), c2));
    Tensor term;
    if (s + 1 < cfg.scales) {
      term = MeanSpatial(cs_map);
    } else {
      Tensor lum = Div(AddScalar(MulScalar(mu_xy, 2.0), c1),
                       AddScalar(Add(mu_xx, mu_yy), c1));
      term = MeanSpatial(Mul(lum, cs_map));
    }
    term = PowScalar(ClampMin(term, 1e-8), weights[s]);
    product = product.defined() ? Mul(product, term) : term;
  }
  return Mean(product);
}

}  // namespace sdvc
