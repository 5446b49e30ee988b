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

#ifndef SDVC_MS_SSIM_H_
#define SDVC_MS_SSIM_H_

#include <array>
#include <cstddef>
#include <vector>

#include "sdvc/tensor.h"

namespace sdvc {

// Multi-scale SSIM settings. Defaults are the canonical five-scale
// constants: 11-tap Gaussian window with sigma 1.5, K1 = 0.01, K2 = 0.03,
// data range 1, 2x2 average pooling between scales.
struct MsSsimConfig {
  size_t scales = 5;
  size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
  std::array<double, 5> weights = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

  // Smallest image side the configuration accepts: (window-1)*2^(scales-1).
  size_t MinSide() const;
  // The first `scales` weights, renormalised to sum to one when fewer than
  // five scales are used.
  std::vector<double> ScaleWeights() const;
};

std::vector<double> GaussianTaps(size_t window, double sigma);

// Differentiable MS-SSIM of two NCHW image tensors in [0, 1], averaged over
// batch and channels. Throws kDimension if a side is below MinSide().
Tensor MsSsim(const Tensor& a, const Tensor& b, const MsSsimConfig& cfg = {});

}  // namespace sdvc

#endif  // SDVC_MS_SSIM_H_
