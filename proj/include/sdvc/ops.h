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

#ifndef SDVC_OPS_H_
#define SDVC_OPS_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "sdvc/tensor.h"

namespace sdvc {

enum class LayerKind { kConv, kTConv, kActivation, kConcat };

// One layer of the "Conv C/k/s" vocabulary.
struct LayerSpec {
  LayerKind kind = LayerKind::kConv;
  size_t out_channels = 0;
  size_t kernel = 3;
  size_t stride = 1;
  size_t padding = 1;
  size_t output_padding = 0;  // tconv only

  static LayerSpec Conv(size_t c, size_t k, size_t s) {
    return {LayerKind::kConv, c, k, s, k / 2, 0};
  }
  // Transposed conv that exactly multiplies the spatial size by s when k is
  // odd (k=5, s=2: pad 2, output padding 1).
  static LayerSpec TConv(size_t c, size_t k, size_t s) {
    return {LayerKind::kTConv, c, k, s, k / 2, s - 1};
  }

  // Throws on invalid combinations (even conv kernel, stride outside {1,2}).
  void Validate() const;
};

size_t ConvOutputSize(size_t in, size_t k, size_t s, size_t p);
size_t TConvOutputSize(size_t in, size_t k, size_t s, size_t p, size_t op);

// input NCHW, weight [Cout, Cin, k, k], bias [Cout] (may be undefined).
Tensor Conv2D(const Tensor& input, const LayerSpec& spec, const Tensor& weight,
              const Tensor& bias);
// input NCHW, weight [Cin, Cout, k, k], bias [Cout] (may be undefined).
Tensor TConv2D(const Tensor& input, const LayerSpec& spec,
               const Tensor& weight, const Tensor& bias);

inline constexpr double kLeakySlope = 0.01;
Tensor LeakyRelu(const Tensor& x, double slope = kLeakySlope);

Tensor ConcatChannels(const Tensor& a, const Tensor& b);
Tensor SliceChannels(const Tensor& x, size_t begin, size_t end);
// Keeps the top-left h x w window.
Tensor CropSpatial(const Tensor& x, size_t h, size_t w);
Tensor UpsampleNearest2x(const Tensor& x);
Tensor AvgPool2x2(const Tensor& x);

Tensor Add(const Tensor& a, const Tensor& b);
Tensor Sub(const Tensor& a, const Tensor& b);
Tensor Mul(const Tensor& a, const Tensor& b);
Tensor Div(const Tensor& a, const Tensor& b);
Tensor AddScalar(const Tensor& a, double s);
Tensor MulScalar(const Tensor& a, double s);
Tensor Square(const Tensor& a);
Tensor PowScalar(const Tensor& a, double p);
Tensor Softplus(const Tensor& a);
// max(a, lo) with the true derivative (zero below the bound).
Tensor ClampMin(const Tensor& a, double lo);
// max(a, lo); below the bound the gradient still passes when it points
// upward, so a clamped value can recover during training.
Tensor LowerBound(const Tensor& a, double lo);
Tensor NegLog2(const Tensor& a);
// Rounds half away from zero. Gradient passes straight through.
Tensor Round(const Tensor& a);

Tensor Sum(const Tensor& a);
Tensor Mean(const Tensor& a);
// [N,C,H,W] -> [N,C,1,1]
Tensor MeanSpatial(const Tensor& a);

// Separable valid-mode filter with the given 1-D taps. A spatial dimension
// shorter than the filter is left unfiltered.
Tensor SeparableFilterValid(const Tensor& x, std::span<const double> taps);

// P(q) = Phi((q - mu + 1/2)/sigma) - Phi((q - mu - 1/2)/sigma), elementwise.
Tensor GaussianLikelihood(const Tensor& y, const Tensor& mu,
                          const Tensor& sigma);
double GaussianLikelihoodValue(double y, double mu, double sigma);

// Mean per-pixel cross entropy. logits [N,K,H,W], labels N*H*W in [0,K).
Tensor SoftmaxCrossEntropy(const Tensor& logits,
                           std::span<const uint8_t> labels);
// Per-pixel argmax over channels; returns N*H*W labels.
std::vector<uint8_t> ArgmaxChannels(const Tensor& logits);

}  // namespace sdvc

#endif  // SDVC_OPS_H_
