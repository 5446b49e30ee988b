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

#ifndef SDVC_ENTROPY_MODEL_H_
#define SDVC_ENTROPY_MODEL_H_

#include <array>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "sdvc/latents.h"
#include "sdvc/parameter_store.h"
#include "sdvc/range_coder.h"
#include "sdvc/tensor.h"

namespace sdvc {

inline constexpr double kScaleBound = 0.04;
inline constexpr double kLikelihoodFloor = 1e-9;
// Integer latents live in [-kSymbolMax, kSymbolMax].
inline constexpr int kSymbolMax = 255;
inline constexpr uint32_t kEscapeBits = 9;

// Learned per-channel factorized density for hyper-latents: a monotone
// 1-3-3-3-1 network whose sigmoid output is the CDF.
inline constexpr size_t kPriorWidth = 3;

void AddFactorizedPrior(ParameterStore& store, const std::string& prefix,
                        size_t channels, std::mt19937_64& rng);

// Differentiable likelihood of each element of z ([N,C,h,w]) under the
// prior stored at `prefix`: CDF(z + 1/2) - CDF(z - 1/2).
Tensor FactorizedLikelihood(const Tensor& z, const ParameterStore& store,
                            const std::string& prefix);

// Plain evaluation of the prior, for coding tables and checks.
class FactorizedPriorView {
 public:
  FactorizedPriorView(const ParameterStore& store, const std::string& prefix);
  size_t channels() const { return channels_.size(); }
  double Logit(size_t c, double x) const;
  double Cdf(size_t c, double x) const;
  double Likelihood(size_t c, double x) const;

  struct Channel {
    // softplus(matrix), row-major [out][in]
    std::array<std::vector<double>, 4> weight;
    std::array<std::vector<double>, 4> bias;
    std::array<std::vector<double>, 3> gate;  // tanh(factor)
  };

 private:
  std::vector<Channel> channels_;
};

// Coding table over the window [lo, lo + n - 2]; the last symbol is an
// escape followed by a raw 9-bit value.
struct SymbolTable {
  int lo = 0;
  FrequencyTable freqs;
  size_t window() const { return freqs.size() - 1; }
};

SymbolTable GaussianSymbolTable(double mu, double sigma);
SymbolTable FactorizedSymbolTable(const FactorizedPriorView& prior,
                                  size_t channel);
void EncodeSymbol(RangeEncoder& enc, const SymbolTable& t, int value);
int DecodeSymbol(RangeDecoder& dec, const SymbolTable& t);

struct RateEstimate {
  Tensor bits;  // differentiable scalar, summed over batch and levels
  std::array<double, 3> y_bits{};
  std::array<double, 3> z_bits{};
  // Per batch item, row-major over the mask grid.
  std::vector<std::vector<double>> cell_bits;
  size_t clamped = 0;
};

// Sum of -log2 p over every unmasked latent and every hyper-latent. Masked
// latents contribute exactly zero. Likelihoods are floored at 1e-9; each
// floored element bumps LikelihoodClampCount(). No symbol is charged more
// than the range coder would spend on it: 16 bits inside the table window,
// 16 + 9 bits for an escape.
RateEstimate EstimateRate(const LatentSet& latents, const ParameterStore& store);

size_t LikelihoodClampCount();

std::string PriorPrefix(int level);

}  // namespace sdvc

#endif  // SDVC_ENTROPY_MODEL_H_
