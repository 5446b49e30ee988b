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

#ifndef SDVC_MODEL_H_
#define SDVC_MODEL_H_

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "sdvc/latents.h"
#include "sdvc/mask.h"
#include "sdvc/ops.h"
#include "sdvc/parameter_store.h"
#include "sdvc/tensor.h"

namespace sdvc {

struct ModelConfig {
  size_t hidden_channels = 128;  // N: encoder/decoder feature width
  size_t latent_channels = 128;  // C
  size_t hyper_channels = 96;
  size_t kernel = 5;
  size_t encoder_depth = 4;  // stride-2 convs
  size_t lsu_count = 3;
  size_t pad_multiple = kCellSize;
  std::string activation = "leaky_relu";

  void Validate() const;
  // Recovers widths from a trained parameter set.
  static ModelConfig FromParameters(const ParameterStore& store);
  std::string ToString() const;
};

struct GaussianParams {
  Tensor mu;
  Tensor sigma;
};

struct ReconstructionResult {
  Tensor x_hat;  // padded size
  std::array<double, 3> level_bits{};
  // Per batch item, row-major over the mask grid.
  std::vector<std::vector<double>> cell_bits;
};

// Rounds half away from zero and clamps to the coded alphabet in infer mode;
// adds U(-1/2, 1/2) noise in train mode.
Tensor Quantize(const Tensor& y, Mode mode, std::mt19937_64* rng);

// Binary [N, channels, h, w] map of the latent elements that belong to
// `level` under each item's mask.
Tensor LevelMaskTensor(const std::vector<SaliencyMask>& masks, int level,
                       size_t channels);

Tensor ApplyMask(const Tensor& y, const Tensor& level_mask);

// Encoder f_enc, three latent space units and decoder f_dec, with a
// mean-scale hyperprior per level conditioned on the deeper decoder feature.
class Codec {
 public:
  Codec(const ModelConfig& config, uint64_t seed);
  explicit Codec(ParameterStore params);

  const ModelConfig& config() const { return config_; }
  const ParameterStore& params() const { return params_; }
  ParameterStore& params() { return params_; }
  uint64_t Hash() const { return params_.Hash(); }

  // x: [N, 3, H, W] with H, W multiples of 64; one mask per batch item.
  // Runs the levels in coding order 3, 2, 1. `rng` is required in train mode.
  LatentSet Encode(const Tensor& x, const std::vector<SaliencyMask>& masks,
                   Mode mode, std::mt19937_64* rng) const;

  // Level-n building blocks shared by encoder and decoder.
  Tensor ZeroFeature(size_t batch, size_t h, size_t w) const;
  GaussianParams HyperSynthesis(int level, const Tensor& z_hat,
                                const Tensor& v_next, size_t h,
                                size_t w) const;
  Tensor LsuUp(int level, const Tensor& y_hat, const Tensor& v_next) const;
  Tensor Synthesis(const Tensor& v1) const;

  // Recomputes the decoder path from the quantized latents alone.
  Tensor DecodeFromLatents(const LatentSet& latents) const;

  // Decoder output plus rate bookkeeping for an encoded set.
  ReconstructionResult Reconstruct(const LatentSet& latents) const;

 private:
  Tensor ConvLayer(const std::string& name, const Tensor& x,
                   const LayerSpec& spec) const;
  Tensor TConvLayer(const std::string& name, const Tensor& x,
                    const LayerSpec& spec) const;
  Tensor Act(const Tensor& x) const { return LeakyRelu(x); }
  void Init(uint64_t seed);

  ModelConfig config_;
  ParameterStore params_;
};

}  // namespace sdvc

#endif  // SDVC_MODEL_H_
