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

#ifndef SDVC_LATENTS_H_
#define SDVC_LATENTS_H_

#include <array>
#include <cstddef>
#include <utility>
#include <vector>

#include "sdvc/mask.h"
#include "sdvc/tensor.h"

namespace sdvc {

enum class Mode { kTrain, kInfer };

// Latents of one level n. Encoder-only fields are undefined after
// bitstream decoding.
struct LevelLatents {
  Tensor y;         // encoder only: unmasked latent
  Tensor y_masked;  // encoder only: zero outside the level's cells
  Tensor y_hat;     // quantized (noisy in train mode); zero where masked
  Tensor z;         // encoder only: hyper-latent
  Tensor z_hat;
  Tensor mu, sigma;    // Gaussian parameters from the hyper decoder
  Tensor level_mask;   // constant 0/1, shape of y_hat
  Tensor v;            // decoder feature passed to the next shallower level
};

// The three latent levels of a batch, index 0 = level 1.
struct LatentSet {
  std::array<LevelLatents, 3> levels;
  std::vector<SaliencyMask> masks;  // one per batch item
  size_t height = 0;                // padded pixel dims
  size_t width = 0;
  Mode mode = Mode::kInfer;

  LevelLatents& level(int n) { return levels.at(n - 1); }
  const LevelLatents& level(int n) const { return levels.at(n - 1); }
  size_t batch() const { return masks.size(); }
};

// Latent grid (h, w) of `level` for a padded image; level 1 -> /16,
// 2 -> /32, 3 -> /64. Throws if a side is not a multiple of 64.
std::pair<size_t, size_t> LatentGridDims(size_t height, size_t width, int level);

}  // namespace sdvc

#endif  // SDVC_LATENTS_H_
