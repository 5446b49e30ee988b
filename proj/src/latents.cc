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

#include "sdvc/latents.h"

#include <string>

#include "sdvc/common.h"

namespace sdvc {

std::pair<size_t, size_t> LatentGridDims(size_t height, size_t width,
                                         int level) {
  if (level < 1 || level > kNumLevels) {
    Fail(ErrorCode::kInvalidArgument,
         "latent level must be 1..3, got " + std::to_string(level));
  }
  if (height == 0 || width == 0 || height % kCellSize != 0 ||
      width % kCellSize != 0) {
    Fail(ErrorCode::kDimension,
         "padding required: " + std::to_string(height) + "x" +
             std::to_string(width) + " is not a multiple of 64");
  }
  const size_t stride = LatentStride(level);
  return {height / stride, width / stride};
}

}  // namespace sdvc
