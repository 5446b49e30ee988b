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

#ifndef SDVC_PIPELINE_H_
#define SDVC_PIPELINE_H_

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "sdvc/bitstream.h"
#include "sdvc/eval.h"
#include "sdvc/image.h"
#include "sdvc/mask.h"
#include "sdvc/model.h"
#include "sdvc/training.h"

namespace sdvc {

enum class InferenceMask { kVariance, kDetections, kGt };

// Mask of a scene for inference. Detections are the scene's tight boxes
// with confidence 1.
SaliencyMask SceneMask(const SyntheticScene& scene, InferenceMask kind);

struct EncodedImage {
  Bitstream bitstream;
  std::vector<uint8_t> bytes;
  Image reconstruction;  // decoder-side, cropped to the original size
  std::array<double, 3> estimated_level_bits{};
  std::vector<double> estimated_cell_bits;
  double estimated_bits = 0;
};

// Full container round trip of one image.
EncodedImage EncodeAndDecode(const Codec& codec, const Image& image,
                             const SaliencyMask& mask, uint8_t lambda_id);

struct ModelEvaluation {
  double mean_bpp = 0;
  double wap = 0;
  std::vector<ClassAp> table;
  // Mean per-pixel task loss over the cells the detection mask puts at
  // level 1, whichever mask was used for coding.
  double salient_task_loss = 0;
  // Mean estimated bits per level-3 cell.
  double level3_cell_bits = 0;
  // Mean per-cell MSE over level-1 and level-3 cells.
  double level1_cell_mse = 0;
  double level3_cell_mse = 0;
  size_t level1_cells = 0;
  size_t level3_cells = 0;
};

ModelEvaluation EvaluateModel(const Codec& codec,
                              const std::vector<SyntheticScene>& scenes,
                              const ProxySegNet& proxy, InferenceMask masks,
                              uint8_t lambda_id);

// Per-pixel softmax cross entropy for a single image.
std::vector<double> PixelCrossEntropy(const Tensor& logits,
                                      std::span<const uint8_t> labels);

// Scene directories hold <stem>.png (RGB), <stem>.ann.png (16-bit instance
// ids) and <stem>.cls.png (8-bit class per pixel).
void WriteSceneDataset(const std::string& dir,
                       const std::vector<SyntheticScene>& scenes);
std::vector<SyntheticScene> ReadSceneDataset(const std::string& dir);

}  // namespace sdvc

#endif  // SDVC_PIPELINE_H_
