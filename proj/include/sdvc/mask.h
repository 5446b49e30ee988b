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

#ifndef SDVC_MASK_H_
#define SDVC_MASK_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sdvc/image.h"

namespace sdvc {

inline constexpr size_t kCellSize = 64;
inline constexpr int kNumLevels = 3;

size_t CellGridExtent(size_t pixels);  // ceil(pixels / 64)

// Assigns every 64x64 cell to exactly one latent level in {1, 2, 3}.
class SaliencyMask {
 public:
  SaliencyMask() = default;
  SaliencyMask(size_t rows, size_t cols, uint8_t level = 3);
  static SaliencyMask ForImage(size_t height, size_t width, uint8_t level = 3);

  size_t rows() const { return rows_; }
  size_t cols() const { return cols_; }
  size_t cells() const { return levels_.size(); }
  uint8_t at(size_t r, size_t c) const { return levels_[r * cols_ + c]; }
  void set(size_t r, size_t c, uint8_t level);
  std::span<const uint8_t> levels() const { return levels_; }
  size_t CountLevel(uint8_t level) const;

  // One row of digits per cell row.
  std::string ToAscii() const;
  static SaliencyMask FromAscii(const std::string& text);

  bool operator==(const SaliencyMask& o) const = default;

 private:
  size_t rows_ = 0, cols_ = 0;
  std::vector<uint8_t> levels_;
};

struct DetectionBox {
  int class_id = 0;
  double confidence = 1.0;
  // Pixel box, [x1, x2) x [y1, y2).
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
};

// Per-pixel instance ids, 0 = background.
struct AnnotationMap {
  size_t height = 0;
  size_t width = 0;
  std::vector<uint16_t> ids;
};

struct VarianceThresholds {
  double low = 0.002;
  double high = 0.02;
};

inline constexpr double kDefaultConfidenceMin = 0.25;

// Luma variance per cell: < low -> 3, [low, high) -> 2, >= high -> 1.
SaliencyMask VarianceMask(const Image& img, const VarianceThresholds& t = {});

// Cells touched by any box with confidence >= confidence_min go to level 1,
// everything else to level 3. Level 2 is never used.
SaliencyMask DetectionMask(std::span<const DetectionBox> boxes, size_t height,
                           size_t width,
                           double confidence_min = kDefaultConfidenceMin);

// Cells holding at least one annotated pixel go to level 1, the rest to 3.
// Throws kDimension if the raster does not match (height, width).
SaliencyMask GtMask(const AnnotationMap& ann, size_t height, size_t width);

// Tight box per instance id, ordered by id; class_id holds the instance id.
std::vector<DetectionBox> TightBoxes(const AnnotationMap& ann);

// Pixels per latent element side at `level`: 16, 32, 64.
size_t LatentStride(int level);

// Binary map on the latent grid of `level` (rows*64/stride x cols*64/stride):
// 1 where the element's cell is assigned to `level`.
std::vector<uint8_t> ProjectMaskToLevel(const SaliencyMask& m, int level);

// Detection file: one JSON object per line with keys image_id, class,
// confidence, x1, y1, x2, y2. An empty image_id filter keeps every line.
std::vector<DetectionBox> ReadDetections(const std::string& path,
                                         const std::string& image_id = "");
void WriteDetections(const std::string& path, const std::string& image_id,
                     std::span<const DetectionBox> boxes);

AnnotationMap ReadAnnotations(const std::string& path);
void WriteAnnotations(const std::string& path, const AnnotationMap& ann);

}  // namespace sdvc

#endif  // SDVC_MASK_H_
