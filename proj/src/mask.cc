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

#include "sdvc/mask.h"

#include <algorithm>
#include <fstream>
#include <map>
#include "json.hpp"
#include <sstream>

#include "sdvc/byte_io.h"
#include "sdvc/common.h"

namespace sdvc {

size_t CellGridExtent(size_t pixels) { return (pixels + kCellSize - 1) / kCellSize; }

SaliencyMask::SaliencyMask(size_t rows, size_t cols, uint8_t level)
    : rows_(rows), cols_(cols), levels_(rows * cols, level) {
  if (level < 1 || level > kNumLevels) {
    Fail(ErrorCode::kInvalidArgument, "mask level must be 1..3");
  }
}

SaliencyMask SaliencyMask::ForImage(size_t height, size_t width, uint8_t level) {
  return SaliencyMask(CellGridExtent(height), CellGridExtent(width), level);
}

void SaliencyMask::set(size_t r, size_t c, uint8_t level) {
  if (level < 1 || level > kNumLevels) {
    Fail(ErrorCode::kInvalidArgument, "mask level must be 1..3");
  }
  levels_.at(r * cols_ + c) = level;
}

size_t SaliencyMask::CountLevel(uint8_t level) const {
  return static_cast<size_t>(std::count(levels_.begin(), levels_.end(), level));
}

std::string SaliencyMask::ToAscii() const {
  std::string s;
  s.reserve(rows_ * (cols_ + 1));
  for (size_t r = 0; r < rows_; ++r) {
    for (size_t c = 0; c < cols_; ++c) s.push_back(static_cast<char>('0' + at(r, c)));
    s.push_back('\n');
  }
  return s;
}

SaliencyMask SaliencyMask::FromAscii(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  if (lines.empty()) Fail(ErrorCode::kInput, "empty mask file");
  SaliencyMask m(lines.size(), lines[0].size());
  for (size_t r = 0; r < lines.size(); ++r) {
    if (lines[r].size() != m.cols()) Fail(ErrorCode::kInput, "ragged mask rows");
    for (size_t c = 0; c < m.cols(); ++c) {
      const char ch = lines[r][c];
      if (ch < '1' || ch > '3') Fail(ErrorCode::kInput, "mask digits must be 1..3");
      m.set(r, c, static_cast<uint8_t>(ch - '0'));
    }
  }
  return m;
}

SaliencyMask VarianceMask(const Image& img, const VarianceThresholds& t) {
  if (!(t.low < t.high)) {
    Fail(ErrorCode::kInvalidArgument, "variance thresholds need low < high");
  }
  const std::vector<double> luma = img.Luma();
  SaliencyMask m = SaliencyMask::ForImage(img.height, img.width);
  for (size_t r = 0; r < m.rows(); ++r) {
    for (size_t c = 0; c < m.cols(); ++c) {
      const size_t y0 = r * kCellSize, x0 = c * kCellSize;
      const size_t y1 = std::min(img.height, y0 + kCellSize);
      const size_t x1 = std::min(img.width, x0 + kCellSize);
      double sum = 0.0, sum2 = 0.0;
      for (size_t y = y0; y < y1; ++y) {
        for (size_t x = x0; x < x1; ++x) {
          const double v = luma[y * img.width + x];
          sum += v;
          sum2 += v * v;
        }
      }
      const double n = static_cast<double>((y1 - y0) * (x1 - x0));
      const double mean = sum / n;
      const double var = std::max(0.0, sum2 / n - mean * mean);
      m.set(r, c, var < t.low ? 3 : (var < t.high ? 2 : 1));
    }
  }
  return m;
}

SaliencyMask DetectionMask(std::span<const DetectionBox> boxes, size_t height,
                           size_t width, double confidence_min) {
  SaliencyMask m = SaliencyMask::ForImage(height, width, 3);
  const double h = static_cast<double>(height), w = static_cast<double>(width);
  for (const DetectionBox& b : boxes) {
    if (b.confidence < confidence_min) continue;
    const double x1 = std::clamp(b.x1, 0.0, w), x2 = std::clamp(b.x2, 0.0, w);
    const double y1 = std::clamp(b.y1, 0.0, h), y2 = std::clamp(b.y2, 0.0, h);
    if (!(x1 < x2 && y1 < y2)) continue;
    for (size_t r = 0; r < m.rows(); ++r) {
      const double cy0 = static_cast<double>(r * kCellSize);
      if (!(y1 < cy0 + kCellSize && y2 > cy0)) continue;
      for (size_t c = 0; c < m.cols(); ++c) {
        const double cx0 = static_cast<double>(c * kCellSize);
        if (x1 < cx0 + kCellSize && x2 > cx0) m.set(r, c, 1);
      }
    }
  }
  return m;
}

SaliencyMask GtMask(const AnnotationMap& ann, size_t height, size_t width) {
  if (ann.height != height || ann.width != width ||
      ann.ids.size() != height * width) {
    Fail(ErrorCode::kDimension,
         "annotation raster " + std::to_string(ann.height) + "x" +
             std::to_string(ann.width) + " does not match image " +
             std::to_string(height) + "x" + std::to_string(width));
  }
  SaliencyMask m = SaliencyMask::ForImage(height, width, 3);
  for (size_t y = 0; y < height; ++y) {
    for (size_t x = 0; x < width; ++x) {
      if (ann.ids[y * width + x] != 0) m.set(y / kCellSize, x / kCellSize, 1);
    }
  }
  return m;
}

std::vector<DetectionBox> TightBoxes(const AnnotationMap& ann) {
  std::map<uint16_t, DetectionBox> boxes;
  for (size_t y = 0; y < ann.height; ++y) {
    for (size_t x = 0; x < ann.width; ++x) {
      const uint16_t id = ann.ids[y * ann.width + x];
      if (id == 0) continue;
      auto [it, fresh] = boxes.try_emplace(id);
      DetectionBox& b = it->second;
      const double fx = static_cast<double>(x), fy = static_cast<double>(y);
      if (fresh) {
        b = {static_cast<int>(id), 1.0, fx, fy, fx + 1, fy + 1};
      } else {
        b.x1 = std::min(b.x1, fx);
        b.y1 = std::min(b.y1, fy);
        b.x2 = std::max(b.x2, fx + 1);
        b.y2 = std::max(b.y2, fy + 1);
      }
    }
  }
  std::vector<DetectionBox> out;
  for (auto& [_, b] : boxes) out.push_back(b);
  return out;
}

size_t LatentStride(int level) {
  if (level < 1 || level > kNumLevels) {
    Fail(ErrorCode::kInvalidArgument, "level must be 1..3");
  }
  return size_t{16} << (level - 1);
}

std::vector<uint8_t> ProjectMaskToLevel(const SaliencyMask& m, int level) {
  const size_t per_cell = kCellSize / LatentStride(level);
  const size_t h = m.rows() * per_cell, w = m.cols() * per_cell;
  std::vector<uint8_t> out(h * w);
  for (size_t i = 0; i < h; ++i) {
    for (size_t j = 0; j < w; ++j) {
      out[i * w + j] = m.at(i / per_cell, j / per_cell) == level ? 1 : 0;
    }
  }
  return out;
}

std::vector<DetectionBox> ReadDetections(const std::string& path,
                                         const std::string& image_id) {
  std::ifstream in(path);
  if (!in) Fail(ErrorCode::kInput, "cannot open detections " + path);
  std::vector<DetectionBox> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (!image_id.empty() && j.value("image_id", std::string()) != image_id) {
        continue;
      }
      DetectionBox b;
      b.class_id = j.at("class").get<int>();
      b.confidence = j.at("confidence").get<double>();
      b.x1 = j.at("x1").get<double>();
      b.y1 = j.at("y1").get<double>();
      b.x2 = j.at("x2").get<double>();
      b.y2 = j.at("y2").get<double>();
      out.push_back(b);
    } catch (const nlohmann::json::exception& e) {
      Fail(ErrorCode::kInput, path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void WriteDetections(const std::string& path, const std::string& image_id,
                     std::span<const DetectionBox> boxes) {
  std::string text;
  for (const DetectionBox& b : boxes) {
    nlohmann::json j = {{"image_id", image_id}, {"class", b.class_id},
                        {"confidence", b.confidence}, {"x1", b.x1},
                        {"y1", b.y1}, {"x2", b.x2}, {"y2", b.y2}};
    text += j.dump() + "\n";
  }
  WriteTextAtomic(path, text);
}

AnnotationMap ReadAnnotations(const std::string& path) {
  GrayImage16 g = ReadPng16(path);
  return {g.height, g.width, std::move(g.data)};
}

void WriteAnnotations(const std::string& path, const AnnotationMap& ann) {
  WritePng16(path, {ann.height, ann.width, ann.ids});
}

}  // namespace sdvc
