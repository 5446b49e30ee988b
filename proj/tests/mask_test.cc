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

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "sdvc/common.h"
#include "sdvc/image.h"
#include "sdvc/mask.h"
#include "test_util.h"

namespace sdvc {
namespace {

Image Constant(size_t h, size_t w, double v) { return Image(h, w, v); }

TEST(VarianceMask, ConstantImageIsAllLevelThree) {
  const SaliencyMask m = VarianceMask(Constant(256, 512, 0.3));
  EXPECT_EQ(m.CountLevel(3), m.cells());
}

TEST(VarianceMask, CheckerboardCellIsLevelOne) {
  Image img = Constant(64, 64, 0.0);
  for (size_t y = 0; y < 64; ++y) {
    for (size_t x = 0; x < 64; ++x) {
      const double v = (x + y) % 2 ? 1.0 : 0.0;
      for (size_t c = 0; c < 3; ++c) img.at(c, y, x) = v;
    }
  }
  // Luma is 0 or 1 with equal counts: variance 0.25.
  const SaliencyMask m = VarianceMask(img);
  ASSERT_EQ(m.cells(), 1u);
  EXPECT_EQ(m.at(0, 0), 1);
}

TEST(VarianceMask, FlatAndNoisyHalvesDiffer) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  Image img = Constant(128, 256, 0.5);
  for (size_t y = 0; y < 128; ++y) {
    for (size_t x = 128; x < 256; ++x) {
      const double v = u(rng);
      for (size_t c = 0; c < 3; ++c) img.at(c, y, x) = v;
    }
  }
  const SaliencyMask m = VarianceMask(img);
  for (size_t r = 0; r < 2; ++r) {
    EXPECT_EQ(m.at(r, 0), 3);
    EXPECT_EQ(m.at(r, 1), 3);
    EXPECT_EQ(m.at(r, 2), 1);
    EXPECT_EQ(m.at(r, 3), 1);
  }
}

TEST(VarianceMask, MiddleBandIsLevelTwo) {
  // Luma alternating 0.45/0.55: variance 0.0025, inside [0.002, 0.02).
  Image img = Constant(64, 64, 0.45);
  for (size_t y = 0; y < 64; ++y) {
    for (size_t x = y % 2; x < 64; x += 2) {
      for (size_t c = 0; c < 3; ++c) img.at(c, y, x) = 0.55;
    }
  }
  EXPECT_EQ(VarianceMask(img).at(0, 0), 2);
}

TEST(VarianceMask, ShiftInvariantProperty) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 0.5), amp(0.0, 0.4);
  for (int t = 0; t < 20; ++t) {
    Image img = Constant(128, 192, 0.0);
    const double a = amp(rng);
    for (double& v : img.data) v = a * u(rng);
    const double shift = 0.37;
    Image shifted = img;
    for (double& v : shifted.data) v += shift;
    EXPECT_EQ(VarianceMask(img), VarianceMask(shifted));
  }
}

TEST(DetectionMask, NoBoxesIsAllLevelThree) {
  const SaliencyMask m = DetectionMask({}, 512, 1024);
  EXPECT_EQ(m.rows(), 8u);
  EXPECT_EQ(m.cols(), 16u);
  EXPECT_EQ(m.CountLevel(3), 128u);
}

TEST(DetectionMask, CellAlignedBox) {
  const std::vector<DetectionBox> boxes = {{1, 0.9, 0, 0, 64, 64}};
  const SaliencyMask m = DetectionMask(boxes, 512, 1024);
  EXPECT_EQ(m.at(0, 0), 1);
  EXPECT_EQ(m.CountLevel(1), 1u);
  EXPECT_EQ(m.CountLevel(3), 127u);
}

TEST(DetectionMask, AnyOverlapRule) {
  const std::vector<DetectionBox> boxes = {{1, 0.9, 32, 32, 96, 96}};
  const SaliencyMask m = DetectionMask(boxes, 512, 1024);
  EXPECT_EQ(m.CountLevel(1), 4u);
  for (size_t r : {0, 1}) {
    for (size_t c : {0, 1}) EXPECT_EQ(m.at(r, c), 1);
  }
}

TEST(DetectionMask, ConfidenceThresholdAndClamping) {
  const std::vector<DetectionBox> boxes = {{1, 0.1, 0, 0, 64, 64},
                                           {2, 0.9, -50, 400, 10, 900}};
  const SaliencyMask m = DetectionMask(boxes, 512, 1024);
  EXPECT_EQ(m.at(0, 0), 3);
  EXPECT_EQ(m.at(6, 0), 1);
  EXPECT_EQ(m.at(7, 0), 1);
  EXPECT_EQ(m.CountLevel(1), 2u);
}

TEST(DetectionMask, MonotoneUnderAddedBoxes) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> x(-20, 530), y(-20, 270);
  for (int t = 0; t < 50; ++t) {
    std::vector<DetectionBox> boxes;
    SaliencyMask prev = DetectionMask(boxes, 256, 512);
    for (int k = 0; k < 6; ++k) {
      const double x1 = x(rng), y1 = y(rng);
      boxes.push_back({1, 1.0, x1, y1, x1 + 40, y1 + 30});
      const SaliencyMask next = DetectionMask(boxes, 256, 512);
      for (size_t i = 0; i < next.cells(); ++i) {
        if (prev.levels()[i] == 1) {
          EXPECT_EQ(next.levels()[i], 1);
        }
      }
      prev = next;
    }
  }
}

AnnotationMap EmptyAnn(size_t h, size_t w) {
  return {h, w, std::vector<uint16_t>(h * w, 0)};
}

TEST(GtMask, Examples) {
  AnnotationMap ann = EmptyAnn(512, 1024);
  EXPECT_EQ(GtMask(ann, 512, 1024).CountLevel(3), 128u);
  ann.ids[100 * 1024 + 200] = 1;
  const SaliencyMask one = GtMask(ann, 512, 1024);
  EXPECT_EQ(one.CountLevel(1), 1u);
  EXPECT_EQ(one.at(1, 3), 1);
  std::fill(ann.ids.begin(), ann.ids.end(), 7);
  EXPECT_EQ(GtMask(ann, 512, 1024).CountLevel(1), 128u);
}

TEST(GtMask, RejectsMismatchedRaster) {
  try {
    GtMask(EmptyAnn(64, 64), 64, 128);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDimension);
  }
}

TEST(GtMask, SubsetOfTightBoxDetectionMask) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<size_t> py(0, 191), px(0, 319), sz(1, 40);
  for (int t = 0; t < 30; ++t) {
    AnnotationMap ann = EmptyAnn(192, 320);
    for (uint16_t id = 1; id <= 4; ++id) {
      const size_t y0 = py(rng), x0 = px(rng), hh = sz(rng), ww = sz(rng);
      for (size_t y = y0; y < std::min<size_t>(192, y0 + hh); ++y) {
        for (size_t x = x0; x < std::min<size_t>(320, x0 + ww); ++x) {
          if ((x + y) % 3) ann.ids[y * 320 + x] = id;
        }
      }
    }
    const SaliencyMask gt = GtMask(ann, 192, 320);
    const auto boxes = TightBoxes(ann);
    const SaliencyMask det = DetectionMask(boxes, 192, 320, 0.0);
    for (size_t i = 0; i < gt.cells(); ++i) {
      if (gt.levels()[i] == 1) {
        EXPECT_EQ(det.levels()[i], 1);
      }
    }
  }
}

TEST(TightBoxes, BoundAnnotatedPixels) {
  AnnotationMap ann = EmptyAnn(100, 120);
  ann.ids[10 * 120 + 20] = 2;
  ann.ids[30 * 120 + 5] = 2;
  ann.ids[50 * 120 + 60] = 1;
  const auto boxes = TightBoxes(ann);
  ASSERT_EQ(boxes.size(), 2u);
  EXPECT_EQ(boxes[0].class_id, 1);
  EXPECT_EQ(boxes[0].x1, 60);
  EXPECT_EQ(boxes[0].x2, 61);
  EXPECT_EQ(boxes[1].class_id, 2);
  EXPECT_EQ(boxes[1].x1, 5);
  EXPECT_EQ(boxes[1].y1, 10);
  EXPECT_EQ(boxes[1].x2, 21);
  EXPECT_EQ(boxes[1].y2, 31);
}

TEST(ProjectMaskToLevel, LevelThreeIsTheCellGrid) {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> lv(1, 3);
  SaliencyMask m(8, 16);
  for (size_t r = 0; r < 8; ++r) {
    for (size_t c = 0; c < 16; ++c) m.set(r, c, static_cast<uint8_t>(lv(rng)));
  }
  const auto p = ProjectMaskToLevel(m, 3);
  ASSERT_EQ(p.size(), 128u);
  for (size_t i = 0; i < 128; ++i) EXPECT_EQ(p[i], m.levels()[i] == 3);
}

// Brute force: each pixel belongs to its cell's level and to the latent
// element floor(y / stride), floor(x / stride) of that level.
TEST(ProjectMaskToLevel, PartitionAgainstPixelOracle) {
  std::mt19937_64 rng(10);
  std::uniform_int_distribution<int> lv(1, 3);
  std::uniform_int_distribution<size_t> dim(1, 6);
  for (int t = 0; t < 25; ++t) {
    const size_t rows = dim(rng), cols = dim(rng);
    SaliencyMask m(rows, cols);
    for (size_t r = 0; r < rows; ++r) {
      for (size_t c = 0; c < cols; ++c) m.set(r, c, static_cast<uint8_t>(lv(rng)));
    }
    const size_t h = rows * kCellSize, w = cols * kCellSize;
    std::vector<int> owners(h * w, 0);
    size_t covered = 0;
    for (int level = 1; level <= 3; ++level) {
      const size_t s = LatentStride(level);
      const auto p = ProjectMaskToLevel(m, level);
      const size_t lw = w / s;
      ASSERT_EQ(p.size(), (h / s) * lw);
      for (size_t i = 0; i < p.size(); ++i) {
        if (!p[i]) continue;
        covered += s * s;
        const size_t ei = i / lw, ej = i % lw;
        for (size_t y = ei * s; y < (ei + 1) * s; ++y) {
          for (size_t x = ej * s; x < (ej + 1) * s; ++x) {
            ++owners[y * w + x];
            EXPECT_EQ(m.at(y / kCellSize, x / kCellSize), level);
          }
        }
      }
    }
    EXPECT_EQ(covered, h * w);
    EXPECT_TRUE(std::all_of(owners.begin(), owners.end(),
                            [](int n) { return n == 1; }));
  }
}

TEST(SaliencyMask, EveryCellHasExactlyOneLevel) {
  SaliencyMask m(3, 4, 2);
  EXPECT_EQ(m.CountLevel(1) + m.CountLevel(2) + m.CountLevel(3), m.cells());
  EXPECT_THROW(m.set(0, 0, 0), Error);
  EXPECT_THROW(m.set(0, 0, 4), Error);
}

TEST(SaliencyMask, AsciiRoundTrip) {
  SaliencyMask m(2, 3);
  m.set(0, 1, 1);
  m.set(1, 2, 2);
  EXPECT_EQ(m.ToAscii(), "313\n332\n");
  EXPECT_EQ(SaliencyMask::FromAscii(m.ToAscii()), m);
  EXPECT_THROW(SaliencyMask::FromAscii("31\n3\n"), Error);
  EXPECT_THROW(SaliencyMask::FromAscii("40\n"), Error);
}

TEST(MaskFiles, DetectionsAndAnnotationsRoundTrip) {
  testing::TempDir dir("mask");
  const std::vector<DetectionBox> boxes = {{1, 0.75, 1.5, 2, 30, 40},
                                           {3, 0.5, 10, 11, 12, 13}};
  WriteDetections(dir.File("d.jsonl"), "img7", boxes);
  const auto back = ReadDetections(dir.File("d.jsonl"), "img7");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].class_id, 1);
  EXPECT_EQ(back[0].x1, 1.5);
  EXPECT_EQ(back[1].confidence, 0.5);
  EXPECT_TRUE(ReadDetections(dir.File("d.jsonl"), "other").empty());

  AnnotationMap ann = EmptyAnn(20, 30);
  ann.ids[5] = 65535;
  ann.ids[77] = 3;
  WriteAnnotations(dir.File("a.png"), ann);
  const AnnotationMap ab = ReadAnnotations(dir.File("a.png"));
  EXPECT_EQ(ab.ids, ann.ids);
  EXPECT_THROW(ReadDetections(dir.File("missing.jsonl")), Error);
}

}  // namespace
}  // namespace sdvc
