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

#include "sdvc/pipeline.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>

#include "sdvc/common.h"
#include "sdvc/entropy_model.h"

namespace sdvc {

SaliencyMask SceneMask(const SyntheticScene& scene, InferenceMask kind) {
  const size_t h = scene.image.height, w = scene.image.width;
  switch (kind) {
    case InferenceMask::kVariance:
      return VarianceMask(scene.image);
    case InferenceMask::kDetections:
      return DetectionMask(scene.boxes, h, w);
    case InferenceMask::kGt:
      return GtMask(scene.annotations, h, w);
  }
  Fail(ErrorCode::kInvalidArgument, "unknown mask kind");
}

EncodedImage EncodeAndDecode(const Codec& codec, const Image& image,
                             const SaliencyMask& mask, uint8_t lambda_id) {
  NoGradGuard no_grad;
  const Image padded = ReflectPad(image, kCellSize);
  const LatentSet latents =
      codec.Encode(padded.ToTensor(), {mask}, Mode::kInfer, nullptr);
  const RateEstimate est = EstimateRate(latents, codec.params());
  EncodedImage out;
  out.bitstream =
      EncodeBitstream(codec, latents, image.height, image.width, lambda_id);
  out.bytes = out.bitstream.Serialize();
  out.reconstruction = DecodeImage(codec, Bitstream::Parse(out.bytes));
  for (size_t i = 0; i < 3; ++i) {
    out.estimated_level_bits[i] = est.y_bits[i] + est.z_bits[i];
  }
  out.estimated_cell_bits = est.cell_bits[0];
  out.estimated_bits = est.bits.item();
  return out;
}

std::vector<double> PixelCrossEntropy(const Tensor& logits,
                                      std::span<const uint8_t> labels) {
  SDVC_CHECK_ARG(logits.rank() == 4 && logits.dim(0) == 1,
                 "expected single-image logits");
  const size_t k = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
  SDVC_CHECK_ARG(labels.size() == hw, "label count mismatch");
  std::vector<double> out(hw);
  for (size_t p = 0; p < hw; ++p) {
    double mx = -INFINITY;
    for (size_t c = 0; c < k; ++c) mx = std::max(mx, logits[c * hw + p]);
    double s = 0;
    for (size_t c = 0; c < k; ++c) s += std::exp(logits[c * hw + p] - mx);
    out[p] = std::log(s) + mx - logits[labels[p] * hw + p];
  }
  return out;
}

ModelEvaluation EvaluateModel(const Codec& codec,
                              const std::vector<SyntheticScene>& scenes,
                              const ProxySegNet& proxy, InferenceMask masks,
                              uint8_t lambda_id) {
  SDVC_CHECK_ARG(!scenes.empty(), "no scenes to evaluate");
  NoGradGuard no_grad;
  ModelEvaluation ev;
  SegmentationTally tally(kNumClasses);
  double salient_loss = 0, salient_pixels = 0;
  double l3_bits = 0, l1_mse = 0, l3_mse = 0;
  for (const SyntheticScene& s : scenes) {
    const SaliencyMask mask = SceneMask(s, masks);
    const SaliencyMask salient = SceneMask(s, InferenceMask::kDetections);
    const EncodedImage enc = EncodeAndDecode(codec, s.image, mask, lambda_id);
    const size_t h = s.image.height, w = s.image.width;
    ev.mean_bpp += BitsPerPixel(enc.bytes.size(), h, w);

    // The task network needs a multiple of 4; pad like the codec does.
    const Image padded = ReflectPad(enc.reconstruction, kCellSize);
    const Tensor logits_full = proxy.Logits(padded.ToTensor());
    std::vector<uint8_t> pred(h * w);
    std::vector<double> logits(kNumClasses * h * w);
    const size_t pw = padded.width, phw = padded.height * padded.width;
    for (size_t c = 0; c < kNumClasses; ++c) {
      for (size_t y = 0; y < h; ++y) {
        for (size_t x = 0; x < w; ++x) {
          logits[(c * h + y) * w + x] = logits_full[c * phw + y * pw + x];
        }
      }
    }
    for (size_t p = 0; p < h * w; ++p) {
      size_t best = 0;
      for (size_t c = 1; c < kNumClasses; ++c) {
        if (logits[c * h * w + p] > logits[best * h * w + p]) best = c;
      }
      pred[p] = static_cast<uint8_t>(best);
    }
    tally.Add(pred, s.labels);
    for (int cls : s.instance_class) tally.AddInstances(cls, 1);
    const auto ce = PixelCrossEntropy(
        Tensor::FromData({1, kNumClasses, h, w}, std::move(logits)), s.labels);

    for (size_t r = 0; r < mask.rows(); ++r) {
      for (size_t c = 0; c < mask.cols(); ++c) {
        const uint8_t level = mask.at(r, c);
        const bool object_cell = salient.at(r, c) == 1;
        const size_t y0 = r * kCellSize, x0 = c * kCellSize;
        const size_t y1 = std::min(h, y0 + kCellSize);
        const size_t x1 = std::min(w, x0 + kCellSize);
        double sq = 0, n = 0, loss = 0;
        for (size_t y = y0; y < y1; ++y) {
          for (size_t x = x0; x < x1; ++x) {
            for (size_t ch = 0; ch < 3; ++ch) {
              const double e = enc.reconstruction.at(ch, y, x) - s.image.at(ch, y, x);
              sq += e * e;
            }
            loss += ce[y * w + x];
            n += 1;
          }
        }
        const double cell_mse = sq / (3 * n);
        if (object_cell) {
          salient_loss += loss;
          salient_pixels += n;
        }
        if (level == 1) {
          l1_mse += cell_mse;
          ++ev.level1_cells;
        } else if (level == 3) {
          l3_mse += cell_mse;
          l3_bits += enc.estimated_cell_bits[r * mask.cols() + c];
          ++ev.level3_cells;
        }
      }
    }
  }
  ev.mean_bpp /= static_cast<double>(scenes.size());
  ev.table = tally.Table();
  ev.wap = ev.table.empty() ? 0.0 : WeightedAp(ev.table);
  ev.salient_task_loss = salient_pixels > 0 ? salient_loss / salient_pixels : 0;
  if (ev.level1_cells) ev.level1_cell_mse = l1_mse / ev.level1_cells;
  if (ev.level3_cells) {
    ev.level3_cell_mse = l3_mse / ev.level3_cells;
    ev.level3_cell_bits = l3_bits / ev.level3_cells;
  }
  return ev;
}

namespace {

namespace fs = std::filesystem;

}  // namespace

void WriteSceneDataset(const std::string& dir,
                       const std::vector<SyntheticScene>& scenes) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) Fail(ErrorCode::kInput, "cannot create " + dir + ": " + ec.message());
  for (size_t i = 0; i < scenes.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof(stem), "scene%04zu", i);
    const std::string base = (fs::path(dir) / stem).string();
    const SyntheticScene& s = scenes[i];
    WritePng(base + ".png", s.image);
    WritePng16(base + ".ann.png",
               {s.annotations.height, s.annotations.width, s.annotations.ids});
    Image cls(s.image.height, s.image.width);
    for (size_t p = 0; p < s.labels.size(); ++p) {
      const double v = s.labels[p] / 255.0;
      for (size_t c = 0; c < 3; ++c) cls.data[c * s.labels.size() + p] = v;
    }
    WritePng(base + ".cls.png", cls);
  }
}

std::vector<SyntheticScene> ReadSceneDataset(const std::string& dir) {
  std::vector<std::string> stems;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(dir, ec)) {
    const std::string name = entry.path().filename().string();
    if (name.size() > 4 && name.ends_with(".png") &&
        !name.ends_with(".ann.png") && !name.ends_with(".cls.png")) {
      stems.push_back((fs::path(dir) / name.substr(0, name.size() - 4)).string());
    }
  }
  if (ec) Fail(ErrorCode::kInput, "cannot list " + dir + ": " + ec.message());
  std::sort(stems.begin(), stems.end());
  if (stems.empty()) Fail(ErrorCode::kInput, "no images in " + dir);
  std::vector<SyntheticScene> out;
  for (const auto& base : stems) {
    SyntheticScene s;
    s.image = ReadImage(base + ".png");
    const GrayImage16 ann = ReadPng16(base + ".ann.png");
    const Image cls = ReadImage(base + ".cls.png");
    if (ann.height != s.image.height || ann.width != s.image.width ||
        cls.height != s.image.height || cls.width != s.image.width) {
      Fail(ErrorCode::kInput, "annotation size mismatch for " + base);
    }
    s.annotations = {ann.height, ann.width, ann.data};
    s.labels.resize(ann.data.size());
    for (size_t p = 0; p < s.labels.size(); ++p) {
      const long v = std::lround(cls.data[p] * 255.0);
      if (v < 0 || v >= static_cast<long>(kNumClasses)) {
        Fail(ErrorCode::kInput, "class raster value out of range in " + base);
      }
      s.labels[p] = static_cast<uint8_t>(v);
    }
    // Instance classes by majority vote over the instance's pixels.
    std::map<uint16_t, std::array<size_t, kNumClasses>> votes;
    for (size_t p = 0; p < ann.data.size(); ++p) {
      if (ann.data[p] != 0) votes[ann.data[p]][s.labels[p]]++;
    }
    uint16_t max_id = votes.empty() ? 0 : votes.rbegin()->first;
    s.instance_class.assign(max_id, 0);
    for (const auto& [id, v] : votes) {
      s.instance_class[id - 1] = static_cast<int>(
          std::max_element(v.begin(), v.end()) - v.begin());
    }
    s.boxes = TightBoxes(s.annotations);
    for (auto& b : s.boxes) {
      b.class_id = s.instance_class.at(static_cast<size_t>(b.class_id) - 1);
    }
    // Ids that never occur have no class and are not counted as instances.
    std::vector<int> present;
    for (const auto& [id, _] : votes) present.push_back(s.instance_class[id - 1]);
    s.instance_class = present;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace sdvc
