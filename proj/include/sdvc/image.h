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

#ifndef SDVC_IMAGE_H_
#define SDVC_IMAGE_H_

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "sdvc/tensor.h"

namespace sdvc {

// Planar RGB raster with samples in [0, 1].
struct Image {
  size_t height = 0;
  size_t width = 0;
  std::vector<double> data;  // [3][height][width]

  Image() = default;
  Image(size_t h, size_t w, double fill = 0.0)
      : height(h), width(w), data(3 * h * w, fill) {}

  double& at(size_t c, size_t y, size_t x) {
    return data[(c * height + y) * width + x];
  }
  double at(size_t c, size_t y, size_t x) const {
    return data[(c * height + y) * width + x];
  }

  // BT.601 luma.
  std::vector<double> Luma() const;

  Tensor ToTensor() const;  // [1,3,H,W]
  // Image `index` of an NCHW tensor with 3 channels; values are clamped to
  // [0, 1].
  static Image FromTensor(const Tensor& t, size_t index = 0);
  bool operator==(const Image& o) const = default;
};

// Stacks equally sized images into [N,3,H,W].
Tensor BatchImages(const std::vector<const Image*>& images);

// Pads bottom/right by mirror reflection up to the next multiple.
Image ReflectPad(const Image& img, size_t multiple);
Image CropImage(const Image& img, size_t y0, size_t x0, size_t h, size_t w);

// Rounds to 8 bits and back, as a PNG write/read would.
Image QuantizeTo8Bit(const Image& img);

double Mse(const Image& a, const Image& b);
double Psnr(const Image& a, const Image& b);  // +inf when identical

// 8-bit RGB/gray PNG or binary PPM (P6). Throws kInput on failure.
Image ReadImage(const std::string& path);
void WritePng(const std::string& path, const Image& img);

// 16-bit grayscale PNG (instance-id rasters).
struct GrayImage16 {
  size_t height = 0;
  size_t width = 0;
  std::vector<uint16_t> data;
};
GrayImage16 ReadPng16(const std::string& path);
void WritePng16(const std::string& path, const GrayImage16& img);

}  // namespace sdvc

#endif  // SDVC_IMAGE_H_
