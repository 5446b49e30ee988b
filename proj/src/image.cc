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

#include "sdvc/image.h"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <memory>

#include "sdvc/byte_io.h"
#include "sdvc/common.h"

namespace sdvc {
namespace {

size_t ReflectIndex(long i, size_t n) {
  if (n == 1) return 0;
  const long period = 2 * static_cast<long>(n - 1);
  long m = i % period;
  if (m < 0) m += period;
  return static_cast<size_t>(m < static_cast<long>(n) ? m : period - m);
}

struct PngBuffer {
  std::vector<uint8_t> bytes;
  size_t width = 0, height = 0;
  int channels = 0;
  int bit_depth = 0;
};

PngBuffer DecodePng(const std::string& path, bool want16) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    Fail(ErrorCode::kInput, "cannot read PNG " + path + ": " + image.message);
  }
  PngBuffer out;
  if (want16) {
    image.format = PNG_FORMAT_LINEAR_Y;
    out.channels = 1;
    out.bit_depth = 16;
  } else {
    image.format = PNG_FORMAT_RGB;
    out.channels = 3;
    out.bit_depth = 8;
  }
  out.width = image.width;
  out.height = image.height;
  out.bytes.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.bytes.data(), 0, nullptr)) {
    png_image_free(&image);
    Fail(ErrorCode::kInput, "cannot decode PNG " + path + ": " + image.message);
  }
  return out;
}

Image ReadPpm(const std::string& path) {
  const auto bytes = ReadFileBytes(path);
  size_t pos = 2;
  auto next_int = [&]() -> size_t {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    size_t v = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      any = true;
    }
    if (!any) Fail(ErrorCode::kInput, "malformed PPM header in " + path);
    return v;
  };
  const size_t w = next_int(), h = next_int(), maxval = next_int();
  ++pos;  // single whitespace before raster
  if (maxval != 255) Fail(ErrorCode::kInput, "only 8-bit PPM supported: " + path);
  if (bytes.size() < pos + 3 * w * h) {
    Fail(ErrorCode::kInput, "truncated PPM raster in " + path);
  }
  Image img(h, w);
  for (size_t y = 0; y < h; ++y) {
    for (size_t x = 0; x < w; ++x) {
      for (size_t c = 0; c < 3; ++c) {
        img.at(c, y, x) = bytes[pos + (y * w + x) * 3 + c] / 255.0;
      }
    }
  }
  return img;
}

}  // namespace

std::vector<double> Image::Luma() const {
  std::vector<double> y(height * width);
  const size_t plane = height * width;
  for (size_t i = 0; i < plane; ++i) {
    y[i] = 0.299 * data[i] + 0.587 * data[plane + i] + 0.114 * data[2 * plane + i];
  }
  return y;
}

Tensor Image::ToTensor() const { return Tensor::FromData({1, 3, height, width}, data); }

Image Image::FromTensor(const Tensor& t, size_t index) {
  if (t.rank() != 4 || t.dim(1) != 3 || index >= t.dim(0)) {
    Fail(ErrorCode::kDimension, "not an RGB image tensor: " + ShapeString(t.shape()));
  }
  Image img(t.dim(2), t.dim(3));
  const size_t n = img.data.size();
  for (size_t i = 0; i < n; ++i) {
    img.data[i] = std::clamp(t[index * n + i], 0.0, 1.0);
  }
  return img;
}

Tensor BatchImages(const std::vector<const Image*>& images) {
  if (images.empty()) Fail(ErrorCode::kInvalidArgument, "empty batch");
  const size_t h = images[0]->height, w = images[0]->width;
  std::vector<double> v;
  v.reserve(images.size() * 3 * h * w);
  for (const Image* img : images) {
    if (img->height != h || img->width != w) {
      Fail(ErrorCode::kDimension, "batch images differ in size");
    }
    v.insert(v.end(), img->data.begin(), img->data.end());
  }
  return Tensor::FromData({images.size(), 3, h, w}, std::move(v));
}

Image ReflectPad(const Image& img, size_t multiple) {
  const size_t h = (img.height + multiple - 1) / multiple * multiple;
  const size_t w = (img.width + multiple - 1) / multiple * multiple;
  if (h == img.height && w == img.width) return img;
  Image out(h, w);
  for (size_t c = 0; c < 3; ++c) {
    for (size_t y = 0; y < h; ++y) {
      const size_t sy = ReflectIndex(static_cast<long>(y), img.height);
      for (size_t x = 0; x < w; ++x) {
        out.at(c, y, x) = img.at(c, sy, ReflectIndex(static_cast<long>(x), img.width));
      }
    }
  }
  return out;
}

Image CropImage(const Image& img, size_t y0, size_t x0, size_t h, size_t w) {
  if (y0 + h > img.height || x0 + w > img.width) {
    Fail(ErrorCode::kDimension, "crop window outside image");
  }
  Image out(h, w);
  for (size_t c = 0; c < 3; ++c) {
    for (size_t y = 0; y < h; ++y) {
      for (size_t x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, y0 + y, x0 + x);
    }
  }
  return out;
}

Image QuantizeTo8Bit(const Image& img) {
  Image out = img;
  for (double& v : out.data) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  return out;
}

double Mse(const Image& a, const Image& b) {
  if (a.height != b.height || a.width != b.width) {
    Fail(ErrorCode::kDimension, "mse: image size mismatch");
  }
  double s = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    s += d * d;
  }
  return s / static_cast<double>(a.data.size());
}

double Psnr(const Image& a, const Image& b) {
  const double mse = Mse(a, b);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

Image ReadImage(const std::string& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) Fail(ErrorCode::kInput, "cannot open image " + path);
  char magic[2] = {0, 0};
  probe.read(magic, 2);
  probe.close();
  if (magic[0] == 'P' && magic[1] == '6') return ReadPpm(path);
  const PngBuffer png = DecodePng(path, false);
  Image img(png.height, png.width);
  for (size_t y = 0; y < png.height; ++y) {
    for (size_t x = 0; x < png.width; ++x) {
      for (size_t c = 0; c < 3; ++c) {
        img.at(c, y, x) = png.bytes[(y * png.width + x) * 3 + c] / 255.0;
      }
    }
  }
  return img;
}

void WritePng(const std::string& path, const Image& img) {
  std::vector<uint8_t> raster(img.height * img.width * 3);
  for (size_t y = 0; y < img.height; ++y) {
    for (size_t x = 0; x < img.width; ++x) {
      for (size_t c = 0; c < 3; ++c) {
        raster[(y * img.width + x) * 3 + c] = static_cast<uint8_t>(
            std::lround(std::clamp(img.at(c, y, x), 0.0, 1.0) * 255.0));
      }
    }
  }
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_get_memory_size(image, size, 0, raster.data(), 0, nullptr)) {
    Fail(ErrorCode::kInput, std::string("PNG encode failed: ") + image.message);
  }
  std::vector<uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, raster.data(), 0,
                                 nullptr)) {
    Fail(ErrorCode::kInput, std::string("PNG encode failed: ") + image.message);
  }
  out.resize(size);
  WriteFileAtomic(path, out);
}

GrayImage16 ReadPng16(const std::string& path) {
  // The simplified API would gamma-convert 8-bit input to linear; use the
  // low-level reader so ids come through untouched.
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) Fail(ErrorCode::kInput, "cannot open " + path);
  std::unique_ptr<FILE, int (*)(FILE*)> guard(fp, std::fclose);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                           nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    Fail(ErrorCode::kInput, "cannot decode PNG " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (color != PNG_COLOR_TYPE_GRAY || (depth != 16 && depth != 8)) {
    png_destroy_read_struct(&png, &info, nullptr);
    Fail(ErrorCode::kInput, "annotation raster must be 8/16-bit gray: " + path);
  }
  if (depth == 16) png_set_swap(png);  // host little-endian
  png_read_update_info(png, info);
  const size_t stride = png_get_rowbytes(png, info);
  std::vector<uint8_t> raw(stride * h);
  std::vector<png_bytep> rows(h);
  for (size_t y = 0; y < h; ++y) rows[y] = raw.data() + y * stride;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  GrayImage16 out{h, w, std::vector<uint16_t>(size_t{h} * w)};
  for (size_t y = 0; y < h; ++y) {
    for (size_t x = 0; x < w; ++x) {
      out.data[y * w + x] =
          depth == 16 ? static_cast<uint16_t>(raw[y * stride + 2 * x] |
                                              (raw[y * stride + 2 * x + 1] << 8))
                      : raw[y * stride + x];
    }
  }
  return out;
}

void WritePng16(const std::string& path, const GrayImage16& img) {
  const std::string tmp = path + ".tmp";
  FILE* fp = std::fopen(tmp.c_str(), "wb");
  if (!fp) Fail(ErrorCode::kInput, "cannot write " + tmp);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                            nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    Fail(ErrorCode::kInput, "PNG encode failed for " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 16, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<uint8_t> row(img.width * 2);
  for (size_t y = 0; y < img.height; ++y) {
    for (size_t x = 0; x < img.width; ++x) {
      const uint16_t v = img.data[y * img.width + x];
      row[2 * x] = static_cast<uint8_t>(v >> 8);  // PNG is big-endian
      row[2 * x + 1] = static_cast<uint8_t>(v & 0xff);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
  std::rename(tmp.c_str(), path.c_str());
}

}  // namespace sdvc
