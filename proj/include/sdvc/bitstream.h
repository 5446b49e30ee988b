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

#ifndef SDVC_BITSTREAM_H_
#define SDVC_BITSTREAM_H_

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sdvc/latents.h"
#include "sdvc/mask.h"
#include "sdvc/model.h"

namespace sdvc {

inline constexpr uint8_t kBitstreamVersion = 1;
inline constexpr size_t kNumSegments = 6;

struct BitstreamHeader {
  uint8_t version = kBitstreamVersion;
  uint16_t height = 0;  // original, unpadded
  uint16_t width = 0;
  uint64_t model_hash = 0;
  uint8_t lambda_id = 0;
  bool operator==(const BitstreamHeader&) const = default;
};

// Segment order is the coding order: z3, y3, z2, y2, z1, y1.
size_t SegmentIndex(int level, bool is_y);
const char* SegmentName(size_t index);

struct Bitstream {
  BitstreamHeader header;
  std::vector<uint8_t> mask;
  std::array<std::vector<uint8_t>, kNumSegments> segments;

  // Little-endian container: magic "SDVC", version u8, H u16, W u16, model
  // hash u64, lambda id u8, then varint-length-prefixed mask and payload
  // segments, then a CRC-32 of everything before it.
  std::vector<uint8_t> Serialize() const;
  // Throws kFormat on a bad magic or version and CorruptionError on
  // truncation or checksum mismatch.
  static Bitstream Parse(std::span<const uint8_t> bytes);

  size_t ByteSize() const { return Serialize().size(); }
  bool operator==(const Bitstream&) const = default;
};

// Range-coded level map, one adaptive 3-ary symbol per cell in raster order.
std::vector<uint8_t> SignalMask(const SaliencyMask& m);
SaliencyMask ParseMask(std::span<const uint8_t> bytes, size_t rows,
                       size_t cols, size_t base_offset = 0);

// Symbols handed to the range coder while encoding.
struct EncodeStats {
  std::array<size_t, 3> y_symbols{};  // index 0 = level 1
  std::array<size_t, 3> z_symbols{};
  // Coded y symbols per mask cell, row-major.
  std::vector<size_t> cell_y_symbols;
};

// Entropy-codes inference-mode latents of a single image. Masked latent
// positions are skipped. The Gaussian parameters are recomputed from the
// quantized latents in reference precision on both sides, so the stream does
// not depend on the precision mode.
Bitstream EncodeBitstream(const Codec& codec, const LatentSet& latents,
                          size_t height, size_t width, uint8_t lambda_id,
                          EncodeStats* stats = nullptr);

// Exact inverse of EncodeBitstream; the returned set carries y_hat, z_hat,
// mu, sigma, level_mask and v for every level. Throws kModel when the stream
// was produced by a different parameter set.
LatentSet DecodeBitstream(const Codec& codec, const Bitstream& b);

// Decoder network output for quantized latents ([N,3,H,W], padded size).
// Encoder and decoder both reconstruct through this function.
Tensor DecoderReconstruction(const Codec& codec, const LatentSet& latents);

// Decodes and runs the decoder network; output is cropped to the header's
// original size.
Image DecodeImage(const Codec& codec, const Bitstream& b);

// 8 * bytes / (height * width) over the whole container.
double BitsPerPixel(size_t bytes, size_t height, size_t width);

}  // namespace sdvc

#endif  // SDVC_BITSTREAM_H_
