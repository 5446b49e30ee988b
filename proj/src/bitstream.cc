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

#include "sdvc/bitstream.h"

#include <cstring>
#include <numeric>
#include <utility>

#include "sdvc/byte_io.h"
#include "sdvc/common.h"
#include "sdvc/entropy_model.h"
#include "sdvc/range_coder.h"

namespace sdvc {
namespace {

constexpr char kMagic[4] = {'S', 'D', 'V', 'C'};
constexpr size_t kMaskSymbols = 3;

std::vector<SymbolTable> PriorTables(const Codec& codec, int level) {
  const FactorizedPriorView prior(codec.params(), PriorPrefix(level));
  std::vector<SymbolTable> tables;
  tables.reserve(prior.channels());
  for (size_t c = 0; c < prior.channels(); ++c) {
    tables.push_back(FactorizedSymbolTable(prior, c));
  }
  return tables;
}

std::vector<uint8_t> EncodeZ(const Tensor& z_hat,
                             const std::vector<SymbolTable>& tables,
                             size_t* symbols) {
  RangeEncoder enc;
  const size_t hw = z_hat.dim(2) * z_hat.dim(3);
  for (size_t i = 0; i < z_hat.numel(); ++i) {
    EncodeSymbol(enc, tables[(i / hw) % tables.size()],
                 static_cast<int>(z_hat[i]));
  }
  *symbols = z_hat.numel();
  return enc.Finish();
}

// `cell_symbols` is indexed like the mask grid; `cells_per_row` is its width.
std::vector<uint8_t> EncodeY(const LevelLatents& L, int level,
                             size_t cells_per_row,
                             std::vector<size_t>* cell_symbols) {
  RangeEncoder enc;
  const size_t h = L.y_hat.dim(2), w = L.y_hat.dim(3);
  const size_t per_cell = kCellSize / LatentStride(level);
  for (size_t i = 0; i < L.y_hat.numel(); ++i) {
    if (L.level_mask[i] == 0) continue;
    EncodeSymbol(enc, GaussianSymbolTable(L.mu[i], L.sigma[i]),
                 static_cast<int>(L.y_hat[i]));
    const size_t yy = (i / w) % h, xx = i % w;
    ++(*cell_symbols)[(yy / per_cell) * cells_per_row + xx / per_cell];
  }
  return enc.Finish();
}

}  // namespace

size_t SegmentIndex(int level, bool is_y) {
  SDVC_CHECK_ARG(level >= 1 && level <= kNumLevels, "bad level");
  return static_cast<size_t>(kNumLevels - level) * 2 + (is_y ? 1 : 0);
}

const char* SegmentName(size_t index) {
  static const char* kNames[kNumSegments] = {"z3", "y3", "z2", "y2", "z1", "y1"};
  return index < kNumSegments ? kNames[index] : "?";
}

std::vector<uint8_t> Bitstream::Serialize() const {
  ByteWriter w;
  w.Bytes(std::span(reinterpret_cast<const uint8_t*>(kMagic), 4));
  w.U8(header.version);
  w.U16(header.height);
  w.U16(header.width);
  w.U64(header.model_hash);
  w.U8(header.lambda_id);
  w.Varint(mask.size());
  w.Bytes(mask);
  for (const auto& s : segments) {
    w.Varint(s.size());
    w.Bytes(s);
  }
  const uint32_t crc = Crc32(w.buffer());
  w.U32(crc);
  return w.Take();
}

Bitstream Bitstream::Parse(std::span<const uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    Fail(ErrorCode::kFormat, "not an SDVC bitstream (bad magic)");
  }
  ByteReader r(bytes);
  r.Bytes(4);
  Bitstream b;
  b.header.version = r.U8();
  if (b.header.version != kBitstreamVersion) {
    Fail(ErrorCode::kFormat, "unsupported bitstream version " +
                                 std::to_string(b.header.version));
  }
  b.header.height = r.U16();
  b.header.width = r.U16();
  b.header.model_hash = r.U64();
  b.header.lambda_id = r.U8();
  auto segment = [&r]() {
    const size_t at = r.offset();
    const uint64_t n = r.Varint();
    if (n > r.remaining()) {
      throw CorruptionError("segment length exceeds stream", at);
    }
    auto s = r.Bytes(static_cast<size_t>(n));
    return std::vector<uint8_t>(s.begin(), s.end());
  };
  b.mask = segment();
  for (auto& s : b.segments) s = segment();
  const size_t body = r.offset();
  const uint32_t crc = r.U32();
  if (r.remaining() != 0) {
    throw CorruptionError("trailing bytes after checksum", r.offset());
  }
  if (crc != Crc32(bytes.subspan(0, body))) {
    throw CorruptionError("checksum mismatch", body);
  }
  if (b.header.height == 0 || b.header.width == 0) {
    throw CorruptionError("zero image dimension in header", 5);
  }
  return b;
}

std::vector<uint8_t> SignalMask(const SaliencyMask& m) {
  RangeEncoder enc;
  AdaptiveModel model(kMaskSymbols);
  for (uint8_t level : m.levels()) model.Encode(enc, level - 1u);
  return enc.Finish();
}

SaliencyMask ParseMask(std::span<const uint8_t> bytes, size_t rows,
                       size_t cols, size_t base_offset) {
  RangeDecoder dec(bytes, base_offset);
  AdaptiveModel model(kMaskSymbols);
  SaliencyMask m(rows, cols);
  for (size_t r = 0; r < rows; ++r) {
    for (size_t c = 0; c < cols; ++c) {
      m.set(r, c, static_cast<uint8_t>(model.Decode(dec) + 1));
    }
  }
  return m;
}

Bitstream EncodeBitstream(const Codec& codec, const LatentSet& latents,
                          size_t height, size_t width, uint8_t lambda_id,
                          EncodeStats* stats) {
  SDVC_CHECK_ARG(latents.mode == Mode::kInfer,
                 "bitstreams need inference-mode latents");
  SDVC_CHECK_ARG(latents.batch() == 1, "bitstreams hold a single image");
  SDVC_CHECK_ARG(height > 0 && width > 0 && height <= 0xFFFF && width <= 0xFFFF,
                 "image dimensions must be in [1, 65535]");
  if (CellGridExtent(height) * kCellSize != latents.height ||
      CellGridExtent(width) * kCellSize != latents.width) {
    Fail(ErrorCode::kDimension, "latents do not match the image size");
  }
  NoGradGuard no_grad;
  ScopedPrecision precision(Precision::kReference);
  Bitstream b;
  b.header.height = static_cast<uint16_t>(height);
  b.header.width = static_cast<uint16_t>(width);
  b.header.model_hash = codec.Hash();
  b.header.lambda_id = lambda_id;
  b.mask = SignalMask(latents.masks[0]);
  EncodeStats local;
  local.cell_y_symbols.assign(latents.masks[0].cells(), 0);
  auto [h3, w3] = LatentGridDims(latents.height, latents.width, 3);
  Tensor v_next = codec.ZeroFeature(1, h3, w3);
  for (int lv = kNumLevels; lv >= 1; --lv) {
    const LevelLatents& src = latents.level(lv);
    auto [h, w] = LatentGridDims(latents.height, latents.width, lv);
    // Entropy parameters are recomputed exactly as the decoder will.
    LevelLatents L;
    // The decoder only ever sees zeros at masked positions.
    L.y_hat = ApplyMask(src.y_hat, src.level_mask);
    L.level_mask = src.level_mask;
    const GaussianParams g = codec.HyperSynthesis(lv, src.z_hat, v_next, h, w);
    L.mu = g.mu;
    L.sigma = g.sigma;
    b.segments[SegmentIndex(lv, false)] =
        EncodeZ(src.z_hat, PriorTables(codec, lv), &local.z_symbols[lv - 1]);
    const size_t before = std::accumulate(local.cell_y_symbols.begin(),
                                          local.cell_y_symbols.end(),
                                          size_t{0});
    b.segments[SegmentIndex(lv, true)] =
        EncodeY(L, lv, latents.masks[0].cols(), &local.cell_y_symbols);
    local.y_symbols[lv - 1] =
        std::accumulate(local.cell_y_symbols.begin(),
                        local.cell_y_symbols.end(), size_t{0}) -
        before;
    v_next = codec.LsuUp(lv, L.y_hat, v_next);
  }
  if (stats != nullptr) *stats = std::move(local);
  return b;
}

Tensor DecoderReconstruction(const Codec& codec, const LatentSet& latents) {
  NoGradGuard no_grad;
  Tensor v1;
  {
    ScopedPrecision precision(Precision::kReference);
    auto [h3, w3] = LatentGridDims(latents.height, latents.width, 3);
    Tensor v_next = codec.ZeroFeature(latents.batch(), h3, w3);
    for (int lv = kNumLevels; lv >= 1; --lv) {
      v_next = codec.LsuUp(lv, latents.level(lv).y_hat, v_next);
    }
    v1 = v_next;
  }
  return codec.Synthesis(v1);
}

LatentSet DecodeBitstream(const Codec& codec, const Bitstream& b) {
  NoGradGuard no_grad;
  ScopedPrecision precision(Precision::kReference);
  if (b.header.model_hash != codec.Hash()) {
    Fail(ErrorCode::kModel,
         "bitstream was produced with a different model (hash mismatch)");
  }
  const size_t rows = CellGridExtent(b.header.height);
  const size_t cols = CellGridExtent(b.header.width);
  LatentSet out;
  out.mode = Mode::kInfer;
  out.height = rows * kCellSize;
  out.width = cols * kCellSize;
  // Offsets inside the serialized stream, for error reporting.
  size_t offset = 4 + 1 + 2 + 2 + 8 + 1;
  auto varint_size = [](size_t n) {
    size_t s = 1;
    while (n >= 0x80) {
      n >>= 7;
      ++s;
    }
    return s;
  };
  offset += varint_size(b.mask.size());
  out.masks = {ParseMask(b.mask, rows, cols, offset)};
  offset += b.mask.size();
  std::array<size_t, kNumSegments> seg_offset{};
  for (size_t i = 0; i < kNumSegments; ++i) {
    offset += varint_size(b.segments[i].size());
    seg_offset[i] = offset;
    offset += b.segments[i].size();
  }

  const ModelConfig& cfg = codec.config();
  const size_t ch = cfg.hyper_channels, c = cfg.latent_channels;
  auto [h3, w3] = LatentGridDims(out.height, out.width, 3);
  Tensor v_next = codec.ZeroFeature(1, h3, w3);
  for (int lv = kNumLevels; lv >= 1; --lv) {
    LevelLatents& L = out.level(lv);
    auto [h, w] = LatentGridDims(out.height, out.width, lv);
    const size_t zh = (h + 1) / 2, zw = (w + 1) / 2;

    const size_t zi = SegmentIndex(lv, false);
    const auto tables = PriorTables(codec, lv);
    RangeDecoder zdec(b.segments[zi], seg_offset[zi]);
    std::vector<double> z(ch * zh * zw);
    for (size_t i = 0; i < z.size(); ++i) {
      z[i] = DecodeSymbol(zdec, tables[i / (zh * zw)]);
    }
    L.z_hat = Tensor::FromData({1, ch, zh, zw}, std::move(z));
    GaussianParams g = codec.HyperSynthesis(lv, L.z_hat, v_next, h, w);
    L.mu = g.mu;
    L.sigma = g.sigma;
    L.level_mask = LevelMaskTensor(out.masks, lv, c);

    const size_t yi = SegmentIndex(lv, true);
    RangeDecoder ydec(b.segments[yi], seg_offset[yi]);
    std::vector<double> y(c * h * w, 0.0);
    for (size_t i = 0; i < y.size(); ++i) {
      if (L.level_mask[i] == 0) continue;
      y[i] = DecodeSymbol(ydec, GaussianSymbolTable(L.mu[i], L.sigma[i]));
    }
    L.y_hat = Tensor::FromData({1, c, h, w}, std::move(y));
    L.v = codec.LsuUp(lv, L.y_hat, v_next);
    v_next = L.v;
  }
  return out;
}

Image DecodeImage(const Codec& codec, const Bitstream& b) {
  NoGradGuard no_grad;
  const LatentSet latents = DecodeBitstream(codec, b);
  const Image padded = Image::FromTensor(DecoderReconstruction(codec, latents));
  return CropImage(padded, 0, 0, b.header.height, b.header.width);
}

double BitsPerPixel(size_t bytes, size_t height, size_t width) {
  SDVC_CHECK_ARG(height > 0 && width > 0, "empty image");
  return 8.0 * static_cast<double>(bytes) /
         (static_cast<double>(height) * static_cast<double>(width));
}

}  // namespace sdvc
