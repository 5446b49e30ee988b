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

#ifndef SDVC_RANGE_CODER_H_
#define SDVC_RANGE_CODER_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace sdvc {

inline constexpr uint32_t kFreqBits = 16;
inline constexpr uint32_t kFreqTotal = 1u << kFreqBits;

// Cumulative frequency table. cum.front() == 0, cum.back() == total.
struct FrequencyTable {
  std::vector<uint32_t> cum;

  size_t size() const { return cum.size() - 1; }
  uint32_t total() const { return cum.back(); }
  uint32_t freq(size_t s) const { return cum[s + 1] - cum[s]; }
  // Symbol whose interval contains `target` (< total).
  size_t Find(uint32_t target) const;
};

// Quantizes a pmf (need not be normalized) to integer frequencies summing to
// `total`, each at least 1. Deterministic for a given input.
FrequencyTable QuantizePmf(std::span<const double> pmf,
                           uint32_t total = kFreqTotal);

// Byte-oriented range encoder: 64-bit low register with deferred carry
// propagation, 32-bit range, renormalization in whole bytes once the range
// drops below 2^24. Frequency totals are at most 2^16.
class RangeEncoder {
 public:
  void Encode(uint32_t cum, uint32_t freq, uint32_t total);
  void Encode(const FrequencyTable& t, size_t symbol) {
    Encode(t.cum[symbol], t.freq(symbol), t.total());
  }
  // Uniform value in [0, 2^nbits), nbits <= 16.
  void EncodeBits(uint32_t value, uint32_t nbits);

  // Flushes the minimum number of bytes that pins down the final interval.
  // A coder that never saw a symbol produces an empty buffer.
  std::vector<uint8_t> Finish();

  size_t symbols() const { return symbols_; }

 private:
  void ShiftLow();

  uint64_t low_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
  uint8_t cache_ = 0;
  uint64_t cache_size_ = 1;
  size_t symbols_ = 0;
  std::vector<uint8_t> out_;
};

// Decoder for RangeEncoder output. Reads past the end of the buffer as zero
// bytes (the encoder trims trailing zeros); reading further than the encoder
// could have trimmed, or landing outside every symbol interval, throws
// CorruptionError with `base_offset` + position.
class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const uint8_t> data, size_t base_offset = 0);

  size_t Decode(const FrequencyTable& t);
  uint32_t DecodeBits(uint32_t nbits);
  // Two-step interface for adaptive models.
  uint32_t DecodeTarget(uint32_t total);
  void Consume(uint32_t cum, uint32_t freq);

 private:
  uint8_t NextByte();
  void Normalize();

  std::span<const uint8_t> data_;
  size_t base_offset_;
  size_t pos_ = 0;
  size_t overrun_ = 0;
  uint32_t code_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
  uint32_t step_ = 0;
};

// Frequency model that adapts after each symbol; used for the mask segment.
class AdaptiveModel {
 public:
  explicit AdaptiveModel(size_t symbols, uint32_t increment = 24,
                         uint32_t limit = 1u << 13);
  void Encode(RangeEncoder& enc, size_t symbol);
  size_t Decode(RangeDecoder& dec);

 private:
  void Update(size_t symbol);
  std::vector<uint32_t> freq_;
  uint32_t total_;
  uint32_t increment_, limit_;
};

}  // namespace sdvc

#endif  // SDVC_RANGE_CODER_H_
