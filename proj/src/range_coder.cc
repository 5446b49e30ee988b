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

#include "sdvc/range_coder.h"

#include <algorithm>
#include <cmath>

#include "sdvc/common.h"

namespace sdvc {
namespace {
constexpr uint32_t kTop = 1u << 24;
}  // namespace

size_t FrequencyTable::Find(uint32_t target) const {
  auto it = std::upper_bound(cum.begin(), cum.end(), target);
  return static_cast<size_t>(it - cum.begin()) - 1;
}

FrequencyTable QuantizePmf(std::span<const double> pmf, uint32_t total) {
  const size_t n = pmf.size();
  if (n == 0 || n > total) {
    Fail(ErrorCode::kInvalidArgument, "pmf size must be in [1, total]");
  }
  double sum = 0.0;
  for (double p : pmf) sum += std::max(p, 0.0);
  std::vector<uint32_t> freq(n, 1);
  if (sum > 0.0) {
    for (size_t i = 0; i < n; ++i) {
      const double f = std::floor(std::max(pmf[i], 0.0) / sum * total + 0.5);
      freq[i] = std::max<uint32_t>(1, static_cast<uint32_t>(std::min<double>(f, total)));
    }
  }
  int64_t diff = static_cast<int64_t>(total);
  for (uint32_t f : freq) diff -= f;
  while (diff != 0) {
    const size_t top = static_cast<size_t>(
        std::max_element(freq.begin(), freq.end()) - freq.begin());
    if (diff > 0) {
      freq[top] += static_cast<uint32_t>(diff);
      diff = 0;
    } else {
      const uint32_t take =
          static_cast<uint32_t>(std::min<int64_t>(-diff, freq[top] - 1));
      freq[top] -= take;
      diff += take;
    }
  }
  FrequencyTable t;
  t.cum.resize(n + 1, 0);
  for (size_t i = 0; i < n; ++i) t.cum[i + 1] = t.cum[i] + freq[i];
  return t;
}

void RangeEncoder::ShiftLow() {
  if (static_cast<uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
    const uint8_t carry = static_cast<uint8_t>(low_ >> 32);
    uint8_t temp = cache_;
    do {
      out_.push_back(static_cast<uint8_t>(temp + carry));
      temp = 0xFF;
    } while (--cache_size_ != 0);
    cache_ = static_cast<uint8_t>(low_ >> 24);
  }
  ++cache_size_;
  low_ = (low_ & 0x00FFFFFFu) << 8;
}

void RangeEncoder::Encode(uint32_t cum, uint32_t freq, uint32_t total) {
  const uint32_t r = range_ / total;
  low_ += static_cast<uint64_t>(r) * cum;
  range_ = r * freq;
  while (range_ < kTop) {
    range_ <<= 8;
    ShiftLow();
  }
  ++symbols_;
}

void RangeEncoder::EncodeBits(uint32_t value, uint32_t nbits) {
  Encode(value, 1, 1u << nbits);
}

std::vector<uint8_t> RangeEncoder::Finish() {
  if (symbols_ == 0) return {};
  // Any value in [low, low + range) identifies the stream; pick the one with
  // the most trailing zero bits so the zero bytes can be dropped.
  const uint64_t hi = low_ + range_ - 1;
  for (int k = 32; k >= 0; --k) {
    const uint64_t mask = (uint64_t{1} << k) - 1;
    const uint64_t v = (low_ + mask) & ~mask;
    if (v <= hi) {
      low_ = v;
      break;
    }
  }
  for (int i = 0; i < 5; ++i) ShiftLow();
  // The first byte carries the integer part of the code value, which is
  // always zero.
  std::vector<uint8_t> out(out_.begin() + 1, out_.end());
  // The decoder substitutes at most four zero bytes past the end.
  for (int i = 0; i < 4 && !out.empty() && out.back() == 0; ++i) {
    out.pop_back();
  }
  return out;
}

RangeDecoder::RangeDecoder(std::span<const uint8_t> data, size_t base_offset)
    : data_(data), base_offset_(base_offset) {
  for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | NextByte();
}

uint8_t RangeDecoder::NextByte() {
  if (pos_ < data_.size()) return data_[pos_++];
  if (++overrun_ > 4) {
    throw CorruptionError("range decoder ran past segment end",
                          base_offset_ + data_.size());
  }
  return 0;
}

void RangeDecoder::Normalize() {
  while (range_ < kTop) {
    code_ = (code_ << 8) | NextByte();
    range_ <<= 8;
  }
}

uint32_t RangeDecoder::DecodeTarget(uint32_t total) {
  step_ = range_ / total;
  const uint32_t v = code_ / step_;
  if (v >= total) {
    throw CorruptionError("range decoder value outside symbol space",
                          base_offset_ + std::min(pos_, data_.size()));
  }
  return v;
}

void RangeDecoder::Consume(uint32_t cum, uint32_t freq) {
  code_ -= step_ * cum;
  range_ = step_ * freq;
  Normalize();
}

size_t RangeDecoder::Decode(const FrequencyTable& t) {
  const size_t s = t.Find(DecodeTarget(t.total()));
  Consume(t.cum[s], t.freq(s));
  return s;
}

uint32_t RangeDecoder::DecodeBits(uint32_t nbits) {
  const uint32_t v = DecodeTarget(1u << nbits);
  Consume(v, 1);
  return v;
}

AdaptiveModel::AdaptiveModel(size_t symbols, uint32_t increment, uint32_t limit)
    : freq_(symbols, 1),
      total_(static_cast<uint32_t>(symbols)),
      increment_(increment),
      limit_(limit) {}

void AdaptiveModel::Update(size_t symbol) {
  freq_[symbol] += increment_;
  total_ += increment_;
  if (total_ > limit_) {
    total_ = 0;
    for (uint32_t& f : freq_) {
      f = (f + 1) / 2;
      total_ += f;
    }
  }
}

void AdaptiveModel::Encode(RangeEncoder& enc, size_t symbol) {
  uint32_t cum = 0;
  for (size_t i = 0; i < symbol; ++i) cum += freq_[i];
  enc.Encode(cum, freq_[symbol], total_);
  Update(symbol);
}

size_t AdaptiveModel::Decode(RangeDecoder& dec) {
  const uint32_t target = dec.DecodeTarget(total_);
  uint32_t cum = 0;
  size_t s = 0;
  while (cum + freq_[s] <= target) cum += freq_[s++];
  dec.Consume(cum, freq_[s]);
  Update(s);
  return s;
}

}  // namespace sdvc
