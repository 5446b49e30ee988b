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

#ifndef SDVC_BYTE_IO_H_
#define SDVC_BYTE_IO_H_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace sdvc {

// Little-endian serialization helpers.
class ByteWriter {
 public:
  void U8(uint8_t v) { buf_.push_back(v); }
  void U16(uint16_t v) { Le(v, 2); }
  void U32(uint32_t v) { Le(v, 4); }
  void U64(uint64_t v) { Le(v, 8); }
  void F64(double v);
  // LEB128 unsigned varint.
  void Varint(uint64_t v);
  void Bytes(std::span<const uint8_t> b) {
    buf_.insert(buf_.end(), b.begin(), b.end());
  }
  void Str(const std::string& s) {
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  std::vector<uint8_t>& buffer() { return buf_; }
  std::vector<uint8_t> Take() { return std::move(buf_); }

 private:
  void Le(uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  std::vector<uint8_t> buf_;
};

// Bounds-checked reader. Running past the end throws CorruptionError with
// the offending offset.
class ByteReader {
 public:
  explicit ByteReader(std::span<const uint8_t> data) : data_(data) {}
  uint8_t U8() { return static_cast<uint8_t>(Le(1)); }
  uint16_t U16() { return static_cast<uint16_t>(Le(2)); }
  uint32_t U32() { return static_cast<uint32_t>(Le(4)); }
  uint64_t U64() { return Le(8); }
  double F64();
  uint64_t Varint();
  std::span<const uint8_t> Bytes(size_t n);
  std::string Str(size_t n);

  size_t offset() const { return pos_; }
  size_t remaining() const { return data_.size() - pos_; }

 private:
  uint64_t Le(int n);
  void Need(size_t n) const;
  std::span<const uint8_t> data_;
  size_t pos_ = 0;
};

std::vector<uint8_t> ReadFileBytes(const std::string& path);
// Writes to a temporary sibling and renames, so readers never see a partial
// file.
void WriteFileAtomic(const std::string& path, std::span<const uint8_t> bytes);
void WriteTextAtomic(const std::string& path, const std::string& text);

uint32_t Crc32(std::span<const uint8_t> data);

}  // namespace sdvc

#endif  // SDVC_BYTE_IO_H_
