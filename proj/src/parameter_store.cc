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

#include "sdvc/parameter_store.h"

#include <cmath>
#include <bit>
#include <cstring>

#include "sdvc/byte_io.h"
#include "sdvc/common.h"

namespace sdvc {
namespace {
constexpr char kMagic[4] = {'S', 'D', 'H', 'C'};
}  // namespace

Tensor& ParameterStore::Add(const std::string& name, const Shape& shape,
                            std::vector<double> values) {
  if (entries_.count(name)) {
    Fail(ErrorCode::kInvalidArgument, "duplicate parameter name " + name);
  }
  return entries_.emplace(name, Tensor::Parameter(shape, std::move(values)))
      .first->second;
}

Tensor& ParameterStore::AddHeUniform(const std::string& name,
                                     const Shape& shape, size_t fan_in,
                                     std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(NumElements(shape));
  for (double& x : v) x = dist(rng);
  return Add(name, shape, std::move(v));
}

Tensor& ParameterStore::AddConstant(const std::string& name,
                                    const Shape& shape, double v) {
  return Add(name, shape, std::vector<double>(NumElements(shape), v));
}

const Tensor& ParameterStore::Get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) Fail(ErrorCode::kModel, "missing parameter " + name);
  return it->second;
}

Tensor& ParameterStore::Get(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) Fail(ErrorCode::kModel, "missing parameter " + name);
  return it->second;
}

size_t ParameterStore::ParameterCount() const {
  size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.numel();
  return n;
}

void ParameterStore::ZeroGrad() {
  for (auto& [_, t] : entries_) t.ZeroGrad();
}

void ParameterStore::SetRequiresGrad(bool on) {
  for (auto& [_, t] : entries_) t.set_requires_grad(on);
}

ParameterStore ParameterStore::Clone() const {
  ParameterStore out;
  for (const auto& [name, t] : entries_) {
    Tensor& c = out.Add(name, t.shape(),
                        std::vector<double>(t.values().begin(), t.values().end()));
    c.set_requires_grad(t.requires_grad());
  }
  return out;
}

std::vector<uint8_t> ParameterStore::Serialize() const {
  ByteWriter w;
  w.Bytes(std::span(reinterpret_cast<const uint8_t*>(kMagic), 4));
  w.U32(kVersion);
  w.U32(static_cast<uint32_t>(entries_.size()));
  for (const auto& [name, t] : entries_) {
    w.U32(static_cast<uint32_t>(name.size()));
    w.Str(name);
    w.U8(0);  // f64
    w.U32(static_cast<uint32_t>(t.rank()));
    for (size_t e : t.shape()) w.U32(static_cast<uint32_t>(e));
    for (double v : t.values()) w.F64(v);
  }
  return w.Take();
}

ParameterStore ParameterStore::Deserialize(std::span<const uint8_t> bytes) {
  ByteReader r(bytes);
  auto magic = r.Bytes(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) {
    Fail(ErrorCode::kModel, "not a parameter file (bad magic)");
  }
  const uint32_t version = r.U32();
  if (version != kVersion) {
    Fail(ErrorCode::kModel,
         "unsupported parameter file version " + std::to_string(version));
  }
  const uint32_t count = r.U32();
  ParameterStore store;
  for (uint32_t i = 0; i < count; ++i) {
    const std::string name = r.Str(r.U32());
    const uint8_t dtype = r.U8();
    if (dtype > 1) Fail(ErrorCode::kModel, "bad dtype tag for " + name);
    const uint32_t rank = r.U32();
    if (rank > 8) Fail(ErrorCode::kModel, "bad rank for " + name);
    Shape shape(rank);
    for (auto& e : shape) e = r.U32();
    std::vector<double> values(NumElements(shape));
    for (double& v : values) {
      if (dtype == 0) {
        v = r.F64();
      } else {
        v = static_cast<double>(std::bit_cast<float>(r.U32()));
      }
    }
    store.Add(name, shape, std::move(values));
  }
  if (r.remaining() != 0) {
    Fail(ErrorCode::kModel, "trailing bytes in parameter file");
  }
  return store;
}

void ParameterStore::Save(const std::string& path) const {
  WriteFileAtomic(path, Serialize());
}

ParameterStore ParameterStore::Load(const std::string& path) {
  std::vector<uint8_t> bytes;
  try {
    bytes = ReadFileBytes(path);
  } catch (const Error& e) {
    Fail(ErrorCode::kModel, e.what());
  }
  try {
    return Deserialize(bytes);
  } catch (const CorruptionError& e) {
    Fail(ErrorCode::kModel, std::string("truncated parameter file: ") + e.what());
  }
}

uint64_t ParameterStore::Hash() const {
  const auto bytes = Serialize();
  return Fnv1a64(bytes.data(), bytes.size());
}

}  // namespace sdvc
