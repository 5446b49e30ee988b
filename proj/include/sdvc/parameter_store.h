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

#ifndef SDVC_PARAMETER_STORE_H_
#define SDVC_PARAMETER_STORE_H_

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sdvc/tensor.h"

namespace sdvc {

// Named trainable tensors. Iteration order is the name order, which fixes
// the serialized layout.
//
// File layout (little-endian): "SDHC", u32 version, u32 entry count, then per
// entry u32 name length, name bytes, u8 dtype (0 = f64, 1 = f32), u32 rank,
// u32 extents, raw values.
class ParameterStore {
 public:
  static constexpr uint32_t kVersion = 1;

  // Throws if the name is already taken.
  Tensor& Add(const std::string& name, const Shape& shape,
              std::vector<double> values);
  Tensor& AddHeUniform(const std::string& name, const Shape& shape,
                       size_t fan_in, std::mt19937_64& rng);
  Tensor& AddConstant(const std::string& name, const Shape& shape, double v);

  bool Contains(const std::string& name) const {
    return entries_.count(name) != 0;
  }
  const Tensor& Get(const std::string& name) const;
  Tensor& Get(const std::string& name);

  const std::map<std::string, Tensor>& entries() const { return entries_; }
  size_t size() const { return entries_.size(); }
  size_t ParameterCount() const;

  void ZeroGrad();
  void SetRequiresGrad(bool on);
  // Deep copy of the values.
  ParameterStore Clone() const;

  std::vector<uint8_t> Serialize() const;
  static ParameterStore Deserialize(std::span<const uint8_t> bytes);
  void Save(const std::string& path) const;
  static ParameterStore Load(const std::string& path);

  // FNV-1a over the serialized bytes.
  uint64_t Hash() const;

 private:
  std::map<std::string, Tensor> entries_;
};

}  // namespace sdvc

#endif  // SDVC_PARAMETER_STORE_H_
