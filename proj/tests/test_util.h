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

#ifndef SDVC_TESTS_TEST_UTIL_H_
#define SDVC_TESTS_TEST_UTIL_H_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "sdvc/entropy_model.h"
#include "sdvc/latents.h"
#include "sdvc/mask.h"
#include "sdvc/model.h"
#include "sdvc/tensor.h"

namespace sdvc::testing {

inline std::vector<double> RandomValues(size_t n, std::mt19937_64& rng,
                                        double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

inline Tensor RandomTensor(const Shape& shape, std::mt19937_64& rng,
                           double lo = -1.0, double hi = 1.0) {
  return Tensor::FromData(shape, RandomValues(NumElements(shape), rng, lo, hi));
}

inline Tensor RandomParameter(const Shape& shape, std::mt19937_64& rng,
                              double lo = -1.0, double hi = 1.0) {
  return Tensor::Parameter(shape,
                           RandomValues(NumElements(shape), rng, lo, hi));
}

inline SaliencyMask RandomMask(size_t rows, size_t cols, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> lv(1, 3);
  SaliencyMask m(rows, cols);
  for (size_t r = 0; r < rows; ++r) {
    for (size_t c = 0; c < cols; ++c)
      m.set(r, c, static_cast<uint8_t>(lv(rng)));
  }
  return m;
}

// Integer values with a heavy tail so some of them take the escape path.
inline Tensor RandomSymbols(const Shape& shape, const Tensor* level_mask,
                            std::mt19937_64& rng) {
  std::normal_distribution<double> body(0.0, 3.0);
  std::uniform_int_distribution<int> tail(-kSymbolMax, kSymbolMax);
  std::bernoulli_distribution outlier(0.05);
  std::vector<double> v(NumElements(shape));
  for (size_t i = 0; i < v.size(); ++i) {
    const double q = outlier(rng) ? tail(rng) : std::round(body(rng));
    v[i] = std::clamp(q, -double(kSymbolMax), double(kSymbolMax));
    if (level_mask != nullptr) v[i] *= (*level_mask)[i];
    v[i] += 0.0;  // no negative zeros
  }
  return Tensor::FromData(shape, std::move(v));
}

// Small Gaussian offsets on every parameter. Zero biases over masked inputs
// otherwise sit exactly on a leaky-ReLU kink.
inline void JitterParameters(const ParameterStore& store, uint64_t seed,
                             double scale = 0.01) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (const auto& [name, t] : store.entries()) {
    Tensor h = t;
    for (double& v : h.mutable_values()) v += n(rng);
  }
}

inline ModelConfig TinyConfig() {
  ModelConfig c;
  c.hidden_channels = 4;
  c.latent_channels = 4;
  c.hyper_channels = 2;
  return c;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("sdvc_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::string File(const std::string& name) const {
    return (path_ / name).string();
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace sdvc::testing

#endif  // SDVC_TESTS_TEST_UTIL_H_
