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

#ifndef SDVC_COMMON_H_
#define SDVC_COMMON_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace sdvc {

// Error categories. The CLI maps these onto its exit-code contract.
enum class ErrorCode {
  kInvalidArgument,
  kDimension,
  kInput,       // unreadable / malformed input files
  kModel,       // checkpoint problems, wrong model for a bitstream
  kFormat,      // bad magic or version
  kCorruption,  // truncated stream or checksum failure
  kDivergence,  // NaN during training
  kNoOverlap,   // BD-rate curves do not overlap
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

class CorruptionError : public Error {
 public:
  CorruptionError(const std::string& what, size_t offset)
      : Error(ErrorCode::kCorruption,
              what + " (byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  size_t offset() const { return offset_; }

 private:
  size_t offset_;
};

[[noreturn]] inline void Fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

#define SDVC_CHECK_ARG(cond, msg)                                   \
  do {                                                              \
    if (!(cond)) ::sdvc::Fail(::sdvc::ErrorCode::kInvalidArgument, \
                              std::string(msg));                    \
  } while (0)

// Numeric mode. Reference mode runs every kernel in double precision; fast
// mode runs the convolution GEMMs in single precision. Tensor storage is
// always double.
enum class Precision { kReference, kFast };

Precision GetPrecision();
void SetPrecision(Precision p);

class ScopedPrecision {
 public:
  explicit ScopedPrecision(Precision p) : saved_(GetPrecision()) {
    SetPrecision(p);
  }
  ~ScopedPrecision() { SetPrecision(saved_); }
  ScopedPrecision(const ScopedPrecision&) = delete;
  ScopedPrecision& operator=(const ScopedPrecision&) = delete;

 private:
  Precision saved_;
};

// Worker count, capped by SDVC_THREADS. Always >= 1.
size_t ThreadCount();

// Runs fn(i) for i in [0, n). Work is split into contiguous chunks so that
// results written per index are independent of the thread count.
void ParallelFor(size_t n, const std::function<void(size_t)>& fn);

// 64-bit FNV-1a.
uint64_t Fnv1a64(const void* data, size_t size,
                 uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace sdvc

#endif  // SDVC_COMMON_H_
