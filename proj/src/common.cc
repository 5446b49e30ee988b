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

#include "sdvc/common.h"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace sdvc {
namespace {
std::atomic<Precision> g_precision{Precision::kReference};
}  // namespace

Precision GetPrecision() { return g_precision.load(); }
void SetPrecision(Precision p) { g_precision.store(p); }

size_t ThreadCount() {
  size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("SDVC_THREADS")) {
    long cap = std::strtol(env, nullptr, 10);
    if (cap >= 1) n = std::min(n, static_cast<size_t>(cap));
  }
  return n;
}

void ParallelFor(size_t n, const std::function<void(size_t)>& fn) {
  const size_t threads = std::min(ThreadCount(), n);
  if (threads <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  const size_t chunk = (n + threads - 1) / threads;
  for (size_t t = 0; t < threads; ++t) {
    const size_t begin = t * chunk;
    const size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([begin, end, &fn] {
      for (size_t i = begin; i < end; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

uint64_t Fnv1a64(const void* data, size_t size, uint64_t seed) {
  const auto* p = static_cast<const uint8_t*>(data);
  uint64_t h = seed;
  for (size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace sdvc
