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

#ifndef SDVC_GRAD_CHECK_H_
#define SDVC_GRAD_CHECK_H_

#include <cstdint>
#include <functional>
#include <vector>

#include "sdvc/tensor.h"

namespace sdvc {

struct GradCheckReport {
  size_t samples = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  // Largest |analytic| seen; zero means every sampled gradient was zero.
  double max_abs_gradient = 0.0;
  // Where max_rel_error occurred: input index and element index.
  size_t worst_input = 0;
  size_t worst_element = 0;
};

struct GradCheckOptions {
  double step = 1e-5;
  size_t max_samples = 1000;
  uint64_t seed = 1;
  // Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  double rel_floor = 1e-6;
};

// Compares reverse-mode gradients of `loss` (rebuilt on every call) with
// central finite differences on up to max_samples coordinates drawn from
// `inputs`. Must run in reference precision.
GradCheckReport GradCheck(const std::function<Tensor()>& loss,
                          std::vector<Tensor> inputs,
                          const GradCheckOptions& opts = {});

}  // namespace sdvc

#endif  // SDVC_GRAD_CHECK_H_
