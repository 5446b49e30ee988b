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

#include "sdvc/grad_check.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "sdvc/common.h"

namespace sdvc {

GradCheckReport GradCheck(const std::function<Tensor()>& loss,
                          std::vector<Tensor> inputs,
                          const GradCheckOptions& opts) {
  if (GetPrecision() != Precision::kReference) {
    Fail(ErrorCode::kInvalidArgument, "GradCheck needs reference precision");
  }
  for (Tensor& t : inputs) {
    t.set_requires_grad(true);
    t.ZeroGrad();
  }
  Backward(loss());

  std::vector<std::pair<size_t, size_t>> coords;
  for (size_t i = 0; i < inputs.size(); ++i) {
    for (size_t j = 0; j < inputs[i].numel(); ++j) coords.emplace_back(i, j);
  }
  std::mt19937_64 rng(opts.seed);
  if (coords.size() > opts.max_samples) {
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(opts.max_samples);
  }

  GradCheckReport report;
  NoGradGuard no_grad;
  for (const auto& [i, j] : coords) {
    Tensor& t = inputs[i];
    const double analytic = t.has_grad() ? t.grad()[j] : 0.0;
    auto vals = t.mutable_values();
    const double saved = vals[j];
    vals[j] = saved + opts.step;
    const double up = loss().item();
    vals[j] = saved - opts.step;
    const double down = loss().item();
    vals[j] = saved;
    const double numeric = (up - down) / (2.0 * opts.step);
    const double abs_err = std::fabs(analytic - numeric);
    const double denom =
        std::max({std::fabs(analytic), std::fabs(numeric), opts.rel_floor});
    report.max_abs_error = std::max(report.max_abs_error, abs_err);
    if (abs_err / denom > report.max_rel_error) {
      report.max_rel_error = abs_err / denom;
      report.worst_input = i;
      report.worst_element = j;
    }
    report.max_abs_gradient = std::max(report.max_abs_gradient, std::fabs(analytic));
    ++report.samples;
  }
  return report;
}

}  // namespace sdvc
