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

#ifndef SDVC_TESTS_ORACLES_H_
#define SDVC_TESTS_ORACLES_H_

// Reference computations that share no code with the library.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "sdvc/eval.h"

namespace sdvc::testing {

// Composite Simpson integral of the normal density over [a, b].
inline double NormalMass(double a, double b, double mu, double sigma) {
  const int n = 2000;
  const double h = (b - a) / n;
  auto f = [&](double x) {
    const double t = (x - mu) / sigma;
    return std::exp(-0.5 * t * t) / (sigma * std::sqrt(2 * std::numbers::pi));
  };
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4 : 2);
  return s * h / 3;
}

// Interpolating polynomial through the points of a curve, log10(rate) as a
// function of accuracy, evaluated by the Lagrange formula.
inline std::function<double(double)> LagrangeLogRate(
    const RateAccuracyCurve& c) {
  std::vector<double> xs, ys;
  for (const auto& p : c.points) {
    xs.push_back(p.accuracy);
    ys.push_back(std::log10(p.bpp));
  }
  return [xs, ys](double x) {
    double s = 0;
    for (size_t i = 0; i < xs.size(); ++i) {
      double l = 1;
      for (size_t j = 0; j < xs.size(); ++j) {
        if (j != i) l *= (x - xs[j]) / (xs[i] - xs[j]);
      }
      s += ys[i] * l;
    }
    return s;
  };
}

inline double AdaptiveSimpson(const std::function<double(double)>& f, double a,
                              double b, double eps, int depth) {
  const double m = 0.5 * (a + b);
  const double fa = f(a), fb = f(b), fm = f(m);
  const double whole = (b - a) / 6 * (fa + 4 * fm + fb);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double left = (m - a) / 6 * (fa + 4 * f(lm) + fm);
  const double right = (b - m) / 6 * (fm + 4 * f(rm) + fb);
  if (depth <= 0 || std::fabs(left + right - whole) < 15 * eps) {
    return left + right + (left + right - whole) / 15;
  }
  return AdaptiveSimpson(f, a, m, eps / 2, depth - 1) +
         AdaptiveSimpson(f, m, b, eps / 2, depth - 1);
}

inline double OracleBdRate(const RateAccuracyCurve& anchor,
                           const RateAccuracyCurve& test) {
  auto range = [](const RateAccuracyCurve& c) {
    double lo = 1e300, hi = -1e300;
    for (const auto& p : c.points) {
      lo = std::min(lo, p.accuracy);
      hi = std::max(hi, p.accuracy);
    }
    return std::make_pair(lo, hi);
  };
  const auto [alo, ahi] = range(anchor);
  const auto [tlo, thi] = range(test);
  const double lo = std::max(alo, tlo), hi = std::min(ahi, thi);
  const auto fa = LagrangeLogRate(anchor), ft = LagrangeLogRate(test);
  const double diff = AdaptiveSimpson([&](double x) { return ft(x) - fa(x); },
                                      lo, hi, 1e-12, 40);
  return (std::pow(10.0, diff / (hi - lo)) - 1) * 100;
}

// Monotone 4-point curve with random spacing.
inline RateAccuracyCurve RandomCurve(const std::string& name,
                                     std::mt19937_64& rng, double acc0) {
  std::uniform_real_distribution<double> step_acc(3, 12), step_rate(1.3, 2.6),
      rate0(0.02, 0.2);
  RateAccuracyCurve c;
  c.codec = name;
  double bpp = rate0(rng), acc = acc0;
  for (int i = 0; i < 4; ++i) {
    c.points.push_back({bpp, acc, ""});
    bpp *= step_rate(rng);
    acc += step_acc(rng);
  }
  return c;
}

}  // namespace sdvc::testing

#endif  // SDVC_TESTS_ORACLES_H_
