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

#ifndef SDVC_EVAL_H_
#define SDVC_EVAL_H_

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace sdvc {

struct CurvePoint {
  double bpp = 0;
  double accuracy = 0;  // in [0, 100]
  std::string label;
  bool operator==(const CurvePoint&) const = default;
};

struct RateAccuracyCurve {
  std::string codec;
  std::vector<CurvePoint> points;
  std::string metric = "wAP";
  std::string dataset;
  bool operator==(const RateAccuracyCurve&) const = default;
};

struct BdResult {
  double bd_rate = 0;  // percent, negative = savings
  double overlap_low = 0;
  double overlap_high = 0;
  std::string fit = "cubic polynomial, log10(rate) over accuracy";
  // Ascending-power coefficients of each fit.
  std::array<double, 4> anchor_coeffs{};
  std::array<double, 4> test_coeffs{};
  double anchor_rms_residual = 0;
  double test_rms_residual = 0;
  std::vector<std::string> warnings;
};

// Average log-rate difference of `test` against `anchor` over the shared
// accuracy interval. Needs >= 4 points per curve; throws kNoOverlap when the
// accuracy ranges are disjoint.
BdResult BdRate(const RateAccuracyCurve& anchor, const RateAccuracyCurve& test);

// Least-squares cubic through (x, y); ascending powers.
std::array<double, 4> FitCubic(std::span<const double> x,
                               std::span<const double> y);

struct ClassAp {
  int class_id = 0;
  double ap = 0;      // in [0, 100]
  double weight = 0;  // instance count, > 0
  bool operator==(const ClassAp&) const = default;
};

// sum(w * ap) / sum(w). Throws on an empty table or non-positive weight.
double WeightedAp(std::span<const ClassAp> table);

// One JSON object per line: {"class": id, "ap": value, "weight": count}.
std::vector<ClassAp> ReadClassApTable(const std::string& path);
void WriteClassApTable(const std::string& path, std::span<const ClassAp> table);

// Per-class intersection-over-union (x100) of predicted against true labels,
// weighted by instance counts, as a stand-in accuracy for the proxy task.
struct SegmentationTally {
  std::vector<double> intersection, union_;
  std::vector<double> instances;
  explicit SegmentationTally(size_t classes);
  void Add(std::span<const uint8_t> predicted, std::span<const uint8_t> truth);
  void AddInstances(int class_id, size_t count);
  // Object classes (1..K-1) with at least one instance.
  std::vector<ClassAp> Table() const;
};

// CSV with header codec,label,bpp,accuracy.
std::string CurvesToCsv(std::span<const RateAccuracyCurve> curves);
std::vector<RateAccuracyCurve> CurvesFromCsv(const std::string& text);
std::vector<RateAccuracyCurve> ReadCurvesCsv(const std::string& path);

// Standalone SVG chart, one polyline per curve.
std::string CurvesToSvg(std::span<const RateAccuracyCurve> curves);

// Writes <prefix>.csv and <prefix>.svg.
void EmitCurves(std::span<const RateAccuracyCurve> curves,
                const std::string& prefix);

// Text table of BD-rate of every curve against curves[anchor_index].
std::string FormatBdTable(std::span<const RateAccuracyCurve> curves,
                          size_t anchor_index);

}  // namespace sdvc

#endif  // SDVC_EVAL_H_
