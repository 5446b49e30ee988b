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

#include "sdvc/eval.h"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"
#include "sdvc/byte_io.h"
#include "sdvc/common.h"

namespace sdvc {
namespace {

double PolyIntegral(const std::array<double, 4>& c, double x) {
  return c[0] * x + c[1] * x * x / 2 + c[2] * x * x * x / 3 +
         c[3] * x * x * x * x / 4;
}

double PolyEval(const std::array<double, 4>& c, double x) {
  return c[0] + x * (c[1] + x * (c[2] + x * c[3]));
}

struct Prepared {
  std::vector<double> acc, log_rate;
  std::vector<std::string> warnings;
};

Prepared Prepare(const RateAccuracyCurve& curve) {
  if (curve.points.size() < 4) {
    Fail(ErrorCode::kInvalidArgument,
         "curve '" + curve.codec + "' needs at least 4 points for BD-rate");
  }
  Prepared p;
  std::vector<CurvePoint> pts = curve.points;
  for (const auto& q : pts) {
    if (!(q.bpp > 0) || !std::isfinite(q.bpp) || !std::isfinite(q.accuracy)) {
      Fail(ErrorCode::kInvalidArgument,
           "curve '" + curve.codec + "' has a non-positive or non-finite rate");
    }
  }
  bool monotone = true;
  for (size_t i = 1; i < pts.size(); ++i) {
    if (!(pts[i].bpp > pts[i - 1].bpp) ||
        !(pts[i].accuracy >= pts[i - 1].accuracy)) {
      monotone = false;
    }
  }
  std::stable_sort(pts.begin(), pts.end(),
                   [](const CurvePoint& a, const CurvePoint& b) {
                     return a.bpp < b.bpp;
                   });
  if (!monotone) {
    p.warnings.push_back("curve '" + curve.codec +
                         "' is not monotone; using points sorted by rate");
  }
  for (const auto& q : pts) {
    p.acc.push_back(q.accuracy);
    p.log_rate.push_back(std::log10(q.bpp));
  }
  return p;
}

double RmsResidual(const std::array<double, 4>& c, const Prepared& p) {
  double s = 0;
  for (size_t i = 0; i < p.acc.size(); ++i) {
    const double e = PolyEval(c, p.acc[i]) - p.log_rate[i];
    s += e * e;
  }
  return std::sqrt(s / static_cast<double>(p.acc.size()));
}

std::string Trim(const std::string& s) {
  const size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string FormatNumber(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::array<double, 4> FitCubic(std::span<const double> x,
                               std::span<const double> y) {
  SDVC_CHECK_ARG(x.size() == y.size() && x.size() >= 4,
                 "cubic fit needs >= 4 points");
  // Center and scale the abscissa for conditioning, then map back.
  double mean = 0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double scale = 0;
  for (double v : x) scale = std::max(scale, std::fabs(v - mean));
  if (scale == 0) {
    Fail(ErrorCode::kInvalidArgument, "cubic fit needs distinct abscissae");
  }
  Eigen::MatrixXd a(x.size(), 4);
  Eigen::VectorXd b(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    const double t = (x[i] - mean) / scale;
    a(i, 0) = 1;
    a(i, 1) = t;
    a(i, 2) = t * t;
    a(i, 3) = t * t * t;
    b(i) = y[i];
  }
  const Eigen::VectorXd q = a.colPivHouseholderQr().solve(b);
  // p(x) = sum q_k ((x - m)/s)^k expanded in powers of x.
  const double m = mean, s = scale;
  std::array<double, 4> c{};
  const double k1 = q(1) / s, k2 = q(2) / (s * s), k3 = q(3) / (s * s * s);
  c[0] = q(0) - k1 * m + k2 * m * m - k3 * m * m * m;
  c[1] = k1 - 2 * k2 * m + 3 * k3 * m * m;
  c[2] = k2 - 3 * k3 * m;
  c[3] = k3;
  return c;
}

BdResult BdRate(const RateAccuracyCurve& anchor, const RateAccuracyCurve& test) {
  const Prepared pa = Prepare(anchor), pt = Prepare(test);
  BdResult r;
  r.warnings = pa.warnings;
  r.warnings.insert(r.warnings.end(), pt.warnings.begin(), pt.warnings.end());
  const auto [amin, amax] = std::minmax_element(pa.acc.begin(), pa.acc.end());
  const auto [tmin, tmax] = std::minmax_element(pt.acc.begin(), pt.acc.end());
  r.overlap_low = std::max(*amin, *tmin);
  r.overlap_high = std::min(*amax, *tmax);
  if (!(r.overlap_high > r.overlap_low)) {
    Fail(ErrorCode::kNoOverlap, "accuracy ranges of '" + anchor.codec +
                                    "' and '" + test.codec + "' do not overlap");
  }
  r.anchor_coeffs = FitCubic(pa.acc, pa.log_rate);
  r.test_coeffs = FitCubic(pt.acc, pt.log_rate);
  r.anchor_rms_residual = RmsResidual(r.anchor_coeffs, pa);
  r.test_rms_residual = RmsResidual(r.test_coeffs, pt);
  const double lo = r.overlap_low, hi = r.overlap_high;
  const double ia = PolyIntegral(r.anchor_coeffs, hi) -
                    PolyIntegral(r.anchor_coeffs, lo);
  const double it = PolyIntegral(r.test_coeffs, hi) -
                    PolyIntegral(r.test_coeffs, lo);
  const double avg = (it - ia) / (hi - lo);
  r.bd_rate = (std::pow(10.0, avg) - 1.0) * 100.0;
  return r;
}

double WeightedAp(std::span<const ClassAp> table) {
  if (table.empty()) Fail(ErrorCode::kInvalidArgument, "empty AP table");
  double num = 0, den = 0;
  for (const auto& c : table) {
    if (!(c.weight > 0)) {
      Fail(ErrorCode::kInvalidArgument,
           "class " + std::to_string(c.class_id) + " has non-positive weight");
    }
    if (!(c.ap >= 0 && c.ap <= 100)) {
      Fail(ErrorCode::kInvalidArgument,
           "class " + std::to_string(c.class_id) + " AP outside [0, 100]");
    }
    num += c.weight * c.ap;
    den += c.weight;
  }
  return num / den;
}

std::vector<ClassAp> ReadClassApTable(const std::string& path) {
  std::ifstream in(path);
  if (!in) Fail(ErrorCode::kInput, "cannot open AP table " + path);
  std::vector<ClassAp> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (Trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ClassAp c;
      c.class_id = j.at("class").get<int>();
      c.ap = j.at("ap").get<double>();
      c.weight = j.at("weight").get<double>();
      out.push_back(c);
    } catch (const nlohmann::json::exception& e) {
      Fail(ErrorCode::kInput, path + ":" + std::to_string(lineno) + ": " +
                                  e.what());
    }
  }
  return out;
}

void WriteClassApTable(const std::string& path, std::span<const ClassAp> table) {
  std::string text;
  for (const auto& c : table) {
    nlohmann::json j;
    j["class"] = c.class_id;
    j["ap"] = c.ap;
    j["weight"] = c.weight;
    text += j.dump() + "\n";
  }
  WriteTextAtomic(path, text);
}

SegmentationTally::SegmentationTally(size_t classes)
    : intersection(classes, 0.0), union_(classes, 0.0), instances(classes, 0.0) {}

void SegmentationTally::Add(std::span<const uint8_t> predicted,
                            std::span<const uint8_t> truth) {
  SDVC_CHECK_ARG(predicted.size() == truth.size(), "label size mismatch");
  const size_t k = intersection.size();
  for (size_t i = 0; i < truth.size(); ++i) {
    const size_t p = predicted[i], t = truth[i];
    SDVC_CHECK_ARG(p < k && t < k, "label out of range");
    if (p == t) {
      intersection[p] += 1;
      union_[p] += 1;
    } else {
      union_[p] += 1;
      union_[t] += 1;
    }
  }
}

void SegmentationTally::AddInstances(int class_id, size_t count) {
  SDVC_CHECK_ARG(class_id >= 0 &&
                     static_cast<size_t>(class_id) < instances.size(),
                 "class out of range");
  instances[class_id] += static_cast<double>(count);
}

std::vector<ClassAp> SegmentationTally::Table() const {
  std::vector<ClassAp> out;
  for (size_t c = 1; c < intersection.size(); ++c) {
    if (instances[c] <= 0) continue;
    const double iou = union_[c] > 0 ? intersection[c] / union_[c] : 0.0;
    out.push_back({static_cast<int>(c), 100.0 * iou, instances[c]});
  }
  return out;
}

std::string CurvesToCsv(std::span<const RateAccuracyCurve> curves) {
  std::string out = "codec,label,bpp,accuracy\n";
  for (const auto& c : curves) {
    for (const auto& p : c.points) {
      out += c.codec + "," + p.label + "," + FormatNumber(p.bpp) + "," +
             FormatNumber(p.accuracy) + "\n";
    }
  }
  return out;
}

std::vector<RateAccuracyCurve> CurvesFromCsv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<RateAccuracyCurve> out;
  size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    line = Trim(line);
    if (line.empty()) continue;
    if (!header) {
      if (line != "codec,label,bpp,accuracy") {
        Fail(ErrorCode::kInput, "curve CSV must start with codec,label,bpp,accuracy");
      }
      header = true;
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(Trim(cell));
    if (f.size() != 4) {
      Fail(ErrorCode::kInput, "curve CSV line " + std::to_string(lineno) +
                                  ": expected 4 fields");
    }
    CurvePoint p;
    p.label = f[1];
    try {
      size_t used = 0;
      p.bpp = std::stod(f[2], &used);
      if (used != f[2].size()) throw std::invalid_argument("bpp");
      p.accuracy = std::stod(f[3], &used);
      if (used != f[3].size()) throw std::invalid_argument("accuracy");
    } catch (const std::exception&) {
      Fail(ErrorCode::kInput, "curve CSV line " + std::to_string(lineno) +
                                  ": bad number");
    }
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& c) {
      return c.codec == f[0];
    });
    if (it == out.end()) {
      out.push_back({f[0], {}, "wAP", ""});
      it = out.end() - 1;
    }
    it->points.push_back(p);
  }
  if (!header) Fail(ErrorCode::kInput, "empty curve CSV");
  return out;
}

std::vector<RateAccuracyCurve> ReadCurvesCsv(const std::string& path) {
  const auto bytes = ReadFileBytes(path);
  return CurvesFromCsv(std::string(bytes.begin(), bytes.end()));
}

std::string CurvesToSvg(std::span<const RateAccuracyCurve> curves) {
  constexpr double kW = 640, kH = 420, kMargin = 60;
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                  "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const auto& c : curves) {
    for (const auto& p : c.points) {
      xmin = std::min(xmin, p.bpp);
      xmax = std::max(xmax, p.bpp);
      ymin = std::min(ymin, p.accuracy);
      ymax = std::max(ymax, p.accuracy);
    }
  }
  if (!std::isfinite(xmin)) {
    xmin = ymin = 0;
    xmax = ymax = 1;
  }
  if (xmax <= xmin) xmax = xmin + 1;
  if (ymax <= ymin) ymax = ymin + 1;
  auto px = [&](double v) {
    return kMargin + (v - xmin) / (xmax - xmin) * (kW - 2 * kMargin);
  };
  auto py = [&](double v) {
    return kH - kMargin - (v - ymin) / (ymax - ymin) * (kH - 2 * kMargin);
  };
  std::ostringstream os;
  os.precision(6);
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW
     << "\" height=\"" << kH << "\" viewBox=\"0 0 " << kW << " " << kH
     << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<line x1=\"" << kMargin << "\" y1=\"" << kH - kMargin << "\" x2=\""
     << kW - kMargin << "\" y2=\"" << kH - kMargin
     << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << kMargin << "\" y1=\"" << kMargin << "\" x2=\""
     << kMargin << "\" y2=\"" << kH - kMargin << "\" stroke=\"black\"/>\n"
     << "<text x=\"" << kW / 2 << "\" y=\"" << kH - 15
     << "\" text-anchor=\"middle\">bits per pixel</text>\n"
     << "<text x=\"15\" y=\"" << kH / 2 << "\" transform=\"rotate(-90 15 "
     << kH / 2 << ")\" text-anchor=\"middle\">accuracy</text>\n";
  size_t idx = 0;
  for (const auto& c : curves) {
    std::vector<CurvePoint> pts = c.points;
    std::sort(pts.begin(), pts.end(),
              [](const auto& a, const auto& b) { return a.bpp < b.bpp; });
    const char* color = kColors[idx % 8];
    os << "<polyline class=\"series\" data-codec=\"" << c.codec
       << "\" fill=\"none\" stroke=\"" << color << "\" points=\"";
    for (size_t i = 0; i < pts.size(); ++i) {
      os << (i ? " " : "") << px(pts[i].bpp) << "," << py(pts[i].accuracy);
    }
    os << "\"/>\n";
    os << "<text x=\"" << kW - kMargin + 5 << "\" y=\"" << kMargin + 16 * idx
       << "\" fill=\"" << color << "\" font-size=\"11\">" << c.codec
       << "</text>\n";
    ++idx;
  }
  os << "</svg>\n";
  return os.str();
}

void EmitCurves(std::span<const RateAccuracyCurve> curves,
                const std::string& prefix) {
  WriteTextAtomic(prefix + ".csv", CurvesToCsv(curves));
  WriteTextAtomic(prefix + ".svg", CurvesToSvg(curves));
}

std::string FormatBdTable(std::span<const RateAccuracyCurve> curves,
                          size_t anchor_index) {
  SDVC_CHECK_ARG(anchor_index < curves.size(), "anchor index out of range");
  const RateAccuracyCurve& anchor = curves[anchor_index];
  size_t width = 5;
  for (const auto& c : curves) width = std::max(width, c.codec.size());
  std::ostringstream os;
  auto pad = [width](const std::string& s) {
    return s + std::string(width - s.size(), ' ');
  };
  os << "BD-rate against anchor '" << anchor.codec << "' (" << anchor.metric
     << ")\n";
  os << pad("codec") << "  BDR " << anchor.metric << "\n";
  os << std::string(width, '-') << "  --------\n";
  for (const auto& c : curves) {
    os << pad(c.codec) << "  ";
    try {
      const BdResult r = BdRate(anchor, c);
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%+7.1f %%", r.bd_rate + 0.0);
      os << buf;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNoOverlap) throw;
      os << "no overlap";
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace sdvc
