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

#include "sdvc/ops.h"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "sdvc/common.h"

namespace sdvc {
namespace {

void CheckSameShape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    Fail(ErrorCode::kDimension, std::string(op) + ": shape mismatch " +
                                    ShapeString(a.shape()) + " vs " +
                                    ShapeString(b.shape()));
  }
}

void CheckRank4(const Tensor& x, const char* op) {
  if (x.rank() != 4) {
    Fail(ErrorCode::kDimension, std::string(op) + ": expected NCHW, got " +
                                    ShapeString(x.shape()));
  }
}

bool NeedsGrad(const Node& self, size_t i) {
  return self.parents.size() > i && self.parents[i] &&
         self.parents[i]->requires_grad;
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
void GemmT(bool ta, bool tb, size_t m, size_t n, size_t k, const T* a,
           const T* b, T* c, bool accumulate) {
  using Map = Eigen::Map<const RowMat<T>>;
  Eigen::Map<RowMat<T>> out(c, m, n);
  const Eigen::Index im = m, in = n, ik = k;
  auto run = [&](const auto& lhs, const auto& rhs) {
    if (accumulate) {
      out.noalias() += lhs * rhs;
    } else {
      out.noalias() = lhs * rhs;
    }
  };
  if (!ta && !tb) run(Map(a, im, ik), Map(b, ik, in));
  if (!ta && tb) run(Map(a, im, ik), Map(b, in, ik).transpose());
  if (ta && !tb) run(Map(a, ik, im).transpose(), Map(b, ik, in));
  if (ta && tb) run(Map(a, ik, im).transpose(), Map(b, in, ik).transpose());
}

// C[m,n] (+)= op(A) op(B), all row-major. Fast mode runs in float.
void Gemm(bool ta, bool tb, size_t m, size_t n, size_t k, const double* a,
          const double* b, double* c, bool accumulate) {
  if (GetPrecision() == Precision::kReference) {
    GemmT<double>(ta, tb, m, n, k, a, b, c, accumulate);
    return;
  }
  std::vector<float> fa(a, a + m * k), fb(b, b + k * n), fc(m * n);
  GemmT<float>(ta, tb, m, n, k, fa.data(), fb.data(), fc.data(), false);
  for (size_t i = 0; i < m * n; ++i) {
    c[i] = accumulate ? c[i] + static_cast<double>(fc[i])
                      : static_cast<double>(fc[i]);
  }
}

struct Geometry {
  size_t channels, h, w;  // the "image" side
  size_t k, s, p;
  size_t oh, ow;  // the "column" side
};

void Im2Col(const double* x, const Geometry& g, double* cols) {
  const size_t plane = g.oh * g.ow;
  for (size_t c = 0; c < g.channels; ++c) {
    for (size_t ky = 0; ky < g.k; ++ky) {
      for (size_t kx = 0; kx < g.k; ++kx) {
        double* row = cols + ((c * g.k + ky) * g.k + kx) * plane;
        for (size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.s + ky) - static_cast<long>(g.p);
          double* out = row + oy * g.ow;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(out, out + g.ow, 0.0);
            continue;
          }
          const double* in = x + (c * g.h + iy) * g.w;
          for (size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.s + kx) - static_cast<long>(g.p);
            out[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : in[ix];
          }
        }
      }
    }
  }
}

void Col2Im(const double* cols, const Geometry& g, double* x) {
  const size_t plane = g.oh * g.ow;
  for (size_t c = 0; c < g.channels; ++c) {
    for (size_t ky = 0; ky < g.k; ++ky) {
      for (size_t kx = 0; kx < g.k; ++kx) {
        const double* row = cols + ((c * g.k + ky) * g.k + kx) * plane;
        for (size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.s + ky) - static_cast<long>(g.p);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          double* out = x + (c * g.h + iy) * g.w;
          const double* in = row + oy * g.ow;
          for (size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.s + kx) - static_cast<long>(g.p);
            if (ix >= 0 && ix < static_cast<long>(g.w)) out[ix] += in[ox];
          }
        }
      }
    }
  }
}

// Sums per-item buffers in item order so the result does not depend on how
// items were spread over threads.
void ReduceInto(const std::vector<std::vector<double>>& parts,
                std::vector<double>& dst) {
  for (const auto& part : parts) {
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += part[i];
  }
}

template <typename F, typename D>
Tensor Elementwise(const Tensor& a, F f, D df) {
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = f(a[i]);
  return MakeResult(a.shape(), std::move(out), {a}, [df](Node& self) {
    const auto& x = self.parents[0]->value;
    auto& g = self.parents[0]->Grad();
    for (size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * df(x[i], self.value[i]);
    }
  });
}

double Phi(double t) { return 0.5 * std::erfc(-t * M_SQRT1_2); }
double PhiDensity(double t) {
  return 0.5 * M_2_SQRTPI * M_SQRT1_2 * std::exp(-0.5 * t * t);
}

}  // namespace

void LayerSpec::Validate() const {
  if (kind == LayerKind::kConv && kernel % 2 == 0) {
    Fail(ErrorCode::kInvalidArgument,
         "conv kernel must be odd, got " + std::to_string(kernel));
  }
  if ((kind == LayerKind::kConv || kind == LayerKind::kTConv) &&
      (stride < 1 || stride > 2 || kernel == 0)) {
    Fail(ErrorCode::kInvalidArgument,
         "stride must be 1 or 2, got " + std::to_string(stride));
  }
}

size_t ConvOutputSize(size_t in, size_t k, size_t s, size_t p) {
  if (in + 2 * p < k) {
    Fail(ErrorCode::kDimension, "input extent " + std::to_string(in) +
                                    " too small for kernel " +
                                    std::to_string(k));
  }
  return (in + 2 * p - k) / s + 1;
}

size_t TConvOutputSize(size_t in, size_t k, size_t s, size_t p, size_t op) {
  const long out = static_cast<long>((in - 1) * s + k + op) - 2 * static_cast<long>(p);
  if (in == 0 || out <= 0) {
    Fail(ErrorCode::kDimension, "invalid transposed conv geometry");
  }
  return static_cast<size_t>(out);
}

Tensor Conv2D(const Tensor& input, const LayerSpec& spec, const Tensor& weight,
              const Tensor& bias) {
  spec.Validate();
  CheckRank4(input, "conv2d");
  const size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2),
               w = input.dim(3);
  const size_t k = spec.kernel, cout = spec.out_channels;
  const Shape want{cout, cin, k, k};
  if (weight.shape() != want) {
    Fail(ErrorCode::kDimension, "conv2d: input " + ShapeString(input.shape()) +
                                    " incompatible with weight " +
                                    ShapeString(weight.shape()) + ", expected " +
                                    ShapeString(want));
  }
  if (bias.defined() && bias.shape() != Shape{cout}) {
    Fail(ErrorCode::kDimension,
         "conv2d: bias shape " + ShapeString(bias.shape()));
  }
  const Geometry g{cin, h, w, k, spec.stride, spec.padding,
                   ConvOutputSize(h, k, spec.stride, spec.padding),
                   ConvOutputSize(w, k, spec.stride, spec.padding)};
  const size_t kk = cin * k * k, plane = g.oh * g.ow;
  std::vector<double> out(n * cout * plane);
  const double* x = input.values().data();
  const double* wt = weight.values().data();
  ParallelFor(n, [&](size_t b) {
    std::vector<double> cols(kk * plane);
    Im2Col(x + b * cin * h * w, g, cols.data());
    double* o = out.data() + b * cout * plane;
    Gemm(false, false, cout, plane, kk, wt, cols.data(), o, false);
    if (bias.defined()) {
      for (size_t c = 0; c < cout; ++c) {
        const double bc = bias[c];
        for (size_t i = 0; i < plane; ++i) o[c * plane + i] += bc;
      }
    }
  });

  std::vector<Tensor> parents{input, weight};
  if (bias.defined()) parents.push_back(bias);
  return MakeResult(
      {n, cout, g.oh, g.ow}, std::move(out), parents,
      [g, n, cin, cout, kk, plane](Node& self) {
        const auto& x = self.parents[0]->value;
        const auto& wt = self.parents[1]->value;
        const bool gx = NeedsGrad(self, 0), gw = NeedsGrad(self, 1),
                   gb = NeedsGrad(self, 2);
        std::vector<std::vector<double>> dw_parts(gw ? n : 0);
        ParallelFor(n, [&](size_t b) {
          const double* dy = self.grad.data() + b * cout * plane;
          if (gw) {
            std::vector<double> cols(kk * plane);
            Im2Col(x.data() + b * cin * g.h * g.w, g, cols.data());
            dw_parts[b].assign(cout * kk, 0.0);
            Gemm(false, true, cout, kk, plane, dy, cols.data(),
                 dw_parts[b].data(), false);
          }
        });
        if (gw) ReduceInto(dw_parts, self.parents[1]->Grad());
        if (gb) {
          auto& db = self.parents[2]->Grad();
          for (size_t b = 0; b < n; ++b) {
            for (size_t c = 0; c < cout; ++c) {
              const double* dy = self.grad.data() + (b * cout + c) * plane;
              double s = 0.0;
              for (size_t i = 0; i < plane; ++i) s += dy[i];
              db[c] += s;
            }
          }
        }
        if (gx) {
          auto& dx = self.parents[0]->Grad();
          ParallelFor(n, [&](size_t b) {
            const double* dy = self.grad.data() + b * cout * plane;
            std::vector<double> dcols(kk * plane);
            Gemm(true, false, kk, plane, cout, wt.data(), dy, dcols.data(),
                 false);
            Col2Im(dcols.data(), g, dx.data() + b * cin * g.h * g.w);
          });
        }
      });
}

Tensor TConv2D(const Tensor& input, const LayerSpec& spec,
               const Tensor& weight, const Tensor& bias) {
  if (spec.stride < 1 || spec.stride > 2) spec.Validate();
  CheckRank4(input, "tconv2d");
  const size_t n = input.dim(0), cin = input.dim(1), hin = input.dim(2),
               win = input.dim(3);
  const size_t k = spec.kernel, cout = spec.out_channels;
  const Shape want{cin, cout, k, k};
  if (weight.shape() != want) {
    Fail(ErrorCode::kDimension, "tconv2d: input " +
                                    ShapeString(input.shape()) +
                                    " incompatible with weight " +
                                    ShapeString(weight.shape()) +
                                    ", expected " + ShapeString(want));
  }
  if (bias.defined() && bias.shape() != Shape{cout}) {
    Fail(ErrorCode::kDimension,
         "tconv2d: bias shape " + ShapeString(bias.shape()));
  }
  const size_t ho = TConvOutputSize(hin, k, spec.stride, spec.padding,
                                    spec.output_padding);
  const size_t wo = TConvOutputSize(win, k, spec.stride, spec.padding,
                                    spec.output_padding);
  // The adjoint conv maps (ho, wo) back onto (hin, win).
  const Geometry g{cout, ho, wo, k, spec.stride, spec.padding, hin, win};
  const size_t kk = cout * k * k, pin = hin * win, pout = ho * wo;
  std::vector<double> out(n * cout * pout, 0.0);
  const double* x = input.values().data();
  const double* wt = weight.values().data();
  ParallelFor(n, [&](size_t b) {
    std::vector<double> cols(kk * pin);
    Gemm(true, false, kk, pin, cin, wt, x + b * cin * pin, cols.data(), false);
    double* o = out.data() + b * cout * pout;
    Col2Im(cols.data(), g, o);
    if (bias.defined()) {
      for (size_t c = 0; c < cout; ++c) {
        const double bc = bias[c];
        for (size_t i = 0; i < pout; ++i) o[c * pout + i] += bc;
      }
    }
  });

  std::vector<Tensor> parents{input, weight};
  if (bias.defined()) parents.push_back(bias);
  return MakeResult(
      {n, cout, ho, wo}, std::move(out), parents,
      [g, n, cin, cout, kk, pin, pout](Node& self) {
        const auto& x = self.parents[0]->value;
        const auto& wt = self.parents[1]->value;
        const bool gx = NeedsGrad(self, 0), gw = NeedsGrad(self, 1),
                   gb = NeedsGrad(self, 2);
        std::vector<std::vector<double>> dw_parts(gw ? n : 0);
        std::vector<double>* dx = gx ? &self.parents[0]->Grad() : nullptr;
        ParallelFor(n, [&](size_t b) {
          std::vector<double> cols(kk * pin);
          Im2Col(self.grad.data() + b * cout * pout, g, cols.data());
          if (gw) {
            dw_parts[b].assign(cin * kk, 0.0);
            Gemm(false, true, cin, kk, pin, x.data() + b * cin * pin,
                 cols.data(), dw_parts[b].data(), false);
          }
          if (gx) {
            Gemm(false, false, cin, pin, kk, wt.data(), cols.data(),
                 dx->data() + b * cin * pin, true);
          }
        });
        if (gw) ReduceInto(dw_parts, self.parents[1]->Grad());
        if (gb) {
          auto& db = self.parents[2]->Grad();
          for (size_t b = 0; b < n; ++b) {
            for (size_t c = 0; c < cout; ++c) {
              const double* dy = self.grad.data() + (b * cout + c) * pout;
              double s = 0.0;
              for (size_t i = 0; i < pout; ++i) s += dy[i];
              db[c] += s;
            }
          }
        }
      });
}

Tensor LeakyRelu(const Tensor& x, double slope) {
  std::vector<double> out(x.numel());
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = x[i] > 0 ? x[i] : slope * x[i];
  }
  return MakeResult(x.shape(), std::move(out), {x}, [slope](Node& self) {
    const auto& v = self.parents[0]->value;
    auto& g = self.parents[0]->Grad();
    for (size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * (v[i] > 0 ? 1.0 : slope);
    }
  });
}

Tensor ConcatChannels(const Tensor& a, const Tensor& b) {
  CheckRank4(a, "concat");
  CheckRank4(b, "concat");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    Fail(ErrorCode::kDimension, "concat: spatial mismatch " +
                                    ShapeString(a.shape()) + " vs " +
                                    ShapeString(b.shape()));
  }
  const size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1),
               plane = a.dim(2) * a.dim(3);
  std::vector<double> out;
  out.reserve(n * (ca + cb) * plane);
  for (size_t i = 0; i < n; ++i) {
    auto av = a.values().subspan(i * ca * plane, ca * plane);
    auto bv = b.values().subspan(i * cb * plane, cb * plane);
    out.insert(out.end(), av.begin(), av.end());
    out.insert(out.end(), bv.begin(), bv.end());
  }
  return MakeResult({n, ca + cb, a.dim(2), a.dim(3)}, std::move(out), {a, b},
                    [n, ca, cb, plane](Node& self) {
                      for (size_t i = 0; i < n; ++i) {
                        const double* g = self.grad.data() + i * (ca + cb) * plane;
                        if (NeedsGrad(self, 0)) {
                          double* ga = self.parents[0]->Grad().data() + i * ca * plane;
                          for (size_t j = 0; j < ca * plane; ++j) ga[j] += g[j];
                        }
                        if (NeedsGrad(self, 1)) {
                          double* gb = self.parents[1]->Grad().data() + i * cb * plane;
                          for (size_t j = 0; j < cb * plane; ++j) {
                            gb[j] += g[ca * plane + j];
                          }
                        }
                      }
                    });
}

Tensor SliceChannels(const Tensor& x, size_t begin, size_t end) {
  CheckRank4(x, "slice");
  if (begin >= end || end > x.dim(1)) {
    Fail(ErrorCode::kDimension, "slice: bad channel range for " +
                                    ShapeString(x.shape()));
  }
  const size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3),
               cs = end - begin;
  std::vector<double> out;
  out.reserve(n * cs * plane);
  for (size_t i = 0; i < n; ++i) {
    auto v = x.values().subspan((i * c + begin) * plane, cs * plane);
    out.insert(out.end(), v.begin(), v.end());
  }
  return MakeResult({n, cs, x.dim(2), x.dim(3)}, std::move(out), {x},
                    [n, c, begin, cs, plane](Node& self) {
                      auto& g = self.parents[0]->Grad();
                      for (size_t i = 0; i < n; ++i) {
                        for (size_t j = 0; j < cs * plane; ++j) {
                          g[(i * c + begin) * plane + j] +=
                              self.grad[i * cs * plane + j];
                        }
                      }
                    });
}

Tensor CropSpatial(const Tensor& x, size_t h, size_t w) {
  CheckRank4(x, "crop");
  const size_t n = x.dim(0), c = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (h > H || w > W) {
    Fail(ErrorCode::kDimension, "crop larger than input " +
                                    ShapeString(x.shape()));
  }
  if (h == H && w == W) return x;
  std::vector<double> out(n * c * h * w);
  for (size_t p = 0; p < n * c; ++p) {
    for (size_t y = 0; y < h; ++y) {
      for (size_t xx = 0; xx < w; ++xx) {
        out[(p * h + y) * w + xx] = x[(p * H + y) * W + xx];
      }
    }
  }
  return MakeResult({n, c, h, w}, std::move(out), {x},
                    [n, c, h, w, H, W](Node& self) {
                      auto& g = self.parents[0]->Grad();
                      for (size_t p = 0; p < n * c; ++p) {
                        for (size_t y = 0; y < h; ++y) {
                          for (size_t xx = 0; xx < w; ++xx) {
                            g[(p * H + y) * W + xx] += self.grad[(p * h + y) * w + xx];
                          }
                        }
                      }
                    });
}

Tensor UpsampleNearest2x(const Tensor& x) {
  CheckRank4(x, "upsample");
  const size_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<double> out(nc * 4 * h * w);
  for (size_t p = 0; p < nc; ++p) {
    for (size_t y = 0; y < 2 * h; ++y) {
      for (size_t xx = 0; xx < 2 * w; ++xx) {
        out[(p * 2 * h + y) * 2 * w + xx] = x[(p * h + y / 2) * w + xx / 2];
      }
    }
  }
  return MakeResult({x.dim(0), x.dim(1), 2 * h, 2 * w}, std::move(out), {x},
                    [nc, h, w](Node& self) {
                      auto& g = self.parents[0]->Grad();
                      for (size_t p = 0; p < nc; ++p) {
                        for (size_t y = 0; y < 2 * h; ++y) {
                          for (size_t xx = 0; xx < 2 * w; ++xx) {
                            g[(p * h + y / 2) * w + xx / 2] +=
                                self.grad[(p * 2 * h + y) * 2 * w + xx];
                          }
                        }
                      }
                    });
}

Tensor AvgPool2x2(const Tensor& x) {
  CheckRank4(x, "avgpool");
  const size_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const size_t oh = h / 2, ow = w / 2;
  std::vector<double> out(nc * oh * ow);
  for (size_t p = 0; p < nc; ++p) {
    for (size_t y = 0; y < oh; ++y) {
      for (size_t xx = 0; xx < ow; ++xx) {
        const double* r0 = x.values().data() + (p * h + 2 * y) * w + 2 * xx;
        out[(p * oh + y) * ow + xx] = 0.25 * (r0[0] + r0[1] + r0[w] + r0[w + 1]);
      }
    }
  }
  return MakeResult({x.dim(0), x.dim(1), oh, ow}, std::move(out), {x},
                    [nc, h, w, oh, ow](Node& self) {
                      auto& g = self.parents[0]->Grad();
                      for (size_t p = 0; p < nc; ++p) {
                        for (size_t y = 0; y < oh; ++y) {
                          for (size_t xx = 0; xx < ow; ++xx) {
                            const double d = 0.25 * self.grad[(p * oh + y) * ow + xx];
                            double* r0 = g.data() + (p * h + 2 * y) * w + 2 * xx;
                            r0[0] += d;
                            r0[1] += d;
                            r0[w] += d;
                            r0[w + 1] += d;
                          }
                        }
                      }
                    });
}

Tensor Add(const Tensor& a, const Tensor& b) {
  CheckSameShape(a, b, "add");
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return MakeResult(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (size_t k = 0; k < 2; ++k) {
      if (!NeedsGrad(self, k)) continue;
      auto& g = self.parents[k]->Grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor Sub(const Tensor& a, const Tensor& b) {
  CheckSameShape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return MakeResult(a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (NeedsGrad(self, 0)) {
      auto& g = self.parents[0]->Grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (NeedsGrad(self, 1)) {
      auto& g = self.parents[1]->Grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor Mul(const Tensor& a, const Tensor& b) {
  CheckSameShape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return MakeResult(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (NeedsGrad(self, 0)) {
      auto& g = self.parents[0]->Grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (NeedsGrad(self, 1)) {
      auto& g = self.parents[1]->Grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Tensor Div(const Tensor& a, const Tensor& b) {
  CheckSameShape(a, b, "div");
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a[i] / b[i];
  return MakeResult(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& bv = self.parents[1]->value;
    if (NeedsGrad(self, 0)) {
      auto& g = self.parents[0]->Grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / bv[i];
    }
    if (NeedsGrad(self, 1)) {
      auto& g = self.parents[1]->Grad();
      for (size_t i = 0; i < g.size(); ++i) {
        g[i] -= self.grad[i] * self.value[i] / bv[i];
      }
    }
  });
}

Tensor AddScalar(const Tensor& a, double s) {
  return Elementwise(
      a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor MulScalar(const Tensor& a, double s) {
  return Elementwise(
      a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor Square(const Tensor& a) {
  return Elementwise(
      a, [](double x) { return x * x; },
      [](double x, double) { return 2.0 * x; });
}

Tensor PowScalar(const Tensor& a, double p) {
  return Elementwise(
      a, [p](double x) { return std::pow(x, p); },
      [p](double x, double) { return p * std::pow(x, p - 1.0); });
}

Tensor Softplus(const Tensor& a) {
  return Elementwise(
      a,
      [](double x) {
        return x > 30.0 ? x : std::log1p(std::exp(x));
      },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Tensor ClampMin(const Tensor& a, double lo) {
  return Elementwise(
      a, [lo](double x) { return std::max(x, lo); },
      [lo](double x, double) { return x >= lo ? 1.0 : 0.0; });
}

Tensor LowerBound(const Tensor& a, double lo) {
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::max(a[i], lo);
  return MakeResult(a.shape(), std::move(out), {a}, [lo](Node& self) {
    const auto& x = self.parents[0]->value;
    auto& g = self.parents[0]->Grad();
    for (size_t i = 0; i < g.size(); ++i) {
      // Descent moves x by -grad; pass when that raises x toward the bound.
      if (x[i] >= lo || self.grad[i] < 0) g[i] += self.grad[i];
    }
  });
}

Tensor NegLog2(const Tensor& a) {
  return Elementwise(
      a, [](double x) { return -std::log2(x); },
      [](double x, double) { return -1.0 / (x * M_LN2); });
}

Tensor Round(const Tensor& a) {
  return Elementwise(
      a, [](double x) { return std::round(x); },
      [](double, double) { return 1.0; });
}

namespace {

// Neumaier-compensated sum.
double CompensatedSum(std::span<const double> xs) {
  double s = 0.0, c = 0.0;
  for (double v : xs) {
    const double t = s + v;
    c += std::fabs(s) >= std::fabs(v) ? (s - t) + v : (v - t) + s;
    s = t;
  }
  return s + c;
}

}  // namespace

Tensor Sum(const Tensor& a) {
  const double s = CompensatedSum(a.values());
  return MakeResult({}, {s}, {a}, [](Node& self) {
    auto& g = self.parents[0]->Grad();
    for (double& v : g) v += self.grad[0];
  });
}

Tensor Mean(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.numel());
  const double s = CompensatedSum(a.values());
  return MakeResult({}, {s * inv}, {a}, [inv](Node& self) {
    auto& g = self.parents[0]->Grad();
    for (double& v : g) v += self.grad[0] * inv;
  });
}

Tensor MeanSpatial(const Tensor& a) {
  CheckRank4(a, "mean_spatial");
  const size_t nc = a.dim(0) * a.dim(1), plane = a.dim(2) * a.dim(3);
  const double inv = 1.0 / static_cast<double>(plane);
  std::vector<double> out(nc);
  for (size_t p = 0; p < nc; ++p) {
    out[p] = CompensatedSum(a.values().subspan(p * plane, plane)) * inv;
  }
  return MakeResult({a.dim(0), a.dim(1), 1, 1}, std::move(out), {a},
                    [nc, plane, inv](Node& self) {
                      auto& g = self.parents[0]->Grad();
                      for (size_t p = 0; p < nc; ++p) {
                        const double d = self.grad[p] * inv;
                        for (size_t i = 0; i < plane; ++i) g[p * plane + i] += d;
                      }
                    });
}

Tensor SeparableFilterValid(const Tensor& x, std::span<const double> taps) {
  CheckRank4(x, "filter");
  const std::vector<double> t(taps.begin(), taps.end());
  const size_t k = t.size();
  const size_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const bool fw = w >= k, fh = h >= k;
  const size_t ow = fw ? w - k + 1 : w, oh = fh ? h - k + 1 : h;
  std::vector<double> tmp(nc * h * ow), out(nc * oh * ow);
  for (size_t p = 0; p < nc; ++p) {
    for (size_t y = 0; y < h; ++y) {
      const double* in = x.values().data() + (p * h + y) * w;
      double* o = tmp.data() + (p * h + y) * ow;
      for (size_t xx = 0; xx < ow; ++xx) {
        if (!fw) {
          o[xx] = in[xx];
          continue;
        }
        double s = 0.0;
        for (size_t j = 0; j < k; ++j) s += t[j] * in[xx + j];
        o[xx] = s;
      }
    }
    for (size_t y = 0; y < oh; ++y) {
      double* o = out.data() + (p * oh + y) * ow;
      for (size_t xx = 0; xx < ow; ++xx) {
        if (!fh) {
          o[xx] = tmp[(p * h + y) * ow + xx];
          continue;
        }
        double s = 0.0;
        for (size_t j = 0; j < k; ++j) s += t[j] * tmp[(p * h + y + j) * ow + xx];
        o[xx] = s;
      }
    }
  }
  return MakeResult(
      {x.dim(0), x.dim(1), oh, ow}, std::move(out), {x},
      [t, k, nc, h, w, oh, ow, fw, fh](Node& self) {
        std::vector<double> dtmp(nc * h * ow, 0.0);
        for (size_t p = 0; p < nc; ++p) {
          for (size_t y = 0; y < oh; ++y) {
            for (size_t xx = 0; xx < ow; ++xx) {
              const double d = self.grad[(p * oh + y) * ow + xx];
              if (!fh) {
                dtmp[(p * h + y) * ow + xx] += d;
                continue;
              }
              for (size_t j = 0; j < k; ++j) {
                dtmp[(p * h + y + j) * ow + xx] += t[j] * d;
              }
            }
          }
        }
        auto& g = self.parents[0]->Grad();
        for (size_t p = 0; p < nc; ++p) {
          for (size_t y = 0; y < h; ++y) {
            double* gi = g.data() + (p * h + y) * w;
            const double* d = dtmp.data() + (p * h + y) * ow;
            for (size_t xx = 0; xx < ow; ++xx) {
              if (!fw) {
                gi[xx] += d[xx];
                continue;
              }
              for (size_t j = 0; j < k; ++j) gi[xx + j] += t[j] * d[xx];
            }
          }
        }
      });
}

double GaussianLikelihoodValue(double y, double mu, double sigma) {
  const double v = std::fabs(y - mu);
  return Phi((0.5 - v) / sigma) - Phi((-0.5 - v) / sigma);
}

Tensor GaussianLikelihood(const Tensor& y, const Tensor& mu,
                          const Tensor& sigma) {
  CheckSameShape(y, mu, "gaussian_likelihood");
  CheckSameShape(y, sigma, "gaussian_likelihood");
  std::vector<double> out(y.numel());
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = GaussianLikelihoodValue(y[i], mu[i], sigma[i]);
  }
  return MakeResult(y.shape(), std::move(out), {y, mu, sigma}, [](Node& self) {
    const auto& yv = self.parents[0]->value;
    const auto& mv = self.parents[1]->value;
    const auto& sv = self.parents[2]->value;
    std::vector<double>* gy = NeedsGrad(self, 0) ? &self.parents[0]->Grad() : nullptr;
    std::vector<double>* gm = NeedsGrad(self, 1) ? &self.parents[1]->Grad() : nullptr;
    std::vector<double>* gs = NeedsGrad(self, 2) ? &self.parents[2]->Grad() : nullptr;
    for (size_t i = 0; i < yv.size(); ++i) {
      const double d = yv[i] - mv[i];
      const double v = std::fabs(d);
      const double s = sv[i];
      const double a = (0.5 - v) / s, b = (-0.5 - v) / s;
      const double pa = PhiDensity(a), pb = PhiDensity(b);
      const double dp_dv = (pb - pa) / s;
      const double sign = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
      const double g = self.grad[i];
      if (gy) (*gy)[i] += g * dp_dv * sign;
      if (gm) (*gm)[i] -= g * dp_dv * sign;
      if (gs) (*gs)[i] += g * (-(a * pa) + b * pb) / s;
    }
  });
}

Tensor SoftmaxCrossEntropy(const Tensor& logits,
                           std::span<const uint8_t> labels) {
  CheckRank4(logits, "cross_entropy");
  const size_t n = logits.dim(0), k = logits.dim(1),
               plane = logits.dim(2) * logits.dim(3);
  if (labels.size() != n * plane) {
    Fail(ErrorCode::kDimension, "cross_entropy: " +
                                    std::to_string(labels.size()) +
                                    " labels for logits " +
                                    ShapeString(logits.shape()));
  }
  const double inv = 1.0 / static_cast<double>(n * plane);
  std::vector<double> probs(logits.numel());
  std::vector<double> terms(n * plane);
  for (size_t b = 0; b < n; ++b) {
    for (size_t i = 0; i < plane; ++i) {
      const double* l = logits.values().data() + b * k * plane + i;
      double mx = l[0];
      for (size_t c = 1; c < k; ++c) mx = std::max(mx, l[c * plane]);
      double z = 0.0;
      for (size_t c = 0; c < k; ++c) z += std::exp(l[c * plane] - mx);
      const uint8_t lab = labels[b * plane + i];
      if (lab >= k) Fail(ErrorCode::kInvalidArgument, "label out of range");
      terms[b * plane + i] = std::log(z) + mx - l[lab * plane];
      for (size_t c = 0; c < k; ++c) {
        probs[b * k * plane + c * plane + i] = std::exp(l[c * plane] - mx) / z;
      }
    }
  }
  std::vector<uint8_t> lab(labels.begin(), labels.end());
  return MakeResult({}, {CompensatedSum(terms) * inv}, {logits},
                    [probs = std::move(probs), lab = std::move(lab), n, k,
                     plane, inv](Node& self) {
                      auto& g = self.parents[0]->Grad();
                      const double d = self.grad[0] * inv;
                      for (size_t b = 0; b < n; ++b) {
                        for (size_t c = 0; c < k; ++c) {
                          for (size_t i = 0; i < plane; ++i) {
                            const size_t idx = b * k * plane + c * plane + i;
                            const double onehot = lab[b * plane + i] == c ? 1.0 : 0.0;
                            g[idx] += d * (probs[idx] - onehot);
                          }
                        }
                      }
                    });
}

std::vector<uint8_t> ArgmaxChannels(const Tensor& logits) {
  CheckRank4(logits, "argmax");
  const size_t n = logits.dim(0), k = logits.dim(1),
               plane = logits.dim(2) * logits.dim(3);
  std::vector<uint8_t> out(n * plane);
  for (size_t b = 0; b < n; ++b) {
    for (size_t i = 0; i < plane; ++i) {
      size_t best = 0;
      for (size_t c = 1; c < k; ++c) {
        if (logits[b * k * plane + c * plane + i] >
            logits[b * k * plane + best * plane + i]) {
          best = c;
        }
      }
      out[b * plane + i] = static_cast<uint8_t>(best);
    }
  }
  return out;
}

}  // namespace sdvc
