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

#include "sdvc/entropy_model.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>
#include <utility>

#include "sdvc/common.h"
#include "sdvc/ops.h"

namespace sdvc {
namespace {

std::atomic<size_t> g_clamp_count{0};

constexpr size_t kPriorLayers = 4;
// Layer widths 1-3-3-3-1.
constexpr size_t kWidths[kPriorLayers + 1] = {1, kPriorWidth, kPriorWidth,
                                              kPriorWidth, 1};

double Sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double SoftplusValue(double x) {
  return x > 30 ? x : std::log1p(std::exp(x));
}

std::string Name(const std::string& prefix, const char* kind, size_t i) {
  return prefix + "." + kind + std::to_string(i);
}

// Activations of one pass through a channel's network, kept for backprop.
struct PriorTrace {
  double input = 0;
  std::array<std::array<double, kPriorWidth>, kPriorLayers> pre{};   // W h + b
  std::array<std::array<double, kPriorWidth>, kPriorLayers> post{};  // layer output
};

double EvalLogit(const FactorizedPriorView::Channel& ch, double x,
                 PriorTrace* trace) {
  std::array<double, kPriorWidth> h{};
  h[0] = x;
  if (trace) trace->input = x;
  for (size_t i = 0; i < kPriorLayers; ++i) {
    const size_t in = kWidths[i], out = kWidths[i + 1];
    std::array<double, kPriorWidth> a{};
    for (size_t o = 0; o < out; ++o) {
      double acc = ch.bias[i][o];
      for (size_t j = 0; j < in; ++j) acc += ch.weight[i][o * in + j] * h[j];
      a[o] = acc;
    }
    std::array<double, kPriorWidth> next{};
    for (size_t o = 0; o < out; ++o) {
      next[o] = i + 1 < kPriorLayers ? a[o] + ch.gate[i][o] * std::tanh(a[o])
                                     : a[o];
    }
    if (trace) {
      trace->pre[i] = a;
      trace->post[i] = next;
    }
    h = next;
  }
  return h[0];
}

// Gradients of one channel's raw parameters.
struct ChannelGrad {
  std::array<std::vector<double>, kPriorLayers> weight, bias;
  std::array<std::vector<double>, kPriorLayers - 1> gate;
  explicit ChannelGrad() {
    for (size_t i = 0; i < kPriorLayers; ++i) {
      weight[i].assign(kWidths[i] * kWidths[i + 1], 0.0);
      bias[i].assign(kWidths[i + 1], 0.0);
      if (i + 1 < kPriorLayers) gate[i].assign(kWidths[i + 1], 0.0);
    }
  }
};

// Backprop of d logit = g through the traced pass. Returns d/dx and
// accumulates gradients into every parameter of the channel.
double BackpropLogit(const FactorizedPriorView::Channel& ch,
                     const PriorTrace& tr, double g, ChannelGrad& acc) {
  std::array<double, kPriorWidth> dh{};
  dh[0] = g;
  for (size_t ii = kPriorLayers; ii-- > 0;) {
    const size_t in = kWidths[ii], out = kWidths[ii + 1];
    std::array<double, kPriorWidth> da{};
    for (size_t o = 0; o < out; ++o) {
      if (ii + 1 < kPriorLayers) {
        const double t = std::tanh(tr.pre[ii][o]);
        da[o] = dh[o] * (1.0 + ch.gate[ii][o] * (1.0 - t * t));
        acc.gate[ii][o] += dh[o] * t;
      } else {
        da[o] = dh[o];
      }
      acc.bias[ii][o] += da[o];
    }
    std::array<double, kPriorWidth> prev{};
    for (size_t j = 0; j < in; ++j) {
      const double hj = ii == 0 ? tr.input : tr.post[ii - 1][j];
      double s = 0;
      for (size_t o = 0; o < out; ++o) {
        acc.weight[ii][o * in + j] += da[o] * hj;
        s += ch.weight[ii][o * in + j] * da[o];
      }
      prev[j] = s;
    }
    dh = prev;
  }
  return dh[0];
}

// Likelihood of the unit bin around x from the lower/upper logits, using the
// sign flip that keeps both sigmoids away from 1.
struct BinLikelihood {
  double value, d_lower, d_upper;
};

BinLikelihood BinFromLogits(double lower, double upper) {
  const double s = (lower + upper) > 0 ? -1.0 : 1.0;
  const double su = Sigmoid(s * upper), sl = Sigmoid(s * lower);
  const double d = su - sl;
  const double sgn = d >= 0 ? 1.0 : -1.0;
  return {std::fabs(d), -sgn * s * sl * (1.0 - sl), sgn * s * su * (1.0 - su)};
}

std::vector<FactorizedPriorView::Channel> LoadChannels(
    const ParameterStore& store, const std::string& prefix) {
  const Tensor& m0 = store.Get(Name(prefix, "matrix", 0));
  if (m0.rank() != 3) Fail(ErrorCode::kModel, "bad prior shape at " + prefix);
  const size_t channels = m0.dim(0);
  std::vector<FactorizedPriorView::Channel> out(channels);
  for (size_t i = 0; i < kPriorLayers; ++i) {
    const Tensor& m = store.Get(Name(prefix, "matrix", i));
    const Tensor& b = store.Get(Name(prefix, "bias", i));
    const size_t nw = kWidths[i] * kWidths[i + 1], nb = kWidths[i + 1];
    if (m.numel() != channels * nw || b.numel() != channels * nb) {
      Fail(ErrorCode::kModel, "bad prior shape at " + prefix);
    }
    for (size_t c = 0; c < channels; ++c) {
      out[c].weight[i].resize(nw);
      for (size_t k = 0; k < nw; ++k) {
        out[c].weight[i][k] = SoftplusValue(m[c * nw + k]);
      }
      out[c].bias[i].assign(b.values().begin() + c * nb,
                            b.values().begin() + (c + 1) * nb);
    }
    if (i + 1 < kPriorLayers) {
      const Tensor& f = store.Get(Name(prefix, "factor", i));
      if (f.numel() != channels * nb) {
        Fail(ErrorCode::kModel, "bad prior shape at " + prefix);
      }
      for (size_t c = 0; c < channels; ++c) {
        out[c].gate[i].resize(nb);
        for (size_t k = 0; k < nb; ++k) {
          out[c].gate[i][k] = std::tanh(f[c * nb + k]);
        }
      }
    }
  }
  return out;
}

// Spreads `bits` of the latent element (i, j) at `stride` px over the mask
// cells its footprint overlaps, in proportion to the overlapped area.
void SpreadOverCells(double bits, size_t i, size_t j, size_t stride,
                     size_t height, size_t width, size_t cols,
                     std::vector<double>& cells) {
  const size_t y0 = i * stride, x0 = j * stride;
  const size_t y1 = std::min(y0 + stride, height);
  const size_t x1 = std::min(x0 + stride, width);
  if (y0 >= y1 || x0 >= x1) return;
  const double area = static_cast<double>((y1 - y0) * (x1 - x0));
  for (size_t cy = y0 / kCellSize; cy * kCellSize < y1; ++cy) {
    const size_t oy = std::min(y1, (cy + 1) * kCellSize) -
                      std::max(y0, cy * kCellSize);
    for (size_t cx = x0 / kCellSize; cx * kCellSize < x1; ++cx) {
      const size_t ox = std::min(x1, (cx + 1) * kCellSize) -
                        std::max(x0, cx * kCellSize);
      cells[cy * cols + cx] += bits * static_cast<double>(oy * ox) / area;
    }
  }
}

}  // namespace

std::string PriorPrefix(int level) { return "prior" + std::to_string(level); }

void AddFactorizedPrior(ParameterStore& store, const std::string& prefix,
                        size_t channels, std::mt19937_64& rng) {
  const double scale = std::pow(10.0, 1.0 / (kPriorLayers));
  std::uniform_real_distribution<double> bias_dist(-0.5, 0.5);
  for (size_t i = 0; i < kPriorLayers; ++i) {
    const size_t in = kWidths[i], out = kWidths[i + 1];
    const double init = std::log(std::expm1(1.0 / scale / out));
    store.AddConstant(Name(prefix, "matrix", i), {channels, out, in}, init);
    std::vector<double> b(channels * out);
    for (double& v : b) v = bias_dist(rng);
    store.Add(Name(prefix, "bias", i), {channels, out, 1}, std::move(b));
    if (i + 1 < kPriorLayers) {
      store.AddConstant(Name(prefix, "factor", i), {channels, out, 1}, 0.0);
    }
  }
}

Tensor FactorizedLikelihood(const Tensor& z, const ParameterStore& store,
                            const std::string& prefix) {
  if (z.rank() != 4) Fail(ErrorCode::kDimension, "z must be NCHW");
  auto channels = LoadChannels(store, prefix);
  const size_t c_count = z.dim(1), hw = z.dim(2) * z.dim(3);
  if (c_count != channels.size()) {
    Fail(ErrorCode::kDimension,
         "prior has " + std::to_string(channels.size()) +
             " channels, z shape " + ShapeString(z.shape()));
  }
  std::vector<double> out(z.numel());
  for (size_t i = 0; i < z.numel(); ++i) {
    const auto& ch = channels[(i / hw) % c_count];
    out[i] = BinFromLogits(EvalLogit(ch, z[i] - 0.5, nullptr),
                           EvalLogit(ch, z[i] + 0.5, nullptr))
                 .value;
  }
  std::vector<Tensor> parents = {z};
  const char* kinds[3] = {"matrix", "bias", "factor"};
  for (size_t i = 0; i < kPriorLayers; ++i) {
    for (const char* k : kinds) {
      if (k == kinds[2] && i + 1 == kPriorLayers) continue;
      parents.push_back(store.Get(Name(prefix, k, i)));
    }
  }
  return MakeResult(
      z.shape(), std::move(out), parents,
      [parents, channels = std::move(channels), c_count, hw](Node& self) {
        const Tensor& zt = parents[0];
        std::vector<ChannelGrad> grads(c_count);
        std::vector<double> dz(zt.numel(), 0.0);
        for (size_t i = 0; i < zt.numel(); ++i) {
          const size_t c = (i / hw) % c_count;
          const auto& ch = channels[c];
          PriorTrace tl, tu;
          const double lo = EvalLogit(ch, zt[i] - 0.5, &tl);
          const double up = EvalLogit(ch, zt[i] + 0.5, &tu);
          const BinLikelihood b = BinFromLogits(lo, up);
          const double g = self.grad[i];
          dz[i] = BackpropLogit(ch, tl, g * b.d_lower, grads[c]) +
                  BackpropLogit(ch, tu, g * b.d_upper, grads[c]);
        }
        if (zt.requires_grad()) {
          auto& gz = zt.node()->Grad();
          for (size_t i = 0; i < dz.size(); ++i) gz[i] += dz[i];
        }
        size_t p = 1;
        for (size_t layer = 0; layer < kPriorLayers; ++layer) {
          const size_t nw = kWidths[layer] * kWidths[layer + 1];
          const size_t nb = kWidths[layer + 1];
          Node* m = parents[p++].node();
          Node* b = parents[p++].node();
          Node* f = layer + 1 < kPriorLayers ? parents[p++].node() : nullptr;
          for (size_t c = 0; c < c_count; ++c) {
            if (m->requires_grad) {
              auto& gm = m->Grad();
              for (size_t k = 0; k < nw; ++k) {
                // d softplus(m) / dm = sigmoid(m)
                gm[c * nw + k] +=
                    grads[c].weight[layer][k] * Sigmoid(m->value[c * nw + k]);
              }
            }
            if (b->requires_grad) {
              auto& gb = b->Grad();
              for (size_t k = 0; k < nb; ++k) {
                gb[c * nb + k] += grads[c].bias[layer][k];
              }
            }
            if (f && f->requires_grad) {
              auto& gf = f->Grad();
              for (size_t k = 0; k < nb; ++k) {
                const double t = std::tanh(f->value[c * nb + k]);
                gf[c * nb + k] += grads[c].gate[layer][k] * (1.0 - t * t);
              }
            }
          }
        }
      });
}

FactorizedPriorView::FactorizedPriorView(const ParameterStore& store,
                                         const std::string& prefix)
    : channels_(LoadChannels(store, prefix)) {}

double FactorizedPriorView::Logit(size_t c, double x) const {
  return EvalLogit(channels_.at(c), x, nullptr);
}

double FactorizedPriorView::Cdf(size_t c, double x) const {
  return Sigmoid(Logit(c, x));
}

double FactorizedPriorView::Likelihood(size_t c, double x) const {
  return BinFromLogits(Logit(c, x - 0.5), Logit(c, x + 0.5)).value;
}

namespace {

SymbolTable BuildTable(int lo, const std::vector<double>& pmf) {
  std::vector<double> p(pmf);
  double mass = 0;
  for (double v : p) mass += v;
  p.push_back(std::max(1.0 - mass, 0.0));
  SymbolTable t;
  t.lo = lo;
  t.freqs = QuantizePmf(p);
  return t;
}

// Symbol range covered by the Gaussian table for (mu, sigma).
std::pair<int, int> GaussianWindow(double mu, double sigma) {
  const double center = std::round(std::clamp(mu, -double(kSymbolMax),
                                              double(kSymbolMax)));
  const double half = std::ceil(7.0 * std::min(sigma, 1e4)) + 1.0;
  return {static_cast<int>(std::max(center - half, -double(kSymbolMax))),
          static_cast<int>(std::min(center + half, double(kSymbolMax)))};
}

// Smallest probability the range coder can actually charge: one count out of
// kFreqTotal, plus the raw bits when the symbol has to be escaped.
Tensor CoderFloor(const Tensor& p, std::vector<double> floor) {
  std::vector<double> out(p.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::max(p[i], floor[i]);
  return MakeResult(p.shape(), std::move(out), {p},
                    [floor = std::move(floor)](Node& self) {
                      const auto& x = self.parents[0]->value;
                      auto& g = self.parents[0]->Grad();
                      for (size_t i = 0; i < g.size(); ++i) {
                        if (x[i] > floor[i]) g[i] += self.grad[i];
                      }
                    });
}

constexpr double kMinCodedProb = 1.0 / kFreqTotal;
constexpr double kMinEscapedProb = kMinCodedProb / (1u << kEscapeBits);

}  // namespace

SymbolTable GaussianSymbolTable(double mu, double sigma) {
  const auto [lo, hi] = GaussianWindow(mu, sigma);
  std::vector<double> pmf(static_cast<size_t>(hi - lo + 1));
  for (int q = lo; q <= hi; ++q) {
    pmf[q - lo] = GaussianLikelihoodValue(q, mu, sigma);
  }
  return BuildTable(lo, pmf);
}

SymbolTable FactorizedSymbolTable(const FactorizedPriorView& prior,
                                  size_t channel) {
  int lo = -kSymbolMax, hi = kSymbolMax;
  while (lo < 0 && prior.Cdf(channel, lo + 0.5) < kLikelihoodFloor) ++lo;
  while (hi > 0 && 1.0 - prior.Cdf(channel, hi - 0.5) < kLikelihoodFloor) --hi;
  std::vector<double> pmf(static_cast<size_t>(hi - lo + 1));
  for (int q = lo; q <= hi; ++q) pmf[q - lo] = prior.Likelihood(channel, q);
  return BuildTable(lo, pmf);
}

void EncodeSymbol(RangeEncoder& enc, const SymbolTable& t, int value) {
  if (value < -kSymbolMax || value > kSymbolMax) {
    Fail(ErrorCode::kInvalidArgument,
         "latent value out of range: " + std::to_string(value));
  }
  const int idx = value - t.lo;
  if (idx >= 0 && static_cast<size_t>(idx) < t.window()) {
    enc.Encode(t.freqs, static_cast<size_t>(idx));
    return;
  }
  enc.Encode(t.freqs, t.window());
  enc.EncodeBits(static_cast<uint32_t>(value + kSymbolMax), kEscapeBits);
}

int DecodeSymbol(RangeDecoder& dec, const SymbolTable& t) {
  const size_t s = dec.Decode(t.freqs);
  if (s < t.window()) return t.lo + static_cast<int>(s);
  const int v = static_cast<int>(dec.DecodeBits(kEscapeBits)) - kSymbolMax;
  if (v > kSymbolMax) {
    throw CorruptionError("escaped latent value out of range", 0);
  }
  return v;
}

size_t LikelihoodClampCount() { return g_clamp_count.load(); }

RateEstimate EstimateRate(const LatentSet& latents, const ParameterStore& store) {
  RateEstimate r;
  const size_t batch = latents.batch();
  const size_t rows = CellGridExtent(latents.height);
  const size_t cols = CellGridExtent(latents.width);
  r.cell_bits.assign(batch, std::vector<double>(rows * cols, 0.0));
  Tensor total;
  for (int n = 1; n <= kNumLevels; ++n) {
    const LevelLatents& lv = latents.level(n);
    if (!lv.y_hat.defined() || !lv.z_hat.defined()) {
      Fail(ErrorCode::kInvalidArgument,
           "malformed latents: level " + std::to_string(n) + " missing");
    }
    const Tensor py = GaussianLikelihood(lv.y_hat, lv.mu, lv.sigma);
    std::vector<double> y_floor(py.numel());
    for (size_t i = 0; i < py.numel(); ++i) {
      const auto [lo, hi] = GaussianWindow(lv.mu[i], lv.sigma[i]);
      const double q = std::round(lv.y_hat[i]);
      y_floor[i] = q >= lo && q <= hi ? kMinCodedProb : kMinEscapedProb;
    }
    const Tensor y_bits = Mul(
        NegLog2(CoderFloor(LowerBound(py, kLikelihoodFloor), std::move(y_floor))),
        lv.level_mask);
    const Tensor pz = FactorizedLikelihood(lv.z_hat, store, PriorPrefix(n));
    const Tensor z_bits = NegLog2(CoderFloor(
        LowerBound(pz, kLikelihoodFloor),
        std::vector<double>(pz.numel(), kMinCodedProb)));
    const Tensor level_total = Add(Sum(y_bits), Sum(z_bits));
    total = total.defined() ? Add(total, level_total) : level_total;

    size_t clamped = 0;
    for (size_t i = 0; i < py.numel(); ++i) {
      if (lv.level_mask[i] != 0 && !(py[i] >= kLikelihoodFloor)) ++clamped;
    }
    for (size_t i = 0; i < pz.numel(); ++i) {
      if (!(pz[i] >= kLikelihoodFloor)) ++clamped;
    }
    r.clamped += clamped;

    const size_t stride = LatentStride(n);
    for (int which = 0; which < 2; ++which) {
      const Tensor& bits = which == 0 ? y_bits : z_bits;
      const size_t s = which == 0 ? stride : 2 * stride;
      const size_t h = bits.dim(2), w = bits.dim(3), per = bits.numel() / batch;
      double sum = 0;
      for (size_t b = 0; b < batch; ++b) {
        for (size_t k = 0; k < per; ++k) {
          const double v = bits[b * per + k];
          if (v == 0) continue;
          sum += v;
          const size_t i = (k / w) % h, j = k % w;
          SpreadOverCells(v, i, j, s, latents.height, latents.width, cols,
                          r.cell_bits[b]);
        }
      }
      (which == 0 ? r.y_bits : r.z_bits)[n - 1] = sum;
    }
  }
  g_clamp_count += r.clamped;
  r.bits = total;
  return r;
}

}  // namespace sdvc
