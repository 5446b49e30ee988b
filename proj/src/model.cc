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

#include "sdvc/model.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "sdvc/common.h"
#include "sdvc/entropy_model.h"

namespace sdvc {
namespace {

// Pixels in [0, 1] enter the analysis transform as kPixelGain * (x - 0.5).
constexpr double kPixelCenter = 0.5;
constexpr double kPixelGain = 4.0;

std::string LevelName(const char* kind, int level, const char* layer) {
  return std::string(kind) + std::to_string(level) + "." + layer;
}

}  // namespace

void ModelConfig::Validate() const {
  SDVC_CHECK_ARG(hidden_channels > 0 && latent_channels > 0 &&
                     hyper_channels > 0,
                 "channel counts must be positive");
  SDVC_CHECK_ARG(kernel % 2 == 1, "kernel must be odd");
  SDVC_CHECK_ARG(encoder_depth == 4, "encoder depth is fixed at 4");
  SDVC_CHECK_ARG(lsu_count == 3, "LSU count is fixed at 3");
  SDVC_CHECK_ARG(pad_multiple == kCellSize, "pad multiple is fixed at 64");
  SDVC_CHECK_ARG(activation == "leaky_relu", "unsupported activation " + activation);
}

ModelConfig ModelConfig::FromParameters(const ParameterStore& store) {
  ModelConfig c;
  const Tensor& e0 = store.Get("enc0.w");
  const Tensor& y1 = store.Get("lsu1.y.w");
  const Tensor& h1 = store.Get("hyper1.a0.w");
  if (e0.rank() != 4 || y1.rank() != 4 || h1.rank() != 4) {
    Fail(ErrorCode::kModel, "malformed checkpoint: unexpected weight rank");
  }
  c.hidden_channels = e0.dim(0);
  c.kernel = e0.dim(2);
  c.latent_channels = y1.dim(0);
  c.hyper_channels = h1.dim(0);
  return c;
}

std::string ModelConfig::ToString() const {
  std::ostringstream os;
  os << "hidden_channels = " << hidden_channels << "\n"
     << "latent_channels = " << latent_channels << "\n"
     << "hyper_channels = " << hyper_channels << "\n"
     << "kernel = " << kernel << "\n"
     << "encoder_depth = " << encoder_depth << "\n"
     << "lsu_count = " << lsu_count << "\n"
     << "pad_multiple = " << pad_multiple << "\n"
     << "activation = " << activation << "\n";
  return os.str();
}

Tensor Quantize(const Tensor& y, Mode mode, std::mt19937_64* rng) {
  if (mode == Mode::kTrain) {
    SDVC_CHECK_ARG(rng != nullptr, "train-mode quantization needs an rng");
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    std::vector<double> noise(y.numel());
    for (double& v : noise) v = u(*rng);
    return Add(y, Tensor::FromData(y.shape(), std::move(noise)));
  }
  std::vector<double> q(y.numel());
  for (size_t i = 0; i < q.size(); ++i) {
    const double r = std::round(y[i]);
    q[i] = std::clamp(r, -double(kSymbolMax), double(kSymbolMax));
  }
  return Tensor::FromData(y.shape(), std::move(q));
}

Tensor LevelMaskTensor(const std::vector<SaliencyMask>& masks, int level,
                       size_t channels) {
  SDVC_CHECK_ARG(!masks.empty(), "no masks");
  const size_t per_cell = kCellSize / LatentStride(level);
  const size_t h = masks[0].rows() * per_cell, w = masks[0].cols() * per_cell;
  std::vector<double> v(masks.size() * channels * h * w);
  for (size_t b = 0; b < masks.size(); ++b) {
    const auto plane = ProjectMaskToLevel(masks[b], level);
    if (plane.size() != h * w) {
      Fail(ErrorCode::kDimension, "masks in a batch differ in grid size");
    }
    for (size_t c = 0; c < channels; ++c) {
      std::copy(plane.begin(), plane.end(),
                v.begin() + static_cast<std::ptrdiff_t>((b * channels + c) * h * w));
    }
  }
  return Tensor::FromData({masks.size(), channels, h, w}, std::move(v));
}

Tensor ApplyMask(const Tensor& y, const Tensor& level_mask) {
  if (y.shape() != level_mask.shape()) {
    Fail(ErrorCode::kDimension, "mask " + ShapeString(level_mask.shape()) +
                                    " does not match latent " +
                                    ShapeString(y.shape()));
  }
  return Mul(y, level_mask);
}

Codec::Codec(const ModelConfig& config, uint64_t seed) : config_(config) {
  config_.Validate();
  Init(seed);
}

Codec::Codec(ParameterStore params)
    : config_(ModelConfig::FromParameters(params)), params_(std::move(params)) {
  config_.Validate();
  // Constructing a throwaway model checks every expected name and shape.
  Codec ref(config_, 0);
  for (const auto& [name, t] : ref.params().entries()) {
    if (!params_.Contains(name)) {
      Fail(ErrorCode::kModel, "checkpoint is missing parameter " + name);
    }
    if (params_.Get(name).shape() != t.shape()) {
      Fail(ErrorCode::kModel, "checkpoint parameter " + name + " has shape " +
                                  ShapeString(params_.Get(name).shape()) +
                                  ", expected " + ShapeString(t.shape()));
    }
  }
  if (ref.params().entries().size() != params_.entries().size()) {
    Fail(ErrorCode::kModel, "checkpoint has unexpected extra parameters");
  }
}

void Codec::Init(uint64_t seed) {
  std::mt19937_64 rng(seed);
  const size_t n = config_.hidden_channels, c = config_.latent_channels,
               ch = config_.hyper_channels, k = config_.kernel;
  auto conv = [&](const std::string& name, size_t cin, size_t cout,
                  size_t kk) {
    params_.AddHeUniform(name + ".w", {cout, cin, kk, kk}, cin * kk * kk, rng);
    params_.AddConstant(name + ".b", {cout}, 0.0);
  };
  auto tconv = [&](const std::string& name, size_t cin, size_t cout,
                   size_t kk) {
    params_.AddHeUniform(name + ".w", {cin, cout, kk, kk}, cin * kk * kk, rng);
    params_.AddConstant(name + ".b", {cout}, 0.0);
  };
  for (size_t i = 0; i < 4; ++i) {
    conv("enc" + std::to_string(i), i == 0 ? 3 : n, n, k);
  }
  for (int lv = 1; lv <= kNumLevels; ++lv) {
    if (lv < kNumLevels) conv(LevelName("lsu", lv, "down"), n, n, k);
    conv(LevelName("lsu", lv, "y"), 2 * n, c, 3);
    tconv(LevelName("lsu", lv, "up"), c + n, n, k);
    conv(LevelName("hyper", lv, "a0"), c, ch, 3);
    conv(LevelName("hyper", lv, "a1"), ch, ch, k);
    tconv(LevelName("hyper", lv, "s0"), ch, ch, k);
    conv(LevelName("hyper", lv, "s1"), ch + n, ch, 3);
    conv(LevelName("hyper", lv, "s2"), ch, 2 * c, 3);
    AddFactorizedPrior(params_, PriorPrefix(lv), ch, rng);
  }
  for (size_t i = 0; i < 3; ++i) {
    tconv("dec" + std::to_string(i), n, i == 2 ? 3 : n, k);
  }
}

Tensor Codec::ConvLayer(const std::string& name, const Tensor& x,
                        const LayerSpec& spec) const {
  return Conv2D(x, spec, params_.Get(name + ".w"), params_.Get(name + ".b"));
}

Tensor Codec::TConvLayer(const std::string& name, const Tensor& x,
                         const LayerSpec& spec) const {
  return TConv2D(x, spec, params_.Get(name + ".w"), params_.Get(name + ".b"));
}

Tensor Codec::ZeroFeature(size_t batch, size_t h, size_t w) const {
  return Tensor::Zeros({batch, config_.hidden_channels, h, w});
}

GaussianParams Codec::HyperSynthesis(int level, const Tensor& z_hat,
                                     const Tensor& v_next, size_t h,
                                     size_t w) const {
  const size_t ch = config_.hyper_channels, c = config_.latent_channels;
  Tensor t = Act(TConvLayer(LevelName("hyper", level, "s0"), z_hat,
                            LayerSpec::TConv(ch, config_.kernel, 2)));
  t = CropSpatial(t, h, w);
  t = Act(ConvLayer(LevelName("hyper", level, "s1"), ConcatChannels(t, v_next),
                    LayerSpec::Conv(ch, 3, 1)));
  const Tensor out = ConvLayer(LevelName("hyper", level, "s2"), t,
                               LayerSpec::Conv(2 * c, 3, 1));
  GaussianParams g;
  g.mu = SliceChannels(out, 0, c);
  g.sigma = LowerBound(Softplus(SliceChannels(out, c, 2 * c)), kScaleBound);
  return g;
}

Tensor Codec::LsuUp(int level, const Tensor& y_hat, const Tensor& v_next) const {
  return Act(TConvLayer(LevelName("lsu", level, "up"),
                        ConcatChannels(y_hat, v_next),
                        LayerSpec::TConv(config_.hidden_channels,
                                         config_.kernel, 2)));
}

Tensor Codec::Synthesis(const Tensor& v1) const {
  Tensor h = v1;
  for (size_t i = 0; i < 3; ++i) {
    const bool last = i == 2;
    h = TConvLayer("dec" + std::to_string(i), h,
                   LayerSpec::TConv(last ? 3 : config_.hidden_channels,
                                    config_.kernel, 2));
    if (!last) h = Act(h);
  }
  return AddScalar(MulScalar(h, 1.0 / kPixelGain), kPixelCenter);
}

LatentSet Codec::Encode(const Tensor& x, const std::vector<SaliencyMask>& masks,
                        Mode mode, std::mt19937_64* rng) const {
  if (x.rank() != 4 || x.dim(1) != 3) {
    Fail(ErrorCode::kDimension, "expected [N,3,H,W] input, got " +
                                    ShapeString(x.shape()));
  }
  const size_t batch = x.dim(0), height = x.dim(2), width = x.dim(3);
  LatentGridDims(height, width, 1);  // validates padding
  if (masks.size() != batch) {
    Fail(ErrorCode::kDimension, "need one mask per batch item");
  }
  for (const auto& m : masks) {
    if (m.rows() != height / kCellSize || m.cols() != width / kCellSize) {
      Fail(ErrorCode::kDimension,
           "mask grid " + std::to_string(m.rows()) + "x" +
               std::to_string(m.cols()) + " does not match image " +
               std::to_string(height) + "x" + std::to_string(width));
    }
  }
  const size_t n = config_.hidden_channels, c = config_.latent_channels,
               ch = config_.hyper_channels, k = config_.kernel;

  LatentSet out;
  out.masks = masks;
  out.height = height;
  out.width = width;
  out.mode = mode;

  std::array<Tensor, 3> u;
  Tensor h = MulScalar(AddScalar(x, -kPixelCenter), kPixelGain);
  for (size_t i = 0; i < 4; ++i) {
    h = ConvLayer("enc" + std::to_string(i), h, LayerSpec::Conv(n, k, 2));
    if (i < 3) h = Act(h);
  }
  u[0] = h;
  for (int lv = 1; lv < kNumLevels; ++lv) {
    u[lv] = Act(ConvLayer(LevelName("lsu", lv, "down"), u[lv - 1],
                          LayerSpec::Conv(n, k, 2)));
  }

  auto [h3, w3] = LatentGridDims(height, width, 3);
  Tensor v_next = ZeroFeature(batch, h3, w3);
  for (int lv = kNumLevels; lv >= 1; --lv) {
    LevelLatents& L = out.level(lv);
    auto [lh, lw] = LatentGridDims(height, width, lv);
    L.y = ConvLayer(LevelName("lsu", lv, "y"),
                    ConcatChannels(u[lv - 1], v_next), LayerSpec::Conv(c, 3, 1));
    L.level_mask = LevelMaskTensor(masks, lv, c);
    L.y_masked = ApplyMask(L.y, L.level_mask);
    L.y_hat = ApplyMask(Quantize(L.y_masked, mode, rng), L.level_mask);

    Tensor a = Act(ConvLayer(LevelName("hyper", lv, "a0"), L.y_masked,
                             LayerSpec::Conv(ch, 3, 1)));
    L.z = ConvLayer(LevelName("hyper", lv, "a1"), a, LayerSpec::Conv(ch, k, 2));
    L.z_hat = Quantize(L.z, mode, rng);
    GaussianParams g = HyperSynthesis(lv, L.z_hat, v_next, lh, lw);
    L.mu = g.mu;
    L.sigma = g.sigma;
    L.v = LsuUp(lv, L.y_hat, v_next);
    v_next = L.v;
  }
  return out;
}

Tensor Codec::DecodeFromLatents(const LatentSet& latents) const {
  const size_t batch = latents.batch();
  auto [h3, w3] = LatentGridDims(latents.height, latents.width, 3);
  Tensor v_next = ZeroFeature(batch, h3, w3);
  for (int lv = kNumLevels; lv >= 1; --lv) {
    const Tensor& y_hat = latents.level(lv).y_hat;
    if (!y_hat.defined()) {
      Fail(ErrorCode::kInvalidArgument,
           "malformed latents: level " + std::to_string(lv) + " missing");
    }
    v_next = LsuUp(lv, y_hat, v_next);
  }
  return Synthesis(v_next);
}

ReconstructionResult Codec::Reconstruct(const LatentSet& latents) const {
  ReconstructionResult r;
  const Tensor& v1 = latents.level(1).v;
  r.x_hat = v1.defined() ? Synthesis(v1) : DecodeFromLatents(latents);
  RateEstimate rate = EstimateRate(latents, params_);
  for (size_t i = 0; i < 3; ++i) r.level_bits[i] = rate.y_bits[i] + rate.z_bits[i];
  r.cell_bits = std::move(rate.cell_bits);
  return r;
}

}  // namespace sdvc
