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

#include "sdvc/training.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "sdvc/byte_io.h"
#include "sdvc/common.h"
#include "sdvc/entropy_model.h"
#include "sdvc/ops.h"

namespace sdvc {
namespace {

// Value noise: bilinear interpolation of a random lattice with spacing
// `cell`, in [-1, 1].
std::vector<double> ValueNoise(size_t h, size_t w, size_t cell,
                               std::mt19937_64& rng) {
  const size_t gh = h / cell + 2, gw = w / cell + 2;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> grid(gh * gw);
  for (double& g : grid) g = u(rng);
  std::vector<double> out(h * w);
  for (size_t y = 0; y < h; ++y) {
    const double fy = static_cast<double>(y) / cell;
    const size_t iy = static_cast<size_t>(fy);
    const double ty = fy - iy;
    for (size_t x = 0; x < w; ++x) {
      const double fx = static_cast<double>(x) / cell;
      const size_t ix = static_cast<size_t>(fx);
      const double tx = fx - ix;
      const double a = grid[iy * gw + ix], b = grid[iy * gw + ix + 1];
      const double c = grid[(iy + 1) * gw + ix], d = grid[(iy + 1) * gw + ix + 1];
      out[y * w + x] = (a * (1 - tx) + b * tx) * (1 - ty) +
                       (c * (1 - tx) + d * tx) * ty;
    }
  }
  return out;
}

struct Color {
  double r, g, b;
};

constexpr Color kClassColors[kNumClasses] = {
    {0, 0, 0}, {0.85, 0.2, 0.2}, {0.2, 0.3, 0.9}, {0.95, 0.85, 0.2}};

bool InsideShape(int cls, double dy, double dx, double ry, double rx) {
  switch (cls) {
    case 1:  // ellipse
      return (dy * dy) / (ry * ry) + (dx * dx) / (rx * rx) <= 1.0;
    case 2:  // rectangle
      return std::fabs(dy) <= ry && std::fabs(dx) <= rx;
    default: {  // upright isosceles triangle
      if (dy < -ry || dy > ry) return false;
      const double half = rx * (dy + ry) / (2 * ry);
      return std::fabs(dx) <= half;
    }
  }
}

void Clamp01(Image& img) {
  for (double& v : img.data) v = std::clamp(v, 0.0, 1.0);
}

}  // namespace

SyntheticScene MakeSyntheticScene(std::mt19937_64& rng) {
  const size_t h = kSceneHeight, w = kSceneWidth;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  SyntheticScene s;
  s.image = Image(h, w);
  s.annotations = {h, w, std::vector<uint16_t>(h * w, 0)};
  s.labels.assign(h * w, 0);

  // Foliage above a horizon, road below it.
  const size_t horizon = static_cast<size_t>(h * (0.35 + 0.3 * u01(rng)));
  const auto coarse = ValueNoise(h, w, 16, rng);
  const auto fine = ValueNoise(h, w, 3, rng);
  const Color leaf{0.2 + 0.1 * u01(rng), 0.45 + 0.15 * u01(rng),
                   0.15 + 0.1 * u01(rng)};
  const double road = 0.35 + 0.25 * u01(rng);
  const double slope = (u01(rng) - 0.5) * 0.3;
  for (size_t y = 0; y < h; ++y) {
    for (size_t x = 0; x < w; ++x) {
      const size_t i = y * w + x;
      if (y < horizon) {
        const double t = 0.25 * coarse[i] + 0.35 * fine[i];
        s.image.at(0, y, x) = leaf.r + t;
        s.image.at(1, y, x) = leaf.g + t;
        s.image.at(2, y, x) = leaf.b + t;
      } else {
        const double g = road + slope * (static_cast<double>(x) / w - 0.5) +
                         0.02 * fine[i];
        s.image.at(0, y, x) = g;
        s.image.at(1, y, x) = g;
        s.image.at(2, y, x) = g * 1.03;
      }
    }
  }

  const double target = 0.08 + 0.22 * u01(rng);
  size_t covered = 0;
  uint16_t next_id = 1;
  std::uniform_int_distribution<int> cls_dist(1, kNumClasses - 1);
  for (int attempt = 0; attempt < 200 && covered < target * h * w; ++attempt) {
    const int cls = cls_dist(rng);
    const double ry = 14 + 40 * u01(rng), rx = 14 + 60 * u01(rng);
    // Objects stand on the road; tall ones may reach into the foliage.
    const double lo = std::max(ry, static_cast<double>(horizon));
    const double hi = std::max(lo, h - ry);
    const double cy = lo + (hi - lo) * u01(rng);
    const double cx = rx + (w - 2 * rx) * u01(rng);
    const size_t y0 = static_cast<size_t>(std::max(0.0, cy - ry));
    const size_t y1 = std::min(h, static_cast<size_t>(cy + ry) + 1);
    const size_t x0 = static_cast<size_t>(std::max(0.0, cx - rx));
    const size_t x1 = std::min(w, static_cast<size_t>(cx + rx) + 1);
    std::vector<size_t> pixels;
    bool overlap = false;
    for (size_t y = y0; y < y1 && !overlap; ++y) {
      for (size_t x = x0; x < x1; ++x) {
        if (!InsideShape(cls, y - cy, x - cx, ry, rx)) continue;
        if (s.annotations.ids[y * w + x] != 0) {
          overlap = true;
          break;
        }
        pixels.push_back(y * w + x);
      }
    }
    if (overlap || pixels.size() < 64) continue;
    if ((covered + pixels.size()) > 0.40 * h * w) continue;
    Color col = kClassColors[cls];
    const double jitter = 0.08;
    col.r += jitter * (2 * u01(rng) - 1);
    col.g += jitter * (2 * u01(rng) - 1);
    col.b += jitter * (2 * u01(rng) - 1);
    for (size_t i : pixels) {
      const size_t y = i / w, x = i % w;
      const double shade = 0.08 * (static_cast<double>(y) - cy) / ry;
      s.image.at(0, y, x) = col.r - shade;
      s.image.at(1, y, x) = col.g - shade;
      s.image.at(2, y, x) = col.b - shade;
      s.annotations.ids[i] = next_id;
      s.labels[i] = static_cast<uint8_t>(cls);
    }
    s.instance_class.push_back(cls);
    covered += pixels.size();
    ++next_id;
  }
  Clamp01(s.image);
  s.boxes = TightBoxes(s.annotations);
  for (auto& b : s.boxes) {
    // TightBoxes reports the instance id; map it to the object class.
    b.class_id = s.instance_class.at(static_cast<size_t>(b.class_id) - 1);
  }
  return s;
}

std::vector<SyntheticScene> MakeSyntheticDataset(size_t n_scenes,
                                                 uint64_t seed) {
  SDVC_CHECK_ARG(n_scenes >= 1, "need at least one scene");
  std::mt19937_64 rng(seed);
  std::vector<SyntheticScene> out;
  out.reserve(n_scenes);
  for (size_t i = 0; i < n_scenes; ++i) out.push_back(MakeSyntheticScene(rng));
  return out;
}

double ObjectFraction(const SyntheticScene& s) {
  size_t n = 0;
  for (uint16_t id : s.annotations.ids) n += id != 0;
  return static_cast<double>(n) / static_cast<double>(s.annotations.ids.size());
}

SyntheticScene CropScene(const SyntheticScene& s, size_t y0, size_t x0,
                         size_t h, size_t w) {
  SDVC_CHECK_ARG(y0 + h <= s.image.height && x0 + w <= s.image.width,
                 "crop outside scene");
  SyntheticScene c;
  c.image = CropImage(s.image, y0, x0, h, w);
  c.annotations = {h, w, std::vector<uint16_t>(h * w)};
  c.labels.resize(h * w);
  for (size_t y = 0; y < h; ++y) {
    for (size_t x = 0; x < w; ++x) {
      const size_t src = (y0 + y) * s.image.width + x0 + x;
      c.annotations.ids[y * w + x] = s.annotations.ids[src];
      c.labels[y * w + x] = s.labels[src];
    }
  }
  c.instance_class = s.instance_class;
  c.boxes = TightBoxes(c.annotations);
  for (auto& b : c.boxes) {
    b.class_id = c.instance_class.at(static_cast<size_t>(b.class_id) - 1);
  }
  return c;
}

ProxySegNet::ProxySegNet(uint64_t seed) {
  std::mt19937_64 rng(seed);
  const size_t cin[4] = {3, kWidth, kWidth, kWidth};
  const size_t cout[4] = {kWidth, kWidth, kWidth, kNumClasses};
  for (size_t i = 0; i < 4; ++i) {
    const std::string name = "seg.c" + std::to_string(i);
    params_.AddHeUniform(name + ".w", {cout[i], cin[i], 3, 3}, cin[i] * 9, rng);
    params_.AddConstant(name + ".b", {cout[i]}, 0.0);
  }
}

ProxySegNet::ProxySegNet(ParameterStore params) : params_(std::move(params)) {
  for (size_t i = 0; i < 4; ++i) {
    const std::string name = "seg.c" + std::to_string(i);
    if (!params_.Contains(name + ".w") || !params_.Contains(name + ".b")) {
      Fail(ErrorCode::kModel, "task network checkpoint is missing " + name);
    }
  }
}

Tensor ProxySegNet::Logits(const Tensor& x) const {
  auto layer = [this](size_t i, const Tensor& in, size_t cout, size_t stride) {
    const std::string name = "seg.c" + std::to_string(i);
    return Conv2D(in, LayerSpec::Conv(cout, 3, stride), params_.Get(name + ".w"),
                  params_.Get(name + ".b"));
  };
  Tensor h = LeakyRelu(layer(0, x, kWidth, 2));
  h = LeakyRelu(layer(1, h, kWidth, 2));
  h = LeakyRelu(layer(2, h, kWidth, 1));
  h = UpsampleNearest2x(UpsampleNearest2x(h));
  return layer(3, h, kNumClasses, 1);
}

Tensor ProxySegNet::Loss(const Tensor& x_hat,
                         std::span<const uint8_t> labels) const {
  return SoftmaxCrossEntropy(Logits(x_hat), labels);
}

std::vector<uint8_t> ProxySegNet::Predict(const Tensor& x) const {
  NoGradGuard no_grad;
  return ArgmaxChannels(Logits(x));
}

Tensor MseLoss(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    Fail(ErrorCode::kDimension, "mse shape mismatch: " + ShapeString(a.shape()) +
                                    " vs " + ShapeString(b.shape()));
  }
  return Mean(Square(Sub(a, b)));
}

Tensor DistortionHvs(const Tensor& x, const Tensor& x_hat,
                     const MsSsimConfig& cfg, double* mse_out,
                     double* msssim_out) {
  const Tensor mse = MseLoss(x, x_hat);
  const Tensor ms = MsSsim(x, x_hat, cfg);
  if (mse_out) *mse_out = mse.item();
  if (msssim_out) *msssim_out = ms.item();
  return Add(mse, MulScalar(AddScalar(MulScalar(ms, -1.0), 1.0), kMsSsimWeight));
}

LossBreakdown ForwardTrain(const Codec& codec, const TrainBatch& batch,
                           double lambda, LossKind kind,
                           const TaskLossProvider* provider,
                           std::mt19937_64& rng, const MsSsimConfig& ms_cfg) {
  SDVC_CHECK_ARG(lambda >= 0, "lambda must be non-negative");
  const LatentSet latents = codec.Encode(batch.x, batch.masks, Mode::kTrain, &rng);
  const RateEstimate rate = EstimateRate(latents, codec.params());
  const Tensor x_hat = codec.Synthesis(latents.level(1).v);
  const double pixels = static_cast<double>(batch.x.dim(0) * batch.x.dim(2) *
                                            batch.x.dim(3));
  const Tensor r = MulScalar(rate.bits, 1.0 / pixels);

  LossBreakdown out;
  out.lambda = lambda;
  Tensor d;
  if (kind == LossKind::kHvs) {
    d = DistortionHvs(batch.x, x_hat, ms_cfg, &out.mse, &out.msssim);
  } else {
    SDVC_CHECK_ARG(provider != nullptr, "task loss needs a provider");
    d = provider->Loss(x_hat, batch.labels);
    out.task = d.item();
    double sq = 0;
    for (size_t i = 0; i < x_hat.numel(); ++i) {
      const double e = x_hat[i] - batch.x[i];
      sq += e * e;
    }
    out.mse = sq / static_cast<double>(x_hat.numel());
  }
  out.total_tensor = Add(d, MulScalar(r, lambda));
  out.distortion = d.item();
  out.rate_bpp = r.item();
  out.rate_bits = rate.bits.item();
  out.total = out.total_tensor.item();
  out.clamped = rate.clamped;
  return out;
}

LossBreakdown LossHvs(const Codec& codec, const TrainBatch& batch,
                      double lambda, std::mt19937_64& rng,
                      const MsSsimConfig& ms_cfg) {
  return ForwardTrain(codec, batch, lambda, LossKind::kHvs, nullptr, rng,
                      ms_cfg);
}

LossBreakdown LossVcm(const Codec& codec, const TrainBatch& batch,
                      double lambda, const TaskLossProvider& provider,
                      std::mt19937_64& rng) {
  return ForwardTrain(codec, batch, lambda, LossKind::kVcm, &provider, rng);
}

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::Reset() {
  t_ = 0;
  m_.clear();
  v_.clear();
}

void Adam::Step(ParameterStore& params) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (const auto& [name, t] : params.entries()) {
    if (!t.requires_grad() || !t.has_grad()) continue;
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.empty()) {
      m.assign(t.numel(), 0.0);
      v.assign(t.numel(), 0.0);
    }
    Tensor handle = t;
    auto values = handle.mutable_values();
    const auto g = t.grad();
    for (size_t i = 0; i < values.size(); ++i) {
      m[i] = beta1_ * m[i] + (1 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1 - beta2_) * g[i] * g[i];
      values[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
    handle.ZeroGrad();
  }
}

void TrainingConfig::Validate() const {
  SDVC_CHECK_ARG(lambda > 0, "lambda must be > 0");
  for (double l : lambda_sweep) SDVC_CHECK_ARG(l > 0, "lambda must be > 0");
  SDVC_CHECK_ARG(learning_rate > 0, "learning rate must be > 0");
  SDVC_CHECK_ARG(batch_size >= 1, "batch size must be >= 1");
  SDVC_CHECK_ARG(scenes >= 1, "need at least one scene");
  SDVC_CHECK_ARG(crop_height % kCellSize == 0 && crop_width % kCellSize == 0 &&
                     crop_height > 0 && crop_width > 0,
                 "crop size must be a positive multiple of 64");
  SDVC_CHECK_ARG(crop_height <= kSceneHeight && crop_width <= kSceneWidth,
                 "crop larger than the synthetic scenes");
  model.Validate();
}

std::string EpochLogHeader() {
  return "epoch,phase,loss_total,loss_task,loss_mse,loss_msssim,bpp_estimate";
}

std::string FormatEpochLog(const EpochLog& e) {
  std::ostringstream os;
  os.precision(10);
  os << e.epoch << ',' << e.phase << ',' << e.loss_total << ',' << e.loss_task
     << ',' << e.loss_mse << ',' << e.loss_msssim << ',' << e.bpp_estimate;
  return os.str();
}

TrainBatch MakeBatch(const std::vector<const SyntheticScene*>& scenes,
                     MaskSource source, size_t crop_h, size_t crop_w,
                     std::mt19937_64& rng) {
  SDVC_CHECK_ARG(!scenes.empty(), "empty batch");
  TrainBatch b;
  std::vector<Image> crops;
  crops.reserve(scenes.size());
  for (const SyntheticScene* s : scenes) {
    std::uniform_int_distribution<size_t> dy(0, s->image.height - crop_h);
    std::uniform_int_distribution<size_t> dx(0, s->image.width - crop_w);
    const size_t y0 = dy(rng), x0 = dx(rng);
    SyntheticScene c = CropScene(*s, y0, x0, crop_h, crop_w);
    b.masks.push_back(source == MaskSource::kGt
                          ? GtMask(c.annotations, crop_h, crop_w)
                          : VarianceMask(c.image));
    b.labels.insert(b.labels.end(), c.labels.begin(), c.labels.end());
    crops.push_back(std::move(c.image));
  }
  std::vector<const Image*> ptrs;
  for (const auto& c : crops) ptrs.push_back(&c);
  b.x = BatchImages(ptrs);
  return b;
}

TrainBatch MakeFullBatch(const SyntheticScene& scene, const SaliencyMask& mask) {
  TrainBatch b;
  b.x = scene.image.ToTensor();
  b.masks = {mask};
  b.labels = scene.labels;
  return b;
}

namespace {

void WriteLog(const std::string& path, const std::vector<EpochLog>& rows) {
  if (path.empty()) return;
  std::string text = EpochLogHeader() + "\n";
  for (const auto& r : rows) text += FormatEpochLog(r) + "\n";
  WriteTextAtomic(path, text);
}

std::vector<std::vector<double>> Snapshot(const ParameterStore& p) {
  std::vector<std::vector<double>> out;
  for (const auto& [_, t] : p.entries()) {
    out.emplace_back(t.values().begin(), t.values().end());
  }
  return out;
}

void Restore(ParameterStore& p, const std::vector<std::vector<double>>& snap) {
  size_t i = 0;
  for (auto& [_, t] : p.entries()) {
    Tensor handle = t;
    auto v = handle.mutable_values();
    std::copy(snap[i].begin(), snap[i].end(), v.begin());
    ++i;
  }
}

}  // namespace

std::vector<EpochLog> RunPhase(Codec& codec,
                               const std::vector<SyntheticScene>& data,
                               const TrainingConfig& cfg,
                               const PhaseOptions& opt,
                               const TaskLossProvider* provider,
                               std::mt19937_64& rng) {
  SDVC_CHECK_ARG(!data.empty(), "dataset is empty");
  SDVC_CHECK_ARG(opt.lambda > 0, "lambda must be > 0");
  Adam adam(cfg.learning_rate);
  codec.params().SetRequiresGrad(true);
  std::vector<EpochLog> log;
  std::vector<size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog e;
    e.epoch = epoch + 1;
    e.phase = opt.phase;
    size_t steps = 0;
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<const SyntheticScene*> scenes;
      for (size_t i = start; i < std::min(order.size(), start + cfg.batch_size);
           ++i) {
        scenes.push_back(&data[order[i]]);
      }
      const TrainBatch batch =
          MakeBatch(scenes, opt.masks, cfg.crop_height, cfg.crop_width, rng);
      const auto good = Snapshot(codec.params());
      const LossBreakdown loss =
          ForwardTrain(codec, batch, opt.lambda, opt.loss, provider, rng);
      if (!std::isfinite(loss.total)) {
        Restore(codec.params(), good);
        if (!opt.checkpoint_path.empty()) codec.params().Save(opt.checkpoint_path);
        WriteLog(opt.log_path, log);
        Fail(ErrorCode::kDivergence,
             "training diverged (non-finite loss) in phase " +
                 std::to_string(opt.phase) + ", epoch " +
                 std::to_string(epoch + 1));
      }
      Backward(loss.total_tensor);
      adam.Step(codec.params());
      e.loss_total += loss.total;
      e.loss_task += loss.task;
      e.loss_mse += loss.mse;
      e.loss_msssim += loss.msssim;
      e.bpp_estimate += loss.rate_bpp;
      ++steps;
    }
    const double inv = 1.0 / static_cast<double>(steps);
    e.loss_total *= inv;
    e.loss_task *= inv;
    e.loss_mse *= inv;
    e.loss_msssim *= inv;
    e.bpp_estimate *= inv;
    log.push_back(e);
    if (!opt.checkpoint_path.empty()) codec.params().Save(opt.checkpoint_path);
  }
  codec.params().ZeroGrad();
  return log;
}

void TrainProxySegNet(ProxySegNet& net, const std::vector<SyntheticScene>& data,
                      size_t steps, double lr, size_t batch, uint64_t seed) {
  SDVC_CHECK_ARG(!data.empty(), "dataset is empty");
  std::mt19937_64 rng(seed);
  Adam adam(lr);
  net.params().SetRequiresGrad(true);
  std::uniform_int_distribution<size_t> pick(0, data.size() - 1);
  for (size_t step = 0; step < steps; ++step) {
    std::vector<const SyntheticScene*> scenes;
    for (size_t i = 0; i < batch; ++i) scenes.push_back(&data[pick(rng)]);
    const TrainBatch b =
        MakeBatch(scenes, MaskSource::kVariance, 128, 128, rng);
    Backward(net.Loss(b.x, b.labels));
    adam.Step(net.params());
  }
  net.Freeze();
}

TrainResult TrainSchedule(const std::vector<SyntheticScene>& data,
                          const TrainingConfig& cfg,
                          const std::string& out_prefix) {
  cfg.Validate();
  SDVC_CHECK_ARG(!data.empty(), "dataset is empty");
  ScopedPrecision precision(cfg.reference_mode ? Precision::kReference
                                               : Precision::kFast);
  TrainResult result;
  ProxySegNet proxy(cfg.seed + 1);
  TrainProxySegNet(proxy, data, cfg.proxy_steps, cfg.proxy_learning_rate,
                   cfg.batch_size, cfg.seed + 2);
  result.proxy = proxy.params().Clone();
  if (!out_prefix.empty()) proxy.params().Save(out_prefix + ".proxy.sdhc");

  std::mt19937_64 rng(cfg.seed + 3);
  Codec codec(cfg.model, cfg.seed);
  const std::string log_path = out_prefix.empty() ? "" : out_prefix + ".log.csv";

  PhaseOptions p1;
  p1.phase = 1;
  p1.epochs = cfg.epochs_phase1;
  p1.loss = LossKind::kHvs;
  p1.masks = MaskSource::kVariance;
  p1.lambda = cfg.lambda;
  if (!out_prefix.empty()) p1.checkpoint_path = out_prefix + ".phase1.sdhc";
  auto log1 = RunPhase(codec, data, cfg, p1, nullptr, rng);
  result.log = log1;
  WriteLog(log_path, result.log);
  result.phase1 = codec.params().Clone();

  PhaseOptions p2 = p1;
  p2.phase = 2;
  p2.epochs = cfg.epochs_phase2;
  p2.loss = cfg.phase2_loss;
  p2.masks = cfg.mask_source;
  if (!out_prefix.empty()) p2.checkpoint_path = out_prefix + ".phase2.sdhc";
  std::vector<EpochLog> log2;
  try {
    log2 = RunPhase(codec, data, cfg, p2, &proxy, rng);
  } catch (const Error& e) {
    WriteLog(log_path, result.log);
    throw;
  }
  result.log.insert(result.log.end(), log2.begin(), log2.end());
  WriteLog(log_path, result.log);
  result.phase2 = codec.params().Clone();
  return result;
}

}  // namespace sdvc
