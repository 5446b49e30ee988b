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

#ifndef SDVC_TRAINING_H_
#define SDVC_TRAINING_H_

#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sdvc/image.h"
#include "sdvc/latents.h"
#include "sdvc/mask.h"
#include "sdvc/model.h"
#include "sdvc/ms_ssim.h"
#include "sdvc/parameter_store.h"
#include "sdvc/tensor.h"

namespace sdvc {

inline constexpr size_t kNumClasses = 4;  // background + 3 object classes
inline constexpr double kMsSsimWeight = 0.1;

// ---------------------------------------------------------------------------
// Synthetic scenes

struct SyntheticScene {
  Image image;
  AnnotationMap annotations;
  std::vector<DetectionBox> boxes;  // tight, one per instance
  std::vector<uint8_t> labels;      // per-pixel class, 0 = background
  std::vector<int> instance_class;  // class of instance id i + 1
};

inline constexpr size_t kSceneHeight = 256;
inline constexpr size_t kSceneWidth = 512;

// Foliage over a road, with geometric objects standing on the road and
// covering 5-40% of the pixels. Reproducible for a given seed.
std::vector<SyntheticScene> MakeSyntheticDataset(size_t n_scenes,
                                                 uint64_t seed);
SyntheticScene MakeSyntheticScene(std::mt19937_64& rng);
double ObjectFraction(const SyntheticScene& s);

SyntheticScene CropScene(const SyntheticScene& s, size_t y0, size_t x0,
                         size_t h, size_t w);

// ---------------------------------------------------------------------------
// Task networks

class TaskLossProvider {
 public:
  virtual ~TaskLossProvider() = default;
  // Differentiable, non-negative loss of the reconstruction against labels.
  virtual Tensor Loss(const Tensor& x_hat,
                      std::span<const uint8_t> labels) const = 0;
  virtual std::vector<uint8_t> Predict(const Tensor& x) const = 0;
};

// Four convolutions: two stride-2 stages, one stride-1 stage, 4x nearest
// upsampling, then per-pixel class logits.
class ProxySegNet : public TaskLossProvider {
 public:
  static constexpr size_t kWidth = 16;

  explicit ProxySegNet(uint64_t seed);
  explicit ProxySegNet(ParameterStore params);

  Tensor Logits(const Tensor& x) const;
  Tensor Loss(const Tensor& x_hat,
              std::span<const uint8_t> labels) const override;
  std::vector<uint8_t> Predict(const Tensor& x) const override;

  void Freeze() { params_.SetRequiresGrad(false); }
  const ParameterStore& params() const { return params_; }
  ParameterStore& params() { return params_; }

 private:
  ParameterStore params_;
};

// ---------------------------------------------------------------------------
// Losses

struct LossBreakdown {
  Tensor total_tensor;  // differentiable
  double distortion = 0;
  double rate_bpp = 0;   // R, estimated bits per pixel
  double rate_bits = 0;  // summed over the batch
  double total = 0;      // distortion + lambda * rate_bpp
  double lambda = 0;
  double mse = 0;
  double msssim = 0;
  double task = 0;
  size_t clamped = 0;
};

enum class LossKind { kHvs, kVcm };

// mse + 0.1 * (1 - ms_ssim)
Tensor DistortionHvs(const Tensor& x, const Tensor& x_hat,
                     const MsSsimConfig& cfg, double* mse_out = nullptr,
                     double* msssim_out = nullptr);

Tensor MseLoss(const Tensor& a, const Tensor& b);

struct TrainBatch {
  Tensor x;  // [N,3,H,W], H and W multiples of 64
  std::vector<SaliencyMask> masks;
  std::vector<uint8_t> labels;  // N*H*W, used by the task loss
};

// One differentiable train-mode pass with noisy quantization.
LossBreakdown ForwardTrain(const Codec& codec, const TrainBatch& batch,
                           double lambda, LossKind kind,
                           const TaskLossProvider* provider,
                           std::mt19937_64& rng,
                           const MsSsimConfig& ms_cfg = {});

LossBreakdown LossHvs(const Codec& codec, const TrainBatch& batch,
                      double lambda, std::mt19937_64& rng,
                      const MsSsimConfig& ms_cfg = {});
LossBreakdown LossVcm(const Codec& codec, const TrainBatch& batch,
                      double lambda, const TaskLossProvider& provider,
                      std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Optimization

class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  // Updates every parameter that requires a gradient; clears gradients.
  void Step(ParameterStore& params);
  void Reset();
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  size_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  size_t t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

enum class MaskSource { kVariance, kGt };

struct TrainingConfig {
  double lambda = 0.008;
  std::vector<double> lambda_sweep = {0.002, 0.008, 0.032, 0.128};
  double learning_rate = 1e-4;
  size_t batch_size = 8;
  size_t epochs_phase1 = 150;
  size_t epochs_phase2 = 100;
  MaskSource mask_source = MaskSource::kGt;
  LossKind phase2_loss = LossKind::kVcm;
  uint64_t seed = 1;
  size_t crop_height = 192;
  size_t crop_width = 256;
  size_t scenes = 16;
  size_t proxy_steps = 300;
  double proxy_learning_rate = 2e-3;
  bool reference_mode = false;
  ModelConfig model;

  void Validate() const;
};

struct EpochLog {
  size_t epoch = 0;
  int phase = 1;
  double loss_total = 0;
  double loss_task = 0;
  double loss_mse = 0;
  double loss_msssim = 0;
  double bpp_estimate = 0;
};

std::string EpochLogHeader();
std::string FormatEpochLog(const EpochLog& e);

// Draws a random crop of every scene and builds the masks for `source`.
TrainBatch MakeBatch(const std::vector<const SyntheticScene*>& scenes,
                     MaskSource source, size_t crop_h, size_t crop_w,
                     std::mt19937_64& rng);
// Whole-scene batch without cropping (evaluation).
TrainBatch MakeFullBatch(const SyntheticScene& scene, const SaliencyMask& mask);

struct PhaseOptions {
  int phase = 1;
  size_t epochs = 1;
  LossKind loss = LossKind::kHvs;
  MaskSource masks = MaskSource::kVariance;
  double lambda = 0.008;
  // Written after every epoch and on divergence; may be empty.
  std::string checkpoint_path;
  std::string log_path;  // appended CSV; may be empty
};

// Trains `codec` in place. A NaN loss restores the last good parameters,
// writes them to checkpoint_path and throws kDivergence.
std::vector<EpochLog> RunPhase(Codec& codec,
                               const std::vector<SyntheticScene>& data,
                               const TrainingConfig& cfg,
                               const PhaseOptions& opt,
                               const TaskLossProvider* provider,
                               std::mt19937_64& rng);

void TrainProxySegNet(ProxySegNet& net, const std::vector<SyntheticScene>& data,
                      size_t steps, double lr, size_t batch, uint64_t seed);

struct TrainResult {
  ParameterStore phase1;
  ParameterStore phase2;
  ParameterStore proxy;
  std::vector<EpochLog> log;
};

// Phase 1: HVS loss with variance masks. Phase 2, starting from the phase-1
// weights with fresh optimizer state: the configured loss and mask source.
// Checkpoints go to <out_prefix>.phase{1,2}.sdhc and the log to
// <out_prefix>.log.csv when out_prefix is non-empty.
TrainResult TrainSchedule(const std::vector<SyntheticScene>& data,
                          const TrainingConfig& cfg,
                          const std::string& out_prefix);

// ---------------------------------------------------------------------------
// Config files

TrainingConfig LoadTrainingConfig(const std::string& path);
std::string TrainingConfigToIni(const TrainingConfig& cfg);

}  // namespace sdvc

#endif  // SDVC_TRAINING_H_
