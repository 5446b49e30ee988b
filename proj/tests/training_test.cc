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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "sdvc/common.h"
#include "sdvc/entropy_model.h"
#include "sdvc/ms_ssim.h"
#include "sdvc/ops.h"
#include "sdvc/training.h"
#include "test_util.h"

namespace sdvc {
namespace {

using testing::RandomTensor;
using testing::TinyConfig;

MsSsimConfig ThreeScales() {
  MsSsimConfig c;
  c.scales = 3;
  return c;
}

// Trailing moving average.
std::vector<double> Smooth(const std::vector<double>& v, size_t window) {
  std::vector<double> out;
  for (size_t i = 0; i + window <= v.size(); ++i) {
    out.push_back(std::accumulate(v.begin() + i, v.begin() + i + window, 0.0) /
                  window);
  }
  return out;
}

TrainBatch OneCrop(const SyntheticScene& scene, MaskSource src, size_t h,
                   size_t w, uint64_t seed) {
  std::mt19937_64 rng(seed);
  return MakeBatch({&scene}, src, h, w, rng);
}

TEST(Distortion, IdenticalImagesHaveZeroDistortion) {
  std::mt19937_64 rng(1);
  const Tensor x = RandomTensor({1, 3, 160, 160}, rng, 0, 1);
  EXPECT_NEAR(DistortionHvs(x, x, {}).item(), 0.0, 1e-12);
}

TEST(Distortion, WeightedSumOfTerms) {
  // mse 0.01 and 1 - ms_ssim = 0.1.
  EXPECT_DOUBLE_EQ(0.01 + kMsSsimWeight * 0.1, 0.02);
  std::mt19937_64 rng(2);
  for (int t = 0; t < 3; ++t) {
    const Tensor x = RandomTensor({1, 3, 160, 176}, rng, 0, 1);
    const Tensor y = RandomTensor({1, 3, 160, 176}, rng, 0, 1);
    double mse = 0, ms = 0;
    const double d = DistortionHvs(x, y, {}, &mse, &ms).item();
    const double manual_mse = MseLoss(x, y).item();
    const double manual_ms = MsSsim(x, y).item();
    EXPECT_EQ(mse, manual_mse);
    EXPECT_EQ(ms, manual_ms);
    EXPECT_DOUBLE_EQ(d, manual_mse + 0.1 * (1.0 - manual_ms));
  }
}

class LossTest : public ::testing::Test {
 protected:
  void SetUp() override {
    scenes_ = MakeSyntheticDataset(2, 5);
    batch_ = OneCrop(scenes_[0], MaskSource::kGt, 64, 128, 6);
  }
  LossBreakdown Run(double lambda, LossKind kind = LossKind::kHvs,
                    const TaskLossProvider* provider = nullptr) {
    std::mt19937_64 noise(7);
    return ForwardTrain(codec_, batch_, lambda, kind, provider, noise,
                        ThreeScales());
  }

  ScopedPrecision precision_{Precision::kReference};
  Codec codec_{TinyConfig(), 8};
  std::vector<SyntheticScene> scenes_;
  TrainBatch batch_;
};

TEST_F(LossTest, ZeroLambdaLeavesDistortionOnly) {
  const LossBreakdown l = Run(0.0);
  EXPECT_EQ(l.total, l.distortion);
  EXPECT_GT(l.rate_bpp, 0.0);
}

TEST_F(LossTest, DoublingLambdaDoublesTheRateTerm) {
  const LossBreakdown a = Run(0.05), b = Run(0.1);
  EXPECT_EQ(a.distortion, b.distortion);
  EXPECT_EQ(a.rate_bpp, b.rate_bpp);
  EXPECT_NEAR(b.total - b.distortion, 2 * (a.total - a.distortion), 1e-15);
}

TEST_F(LossTest, TotalIdentityHolds) {
  for (double lambda : {0.002, 0.008, 0.032, 0.128, 3.0}) {
    const LossBreakdown l = Run(lambda);
    EXPECT_NEAR(l.total - l.distortion - lambda * l.rate_bpp, 0.0, 1e-12);
    EXPECT_TRUE(std::isfinite(l.total));
    EXPECT_GT(l.total, 0.0);
  }
}

TEST_F(LossTest, TrainingRateMatchesEstimateRate) {
  std::mt19937_64 noise(7);
  const LatentSet latents =
      codec_.Encode(batch_.x, batch_.masks, Mode::kTrain, &noise);
  const RateEstimate r = EstimateRate(latents, codec_.params());
  const LossBreakdown l = Run(0.01);
  EXPECT_EQ(l.rate_bits, r.bits.item());
  EXPECT_EQ(l.rate_bpp, r.bits.item() / (64.0 * 128.0));
}

TEST_F(LossTest, NegativeLambdaIsRejected) {
  EXPECT_THROW(Run(-1.0), Error);
}

// Records the reconstruction it scores.
class SpyProvider : public TaskLossProvider {
 public:
  explicit SpyProvider(const ProxySegNet& net) : net_(net) {}
  Tensor Loss(const Tensor& x_hat,
              std::span<const uint8_t> labels) const override {
    seen = x_hat.Detach();
    return net_.Loss(x_hat, labels);
  }
  std::vector<uint8_t> Predict(const Tensor& x) const override {
    return net_.Predict(x);
  }
  mutable Tensor seen;

 private:
  const ProxySegNet& net_;
};

TEST_F(LossTest, FrozenProviderReceivesNoGradient) {
  ProxySegNet proxy(10);
  proxy.Freeze();
  codec_.params().SetRequiresGrad(true);
  const LossBreakdown l = Run(0.01, LossKind::kVcm, &proxy);
  Backward(l.total_tensor);
  for (const auto& [name, t] : proxy.params().entries()) {
    for (double g : t.grad()) EXPECT_EQ(g, 0.0) << name;
  }
  double codec_grad = 0;
  for (const auto& [name, t] : codec_.params().entries()) {
    for (double g : t.grad()) codec_grad += std::fabs(g);
  }
  EXPECT_GT(codec_grad, 0.0);
}

TEST_F(LossTest, TaskTermIsProviderOnReconstruction) {
  ProxySegNet proxy(11);
  proxy.Freeze();
  const SpyProvider spy(proxy);
  const LossBreakdown l = Run(0.01, LossKind::kVcm, &spy);
  ASSERT_TRUE(spy.seen.defined());
  EXPECT_EQ(spy.seen.shape(), batch_.x.shape());
  EXPECT_EQ(l.task, proxy.Loss(spy.seen, batch_.labels).item());
  EXPECT_EQ(l.distortion, l.task);
  // With a perfect reconstruction the term is the provider's loss on x.
  EXPECT_EQ(proxy.Loss(batch_.x, batch_.labels).item(),
            spy.Loss(batch_.x, batch_.labels).item());
  EXPECT_GE(l.task, 0.0);
}

TEST(Overfit, FiftyStepsOnOneImageDecreaseTheLoss) {
  const auto scenes = MakeSyntheticDataset(1, 12);
  const TrainBatch batch = OneCrop(scenes[0], MaskSource::kGt, 64, 64, 13);
  Codec codec(TinyConfig(), 14);
  codec.params().SetRequiresGrad(true);
  Adam adam(1e-3);
  std::mt19937_64 noise(15);
  std::vector<double> totals;
  for (int step = 0; step < 50; ++step) {
    const LossBreakdown l = ForwardTrain(codec, batch, 0.01, LossKind::kHvs,
                                         nullptr, noise, ThreeScales());
    totals.push_back(l.total);
    Backward(l.total_tensor);
    adam.Step(codec.params());
  }
  const auto smooth = Smooth(totals, 5);
  for (size_t i = 1; i < smooth.size(); ++i) {
    EXPECT_LT(smooth[i], smooth[i - 1]) << "step " << i;
  }
  EXPECT_LT(totals.back(), totals.front());
}

TEST(Overfit, TaskTermDecreasesOnOneScene) {
  const auto scenes = MakeSyntheticDataset(1, 16);
  const TrainBatch batch = OneCrop(scenes[0], MaskSource::kGt, 64, 128, 17);
  ProxySegNet proxy(18);
  TrainProxySegNet(proxy, scenes, 30, 2e-3, 1, 19);
  Codec codec(TinyConfig(), 20);
  codec.params().SetRequiresGrad(true);
  Adam adam(1e-3);
  std::mt19937_64 noise(21);
  std::vector<double> task;
  for (int step = 0; step < 200; ++step) {
    const LossBreakdown l =
        ForwardTrain(codec, batch, 0.001, LossKind::kVcm, &proxy, noise);
    task.push_back(l.task);
    Backward(l.total_tensor);
    adam.Step(codec.params());
  }
  const double head = std::accumulate(task.begin(), task.begin() + 10, 0.0);
  const double tail = std::accumulate(task.end() - 10, task.end(), 0.0);
  EXPECT_LT(tail, head);
}

TrainingConfig SmallSchedule() {
  TrainingConfig cfg;
  cfg.model = TinyConfig();
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 2;
  cfg.epochs_phase1 = 8;
  cfg.epochs_phase2 = 8;
  cfg.proxy_steps = 20;
  cfg.scenes = 4;
  cfg.reference_mode = true;
  cfg.seed = 22;
  return cfg;
}

TEST(Schedule, PhaseTwoStartsFromPhaseOne) {
  const auto data = MakeSyntheticDataset(2, 23);
  TrainingConfig cfg = SmallSchedule();
  cfg.epochs_phase1 = 1;
  cfg.epochs_phase2 = 0;
  const TrainResult r = TrainSchedule(data, cfg, "");
  EXPECT_EQ(r.phase1.Hash(), r.phase2.Hash());
  EXPECT_NE(r.phase1.Hash(), Codec(cfg.model, cfg.seed).Hash());
}

TEST(Schedule, SmoothedLossDecreasesInBothPhases) {
  const auto data = MakeSyntheticDataset(4, 24);
  const TrainingConfig cfg = SmallSchedule();
  const TrainResult r = TrainSchedule(data, cfg, "");
  ASSERT_EQ(r.log.size(), 16u);
  for (int phase : {1, 2}) {
    std::vector<double> totals;
    for (const EpochLog& e : r.log) {
      if (e.phase == phase) totals.push_back(e.loss_total);
    }
    const auto smooth = Smooth(totals, 3);
    EXPECT_LT(smooth.back(), smooth.front()) << "phase " << phase;
  }
}

TEST(Schedule, ReferenceModeIsReproducible) {
  const auto data = MakeSyntheticDataset(2, 25);
  TrainingConfig cfg = SmallSchedule();
  cfg.epochs_phase1 = 2;
  cfg.epochs_phase2 = 2;
  testing::TempDir dir("sched");
  const TrainResult a = TrainSchedule(data, cfg, dir.File("a"));
  const TrainResult b = TrainSchedule(data, cfg, dir.File("b"));
  EXPECT_EQ(a.phase1.Hash(), b.phase1.Hash());
  EXPECT_EQ(a.phase2.Hash(), b.phase2.Hash());
  EXPECT_EQ(a.proxy.Hash(), b.proxy.Hash());
  EXPECT_EQ(ParameterStore::Load(dir.File("a.phase2.sdhc")).Hash(),
            a.phase2.Hash());
  EXPECT_TRUE(std::filesystem::exists(dir.File("a.log.csv")));
}

TEST(Schedule, ConfigValidation) {
  TrainingConfig cfg;
  EXPECT_NO_THROW(cfg.Validate());
  cfg.lambda = 0;
  EXPECT_THROW(cfg.Validate(), Error);
  cfg.lambda = -0.5;
  EXPECT_THROW(cfg.Validate(), Error);
  cfg = TrainingConfig();
  cfg.lambda_sweep = {0.1, 0.0};
  EXPECT_THROW(cfg.Validate(), Error);
  cfg = TrainingConfig();
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.Validate(), Error);
}

TEST(Schedule, ConfigIniRoundTrip) {
  TrainingConfig cfg = SmallSchedule();
  cfg.lambda = 0.032;
  cfg.mask_source = MaskSource::kVariance;
  testing::TempDir dir("ini");
  const std::string path = dir.File("train.ini");
  {
    std::ofstream f(path);
    f << TrainingConfigToIni(cfg);
  }
  const TrainingConfig back = LoadTrainingConfig(path);
  EXPECT_EQ(TrainingConfigToIni(back), TrainingConfigToIni(cfg));
}

class NanProvider : public TaskLossProvider {
 public:
  Tensor Loss(const Tensor& x_hat, std::span<const uint8_t>) const override {
    return AddScalar(MulScalar(Mean(x_hat), 0.0),
                     std::numeric_limits<double>::quiet_NaN());
  }
  std::vector<uint8_t> Predict(const Tensor& x) const override {
    return std::vector<uint8_t>(x.dim(0) * x.dim(2) * x.dim(3), 0);
  }
};

TEST(Schedule, DivergenceKeepsLastGoodCheckpoint) {
  const auto data = MakeSyntheticDataset(2, 26);
  TrainingConfig cfg = SmallSchedule();
  Codec codec(cfg.model, 27);
  const uint64_t before = codec.Hash();
  testing::TempDir dir("nan");
  PhaseOptions opt;
  opt.phase = 2;
  opt.epochs = 2;
  opt.loss = LossKind::kVcm;
  opt.masks = MaskSource::kGt;
  opt.lambda = 0.01;
  opt.checkpoint_path = dir.File("ckpt.sdhc");
  const NanProvider nan;
  std::mt19937_64 rng(28);
  try {
    RunPhase(codec, data, cfg, opt, &nan, rng);
    FAIL() << "no divergence reported";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDivergence);
  }
  EXPECT_EQ(codec.Hash(), before);
  EXPECT_EQ(ParameterStore::Load(opt.checkpoint_path).Hash(), before);
}

TEST(Dataset, SameSeedIsIdentical) {
  const auto a = MakeSyntheticDataset(3, 29);
  const auto b = MakeSyntheticDataset(3, 29);
  const auto c = MakeSyntheticDataset(3, 30);
  for (size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(a[i].image, b[i].image);
    EXPECT_EQ(a[i].annotations.ids, b[i].annotations.ids);
    EXPECT_EQ(a[i].labels, b[i].labels);
  }
  EXPECT_NE(a[0].image, c[0].image);
}

TEST(Dataset, SceneGeometry) {
  for (const auto& s : MakeSyntheticDataset(20, 31)) {
    EXPECT_EQ(s.image.height, kSceneHeight);
    EXPECT_EQ(s.image.width, kSceneWidth);
    const double f = ObjectFraction(s);
    EXPECT_GE(f, 0.05);
    EXPECT_LE(f, 0.40);
    for (uint8_t l : s.labels) EXPECT_LT(l, kNumClasses);
    for (double v : s.image.data) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Dataset, BoxesTightlyBoundInstances) {
  for (const auto& s : MakeSyntheticDataset(10, 32)) {
    const AnnotationMap& ann = s.annotations;
    ASSERT_EQ(s.boxes.size(), s.instance_class.size());
    for (size_t k = 0; k < s.boxes.size(); ++k) {
      const uint16_t id = static_cast<uint16_t>(k + 1);
      size_t x1 = ann.width, y1 = ann.height, x2 = 0, y2 = 0, count = 0;
      for (size_t y = 0; y < ann.height; ++y) {
        for (size_t x = 0; x < ann.width; ++x) {
          if (ann.ids[y * ann.width + x] != id) continue;
          x1 = std::min(x1, x);
          y1 = std::min(y1, y);
          x2 = std::max(x2, x + 1);
          y2 = std::max(y2, y + 1);
          ++count;
        }
      }
      ASSERT_GT(count, 0u);
      EXPECT_EQ(s.boxes[k].x1, double(x1));
      EXPECT_EQ(s.boxes[k].y1, double(y1));
      EXPECT_EQ(s.boxes[k].x2, double(x2));
      EXPECT_EQ(s.boxes[k].y2, double(y2));
    }
    for (size_t i = 0; i < ann.ids.size(); ++i) {
      const uint16_t id = ann.ids[i];
      if (id == 0) {
        EXPECT_EQ(s.labels[i], 0);
      } else {
        EXPECT_EQ(s.labels[i], s.instance_class[id - 1]);
      }
    }
  }
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParameterStore store;
  store.Add("w", {3}, {1.0, -2.0, 0.5});
  store.SetRequiresGrad(true);
  Tensor w = store.Get("w");
  Backward(Sum(Mul(w, Tensor::FromData({3}, {3.0, -0.1, 0.0}))));
  Adam adam(0.01);
  adam.Step(store);
  const Tensor& after = store.Get("w");
  EXPECT_NEAR(after[0], 1.0 - 0.01, 1e-9);
  EXPECT_NEAR(after[1], -2.0 + 0.01, 1e-9);
  EXPECT_EQ(after[2], 0.5);
  EXPECT_FALSE(after.has_grad());
}

}  // namespace
}  // namespace sdvc
