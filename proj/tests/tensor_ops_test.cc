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

#include <cmath>
#include <cstring>
#include <random>

#include "sdvc/common.h"
#include "sdvc/ops.h"
#include "sdvc/parameter_store.h"
#include "sdvc/tensor.h"
#include "test_util.h"

namespace sdvc {
namespace {

using testing::RandomTensor;

// Direct loop convolution, zero padding.
std::vector<double> LoopConv(const Tensor& x, const Tensor& w, const Tensor& b,
                             size_t stride, size_t pad, size_t* oh_out,
                             size_t* ow_out) {
  const size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const size_t co = w.dim(0), k = w.dim(2);
  const size_t oh = (h + 2 * pad - k) / stride + 1;
  const size_t ow = (wd + 2 * pad - k) / stride + 1;
  std::vector<double> out(n * co * oh * ow, 0.0);
  for (size_t in = 0; in < n; ++in)
    for (size_t o = 0; o < co; ++o)
      for (size_t y = 0; y < oh; ++y)
        for (size_t xo = 0; xo < ow; ++xo) {
          double acc = b.defined() ? b[o] : 0.0;
          for (size_t c = 0; c < ci; ++c)
            for (size_t ky = 0; ky < k; ++ky)
              for (size_t kx = 0; kx < k; ++kx) {
                const long iy = static_cast<long>(y * stride + ky) -
                                static_cast<long>(pad);
                const long ix = static_cast<long>(xo * stride + kx) -
                                static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) ||
                    ix >= static_cast<long>(wd)) {
                  continue;
                }
                acc += x[((in * ci + c) * h + iy) * wd + ix] *
                       w[((o * ci + c) * k + ky) * k + kx];
              }
          out[((in * co + o) * oh + y) * ow + xo] = acc;
        }
  *oh_out = oh;
  *ow_out = ow;
  return out;
}

double Dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

TEST(Conv2D, IdentityScalar) {
  ScopedPrecision p(Precision::kReference);
  const Tensor x = Tensor::FromData({1, 1, 1, 1}, {3.0});
  const Tensor w = Tensor::FromData({1, 1, 1, 1}, {1.0});
  const Tensor y = Conv2D(x, LayerSpec::Conv(1, 1, 1), w, Tensor());
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y[0], 3.0);
}

TEST(Conv2D, ConstantFieldCenterIsNine) {
  ScopedPrecision p(Precision::kReference);
  const Tensor x = Tensor::Full({1, 1, 4, 4}, 1.0);
  const Tensor w = Tensor::Full({1, 1, 3, 3}, 1.0);
  const Tensor y = Conv2D(x, LayerSpec::Conv(1, 3, 1), w, Tensor());
  ASSERT_EQ(y.shape(), (Shape{1, 1, 4, 4}));
  for (size_t r = 1; r < 3; ++r) {
    for (size_t c = 1; c < 3; ++c) EXPECT_EQ(y[r * 4 + c], 9.0);
  }
  EXPECT_EQ(y[0], 4.0);
}

TEST(Conv2D, MatchesLoopOracleRandom2x3x8x8) {
  ScopedPrecision p(Precision::kReference);
  std::mt19937_64 rng(7);
  const Tensor x = RandomTensor({2, 3, 8, 8}, rng);
  const Tensor w = RandomTensor({4, 3, 3, 3}, rng);
  const Tensor b = RandomTensor({4}, rng);
  const Tensor y = Conv2D(x, LayerSpec::Conv(4, 3, 1), w, b);
  size_t oh, ow;
  const auto ref = LoopConv(x, w, b, 1, 1, &oh, &ow);
  ASSERT_EQ(y.shape(), (Shape{2, 4, oh, ow}));
  for (size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

// Every kernel/stride combination the codec and task network use.
TEST(Conv2D, MatchesLoopOracleForCodecLayerSpecs) {
  ScopedPrecision p(Precision::kReference);
  std::mt19937_64 rng(11);
  for (size_t k : {1, 3, 5}) {
    for (size_t s : {1, 2}) {
      for (size_t hw : {5, 8, 13}) {
        const Tensor x = RandomTensor({1, 2, hw, hw + 3}, rng);
        const Tensor w = RandomTensor({3, 2, k, k}, rng);
        const Tensor b = RandomTensor({3}, rng);
        const Tensor y = Conv2D(x, LayerSpec::Conv(3, k, s), w, b);
        size_t oh, ow;
        const auto ref = LoopConv(x, w, b, s, k / 2, &oh, &ow);
        ASSERT_EQ(y.shape(), (Shape{1, 3, oh, ow}));
        double worst = 0;
        for (size_t i = 0; i < ref.size(); ++i) {
          worst = std::max(worst, std::fabs(y[i] - ref[i]));
        }
        EXPECT_LT(worst, 1e-12) << "k=" << k << " s=" << s << " hw=" << hw;
      }
    }
  }
}

TEST(Conv2D, FastModeStaysCloseToReference) {
  std::mt19937_64 rng(3);
  const Tensor x = RandomTensor({1, 4, 16, 16}, rng);
  const Tensor w = RandomTensor({4, 4, 5, 5}, rng);
  const Tensor b = RandomTensor({4}, rng);
  Tensor ref, fast;
  {
    ScopedPrecision p(Precision::kReference);
    ref = Conv2D(x, LayerSpec::Conv(4, 5, 2), w, b);
  }
  {
    ScopedPrecision p(Precision::kFast);
    fast = Conv2D(x, LayerSpec::Conv(4, 5, 2), w, b);
  }
  for (size_t i = 0; i < ref.numel(); ++i) EXPECT_NEAR(fast[i], ref[i], 1e-4);
}

TEST(LayerSpec, RejectsEvenKernelAndBadStride) {
  EXPECT_THROW(LayerSpec::Conv(1, 4, 1).Validate(), Error);
  EXPECT_THROW(LayerSpec::Conv(1, 3, 3).Validate(), Error);
  EXPECT_NO_THROW(LayerSpec::Conv(1, 5, 2).Validate());
}

TEST(TConv2D, SinglePixelTwoByTwoKernel) {
  ScopedPrecision p(Precision::kReference);
  const Tensor x = Tensor::FromData({1, 1, 1, 1}, {1.0});
  const Tensor w = Tensor::Full({1, 1, 2, 2}, 1.0);
  LayerSpec spec{LayerKind::kTConv, 1, 2, 2, 0, 0};
  const Tensor y = TConv2D(x, spec, w, Tensor());
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  for (size_t i = 0; i < 4; ++i) EXPECT_EQ(y[i], 1.0);
}

TEST(TConv2D, DoublesSpatialShape) {
  std::mt19937_64 rng(5);
  const Tensor x = RandomTensor({1, 3, 8, 16}, rng);
  const Tensor w = RandomTensor({3, 6, 5, 5}, rng);
  const Tensor y = TConv2D(x, LayerSpec::TConv(6, 5, 2), w, Tensor());
  EXPECT_EQ(y.shape(), (Shape{1, 6, 16, 32}));
}

TEST(TConv2D, IsAdjointOfConv1x1x4x4) {
  ScopedPrecision p(Precision::kReference);
  std::mt19937_64 rng(9);
  const Tensor x = RandomTensor({1, 1, 4, 4}, rng);
  for (size_t s : {1, 2}) {
    const Tensor w = RandomTensor({1, 1, 3, 3}, rng);
    const Tensor cx = Conv2D(x, LayerSpec::Conv(1, 3, s), w, Tensor());
    const Tensor y = RandomTensor(cx.shape(), rng);
    // A tconv weight [in=1, out=1] is the same array as conv's [out=1, in=1].
    const Tensor ty = TConv2D(y, LayerSpec::TConv(1, 3, s), w, Tensor());
    ASSERT_EQ(ty.shape(), x.shape());
    EXPECT_NEAR(Dot(cx.values(), y.values()), Dot(x.values(), ty.values()),
                1e-12);
  }
}

TEST(TConv2D, AdjointPropertyOverRandomShapes) {
  ScopedPrecision p(Precision::kReference);
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<size_t> side(2, 9), ch(1, 4);
  for (int trial = 0; trial < 40; ++trial) {
    const size_t k = (trial % 3) * 2 + 1, s = 1 + trial % 2;
    const size_t ci = ch(rng), co = ch(rng);
    const size_t h = side(rng) * s, w = side(rng) * s;
    const Tensor x = RandomTensor({2, ci, h, w}, rng);
    const Tensor wc = RandomTensor({co, ci, k, k}, rng);
    const Tensor cx = Conv2D(x, LayerSpec::Conv(co, k, s), wc, Tensor());
    const Tensor y = RandomTensor(cx.shape(), rng);
    const Tensor ty = TConv2D(y, LayerSpec::TConv(ci, k, s), wc, Tensor());
    ASSERT_EQ(ty.shape(), x.shape());
    const double lhs = Dot(cx.values(), y.values());
    const double rhs = Dot(x.values(), ty.values());
    EXPECT_NEAR(lhs, rhs, 1e-10 * std::max(1.0, std::fabs(lhs)));
  }
}

TEST(Activation, Definition) {
  const Tensor x = Tensor::FromData({3}, {0.0, 2.5, -2.0});
  const Tensor y = LeakyRelu(x);
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 2.5);
  EXPECT_DOUBLE_EQ(y[2], -0.02);
}

TEST(Activation, GradientAtMinusOne) {
  const Tensor x = Tensor::Parameter({1}, {-1.0});
  Backward(Sum(LeakyRelu(x)));
  const double h = 1e-6;
  const double fd = ((-1.0 + h) * 0.01 - (-1.0 - h) * 0.01) / (2 * h);
  EXPECT_NEAR(x.grad()[0], 0.01, 1e-15);
  EXPECT_NEAR(x.grad()[0], fd, 1e-6 * 0.01);
}

TEST(Concat, ShapeAndSliceBack) {
  std::mt19937_64 rng(1);
  const Tensor a = RandomTensor({1, 2, 4, 4}, rng);
  const Tensor b = RandomTensor({1, 3, 4, 4}, rng);
  EXPECT_EQ(ConcatChannels(a, b).shape(), (Shape{1, 5, 4, 4}));
  const Tensor back = SliceChannels(ConcatChannels(a, Tensor::Zeros(a.shape())), 0, 2);
  EXPECT_EQ(back.shape(), a.shape());
  for (size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(back[i], a[i]);
}

TEST(Concat, GradientRoutesSlicesExactly) {
  std::mt19937_64 rng(2);
  const Tensor a = testing::RandomParameter({2, 2, 3, 3}, rng);
  const Tensor b = testing::RandomParameter({2, 1, 3, 3}, rng);
  const Tensor up = RandomTensor({2, 3, 3, 3}, rng);
  Backward(Sum(Mul(ConcatChannels(a, b), up)));
  for (size_t n = 0; n < 2; ++n) {
    for (size_t p = 0; p < 9; ++p) {
      EXPECT_EQ(a.grad()[(n * 2 + 0) * 9 + p], up[(n * 3 + 0) * 9 + p]);
      EXPECT_EQ(a.grad()[(n * 2 + 1) * 9 + p], up[(n * 3 + 1) * 9 + p]);
      EXPECT_EQ(b.grad()[n * 9 + p], up[(n * 3 + 2) * 9 + p]);
    }
  }
}

TEST(ReduceMse, Examples) {
  std::mt19937_64 rng(4);
  const Tensor a = RandomTensor({1, 3, 5, 7}, rng);
  EXPECT_EQ(Mean(Square(Sub(a, a))).item(), 0.0);
  const Tensor z = Tensor::FromData({2}, {0, 0});
  const Tensor o = Tensor::FromData({2}, {1, 1});
  EXPECT_EQ(Mean(Square(Sub(z, o))).item(), 1.0);
  const Tensor b = RandomTensor(a.shape(), rng);
  double ref = 0;
  for (size_t i = 0; i < a.numel(); ++i) ref += (a[i] - b[i]) * (a[i] - b[i]);
  ref /= static_cast<double>(a.numel());
  EXPECT_NEAR(Mean(Square(Sub(a, b))).item(), ref, 1e-12);
}

TEST(Tensor, ShapeAndGradientInvariants) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<size_t> d(1, 5);
  for (int t = 0; t < 20; ++t) {
    const Shape s{d(rng), d(rng), d(rng), d(rng)};
    const Tensor x = testing::RandomParameter(s, rng);
    EXPECT_EQ(NumElements(s), x.numel());
    Backward(Sum(Square(x)));
    ASSERT_TRUE(x.has_grad());
    EXPECT_EQ(x.grad().size(), x.numel());
  }
  EXPECT_THROW(Tensor::FromData({2, 2}, {1.0, 2.0, 3.0}), Error);
}

TEST(ParameterStore, RoundTripIsBitExact) {
  std::mt19937_64 rng(12);
  ParameterStore s;
  s.AddHeUniform("a.w", {3, 2, 5, 5}, 50, rng);
  s.Add("a.b", {3}, {1e-300, -0.0, std::nextafter(1.0, 2.0)});
  s.AddConstant("c", {2, 2}, 0.1);
  const ParameterStore back = ParameterStore::Deserialize(s.Serialize());
  ASSERT_EQ(back.size(), s.size());
  for (const auto& [name, t] : s.entries()) {
    const Tensor& u = back.Get(name);
    ASSERT_EQ(u.shape(), t.shape());
    EXPECT_EQ(std::memcmp(u.values().data(), t.values().data(),
                          t.numel() * sizeof(double)),
              0);
  }
  EXPECT_EQ(back.Hash(), s.Hash());

  testing::TempDir dir("store");
  s.Save(dir.File("p.sdhc"));
  EXPECT_EQ(ParameterStore::Load(dir.File("p.sdhc")).Serialize(), s.Serialize());
}

TEST(ParameterStore, NamesAreUnique) {
  ParameterStore s;
  s.AddConstant("x", {1}, 0.0);
  EXPECT_THROW(s.AddConstant("x", {1}, 0.0), Error);
}

TEST(ParameterStore, TruncatedFileIsAModelError) {
  ParameterStore s;
  s.AddConstant("x", {4}, 1.0);
  auto bytes = s.Serialize();
  bytes.resize(bytes.size() - 3);
  try {
    ParameterStore::Deserialize(bytes);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_TRUE(e.code() == ErrorCode::kModel ||
                e.code() == ErrorCode::kCorruption);
  }
}

TEST(Round, HalfAwayFromZero) {
  const Tensor x = Tensor::FromData({6}, {0.4, -1.5, 1.5, -0.4, 2.5, -2.5});
  const Tensor y = Round(x);
  const double want[] = {0, -2, 2, 0, 3, -3};
  for (size_t i = 0; i < 6; ++i) EXPECT_EQ(y[i], want[i]) << i;
}

}  // namespace
}  // namespace sdvc
