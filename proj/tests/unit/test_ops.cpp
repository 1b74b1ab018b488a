#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "checks.hpp"
#include "dbnet/ops.hpp"

using namespace dbnet;
using dbnet::testing::random_tensor;
using ops::ConvOptions;
using ops::Padding;
using ops::PoolMode;

namespace {

Var<double> row(std::vector<double> values) {
  const std::size_t n = values.size();
  return Var<double>(Tensor<double>(Shape{1, 1, 1, n}, std::move(values)));
}

std::vector<double> values(const Var<double>& v) { return {v.value().data().begin(), v.value().data().end()}; }

/// Direct evaluation of out[b,o,i,j] = sum over c,p,q of x * k with explicit
/// zero padding offsets (pad_top, pad_left).
Tensor<double> conv_oracle(const Tensor<double>& x, const Tensor<double>& k, std::size_t groups, std::size_t dh,
                           std::size_t dw, long pad_top, long pad_left, std::size_t oh, std::size_t ow) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = k.dim(0), CG = k.dim(1), KH = k.dim(2), KW = k.dim(3);
  const std::size_t per_group_out = O / groups;
  Tensor<double> y(Shape{B, O, oh, ow});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = 0;
          const std::size_t g = o / per_group_out;
          for (std::size_t c = 0; c < CG; ++c)
            for (std::size_t p = 0; p < KH; ++p)
              for (std::size_t q = 0; q < KW; ++q) {
                const long r = static_cast<long>(i + p * dh) - pad_top;
                const long s = static_cast<long>(j + q * dw) - pad_left;
                if (r < 0 || s < 0 || r >= static_cast<long>(H) || s >= static_cast<long>(W)) continue;
                acc += x.at({b, g * CG + c, std::size_t(r), std::size_t(s)}) * k.at({o, c, p, q});
              }
          y.at({b, o, i, j}) = acc;
        }
  (void)C;
  return y;
}

void expect_near(const Tensor<double>& a, const Tensor<double>& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "at " << i;
}

}  // namespace

TEST(Conv2d, UnitKernelScales) {
  const auto y = ops::conv2d<double>(nullptr, row({1, 2, 3}), row({2}), ConvOptions{});
  EXPECT_EQ(values(y), (std::vector<double>{2, 4, 6}));
}

TEST(Conv2d, CausalLeftPadsByKernelSpan) {
  const auto y = ops::conv2d<double>(nullptr, row({1, 1, 1, 1}), row({1, 1}), ConvOptions{Padding::Causal});
  EXPECT_EQ(values(y), (std::vector<double>{1, 2, 2, 2}));
}

TEST(Conv2d, CausalDilationTwo) {
  const auto y =
      ops::conv2d<double>(nullptr, row({1, 0, 0, 0, 1}), row({1, 1}), ConvOptions{Padding::Causal, 1, 2, 1});
  EXPECT_EQ(values(y), (std::vector<double>{1, 0, 1, 0, 1}));
}

TEST(Conv2d, SameAndCausalPreserveExtent) {
  const Tensor<double> x = random_tensor({2, 3, 5, 11}, 1);
  for (std::size_t kw : {1, 2, 3, 4, 7}) {
    for (std::size_t dil : {1, 2, 3}) {
      const Var<double> k(random_tensor({2, 3, 3, kw}, kw * 10 + dil));
      const auto same = ops::conv2d<double>(nullptr, Var<double>(x), k, ConvOptions{Padding::Same, 1, dil, 1});
      EXPECT_EQ(same.shape(), (Shape{2, 2, 5, 11}));
      const Var<double> k1(random_tensor({2, 3, 1, kw}, kw));
      const auto causal = ops::conv2d<double>(nullptr, Var<double>(x), k1, ConvOptions{Padding::Causal, 1, dil, 1});
      EXPECT_EQ(causal.shape(), (Shape{2, 2, 5, 11}));
    }
  }
}

TEST(Conv2d, MatchesDirectLoopOracle) {
  const Tensor<double> x = random_tensor({2, 4, 5, 9}, 2);
  struct Case {
    ConvOptions opt;
    Shape kernel;
    long pad_top, pad_left;
    std::size_t oh, ow;
  };
  const std::vector<Case> cases{
      {{Padding::Valid, 1, 1, 1}, {3, 4, 2, 3}, 0, 0, 4, 7},
      {{Padding::Valid, 2, 3, 1}, {2, 4, 2, 2}, 0, 0, 3, 6},
      {{Padding::Same, 1, 1, 1}, {3, 4, 3, 4}, 1, 1, 5, 9},   // width span 4: 1 leading, 2 trailing
      {{Padding::Same, 1, 2, 1}, {2, 4, 1, 3}, 0, 2, 5, 9},   // dilated span 5: 2 each side
      {{Padding::Causal, 1, 2, 1}, {2, 4, 1, 3}, 0, 4, 5, 9},  // left pad (3-1)*2
      {{Padding::Valid, 1, 1, 2}, {4, 2, 5, 1}, 0, 0, 1, 9},   // grouped, electrode-spanning
      {{Padding::Valid, 1, 1, 4}, {8, 1, 5, 1}, 0, 0, 1, 9},   // depthwise multiplier 2
  };
  for (const auto& c : cases) {
    const Tensor<double> k = random_tensor(c.kernel, c.kernel[0] * 31 + c.kernel[3]);
    const auto y = ops::conv2d<double>(nullptr, Var<double>(x), Var<double>(k), c.opt);
    expect_near(y.value(), conv_oracle(x, k, c.opt.groups, c.opt.dilation_h, c.opt.dilation_w, c.pad_top,
                                       c.pad_left, c.oh, c.ow),
                1e-12);
  }
}

TEST(Conv2d, ShapeMismatchNamesBothShapes) {
  const Var<double> x(Tensor<double>(Shape{1, 2, 1, 5}));
  const Var<double> k(Tensor<double>(Shape{1, 3, 1, 2}));
  try {
    ops::conv2d<double>(nullptr, x, k, ConvOptions{});
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("1,2,1,5"), std::string::npos) << msg;
    EXPECT_NE(msg.find("1,3,1,2"), std::string::npos) << msg;
  }
}

TEST(Conv2d, KernelLongerThanValidInputIsRejected) {
  const Var<double> x(Tensor<double>(Shape{1, 1, 1, 3}));
  const Var<double> k(Tensor<double>(Shape{1, 1, 1, 4}));
  EXPECT_THROW(ops::conv2d<double>(nullptr, x, k, ConvOptions{}), ShapeError);
}

TEST(Pool, AverageAndMaxWithFloorSemantics) {
  EXPECT_EQ(values(ops::pool_last_axis<double>(nullptr, row({1, 2, 3, 4}), 2, PoolMode::Average)),
            (std::vector<double>{1.5, 3.5}));
  EXPECT_EQ(values(ops::pool_last_axis<double>(nullptr, row({1, 2, 3, 4}), 2, PoolMode::Max)),
            (std::vector<double>{2, 4}));
  EXPECT_EQ(values(ops::pool_last_axis<double>(nullptr, row({1, 2, 3, 4, 5}), 2, PoolMode::Average)),
            (std::vector<double>{1.5, 3.5}));
  EXPECT_THROW(ops::pool_last_axis<double>(nullptr, row({1, 2}), 0, PoolMode::Max), std::invalid_argument);
}

TEST(BatchNorm, NormalizedBatchPassesThrough) {
  // Per-channel values already have mean 0 and (biased) variance 1.
  Var<double> x(Tensor<double>(Shape{2, 1, 1, 2}, std::vector<double>{1, -1, -1, 1}));
  Var<double> gamma(Tensor<double>(Shape{1}, 1.0)), beta(Tensor<double>(Shape{1}, 0.0));
  Tensor<double> rm(Shape{1}, 0.0), rv(Shape{1}, 1.0);
  const auto y = ops::batch_norm<double>(nullptr, x, gamma, beta, rm, rv, {}, Mode::Train);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y.value()[i], x.value()[i] / std::sqrt(1.0 + 1e-3), 1e-12);
}

TEST(BatchNorm, ConstantChannelGivesBeta) {
  Var<double> x(Tensor<double>(Shape{3, 2, 1, 4}, 5.0));
  Var<double> gamma(Tensor<double>(Shape{2}, 2.0)), beta(Tensor<double>(Shape{2}, std::vector<double>{0.25, -1}));
  Tensor<double> rm(Shape{2}, 0.0), rv(Shape{2}, 1.0);
  const auto y = ops::batch_norm<double>(nullptr, x, gamma, beta, rm, rv, {}, Mode::Train);
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t t = 0; t < 4; ++t) {
      EXPECT_DOUBLE_EQ(y.value().at({b, 0, 0, t}), 0.25);
      EXPECT_DOUBLE_EQ(y.value().at({b, 1, 0, t}), -1.0);
    }
}

TEST(BatchNorm, RunningStatisticsFollowHandEma) {
  // Channel 0 values {1,2,3,6}: mean 3, biased variance (4+1+0+9)/4 = 3.5.
  // Channel 1 values {0,0,4,4}: mean 2, variance 4.
  Var<double> x(Tensor<double>(Shape{2, 2, 1, 2}, std::vector<double>{1, 2, 0, 0, 3, 6, 4, 4}));
  Var<double> gamma(Tensor<double>(Shape{2}, 1.0)), beta(Tensor<double>(Shape{2}, 0.0));
  Tensor<double> rm(Shape{2}, std::vector<double>{0.5, -1.0}), rv(Shape{2}, std::vector<double>{1.0, 2.0});
  ops::batch_norm<double>(nullptr, x, gamma, beta, rm, rv, {0.9, 1e-3}, Mode::Train);
  EXPECT_NEAR(rm[0], 0.9 * 0.5 + 0.1 * 3.0, 1e-12);
  EXPECT_NEAR(rm[1], 0.9 * -1.0 + 0.1 * 2.0, 1e-12);
  EXPECT_NEAR(rv[0], 0.9 * 1.0 + 0.1 * 3.5, 1e-12);
  EXPECT_NEAR(rv[1], 0.9 * 2.0 + 0.1 * 4.0, 1e-12);
}

TEST(BatchNorm, InferUsesRunningStatisticsAndIsPure) {
  Var<double> x(random_tensor({2, 2, 1, 3}, 4));
  Var<double> gamma(Tensor<double>(Shape{2}, std::vector<double>{2, 0.5}));
  Var<double> beta(Tensor<double>(Shape{2}, std::vector<double>{1, -1}));
  Tensor<double> rm(Shape{2}, std::vector<double>{0.1, -0.2}), rv(Shape{2}, std::vector<double>{0.5, 2.0});
  const Tensor<double> rm0 = rm, rv0 = rv;
  const auto y1 = ops::batch_norm<double>(nullptr, x, gamma, beta, rm, rv, {}, Mode::Infer);
  const auto y2 = ops::batch_norm<double>(nullptr, x, gamma, beta, rm, rv, {}, Mode::Infer);
  EXPECT_EQ(y1.value(), y2.value());
  EXPECT_EQ(rm, rm0);
  EXPECT_EQ(rv, rv0);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t t = 0; t < 3; ++t) {
        const double want =
            gamma.value()[c] * (x.value().at({b, c, 0, t}) - rm[c]) / std::sqrt(rv[c] + 1e-3) + beta.value()[c];
        EXPECT_NEAR(y1.value().at({b, c, 0, t}), want, 1e-12);
      }
}

TEST(Activations, PointValues) {
  const auto x = row({0, 1, -1});
  const auto e = values(ops::elu<double>(nullptr, x));
  EXPECT_DOUBLE_EQ(e[0], 0.0);
  EXPECT_DOUBLE_EQ(e[1], 1.0);
  EXPECT_NEAR(e[2], std::exp(-1.0) - 1.0, 1e-15);
  const auto r = values(ops::relu<double>(nullptr, x));
  EXPECT_EQ(r, (std::vector<double>{0, 1, 0}));
  EXPECT_DOUBLE_EQ(values(ops::sigmoid<double>(nullptr, row({0})))[0], 0.5);
  const auto s = values(ops::softmax<double>(nullptr, Var<double>(Tensor<double>(Shape{1, 4}, 0.0))));
  for (double v : s) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Activations, SoftmaxRowsAreDistributions) {
  const Var<float> x(random_tensor({16, 5}, 5, -30, 30).cast<float>());
  const auto p = ops::softmax<float>(nullptr, x);
  for (std::size_t r = 0; r < 16; ++r) {
    double total = 0;
    for (std::size_t c = 0; c < 5; ++c) {
      const float v = p.value().at({r, c});
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(Activations, SoftmaxShiftInvariant) {
  const Tensor<double> x = random_tensor({3, 4}, 6);
  Tensor<double> shifted = x;
  for (double& v : shifted.data()) v += 17.0;
  const auto a = ops::softmax<double>(nullptr, Var<double>(x));
  const auto b = ops::softmax<double>(nullptr, Var<double>(shifted));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.value()[i], b.value()[i], 1e-12);
}

TEST(Dropout, IdentityInInferAndAtRateZero) {
  std::mt19937_64 rng(1);
  const Var<double> x(random_tensor({3, 7}, 7));
  EXPECT_EQ(ops::dropout<double>(nullptr, x, 0.3, Mode::Infer, rng).value(), x.value());
  EXPECT_EQ(ops::dropout<double>(nullptr, x, 0.0, Mode::Train, rng).value(), x.value());
  EXPECT_THROW(ops::dropout<double>(nullptr, x, 1.0, Mode::Train, rng), std::invalid_argument);
  EXPECT_THROW(ops::dropout<double>(nullptr, x, -0.1, Mode::Train, rng), std::invalid_argument);
}

TEST(Dropout, SurvivorFractionAndScaling) {
  std::mt19937_64 rng(2024);
  const Var<float> x(Tensor<float>(Shape{100000}, 1.0f));
  const auto y = ops::dropout<float>(nullptr, x, 0.3, Mode::Train, rng);
  std::size_t survivors = 0;
  for (float v : y.value().data()) {
    if (v != 0.0f) {
      ++survivors;
      EXPECT_FLOAT_EQ(v, 1.0f / 0.7f);
    }
  }
  EXPECT_NEAR(survivors / 1e5, 0.7, 0.01);
}

TEST(Dropout, PreservesExpectationOverSeeds) {
  const Var<double> x(random_tensor({2000}, 8, 0.5, 1.5));
  const double mean_in = std::accumulate(x.value().data().begin(), x.value().data().end(), 0.0) / 2000;
  double mean_out = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(seed);
    const auto y = ops::dropout<double>(nullptr, x, 0.3, Mode::Train, rng);
    mean_out += std::accumulate(y.value().data().begin(), y.value().data().end(), 0.0) / 2000;
  }
  mean_out /= 50;
  EXPECT_NEAR(mean_out / mean_in, 1.0, 0.02);
}

TEST(MeanAxis, MatchesLoopOracle) {
  const Var<double> m(Tensor<double>(Shape{2, 3}, std::vector<double>{1, 2, 3, 3, 4, 5}));
  EXPECT_EQ(values(ops::mean_axis<double>(nullptr, m, 0)), (std::vector<double>{2, 3, 4}));
  const Tensor<double> x = random_tensor({3, 4, 5}, 9);
  const auto y = ops::mean_axis<double>(nullptr, Var<double>(x), 1);
  ASSERT_EQ(y.shape(), (Shape{3, 5}));
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t t = 0; t < 5; ++t) {
      double s = 0;
      for (std::size_t f = 0; f < 4; ++f) s += x.at({b, f, t});
      EXPECT_NEAR(y.value().at({b, t}), s / 4, 1e-15);
    }
}

TEST(CrossEntropy, KnownValues) {
  const std::vector<std::size_t> labels{1, 0};
  const Var<double> sure(Tensor<double>(Shape{2, 2}, std::vector<double>{0, 1, 1, 0}));
  EXPECT_DOUBLE_EQ(ops::cross_entropy<double>(nullptr, sure, labels).value()[0], 0.0);
  const Var<double> uniform(Tensor<double>(Shape{2, 4}, 0.25));
  EXPECT_NEAR(ops::cross_entropy<double>(nullptr, uniform, labels).value()[0], std::log(4.0), 1e-12);
  const Var<double> zero(Tensor<double>(Shape{1, 2}, std::vector<double>{1, 0}));
  const std::vector<std::size_t> one{1};
  EXPECT_NEAR(ops::cross_entropy<double>(nullptr, zero, one).value()[0], -std::log(1e-12), 1e-9);
}

TEST(CrossEntropy, MatchesPerSampleLoop) {
  const auto probs = ops::softmax<double>(nullptr, Var<double>(random_tensor({6, 4}, 10, -2, 2)));
  const std::vector<std::size_t> labels{0, 3, 1, 1, 2, 0};
  double want = 0;
  for (std::size_t i = 0; i < 6; ++i) want -= std::log(probs.value().at({i, labels[i]}));
  EXPECT_NEAR(ops::cross_entropy<double>(nullptr, probs, labels).value()[0], want / 6, 1e-12);
}

TEST(CrossEntropy, RejectsBadLabels) {
  const Var<double> p(Tensor<double>(Shape{2, 3}, 1.0 / 3));
  const std::vector<std::size_t> out_of_range{0, 3};
  EXPECT_THROW(ops::cross_entropy<double>(nullptr, p, out_of_range), std::out_of_range);
  const std::vector<std::size_t> too_few{0};
  EXPECT_THROW(ops::cross_entropy<double>(nullptr, p, too_few), ShapeError);
}

TEST(Structural, SliceConcatPermuteRoundTrip) {
  const Tensor<double> x = random_tensor({2, 3, 5}, 11);
  const Var<double> v(x);
  const auto a = ops::slice<double>(nullptr, v, 2, 0, 2);
  const auto b = ops::slice<double>(nullptr, v, 2, 2, 3);
  EXPECT_EQ(ops::concat<double>(nullptr, {a, b}, 2).value(), x);
  const auto p = ops::permute<double>(nullptr, v, {2, 0, 1});
  ASSERT_EQ(p.shape(), (Shape{5, 2, 3}));
  EXPECT_DOUBLE_EQ(p.value().at({4, 1, 2}), x.at({1, 2, 4}));
  EXPECT_EQ(ops::permute<double>(nullptr, p, {1, 2, 0}).value(), x);
  EXPECT_THROW(ops::slice<double>(nullptr, v, 2, 4, 2), ShapeError);
}

TEST(Structural, BroadcastMulAlongUnitAxis) {
  const Tensor<double> x = random_tensor({2, 3, 4}, 12);
  const Tensor<double> w = random_tensor({2, 1, 4}, 13);
  const auto y = ops::broadcast_mul<double>(nullptr, Var<double>(x), Var<double>(w));
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t f = 0; f < 3; ++f)
      for (std::size_t t = 0; t < 4; ++t) EXPECT_DOUBLE_EQ(y.value().at({b, f, t}), x.at({b, f, t}) * w.at({b, 0, t}));
  EXPECT_THROW(ops::broadcast_mul<double>(nullptr, Var<double>(x), Var<double>(Tensor<double>(Shape{2, 2, 4}))),
               ShapeError);
}

TEST(Determinism, ConvIsBitIdenticalAcrossRuns) {
  const Var<float> x(random_tensor({3, 2, 4, 40}, 14).cast<float>());
  const Var<float> k(random_tensor({5, 2, 4, 9}, 15).cast<float>());
  const auto a = ops::conv2d<float>(nullptr, x, k, ConvOptions{Padding::Same});
  const auto b = ops::conv2d<float>(nullptr, x, k, ConvOptions{Padding::Same});
  EXPECT_EQ(a.value(), b.value());
}
