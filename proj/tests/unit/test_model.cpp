#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "checks.hpp"
#include "dbnet/model.hpp"

using namespace dbnet;
using dbnet::testing::random_tensor;

namespace {

const ForwardContext<double> kInfer{Mode::Infer, nullptr, nullptr, nullptr};

std::vector<Shape> shapes_of(const ShapeTrace& trace, const std::string& stage) {
  std::vector<Shape> out;
  for (const auto& [name, shape] : trace)
    if (name == stage) out.push_back(shape);
  return out;
}

}  // namespace

class ShapeOracle : public ::testing::TestWithParam<std::pair<std::size_t, std::size_t>> {};

TEST_P(ShapeOracle, EveryStageMatchesDerivedDims) {
  DbNetConfig c;
  c.channels = GetParam().first;
  c.samples = GetParam().second;
  const BranchDims d = derive_dims(c);
  DbNet<float> model(c, 1);
  const std::size_t B = 2;
  ShapeTrace trace;
  const auto probs = model.forward(ForwardContext<float>{Mode::Infer, nullptr, nullptr, &trace},
                                   Var<float>(random_tensor({B, c.channels, c.samples}, 3).cast<float>()));
  EXPECT_EQ(probs.shape(), (Shape{B, c.n_classes}));

  const std::size_t ph = c.temporal_kernel / 8, pt = c.spectral_kernel / 8;
  std::map<std::string, Shape> want{
      {"input", {B, 1, c.channels, c.samples}},
      {"temporal.lc.conv", {B, c.temporal_filters, c.channels, c.samples}},
      {"temporal.lc.depthwise", {B, d.f_hat, 1, c.samples}},
      {"temporal.lc.pool1", {B, d.f_hat, 1, c.samples / ph}},
      {"temporal.lc.separable", {B, d.f_hat, 1, c.samples / ph}},
      {"temporal.lc.pool2", {B, d.f_hat, 1, d.t_hat}},
      {"temporal.lc", {B, d.f_hat, d.t_hat}},
      {"spectral.lc.conv", {B, c.spectral_filters, c.channels, c.samples}},
      {"spectral.lc.depthwise", {B, d.f_tilde, 1, c.samples}},
      {"spectral.lc.pool1", {B, d.f_tilde, 1, c.samples / pt}},
      {"spectral.lc.separable", {B, d.f_tilde, 1, c.samples / pt}},
      {"spectral.lc.pool2", {B, d.f_tilde, 1, d.t_tilde}},
      {"spectral.lc", {B, d.f_tilde, d.t_tilde}},
      {"temporal.gc", {B, d.f_hat, d.windows * d.l_hat}},
      {"spectral.gc", {B, d.windows * d.l_tilde, d.t_tilde}},
      {"concat", {B, d.concat_len}},
      {"probs", {B, c.n_classes}},
  };
  for (const auto& [stage, shape] : want) {
    const auto got = shapes_of(trace, stage);
    ASSERT_EQ(got.size(), 1u) << stage;
    EXPECT_EQ(got[0], shape) << stage;
  }
  const auto tw = shapes_of(trace, "temporal.gc.window");
  const auto sw = shapes_of(trace, "spectral.gc.window");
  ASSERT_EQ(tw.size(), d.windows);
  ASSERT_EQ(sw.size(), d.windows);
  for (const auto& s : tw) EXPECT_EQ(s, (Shape{B, d.f_hat, d.l_hat}));
  for (const auto& s : sw) EXPECT_EQ(s, (Shape{B, d.l_tilde, d.t_tilde}));
}

INSTANTIATE_TEST_SUITE_P(Datasets, ShapeOracle,
                         ::testing::Values(std::pair<std::size_t, std::size_t>{22, 1125},
                                           std::pair<std::size_t, std::size_t>{3, 1125},
                                           std::pair<std::size_t, std::size_t>{8, 640}));

TEST(LocalBlock, PoolWidths) {
  const DbNetConfig c;
  EXPECT_EQ(c.temporal_kernel / 8, 6u);
  EXPECT_EQ(c.temporal_kernel / 4, 12u);
  EXPECT_EQ(c.spectral_kernel / 8, 8u);
  EXPECT_EQ(c.spectral_kernel / 4, 16u);
  std::mt19937_64 rng(1);
  LocalBlock<float> spectral(DbNetConfig{.channels = 3}, Branch::Spectral, rng);
  const auto y = spectral.forward(ForwardContext<float>{}, Var<float>(Tensor<float>(Shape{1, 1, 3, 1125})));
  EXPECT_EQ(y.shape(), (Shape{1, 32, 17}));
}

TEST(SlidingWindow, OverlappingWindowsOfDerivedLength) {
  Tensor<double> seq(Shape{1, 2, 31});
  for (std::size_t i = 0; i < seq.size(); ++i) seq[i] = static_cast<double>(i);
  const auto w = sliding_window_split<double>(nullptr, Var<double>(seq), 2, 6, 1);
  ASSERT_EQ(w.size(), 6u);
  for (std::size_t n = 0; n < 6; ++n) {
    EXPECT_EQ(w[n].shape(), (Shape{1, 2, 26}));
    for (std::size_t f = 0; f < 2; ++f)
      for (std::size_t t = 0; t < 26; ++t) EXPECT_EQ(w[n].value().at({0, f, t}), seq.at({0, f, n + t}));
  }
  const auto one = sliding_window_split<double>(nullptr, Var<double>(seq), 2, 1, 1);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].value(), seq);

  const auto spectral = sliding_window_split<double>(nullptr, Var<double>(Tensor<double>(Shape{1, 32, 17})), 1, 6, 1);
  for (const auto& s : spectral) EXPECT_EQ(s.shape(), (Shape{1, 27, 17}));

  const auto strided = sliding_window_split<double>(nullptr, Var<double>(seq), 2, 3, 2);
  for (std::size_t n = 0; n < 3; ++n) {
    EXPECT_EQ(strided[n].dim(2), 27u);
    EXPECT_EQ(strided[n].value().at({0, 0, 0}), seq.at({0, 0, 2 * n}));
  }
  EXPECT_THROW(sliding_window_split<double>(nullptr, Var<double>(seq), 2, 32, 1), ShapeError);
}

TEST(SqueezeExcite, ZeroExcitationHalvesInput) {
  std::mt19937_64 rng(1);
  SqueezeExcite<double> se(26, 2, rng);
  se.excite().weight().value().fill(0.0);
  se.excite().bias().value().fill(0.0);
  const Tensor<double> x = random_tensor({2, 16, 26}, 4);
  const auto y = se.forward(kInfer, Var<double>(x), 1);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y.value()[i], 0.5 * x[i]);
}

TEST(SqueezeExcite, GatesShrinkMagnitudes) {
  std::mt19937_64 rng(2);
  SqueezeExcite<double> se(17, 2, rng);
  const Tensor<double> x = random_tensor({2, 27, 17}, 5, 0.1, 2.0);
  const auto y = se.forward(kInfer, Var<double>(x), 1);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_GT(y.value()[i], 0.0);
    EXPECT_LT(y.value()[i], x[i]);
  }
}

TEST(SqueezeExcite, GateIsSharedAlongPooledAxis) {
  std::mt19937_64 rng(3);
  SqueezeExcite<double> se(5, 1, rng);
  const Tensor<double> x(Shape{1, 4, 5}, 1.0);
  const auto y = se.forward(kInfer, Var<double>(x), 1);  // gates vary along axis 2 only
  for (std::size_t f = 1; f < 4; ++f)
    for (std::size_t t = 0; t < 5; ++t) EXPECT_DOUBLE_EQ(y.value().at({0, f, t}), y.value().at({0, 0, t}));
}

TEST(DccStack, ZeroConvolutionsGiveEluOfInput) {
  std::mt19937_64 rng(1);
  DccStack<double> dcc(3, 4, 4, ops::BatchNormOptions{}, rng);
  for (auto& conv : dcc.convs()) conv.weight().value().fill(0.0);
  const Tensor<double> x = random_tensor({2, 3, 10}, 6, -2, 2);
  const auto y = dcc.forward(kInfer, Var<double>(x));
  const auto want = ops::elu<double>(nullptr, Var<double>(x));
  EXPECT_EQ(y.value(), want.value());
}

TEST(DccStack, SingleLayerRecursionBase) {
  std::mt19937_64 rng(2);
  DccStack<double> dcc(2, 1, 3, ops::BatchNormOptions{}, rng);
  dcc.norms()[0].running_mean() = Tensor<double>(Shape{2}, std::vector<double>{0.2, -0.1});
  dcc.norms()[0].running_var() = Tensor<double>(Shape{2}, std::vector<double>{1.5, 0.7});
  const Tensor<double> x = random_tensor({1, 2, 8}, 7);
  const auto y = dcc.forward(kInfer, Var<double>(x));

  const Var<double> img(x.reshaped(Shape{1, 2, 1, 8}));
  auto& conv = dcc.convs()[0];
  EXPECT_EQ(conv.options().dilation_w, 1u);
  const auto c1 = ops::conv2d<double>(nullptr, img, conv.weight(), conv.options());
  auto& bn = dcc.norms()[0];
  const auto b1 = ops::batch_norm<double>(nullptr, c1, bn.gamma(), bn.beta(), bn.running_mean(), bn.running_var(),
                                          bn.options(), Mode::Infer);
  const auto want = ops::elu<double>(nullptr, ops::add<double>(nullptr, img, ops::elu<double>(nullptr, b1)));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y.value()[i], want.value()[i], 1e-12);
}

TEST(DccStack, LayerDilationsAreOneToD) {
  std::mt19937_64 rng(3);
  DccStack<float> dcc(4, 4, 4, ops::BatchNormOptions{}, rng);
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_EQ(dcc.convs()[j].options().dilation_w, j + 1);
    EXPECT_EQ(dcc.convs()[j].options().padding, ops::Padding::Causal);
  }
}

TEST(GlobalBlock, PlainStackWithZeroWeightsIsEluIdentity) {
  DbNetConfig c;
  c.se_enabled = false;
  c.sw_enabled = false;
  const BranchDims d = derive_dims(c);
  std::mt19937_64 rng(4);
  for (Branch b : {Branch::Temporal, Branch::Spectral}) {
    GlobalBlock<double> gc(c, d, b, rng);
    EXPECT_TRUE(gc.se().empty());
    for (auto& stack : gc.dcc())
      for (auto& conv : stack.convs()) conv.weight().value().fill(0.0);
    const Tensor<double> x = b == Branch::Temporal ? random_tensor({2, 16, 31}, 8) : random_tensor({2, 32, 17}, 9);
    const auto y = gc.forward(kInfer, Var<double>(x));
    EXPECT_EQ(y.value(), ops::elu<double>(nullptr, Var<double>(x)).value());
  }
}

TEST(GlobalBlock, WindowsHaveSeparateWeights) {
  DbNetConfig c;
  const BranchDims d = derive_dims(c);
  std::mt19937_64 rng(5);
  GlobalBlock<float> gc(c, d, Branch::Temporal, rng);
  ASSERT_EQ(gc.dcc().size(), 6u);
  ASSERT_EQ(gc.se().size(), 6u);
  EXPECT_FALSE(gc.dcc()[0].convs()[0].weight().value() == gc.dcc()[1].convs()[0].weight().value());
}

TEST(Classifier, ZeroWeightsGiveUniformProbabilities) {
  DbNet<double> model(DbNetConfig{.channels = 3}, 1);
  model.classifier().weight().value().fill(0.0);
  const auto p = model.forward(kInfer, Var<double>(random_tensor({2, 3, 1125}, 10)));
  for (double v : p.value().data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Classifier, RejectsWrongWidth) {
  DbNet<double> model(DbNetConfig{.channels = 3}, 1);
  const Var<double> t(Tensor<double>(Shape{1, 16, 150})), s(Tensor<double>(Shape{1, 162, 17}));
  EXPECT_THROW(model.classify(kInfer, t, s), ShapeError);
}

TEST(DbNet, RejectsWrongInputShape) {
  DbNet<float> model(DbNetConfig{.channels = 3}, 1);
  EXPECT_THROW(model.forward(ForwardContext<float>{}, Var<float>(Tensor<float>(Shape{1, 4, 1125}))), ShapeError);
}

TEST(DbNet, InvalidConfigIsRejectedAtConstruction) {
  DbNetConfig c;
  c.dcc_layers = 1;
  c.dcc_kernel = 2;
  EXPECT_THROW(DbNet<float>(c, 1), ConfigError);
}

TEST(DbNet, BatchPermutationPermutesOutputs) {
  DbNet<double> model(dbnet::testing::tiny_config(), 3);
  const auto c = dbnet::testing::tiny_config();
  const Tensor<double> x = random_tensor({3, c.channels, c.samples}, 11);
  Tensor<double> swapped = x;
  const std::size_t row = c.channels * c.samples;
  std::copy_n(x.raw(), row, swapped.raw() + 2 * row);
  std::copy_n(x.raw() + 2 * row, row, swapped.raw());
  const auto a = model.forward(kInfer, Var<double>(x)).value();
  const auto b = model.forward(kInfer, Var<double>(swapped)).value();
  for (std::size_t k = 0; k < c.n_classes; ++k) {
    EXPECT_DOUBLE_EQ(a.at({0, k}), b.at({2, k}));
    EXPECT_DOUBLE_EQ(a.at({1, k}), b.at({1, k}));
    EXPECT_DOUBLE_EQ(a.at({2, k}), b.at({0, k}));
  }
}

TEST(DbNet, SeededAndDeterministic) {
  const auto c = dbnet::testing::tiny_config();
  DbNet<float> a(c, 5), b(c, 5), other(c, 6);
  const auto pa = a.parameters(), pb = b.parameters(), po = other.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].name, pb[i].name);
    EXPECT_EQ(pa[i].var.value(), pb[i].var.value());
    any_diff = any_diff || !(pa[i].var.value() == po[i].var.value());
  }
  EXPECT_TRUE(any_diff);
  const Var<float> x(random_tensor({2, c.channels, c.samples}, 12).cast<float>());
  EXPECT_EQ(a.forward(ForwardContext<float>{}, x).value(), b.forward(ForwardContext<float>{}, x).value());
}

TEST(DbNet, ParameterNamesAreUniqueAndIncludeBuffers) {
  DbNet<float> model(DbNetConfig{}, 1);
  const auto params = model.parameters();
  std::set<std::string> names;
  std::size_t buffers = 0;
  for (const auto& p : params) {
    EXPECT_TRUE(names.insert(p.name).second) << p.name;
    buffers += !p.trainable;
  }
  EXPECT_TRUE(names.contains("temporal.lc.conv.weight"));
  EXPECT_TRUE(names.contains("spectral.gc.window6.dcc.layer4.bn.running_var"));
  EXPECT_TRUE(names.contains("temporal.gc.window1.se.squeeze.weight"));
  EXPECT_TRUE(names.contains("classifier.bias"));
  EXPECT_EQ(params.back().name, "classifier.bias");
  // Six batch norms per branch in the local blocks... three per branch, plus
  // d per window stack in each branch, each with two buffers.
  EXPECT_EQ(buffers, 2u * (3 * 2 + 2 * 6 * 4));
}

TEST(DbNet, LocalOnlyModelHasNoGlobalParameters) {
  DbNetConfig c;
  c.gc_enabled = false;
  DbNet<float> model(c, 1);
  for (const auto& p : model.parameters()) EXPECT_EQ(p.name.find(".gc."), std::string::npos) << p.name;
  EXPECT_EQ(model.classifier().in_features(), 16u * 31 + 32u * 17);
}
