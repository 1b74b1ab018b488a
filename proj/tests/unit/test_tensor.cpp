#include <gtest/gtest.h>

#include "dbnet/ops.hpp"

using namespace dbnet;

TEST(Tensor, ShapeAndDataAgree) {
  Tensor<float> t(Shape{2, 3}, 1.5f);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_FLOAT_EQ(t.at({1, 2}), 1.5f);
  EXPECT_THROW(Tensor<float>(Shape{2, 3}, std::vector<float>(5)), ShapeError);
  EXPECT_THROW(Tensor<float>(Shape{2, 0}), ShapeError);
}

TEST(Tensor, GradientBufferMatchesShape) {
  Tensor<double> t(Shape{4});
  EXPECT_FALSE(t.has_grad());
  auto g = t.grad();
  EXPECT_EQ(g.size(), 4u);
  EXPECT_TRUE(t.has_grad());
  for (double v : g) EXPECT_EQ(v, 0.0);
  t.drop_grad();
  EXPECT_FALSE(t.has_grad());
}

TEST(Tensor, ReshapeKeepsValuesAndRejectsWrongSize) {
  Tensor<float> t(Shape{2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
  const auto r = t.reshaped(Shape{3, 2});
  EXPECT_FLOAT_EQ(r.at({2, 1}), 6.0f);
  EXPECT_THROW(t.reshaped(Shape{4, 2}), ShapeError);
}

TEST(Tape, SumGradientIsAllOnes) {
  Tape<double> tape;
  Var<double> x(Tensor<double>(Shape{3}, std::vector<double>{0.3, -2.0, 7.0}), true);
  Var<double> loss = ops::sum(&tape, x);
  tape.backward(loss);
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(Tape, SquareGradientIsTwiceInput) {
  Tape<double> tape;
  Var<double> x(Tensor<double>(Shape{2}, std::vector<double>{1.0, 2.0}), true);
  Var<double> loss = ops::sum(&tape, ops::mul(&tape, x, x));
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
}

TEST(Tape, BackwardWithoutRecordedLossIsRejected) {
  Tape<double> tape;
  Var<double> x(Tensor<double>(Shape{1}, 1.0), true);
  EXPECT_THROW(tape.backward(x), std::logic_error);

  Var<double> y = ops::scale(&tape, x, 2.0);
  Var<double> unrelated(Tensor<double>(Shape{1}, 1.0));
  EXPECT_THROW(tape.backward(unrelated), std::logic_error);
}

TEST(Tape, NonScalarLossIsRejected) {
  Tape<double> tape;
  Var<double> x(Tensor<double>(Shape{2}, 1.0), true);
  Var<double> y = ops::scale(&tape, x, 2.0);
  EXPECT_THROW(tape.backward(y), ShapeError);
}

TEST(Tape, NothingRecordedWithoutGradientInputs) {
  Tape<double> tape;
  Var<double> x(Tensor<double>(Shape{2}, 1.0));
  ops::scale(&tape, x, 2.0);
  EXPECT_TRUE(tape.empty());
}

TEST(Tape, GradientsAccumulateOverSharedInputs) {
  Tape<double> tape;
  Var<double> x(Tensor<double>(Shape{1}, 3.0), true);
  Var<double> y = ops::add(&tape, ops::scale(&tape, x, 2.0), ops::mul(&tape, x, x));
  Var<double> loss = ops::sum(&tape, y);
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0 + 6.0);
  EXPECT_TRUE(tape.empty());
}
