// Copyright 2026  The mata-fusion Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "mata/gradcheck.hpp"
#include "mata/layers.hpp"

namespace mata {
namespace {

Tensor<double> random_tensor(Shape s, RandomSource& rng, double scale = 1.0) {
  Tensor<double> t(std::move(s));
  for (double& v : t.values()) v = scale * rng.normal();
  return t;
}

TEST(Conv1D, IdentityKernel) {
  Tape<double> tp;
  auto x = Tensor<double>({1, 5, 1}, std::vector<double>{1, -2, 3, 4, 5});
  Var k = tp.constant(Tensor<double>({3, 1, 1}, std::vector<double>{0, 1, 0}));
  Var b = tp.constant(Tensor<double>({1}));
  EXPECT_EQ(tp.value(ops::conv1d(tp, tp.constant(x), k, b)), x);
}

TEST(Conv1D, OnesKernelZeroPadded) {
  Tape<double> tp;
  Var x = tp.constant(Tensor<double>({1, 3, 1}, std::vector<double>{1, 2, 3}));
  Var k = tp.constant(Tensor<double>({3, 1, 1}, 1.0));
  Var b = tp.constant(Tensor<double>({1}));
  auto y = tp.value(ops::conv1d(tp, x, k, b));
  EXPECT_EQ(y, Tensor<double>({1, 3, 1}, std::vector<double>{3, 6, 5}));
}

TEST(Conv1D, SamePaddingPreservesLength) {
  RandomSource rng(1, "conv-len");
  for (std::size_t k : {1u, 3u, 5u, 7u}) {
    nn::Conv1D<float> conv("c", 2, {4, k}, rng);
    Tape<float> tp;
    Var y = conv.forward(tp, tp.constant(Tensor<float>({3, 11, 2}, 0.5f)));
    EXPECT_EQ(tp.value(y).shape(), (Shape{3, 11, 4}));
  }
}

TEST(Conv1D, ChannelMismatch) {
  Tape<double> tp;
  Var x = tp.constant(Tensor<double>({1, 4, 2}));
  Var k = tp.constant(Tensor<double>({3, 3, 1}));
  Var b = tp.constant(Tensor<double>({1}));
  EXPECT_THROW(ops::conv1d(tp, x, k, b), DimensionError);
}

TEST(Conv1D, GradientCheck) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    RandomSource rng(seed, "conv-grad");
    const std::size_t cin = 1 + rng.below(3), cout = 1 + rng.below(4), len = 3 + rng.below(6);
    nn::Conv1D<double> conv("c", cin, {cout, 3}, rng);
    for (double& v : conv.bias.value.values()) v = rng.normal();
    Parameter<double> x("x", random_tensor({2, len, cin}, rng));
    Tensor<double> w = random_tensor({2, len, cout}, rng);
    std::vector<Parameter<double>*> ps{&x, &conv.kernel, &conv.bias};
    auto r = gradient_check(
        [&](Tape<double>& t) { return ops::weighted_sum(t, conv.forward(t, t.parameter(x)), w); }, ps, rng);
    EXPECT_LE(r.max_relative_error, 1e-4) << r.worst_parameter;
  }
}

TEST(MaxPool1D, PicksWindowMaxima) {
  Tape<double> tp;
  Var x = tp.constant(Tensor<double>({1, 4, 1}, std::vector<double>{1, 3, 2, 2}));
  EXPECT_EQ(tp.value(ops::maxpool1d(tp, x, 2)), Tensor<double>({1, 2, 1}, std::vector<double>{3, 2}));
}

TEST(MaxPool1D, OddTailDroppedAndTwoPoolsQuarterLength) {
  Tape<float> tp;
  Var x = tp.constant(Tensor<float>({1, 5, 2}));
  EXPECT_EQ(tp.value(ops::maxpool1d(tp, x, 2)).shape(), (Shape{1, 2, 2}));
  Var y = tp.constant(Tensor<float>({2, 768, 3}));
  Var pooled = ops::maxpool1d(tp, ops::maxpool1d(tp, y, 2), 2);
  EXPECT_EQ(tp.value(pooled).dim(1), 192u);
}

TEST(MaxPool1D, TieRoutesGradientToFirstIndex) {
  Tape<double> tp;
  Var x = tp.leaf(Tensor<double>({1, 2, 1}, std::vector<double>{5, 5}));
  tp.backward(ops::sum(tp, ops::maxpool1d(tp, x, 2)));
  auto g = tp.grad(x);
  EXPECT_EQ(g[0], 1.0);
  EXPECT_EQ(g[1], 0.0);
}

TEST(MaxPool1D, TooShort) {
  Tape<double> tp;
  Var x = tp.constant(Tensor<double>({1, 1, 1}));
  EXPECT_THROW(ops::maxpool1d(tp, x, 2), DimensionError);
}

TEST(MaxPool1D, GradientCheck) {
  RandomSource rng(4, "pool-grad");
  Parameter<double> x("x", random_tensor({2, 9, 3}, rng));
  Tensor<double> w = random_tensor({2, 4, 3}, rng);
  std::vector<Parameter<double>*> ps{&x};
  auto r = gradient_check([&](Tape<double>& t) { return ops::weighted_sum(t, ops::maxpool1d(t, t.parameter(x), 2), w); },
                          ps, rng);
  EXPECT_LE(r.max_relative_error, 1e-4);
}

TEST(Dense, IdentityAndRelu) {
  RandomSource rng(5, "dense");
  nn::Dense<double> d("d", 2, {2, nn::Activation::None}, rng);
  d.weight.value = Tensor<double>::matrix({{1, 0}, {0, 1}});
  Tape<double> tp;
  auto x = Tensor<double>::matrix({{-1, 2}});
  EXPECT_EQ(tp.value(d.forward(tp, tp.constant(x))), x);
  nn::Dense<double> r("r", 2, {2, nn::Activation::ReLU}, rng);
  r.weight.value = Tensor<double>::matrix({{1, 0}, {0, 1}});
  EXPECT_EQ(tp.value(r.forward(tp, tp.constant(x))), Tensor<double>::matrix({{0, 2}}));
}

TEST(Dense, ShapeMismatch) {
  RandomSource rng(5, "dense");
  nn::Dense<double> d("d", 3, {2, nn::Activation::None}, rng);
  Tape<double> tp;
  EXPECT_THROW(d.forward(tp, tp.constant(Tensor<double>({4, 2}))), DimensionError);
}

TEST(Dense, GradientCheck) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    RandomSource rng(seed, "dense-grad");
    nn::Dense<double> d("d", 16, {5, nn::Activation::ReLU}, rng);
    for (double& v : d.bias.value.values()) v = 0.1 * rng.normal();
    Parameter<double> x("x", random_tensor({8, 16}, rng));
    Tensor<double> w = random_tensor({8, 5}, rng);
    std::vector<Parameter<double>*> ps{&x, &d.weight, &d.bias};
    auto r = gradient_check([&](Tape<double>& t) { return ops::weighted_sum(t, d.forward(t, t.parameter(x)), w); },
                            ps, rng);
    EXPECT_LE(r.max_relative_error, 1e-4) << r.worst_parameter;
  }
}

TEST(Dropout, IdentityCases) {
  RandomSource rng(6, "dropout");
  Tape<double> tp;
  Var x = tp.constant(Tensor<double>::matrix({{1, 2, 3}}));
  EXPECT_EQ(ops::dropout(tp, x, 0.0, true, rng).id, x.id);
  EXPECT_EQ(ops::dropout(tp, x, 0.0, false, rng).id, x.id);
  EXPECT_EQ(ops::dropout(tp, x, 0.7, false, rng).id, x.id);
  EXPECT_THROW(ops::dropout(tp, x, 1.0, true, rng), ConfigError);
}

TEST(Dropout, DropFractionAndExpectation) {
  RandomSource rng(7, "dropout-stats");
  Tape<double> tp;
  const std::size_t n = 100000;
  Var x = tp.constant(Tensor<double>({n}, 1.0));
  const auto& y = tp.value(ops::dropout(tp, x, 0.3, true, rng));
  std::size_t dropped = 0;
  double total = 0;
  for (double v : y.values()) {
    dropped += v == 0.0;
    total += v;
  }
  EXPECT_NEAR(static_cast<double>(dropped) / n, 0.3, 0.01);
  EXPECT_NEAR(total / n, 1.0, 0.01);
}

TEST(Dropout, GradientCheckWithFixedMask) {
  RandomSource rng(8, "dropout-grad");
  Parameter<double> x("x", random_tensor({4, 6}, rng));
  Tensor<double> w = random_tensor({4, 6}, rng);
  std::vector<Parameter<double>*> ps{&x};
  auto r = gradient_check(
      [&](Tape<double>& t) {
        RandomSource mask(8, "mask");
        return ops::weighted_sum(t, ops::dropout(t, t.parameter(x), 0.4, true, mask), w);
      },
      ps, rng);
  EXPECT_LE(r.max_relative_error, 1e-4);
}

TEST(MultiHeadAttention, SingleTokenWithIdentityProjections) {
  RandomSource rng(9, "mha");
  nn::MultiHeadAttention<double> mha("a", {4, 8}, rng);
  Tensor<double> eye({8, 8});
  for (std::size_t i = 0; i < 8; ++i) eye(i, i) = 1.0;
  for (auto* d : {&mha.query, &mha.key, &mha.value, &mha.output}) d->weight.value = eye;
  Tape<double> tp;
  auto x = random_tensor({3, 8}, rng);
  auto y = tp.value(mha.forward(tp, tp.constant(x), 1));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i], 1e-12);
}

TEST(MultiHeadAttention, WeightsAreRowStochastic) {
  RandomSource rng(10, "mha-rows");
  nn::MultiHeadAttention<float> mha("a", {8, 120}, rng);
  Tape<float> tp;
  Tensor<float> x({4 * 6, 120});
  for (float& v : x.values()) v = static_cast<float>(10.0 * rng.normal());
  mha.forward(tp, tp.constant(x), 6);
  const auto& w = mha.last_weights;
  ASSERT_EQ(w.shape(), (Shape{4, 8, 6, 6}));
  for (std::size_t r = 0; r < w.size() / 6; ++r) {
    double s = 0;
    for (std::size_t j = 0; j < 6; ++j) {
      ASSERT_GE(w[r * 6 + j], 0.0f);
      s += w[r * 6 + j];
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(MultiHeadAttention, HeadsMustDivideModelDim) {
  RandomSource rng(11, "mha-bad");
  EXPECT_THROW(nn::MultiHeadAttention<float>("a", {7, 120}, rng), ConfigError);
  Tape<double> tp;
  Var q = tp.constant(Tensor<double>({6, 10}));
  EXPECT_THROW(ops::attention(tp, q, q, q, 6, 4), DimensionError);
}

TEST(MultiHeadAttention, GradientCheck) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    RandomSource rng(seed, "mha-grad");
    nn::MultiHeadAttention<double> mha("a", {8, 120}, rng);
    for (auto* d : {&mha.query, &mha.key, &mha.value, &mha.output})
      for (double& v : d->bias.value.values()) v = 0.1 * rng.normal();
    Parameter<double> x("x", random_tensor({2 * 6, 120}, rng));
    Tensor<double> w = random_tensor({2 * 6, 120}, rng);
    std::vector<Parameter<double>*> ps{&x};
    for (auto* p : mha.parameters()) ps.push_back(p);
    GradCheckOptions opts;
    opts.max_coordinates = 1500;
    auto r = gradient_check(
        [&](Tape<double>& t) { return ops::weighted_sum(t, mha.forward(t, t.parameter(x), 6), w); }, ps, rng, opts);
    EXPECT_LE(r.max_relative_error, 1e-4) << r.worst_parameter;
  }
}

TEST(CrossEntropy, UniformLogitsGiveLogC) {
  Tape<double> tp;
  std::vector<int> y{0, 3, 2};
  Var l = ops::cross_entropy(tp, tp.constant(Tensor<double>({3, 5}, 0.7)), y);
  EXPECT_NEAR(tp.value(l)[0], std::log(5.0), 1e-12);
}

TEST(CrossEntropy, SaturatedTrueClass) {
  Tape<float> tp;
  std::vector<int> y{1};
  Var l = ops::cross_entropy(tp, tp.constant(Tensor<float>::matrix({{0, 1000, 0}})), y);
  EXPECT_LE(tp.value(l)[0], 1e-6f);
}

TEST(CrossEntropy, MatchesDirectFormula) {
  RandomSource rng(12, "ce");
  Tensor<float> z({4, 3});
  for (float& v : z.values()) v = static_cast<float>(3.0 * rng.normal());
  std::vector<int> y{2, 0, 1, 1};
  double expected = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    double denom = 0;
    for (std::size_t c = 0; c < 3; ++c) denom += std::exp(static_cast<double>(z(i, c)));
    expected += -std::log(std::exp(static_cast<double>(z(i, y[i]))) / denom);
  }
  expected /= 4;
  Tape<float> tp;
  EXPECT_NEAR(tp.value(ops::cross_entropy(tp, tp.constant(z), y))[0], expected, 1e-6);
}

TEST(CrossEntropy, LabelOutOfRange) {
  Tape<double> tp;
  std::vector<int> y{3};
  EXPECT_THROW(ops::cross_entropy(tp, tp.constant(Tensor<double>({1, 3})), y), DataError);
}

TEST(CrossEntropy, GradientCheck) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    RandomSource rng(seed, "ce-grad");
    Parameter<double> z("z", random_tensor({5, 4}, rng, 2.0));
    std::vector<int> y;
    for (int i = 0; i < 5; ++i) y.push_back(static_cast<int>(rng.below(4)));
    std::vector<Parameter<double>*> ps{&z};
    auto r = gradient_check([&](Tape<double>& t) { return ops::cross_entropy(t, t.parameter(z), y); }, ps, rng);
    EXPECT_LE(r.max_relative_error, 1e-4);
  }
}

TEST(LayerSpec, Validation) {
  EXPECT_THROW(nn::validate(nn::LayerSpec{nn::Conv1DSpec{0, 3}}), ConfigError);
  EXPECT_THROW(nn::validate(nn::LayerSpec{nn::Conv1DSpec{4, 2}}), ConfigError);
  EXPECT_THROW(nn::validate(nn::LayerSpec{nn::DenseSpec{0, nn::Activation::None}}), ConfigError);
  EXPECT_THROW(nn::validate(nn::LayerSpec{nn::DropoutSpec{1.0}}), ConfigError);
  EXPECT_THROW(nn::validate(nn::LayerSpec{nn::MultiHeadAttentionSpec{8, 100}}), ConfigError);
  EXPECT_NO_THROW(nn::validate(nn::LayerSpec{nn::MultiHeadAttentionSpec{8, 120}}));
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Parameter<double> p("p", Tensor<double>::vector({1, -2}));
  nn::AdamState<double> state;
  std::vector<Parameter<double>*> ps{&p};
  nn::adam_step<double>(ps, state);
  EXPECT_EQ(p.value, Tensor<double>::vector({1, -2}));
  EXPECT_EQ(state.step, 1);
  nn::adam_step<double>(ps, state);
  EXPECT_EQ(state.step, 2);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Parameter<double> p("p", Tensor<double>::vector({1, -2, 0.5}));
  p.grad = Tensor<double>::vector({0.3, -7, 1e-3});
  nn::AdamState<double> state;
  std::vector<Parameter<double>*> ps{&p};
  nn::adam_step<double>(ps, state);
  EXPECT_NEAR(p.value[0], 1 - 1e-3, 1e-8);
  EXPECT_NEAR(p.value[1], -2 + 1e-3, 1e-8);
  EXPECT_NEAR(p.value[2], 0.5 - 1e-3, 1e-7);
  EXPECT_EQ(p.grad[1], -7.0);
}

TEST(Adam, ConvergesOnScalarQuadratic) {
  Parameter<double> w("w", Tensor<double>::vector({0}));
  nn::AdamState<double> state(nn::AdamConfig{0.1});
  std::vector<Parameter<double>*> ps{&w};
  for (int i = 0; i < 200; ++i) {
    w.grad[0] = 2.0 * (w.value[0] - 3.0);
    nn::adam_step<double>(ps, state);
  }
  EXPECT_LE(std::abs(w.value[0] - 3.0), 0.1);
}

}  // namespace
}  // namespace mata
