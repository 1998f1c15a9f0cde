// Copyright 2026 The Shrink Authors
// Licensed under the Apache License, Version 2.0

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "shrink/grad_check.hpp"
#include "shrink/ops.hpp"
#include "shrink/serialize.hpp"
#include "support.hpp"

using namespace shrink;
using shrink::testing::random_tensor;

namespace {

Tensor<double> t2(std::size_t r, std::size_t c, std::vector<double> v) { return Tensor<double>(Shape{r, c}, std::move(v)); }

// Values in +-[0.2, 1] so kinked functions are differentiable at every sample.
Tensor<double> away_from_zero(Shape shape, Rng &rng) {
  auto t = random_tensor(std::move(shape), rng, 0.2, 1.0);
  for (auto &v : t.values())
    if (rng.bernoulli(0.5))
      v = -v;
  return t;
}

void expect_grad_ok(const std::function<Tensor<double>()> &f, std::vector<Tensor<double>> params, int line = __builtin_LINE()) {
  const auto r = grad_check(f, std::move(params));
  EXPECT_LT(r.max_rel_err, 1e-6) << "line " << line << " worst param " << r.worst_param << " index " << r.worst_index;
}

} // namespace

TEST(Tensor, ConstructionAndShapeChecks) {
  Tensor<float> a(Shape{2, 3}, 1.5f);
  EXPECT_EQ(a.numel(), 6u);
  EXPECT_EQ(a.dim(-1), 3u);
  EXPECT_THROW(Tensor<float>(Shape{2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
  EXPECT_THROW(a.dim(2), ShapeError);
  EXPECT_THROW(a.item(), UsageError);
  EXPECT_FLOAT_EQ(Tensor<float>::scalar(4.f).item(), 4.f);
}

TEST(Tensor, CloneIsIndependentAndDetachDropsGrad) {
  Tensor<double> a(Shape{2}, std::vector<double>{1, 2});
  a.set_requires_grad(true);
  auto c = a.clone();
  c[0] = 9;
  EXPECT_EQ(a[0], 1);
  EXPECT_FALSE(a.detach().requires_grad());
}

TEST(Ops, BroadcastingArithmetic) {
  const auto a = t2(2, 3, {1, 2, 3, 4, 5, 6});
  const Tensor<double> row(Shape{3}, std::vector<double>{10, 20, 30});
  const Tensor<double> col(Shape{2, 1}, std::vector<double>{1, 2});
  EXPECT_EQ(add(a, row).values(), (std::vector<double>{11, 22, 33, 14, 25, 36}));
  EXPECT_EQ(mul(a, col).values(), (std::vector<double>{1, 2, 3, 8, 10, 12}));
  EXPECT_EQ(sub(a, col).values(), (std::vector<double>{0, 1, 2, 2, 3, 4}));
  EXPECT_THROW(add(a, Tensor<double>(Shape{2})), ShapeError);
}

TEST(Ops, ReductionsAndLayout) {
  const auto a = t2(2, 3, {1, 2, 3, 4, 5, 6});
  EXPECT_DOUBLE_EQ(sum(a).item(), 21);
  EXPECT_DOUBLE_EQ(mean(a).item(), 3.5);
  EXPECT_EQ(sum(a, 0).values(), (std::vector<double>{5, 7, 9}));
  EXPECT_EQ(sum(a, 1, true).shape(), (Shape{2, 1}));
  EXPECT_EQ(transpose(a).values(), (std::vector<double>{1, 4, 2, 5, 3, 6}));
  EXPECT_EQ(slice(a, 1, 1, 2).values(), (std::vector<double>{2, 3, 5, 6}));
  EXPECT_EQ(concat<double>({a, a}, 0).shape(), (Shape{4, 3}));
  EXPECT_EQ(reshape(a, Shape{3, 2}).shape(), (Shape{3, 2}));
  EXPECT_THROW(reshape(a, Shape{4, 2}), ShapeError);
  const Tensor<double> c(Shape{2, 3, 4});
  EXPECT_EQ(permute(c, {2, 0, 1}).shape(), (Shape{4, 2, 3}));
}

TEST(Ops, MatmulMatchesHandComputation) {
  const auto a = t2(2, 3, {1, 2, 3, 4, 5, 6});
  const auto b = t2(3, 2, {7, 8, 9, 10, 11, 12});
  EXPECT_EQ(matmul(a, b).values(), (std::vector<double>{58, 64, 139, 154}));
  EXPECT_THROW(matmul(a, a), ShapeError);
  // Batched left operand against a shared right operand.
  Tensor<double> batched(Shape{2, 2, 3});
  for (std::size_t i = 0; i < 12; ++i)
    batched[i] = a[i % 6];
  EXPECT_EQ(matmul(batched, b).values(), (std::vector<double>{58, 64, 139, 154, 58, 64, 139, 154}));
}

TEST(Ops, SoftmaxRowsSumToOneAndLogSoftmaxAgrees) {
  Rng rng(3);
  const auto x = random_tensor({4, 5}, rng, -3, 3);
  const auto p = softmax(x, -1);
  const auto lp = log_softmax(x, -1);
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 5; ++c) {
      s += p[r * 5 + c];
      EXPECT_NEAR(std::log(p[r * 5 + c]), lp[r * 5 + c], 1e-12);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Ops, SoftmaxIsStableForLargeInputs) {
  const auto p = softmax(t2(1, 2, {1000, 0}), -1);
  EXPECT_NEAR(p[0], 1.0, 1e-12);
  EXPECT_NEAR(p[1], 0.0, 1e-12);
}

TEST(Ops, LayerNormNormalizesLastAxis) {
  const auto x = t2(1, 4, {1, 2, 3, 4});
  const auto y = layer_norm(x, Tensor<double>(Shape{4}, 1.0), Tensor<double>(Shape{4}, 0.0), 1e-12);
  const double sd = std::sqrt(1.25);
  EXPECT_NEAR(y[0], -1.5 / sd, 1e-10);
  EXPECT_NEAR(y[3], 1.5 / sd, 1e-10);
  EXPECT_THROW(layer_norm(x, Tensor<double>(Shape{4}, 1.0), Tensor<double>(Shape{4}, 0.0), 0.0), ConfigError);
}

TEST(Ops, GluGatesSecondHalf) {
  const auto y = glu(t2(1, 4, {1, 2, 0, 100}));
  EXPECT_NEAR(y[0], 0.5, 1e-12);
  EXPECT_NEAR(y[1], 2.0, 1e-12);
}

TEST(Ops, DepthwiseConvHandCase) {
  // One channel, kernel [1, 2, 3] centred on each output frame.
  const Tensor<double> x(Shape{1, 4, 1}, std::vector<double>{1, 2, 3, 4});
  const Tensor<double> k(Shape{1, 3}, std::vector<double>{1, 2, 3});
  EXPECT_EQ(depthwise_conv1d(x, k).values(), (std::vector<double>{8, 14, 20, 11}));
  const auto strided = depthwise_conv1d(x, k, 2);
  EXPECT_EQ(strided.values(), (std::vector<double>{8, 20}));
  EXPECT_THROW(depthwise_conv1d(x, Tensor<double>(Shape{1, 2})), ConfigError);
}

TEST(Ops, MaskedFillReplacesAndBlocksGradient) {
  auto x = t2(1, 3, {1, 2, 3});
  x.set_requires_grad(true);
  const Tensor<double> mask(Shape{1, 3}, std::vector<double>{0, 1, 0});
  Tape<double>::current().reset();
  const auto y = masked_fill(x, mask, -5.0);
  EXPECT_EQ(y.values(), (std::vector<double>{1, -5, 3}));
  backward(sum(y));
  EXPECT_EQ(x.grad().values(), (std::vector<double>{1, 0, 1}));
  Tape<double>::current().reset();
}

TEST(Ops, DropoutIsIdentityInEvalAndUnbiasedInTraining) {
  Rng rng(1);
  const Tensor<double> x(Shape{20000}, 1.0);
  EXPECT_EQ(dropout(x, 0.5, rng, false).values(), x.values());
  const auto y = dropout(x, 0.25, rng, true);
  EXPECT_NEAR(mean(y).item(), 1.0, 0.03);
}

TEST(Ops, NonFiniteOutputsAreRejected) {
  EXPECT_THROW(log(Tensor<double>(Shape{1}, 0.0)), NumericError);
  EXPECT_THROW(div(Tensor<double>(Shape{1}, 1.0), Tensor<double>(Shape{1}, 0.0)), NumericError);
}

TEST(Autodiff, LeafGradientsAccumulateAcrossBackwardCalls) {
  auto x = Tensor<double>::scalar(3.0);
  x.set_requires_grad(true);
  auto &tape = Tape<double>::current();
  tape.reset();
  const auto y = mul(x, x);
  backward(y);
  backward(y);
  EXPECT_DOUBLE_EQ(x.grad().item(), 12.0);
  tape.reset();
}

TEST(Autodiff, BackwardRejectsBadRoots) {
  auto &tape = Tape<double>::current();
  tape.reset();
  auto x = Tensor<double>(Shape{2}, 1.0);
  x.set_requires_grad(true);
  EXPECT_THROW(backward(scale(x, 2.0)), UsageError); // not a scalar
  EXPECT_THROW(backward(Tensor<double>::scalar(1.0)), UsageError);
  tape.reset();
}

TEST(Autodiff, NoGradGuardSkipsRecording) {
  auto x = Tensor<double>(Shape{2}, 1.0);
  x.set_requires_grad(true);
  auto &tape = Tape<double>::current();
  tape.reset();
  {
    NoGradGuard guard;
    const auto y = exp(x);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_EQ(tape.size(), 0u);
}

TEST(GradCheck, DetectsInjectedGradientFault) {
  Rng rng(11);
  const auto x = random_tensor({3}, rng);
  const auto r = grad_check([&] { return sum(square(x)); }, {x}, 1e-5,
                            [](std::vector<std::vector<double>> &g) { g[0][1] += 0.01; });
  EXPECT_GT(r.max_rel_err, 1e-3);
  EXPECT_EQ(r.worst_index, 1u);
}

TEST(GradCheck, ElementwisePrimitives) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const auto a = away_from_zero({2, 3}, rng);
    const auto b = away_from_zero({2, 3}, rng);
    const auto pos = random_tensor({2, 3}, rng, 0.5, 2.0);
    const auto row = away_from_zero({3}, rng);
    expect_grad_ok([&] { return sum(mul(add(a, row), sub(b, a))); }, {a, b, row});
    expect_grad_ok([&] { return sum(div(a, add_scalar(square(b), 0.5))); }, {a, b});
    expect_grad_ok([&] { return sum(exp(a)); }, {a});
    expect_grad_ok([&] { return sum(log(pos)); }, {pos});
    expect_grad_ok([&] { return sum(sqrt(pos)); }, {pos});
    expect_grad_ok([&] { return sum(mul(abs(a), b)); }, {a, b});
    expect_grad_ok([&] { return sum(mul(sigmoid(a), b)); }, {a, b});
    expect_grad_ok([&] { return sum(mul(swish(a), b)); }, {a, b});
    expect_grad_ok([&] { return sum(mul(relu(a), b)); }, {a, b});
    expect_grad_ok([&] { return sum(scale(neg(a), 3.0)); }, {a});
  }
}

TEST(GradCheck, StructuralPrimitives) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(100 + seed);
    const auto x = random_tensor({2, 3, 4}, rng);
    const auto w = random_tensor({2, 3, 4}, rng);
    const auto m = random_tensor({4, 5}, rng);
    const auto bm = random_tensor({2, 4, 2}, rng);
    const auto bias = random_tensor({5}, rng);
    expect_grad_ok([&] { return sum(mul(reshape(x, Shape{6, 4}), reshape(w, Shape{6, 4}))); }, {x, w});
    expect_grad_ok([&] { return sum(mul(permute(x, {2, 0, 1}), permute(w, {2, 0, 1}))); }, {x, w});
    expect_grad_ok([&] { return sum(square(sum(x, 1))); }, {x});
    expect_grad_ok([&] { return sum(square(mean(x, -1, true))); }, {x});
    expect_grad_ok([&] { return sum(square(slice(x, 2, 1, 2))); }, {x});
    expect_grad_ok([&] { return sum(square(concat<double>({x, w}, 1))); }, {x, w});
    expect_grad_ok([&] { return sum(square(matmul(x, m))); }, {x, m});
    expect_grad_ok([&] { return sum(square(matmul(x, bm))); }, {x, bm});
    expect_grad_ok([&] { return sum(square(linear(x, m, bias))); }, {x, m, bias});
    expect_grad_ok([&] { return sum(square(transpose(x))); }, {x});
  }
}

TEST(GradCheck, NormalizationAndAttentionPrimitives) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(200 + seed);
    const auto x = random_tensor({2, 3, 4}, rng, -2, 2);
    const auto w = random_tensor({2, 3, 4}, rng);
    const auto gamma = random_tensor({4}, rng, 0.5, 1.5);
    const auto beta = random_tensor({4}, rng);
    const auto k = random_tensor({4, 3}, rng);
    Tensor<double> mask(Shape{2, 1, 4});
    mask[3] = 1;
    expect_grad_ok([&] { return sum(mul(softmax(x, -1), w)); }, {x, w});
    expect_grad_ok([&] { return sum(mul(softmax(x, 1), w)); }, {x, w});
    expect_grad_ok([&] { return sum(mul(log_softmax(x, -1), w)); }, {x, w});
    expect_grad_ok([&] { return sum(mul(layer_norm(x, gamma, beta), w)); }, {x, gamma, beta});
    expect_grad_ok([&] { return sum(mul(glu(x), slice(w, 2, 0, 2))); }, {x, w});
    expect_grad_ok([&] { return sum(mul(masked_fill(x, mask, -3.0), w)); }, {x, w});
    expect_grad_ok([&] { return sum(mul(depthwise_conv1d(x, k), w)); }, {x, k});
    expect_grad_ok([&] { return sum(square(depthwise_conv1d(x, k, 2))); }, {x, k});
    expect_grad_ok(
        [&] {
          Rng drop(7);
          return sum(mul(dropout(x, 0.3, drop, true), w));
        },
        {x, w});
  }
}

TEST(Serialize, TensorRoundTripIsBitExact) {
  Rng rng(5);
  const auto t = random_tensor<float>({3, 4}, rng);
  std::stringstream ss;
  write_tensor(ss, t);
  const auto back = read_tensor<float>(ss);
  EXPECT_EQ(back.shape(), t.shape());
  EXPECT_EQ(back.values(), t.values());
}

TEST(Serialize, TruncatedAndBogusInputsFail) {
  const Tensor<double> t(Shape{2, 2}, 1.0);
  std::stringstream ss;
  write_tensor(ss, t);
  const std::string bytes = ss.str();
  for (const std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{7}, bytes.size() - 1}) {
    std::istringstream is(bytes.substr(0, cut));
    EXPECT_THROW(read_tensor<double>(is), FormatError) << "cut at " << cut;
  }
  std::string bad = bytes;
  bad[0] = 'X';
  std::istringstream is(bad);
  EXPECT_THROW(read_tensor<double>(is), FormatError);
}

TEST(Rng, StreamsAreReproducibleAndIndependent) {
  auto a = set_global_seed(42), b = set_global_seed(42), c = set_global_seed(43);
  EXPECT_EQ(a.data.next_u64(), b.data.next_u64());
  EXPECT_NE(a.init.next_u64(), a.augment.next_u64());
  EXPECT_NE(b.dropout.next_u64(), c.dropout.next_u64());
  Rng r(9);
  double s = 0, s2 = 0;
  for (int i = 0; i < 20000; ++i) {
    const double v = r.normal();
    s += v;
    s2 += v * v;
  }
  EXPECT_NEAR(s / 20000, 0.0, 0.03);
  EXPECT_NEAR(s2 / 20000, 1.0, 0.05);
}
