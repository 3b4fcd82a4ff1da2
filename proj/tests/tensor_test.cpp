#include <gtest/gtest.h>

#include <anerf/gradcheck.hpp>
#include <anerf/gradient_suite.hpp>
#include <anerf/ops.hpp>
#include <cmath>
#include <set>

#include "test_util.hpp"

using namespace anerf;
using anerf::testing::random_tensor;

class OpGradient : public ::testing::TestWithParam<OpGradientCase> {};

TEST_P(OpGradient, MatchesCentralDifferences) {
  const auto& c = GetParam();
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(seed + 7);
    auto inputs = c.make_inputs(rng);
    Rng wrng(1234);
    Tensor weights;
    auto report = grad_check(
        [&](const std::vector<Tensor>& x) {
          const Tensor y = c.apply(x);
          if (!weights.defined()) weights = random_tensor(y.shape(), wrng, 0.5, 1.5);
          return sum(mul(y, weights));
        },
        inputs, {.step = 1e-5, .tolerance = 1e-4});
    EXPECT_TRUE(report.passed) << c.name << " seed " << seed << " worst rel err " << report.worst;
  }
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient, ::testing::ValuesIn(op_gradient_cases()),
                         [](const auto& info) { return info.param.name; });

TEST(OpGradientSuite, CoversEveryRegisteredOp) {
  std::set<std::string> covered;
  for (const auto& c : op_gradient_cases()) {
    Rng rng(0);
    auto inputs = c.make_inputs(rng);
    for (auto& t : inputs) t.set_requires_grad(true);
    const Tensor y = c.apply(inputs);
    ASSERT_NE(y.impl()->node, nullptr) << c.name;
    EXPECT_EQ(std::string(y.impl()->node->name), c.op) << c.name;
    covered.insert(y.impl()->node->name);
  }
  for (const auto& op : registered_ops()) EXPECT_TRUE(covered.count(op)) << op << " has no gradient case";
}

TEST(OpGradientSuite, LibraryRunnerPasses) {
  for (const auto& e : run_op_gradient_suite(1)) EXPECT_TRUE(e.passed) << e.name << " " << e.worst;
}

TEST(Tensor, MatmulIdentity) {
  Rng rng(3);
  auto a = random_tensor({3, 3}, rng);
  auto eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto y = matmul(eye, a);
  for (int i = 0; i < 9; ++i) EXPECT_EQ(y.values()[i], a.values()[i]);
}

TEST(Tensor, SoftmaxOfZerosIsUniform) {
  auto y = softmax(Tensor::zeros({3}), 0);
  for (real v : y.values()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Tensor, UnitKernelConvDoubles) {
  Rng rng(5);
  auto img = random_tensor({1, 1, 5, 6}, rng);
  auto y = conv2d(img, Tensor::full({1, 1, 1, 1}, 2.0), Tensor());
  ASSERT_EQ(y.shape(), img.shape());
  for (int i = 0; i < 30; ++i) EXPECT_DOUBLE_EQ(y.values()[i], 2 * img.values()[i]);
}

TEST(Tensor, ConvOutputShape) {
  auto y = conv2d(Tensor::zeros({1, 3, 9, 8}), Tensor::zeros({4, 3, 3, 3}), Tensor::zeros({4}), {2, 1});
  EXPECT_EQ(y.shape(), (Shape{1, 4, 5, 4}));
}

TEST(Autodiff, SquareSumGradient) {
  auto x = Tensor::from({3}, {1, 2, 3}, true);
  sum(square(x)).backward();
  const auto grad = x.grad();
  auto g = grad.values();
  EXPECT_DOUBLE_EQ(g[0], 2);
  EXPECT_DOUBLE_EQ(g[1], 4);
  EXPECT_DOUBLE_EQ(g[2], 6);
}

TEST(Autodiff, ConstantLossHasZeroGradient) {
  auto x = Tensor::from({3}, {1, 2, 3}, true);
  auto c = Tensor::from({2}, {4, 5}, true);
  (sum(c) + sum(scale(x, 0.0))).backward();
  const auto gx = x.grad();
  for (real g : gx.values()) EXPECT_EQ(g, 0);
  // Leaves that never took part still report zeros.
  auto unused = Tensor::zeros({2}, true);
  EXPECT_EQ(unused.grad().numel(), 2);
  const auto gu = unused.grad();
  for (real g : gu.values()) EXPECT_EQ(g, 0);
}

TEST(Autodiff, FanOutAccumulates) {
  auto x = Tensor::from({2}, {1.5, -2}, true);
  sum(add(mul(x, x), x)).backward();
  const Tensor g = x.grad();
  EXPECT_DOUBLE_EQ(g.values()[0], 4.0);
  EXPECT_DOUBLE_EQ(g.values()[1], -3.0);
}

TEST(Autodiff, DetachedTensorsGetNoGradient) {
  auto x = Tensor::from({2}, {1, 2}, true);
  auto d = x.detach();
  EXPECT_FALSE(d.requires_grad());
  sum(mul(d, x)).backward();
  EXPECT_FALSE(d.has_grad());
  EXPECT_DOUBLE_EQ(x.grad().values()[1], 2.0);
}

TEST(Autodiff, NoGradGuardRecordsNothing) {
  auto x = Tensor::from({2}, {1, 2}, true);
  NoGradGuard guard;
  auto y = mul(x, x);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.is_leaf());
}

TEST(Autodiff, RandomCompositeGraph) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    std::vector<Tensor> in{random_tensor({4, 3}, rng), random_tensor({3, 6}, rng), random_tensor({6}, rng)};
    auto fn = [](const std::vector<Tensor>& x) {
      auto h = tanh(matmul(x[0], x[1]) + x[2]);
      auto s = softmax(h, 1);
      auto z = concat({sigmoid(h), exp(scale(s, 0.5))}, 1);
      return mean(square(z)) + sum(softplus(slice(h, 1, 2, 5)));
    };
    auto report = grad_check(fn, in, {.step = 1e-5, .tolerance = 1e-4});
    EXPECT_TRUE(report.passed) << "seed " << seed << " worst " << report.worst;
  }
}

TEST(Autodiff, Linearity) {
  Rng rng(11);
  auto x = random_tensor({5}, rng).set_requires_grad(true);
  auto f = [&] { return sum(sin(x)); };
  auto g = [&] { return sum(mul(exp(x), x)); };
  const real a = 1.7, b = -0.4;
  f().backward();
  auto gf = x.grad();
  x.zero_grad();
  g().backward();
  auto gg = x.grad();
  x.zero_grad();
  (scale(f(), a) + scale(g(), b)).backward();
  auto gc = x.grad();
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(gc.values()[i], a * gf.values()[i] + b * gg.values()[i], 1e-14);
}

TEST(Autodiff, DeterministicAcrossRuns) {
  auto run = [] {
    Rng rng(99);
    auto w = random_tensor({8, 8}, rng).set_requires_grad(true);
    auto x = random_tensor({16, 8}, rng);
    auto loss = mean(square(tanh(matmul(x, w))));
    loss.backward();
    std::vector<real> out{loss.item()};
    const auto gw = w.grad();
    for (real g : gw.values()) out.push_back(g);
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(Autodiff, GradCheckPassesOnSigmoidSum) {
  Rng rng(4);
  auto report = grad_check([](const auto& x) { return sum(sigmoid(x[0])); }, {random_tensor({10}, rng)});
  EXPECT_TRUE(report.passed);
}

TEST(Autodiff, GradCheckCatchesWrongBackward) {
  // Square with a hand-written backward that is off by a factor of two.
  auto bad_square = [](const Tensor& x) {
    std::vector<real> out;
    for (real v : x.values()) out.push_back(v * v);
    return Tensor::make_result("bad_square", x.shape(), std::move(out), {x}, [](detail::TensorImpl& o) {
      auto& in = *o.node->inputs[0];
      auto g = in.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * 4 * in.data[i];
    });
  };
  Rng rng(8);
  auto report = grad_check([&](const auto& x) { return sum(bad_square(x[0])); }, {random_tensor({6}, rng)});
  EXPECT_FALSE(report.passed);
  EXPECT_GT(report.worst, 0.1);
}

TEST(Errors, ShapeMismatchNamesOperation) {
  try {
    add(Tensor::zeros({2, 3}), Tensor::zeros({4}));
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("add"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[2,3]"), std::string::npos);
  }
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
  EXPECT_THROW(concat({Tensor::zeros({2, 3}), Tensor::zeros({3, 3})}, 1), DimensionError);
  EXPECT_THROW(reshape(Tensor::zeros({2, 3}), {4}), DimensionError);
}

TEST(Errors, DivisionByZero) {
  EXPECT_THROW(div(Tensor::full({2}, 1.0), Tensor::from({2}, {1.0, 0.0})), DomainError);
  EXPECT_THROW(log(Tensor::from({2}, {1.0, 0.0})), DomainError);
}

TEST(Errors, BackwardNeedsScalar) {
  auto x = Tensor::zeros({3}, true);
  EXPECT_THROW(square(x).backward(), ContractError);
}

TEST(Errors, NonFiniteLossFailsLoudly) {
  auto x = Tensor::from({1}, {1e300}, true);
  auto y = square(x);
  EXPECT_THROW(y.backward(), NumericError);
}

