// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "op_cases.hpp"
#include "log3d/ops.hpp"
#include "log3d/tensor.hpp"

using namespace log3d;
using ad::Tensor;
using fx::check_gradients;
using fx::random_parameter;
using fx::weighted_sum;
using V = std::vector<Tensor<double>>;

namespace {
constexpr double kTol = 1e-5;
}

TEST(Tensor, ConstructionAndShapeErrors) {
  const auto t = Tensor<double>::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_FALSE(t.requires_grad());
  EXPECT_THROW(Tensor<double>::constant({2, 2}, {1, 2, 3}), ad::ShapeError);
  EXPECT_THROW(ad::add(t, Tensor<double>::zeros({3, 2})), ad::ShapeError);
  EXPECT_THROW(ad::backward(t), ad::ShapeError);
  EXPECT_THROW(ad::reshape(t, {4}), ad::ShapeError);
}

TEST(Tape, TopologicalOrderAndSharedInputs) {
  const auto x = Tensor<double>::parameter({3}, {1, 2, 3});
  const auto y = ad::mul(x, x);
  const auto z = ad::add(y, x);
  const auto loss = ad::sum(z);
  const auto tape = ad::Tape<double>::record(loss);
  const auto& nodes = tape.nodes();
  ASSERT_EQ(nodes.size(), 4u);
  EXPECT_EQ(nodes.back(), loss.node().get());
  ad::backward(loss);
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{3, 5, 7}));
  // Leaves accumulate across sweeps; interior gradients are recomputed.
  ad::backward(loss);
  EXPECT_EQ(x.grad()[0], 6.0);
}

TEST(Tape, ConstantsGetNoGraph) {
  const auto a = Tensor<double>::constant({2}, {1, 2});
  const auto b = ad::exp(ad::scale(a, 2.0));
  EXPECT_TRUE(b.node()->parents.empty());
  EXPECT_FALSE(b.requires_grad());
}

TEST(PairwiseSum, FixedOrderAndExactOnSmallIntegers) {
  std::vector<double> v(1000);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  EXPECT_EQ(ad::pairwise_sum(std::span<const double>(v)), 499500.0);
}

TEST(GradCheck, EveryOp) {
  for (auto& c : fx::op_cases())
    EXPECT_LT(check_gradients(c.loss, c.inputs).worst_relative, kTol) << c.name;
}

TEST(Conv3d, RoutesAgreeWithDirectSum) {
  std::mt19937_64 rng(5);
  for (const auto& [cin, cout] : {std::pair<std::size_t, std::size_t>{2, 3}, {3, 2}}) {
    const auto x = random_parameter({2, cin, 4, 3, 5}, rng), w = random_parameter({cout, cin, 3, 3, 3}, rng),
               b = random_parameter({cout}, rng);
    const auto y = ad::conv3d(x, w, b, 1, 1);
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t o = 0; o < cout; ++o)
        for (int i = 0; i < 4; ++i)
          for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 5; ++k) {
              double acc = b.values()[o];
              for (std::size_t c = 0; c < cin; ++c)
                for (int a = 0; a < 3; ++a)
                  for (int bb = 0; bb < 3; ++bb)
                    for (int cc = 0; cc < 3; ++cc) {
                      const int xi = i + a - 1, xj = j + bb - 1, xk = k + cc - 1;
                      if (xi < 0 || xj < 0 || xk < 0 || xi >= 4 || xj >= 3 || xk >= 5) continue;
                      acc += w.values()[(((o * cin + c) * 3 + a) * 3 + bb) * 3 + cc] *
                             x.values()[(((n * cin + c) * 4 + xi) * 3 + xj) * 5 + xk];
                    }
              ASSERT_NEAR(y.values()[(((n * cout + o) * 4 + i) * 3 + j) * 5 + k], acc, 1e-12);
            }
  }
}

TEST(Maxpool, TiesGoToFirstIndex) {
  const auto x = Tensor<double>::parameter({1, 2, 2, 2}, std::vector<double>(8, 1.0));
  ad::backward(ad::sum(ad::maxpool3d(x, 2, 2)));
  EXPECT_EQ(x.grad()[0], 1.0);
  for (int i = 1; i < 8; ++i) EXPECT_EQ(x.grad()[i], 0.0);
}

TEST(Attention, SingleTokenReturnsValue) {
  const auto q = Tensor<double>::constant({1, 3}, {1, 2, 3});
  const auto v = Tensor<double>::constant({1, 3}, {4, 5, 6});
  const auto y = ad::attention(q, q, v);
  EXPECT_EQ(std::vector<double>(y.values().begin(), y.values().end()), (std::vector<double>{4, 5, 6}));
}

TEST(GatherAssemble, RoundTrip) {
  std::mt19937_64 rng(8);
  const auto x = random_parameter({5, 3}, rng);
  const std::vector<std::vector<std::uint32_t>> groups{{0, 3}, {1, 2, 4}};
  std::vector<Tensor<double>> parts;
  for (const auto& gidx : groups) parts.push_back(ad::gather_rows(x, gidx));
  const auto back = ad::assemble_rows(parts, groups, 5);
  EXPECT_EQ(std::vector<double>(back.values().begin(), back.values().end()),
            std::vector<double>(x.values().begin(), x.values().end()));
}

TEST(Huber, ClosedFormsAndKnee) {
  const double d = 0.1;
  auto huber = [&](double e) {
    return ad::huber_mean(Tensor<double>::constant({1}, {e}), Tensor<double>::constant({1}, {0.0}), d).item();
  };
  EXPECT_DOUBLE_EQ(huber(0.0), 0.0);
  EXPECT_DOUBLE_EQ(huber(d), 0.5 * d * d);
  EXPECT_DOUBLE_EQ(huber(2 * d), 1.5 * d * d);
  EXPECT_DOUBLE_EQ(huber(-2 * d), 1.5 * d * d);
  // Derivative is continuous at |e| = delta: one-sided slopes agree.
  const double h = 1e-7;
  const double left = (huber(d) - huber(d - h)) / h, right = (huber(d + h) - huber(d)) / h;
  EXPECT_NEAR(left, d, 1e-6);
  EXPECT_NEAR(right, d, 1e-6);
}

TEST(Kl, ClosedForms) {
  auto kl = [](double mu, double lv) {
    return ad::kl_mean(Tensor<double>::constant({1}, {mu}), Tensor<double>::constant({1}, {lv})).item();
  };
  EXPECT_DOUBLE_EQ(kl(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(kl(1, 0), 0.5);
}

TEST(FloatInstantiation, MatchesDoubleClosely) {
  std::mt19937_64 rng(10);
  const auto xd = random_parameter({2, 2, 4, 4, 4}, rng), wd = random_parameter({3, 2, 3, 3, 3}, rng),
             bd = random_parameter({3}, rng);
  auto to_float = [](const Tensor<double>& t) {
    return Tensor<float>::parameter(t.shape(), std::vector<float>(t.values().begin(), t.values().end()));
  };
  const auto yd = ad::conv3d(xd, wd, bd, 1, 1);
  const auto yf = ad::conv3d(to_float(xd), to_float(wd), to_float(bd), 1, 1);
  for (std::size_t i = 0; i < yd.numel(); ++i) ASSERT_NEAR(yf.values()[i], yd.values()[i], 1e-4);
}
