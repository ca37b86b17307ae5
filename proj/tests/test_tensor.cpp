#include <gtest/gtest.h>

#include <boost/multiprecision/cpp_dec_float.hpp>

#include <cmath>
#include <functional>

#include "faust/grad_check.hpp"
#include "faust/ops.hpp"
#include "faust/tensor.hpp"
#include "oracles.hpp"

using namespace faust;
using T64 = Tensor<double>;

namespace {

T64 random_tensor(Shape shape, unsigned long long seed, double lo = -2.0, double hi = 2.0) {
  oracle::Rand r(seed);
  const auto n = numel(shape);
  return T64(std::move(shape), r.fill(n, lo, hi));
}

double check(const std::function<T64(const T64&)>& f, const T64& x) {
  const auto r = grad_check<double>(f, x, 1e-6);
  EXPECT_FALSE(r.nan_at.has_value());
  return r.max_relative_error;
}

}  // namespace

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(T64(Shape{2, 3}, std::vector<double>(5)), ShapeError);
  EXPECT_THROW(T64(Shape{0}, std::vector<double>{}), ShapeError);
  T64 t(Shape{2, 3}, std::vector<double>(6, 1.0));
  EXPECT_EQ(t.size(), numel(t.shape()));
}

TEST(Tensor, NoGradientWithoutRequiresGrad) {
  T64 a = T64::vector({1.0, 2.0});
  T64 b = T64::vector({3.0, 4.0}).set_requires_grad(true);
  sum(mul(a, b)).backward();
  EXPECT_FALSE(a.has_grad());
  ASSERT_TRUE(b.has_grad());
  EXPECT_EQ(b.grad()[0], 1.0);
  EXPECT_EQ(b.grad()[1], 2.0);
}

TEST(Ops, MatmulIdentity) {
  auto eye = T64::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  auto a = T64::matrix({{1.5, -2}, {3, 4}, {0.25, 7}});
  auto c = matmul(eye, a);
  EXPECT_EQ(c.shape(), a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(c[i], a[i]);
}

TEST(Ops, MatmulShapeErrorNamesOpAndShapes) {
  try {
    matmul(random_tensor({2, 3}, 1), random_tensor({2, 3}, 2));
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("(2, 3)"), std::string::npos);
  }
  EXPECT_THROW(add(random_tensor({2}, 1), random_tensor({3}, 2)), ShapeError);
}

TEST(Ops, Relu) {
  auto y = relu(T64::vector({-1.0, 0.0, 2.0}));
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 0.0);
  EXPECT_EQ(y[2], 2.0);
}

TEST(Ops, StdOfConstantIsZero) {
  auto s = std_first(T64(Shape{5, 1}, std::vector<double>(5, 3.25)));
  EXPECT_EQ(s.item(), 0.0);
  EXPECT_THROW(std_first(T64(Shape{1, 3}, std::vector<double>(3, 1.0))), ValueError);
}

TEST(Softmax, UniformLogits) {
  for (double t : {0.025, 1.0, 7.0}) {
    auto y = softmax(T64::vector({0.0, 0.0, 0.0}), t);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(y[i], 1.0 / 3.0, 1e-15);
  }
}

TEST(Softmax, TwoLogitsClosedForm) {
  auto y = softmax(T64::vector({1.0, 0.0}), 1.0);
  const double e = std::exp(1.0);
  EXPECT_NEAR(y[0], e / (e + 1.0), 1e-15);
  EXPECT_NEAR(y[1], 1.0 / (e + 1.0), 1e-15);
  EXPECT_NEAR(y[0], 0.7311, 1e-4);
}

TEST(Softmax, SharpenedAgainstArbitraryPrecision) {
  using Big = boost::multiprecision::cpp_dec_float_100;
  const Big z1 = exp(Big(1) / Big("0.025"));
  const Big z0 = exp(Big(0));
  const double p0 = static_cast<double>(z1 / (z1 + z0));
  const double p1 = static_cast<double>(z0 / (z1 + z0));

  auto y = softmax(T64::vector({1.0, 0.0}), 0.025);
  EXPECT_GT(y[0], 1.0 - 1e-15);
  EXPECT_DOUBLE_EQ(y[0], p0);
  EXPECT_NEAR(y[1], p1, 1e-12 * p1);
}

TEST(Softmax, SumsToOneAndShiftInvariant) {
  auto x = random_tensor({6, 5}, 11, -5, 5);
  auto y = softmax(x, 0.3);
  auto shifted = softmax(add_scalar(x, 17.5), 0.3);
  for (std::size_t r = 0; r < 6; ++r) {
    double t = 0.0;
    for (std::size_t j = 0; j < 5; ++j) {
      t += y[r * 5 + j];
      EXPECT_GT(y[r * 5 + j], 0.0);
      EXPECT_NEAR(y[r * 5 + j], shifted[r * 5 + j], 1e-12);
    }
    EXPECT_NEAR(t, 1.0, 1e-9);
  }
}

TEST(Softmax, RejectsNonPositiveTemperature) {
  EXPECT_THROW(softmax(T64::vector({1.0, 2.0}), 0.0), ValueError);
  EXPECT_THROW(softmax(T64::vector({1.0, 2.0}), -1.0), ValueError);
}

TEST(L2Normalize, Examples) {
  auto y = l2_normalize(T64::vector({3.0, 4.0}));
  EXPECT_NEAR(y[0], 0.6, 1e-15);
  EXPECT_NEAR(y[1], 0.8, 1e-15);

  auto u = T64::vector({0.0, 1.0, 0.0});
  auto uu = l2_normalize(u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(uu[i], u[i]);

  auto zero = l2_normalize(T64::vector({0.0, 0.0, 0.0}));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(zero[i], 0.0);
}

TEST(L2Normalize, UnitNormAndScaleInvariant) {
  auto x = random_tensor({7, 4}, 5);
  auto y = l2_normalize(x);
  auto yc = l2_normalize(scale(x, 12.5));
  for (std::size_t r = 0; r < 7; ++r) {
    double n = 0.0;
    for (std::size_t j = 0; j < 4; ++j) {
      n += y[r * 4 + j] * y[r * 4 + j];
      EXPECT_NEAR(y[r * 4 + j], yc[r * 4 + j], 1e-12);
    }
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-9);
  }
}

TEST(L2Normalize, ZeroVectorHasFiniteGradient) {
  T64 x = T64::vector({0.0, 0.0});
  x.set_requires_grad(true);
  sum(l2_normalize(x)).backward();
  for (double g : x.grad()) EXPECT_TRUE(std::isfinite(g));
}

TEST(Backward, SumGivesOnes) {
  auto x = random_tensor({3, 4}, 3);
  x.set_requires_grad(true);
  sum(x).backward();
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, MeanOfSquares) {
  T64 x = T64::vector({1.0, 2.0});
  x.set_requires_grad(true);
  mean(mul(x, x)).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 1.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 2.0);
}

TEST(Backward, FanOutSumsContributions) {
  // f(x) = x*x + x, df/dx = 2x + 1
  T64 x = T64::vector({-1.5, 0.0, 2.0});
  x.set_requires_grad(true);
  sum(add(mul(x, x), x)).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], -2.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 1.0);
  EXPECT_DOUBLE_EQ(x.grad()[2], 5.0);
}

TEST(Backward, AccumulatesUntilZeroed) {
  T64 x = T64::vector({1.0, 2.0});
  x.set_requires_grad(true);
  auto loss = sum(scale(x, 3.0));
  loss.backward();
  loss.backward();
  EXPECT_EQ(x.grad()[0], 6.0);
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
}

TEST(Backward, RejectsNonScalar) {
  auto x = random_tensor({3}, 1);
  x.set_requires_grad(true);
  EXPECT_THROW(mul(x, x).backward(), ValueError);
}

TEST(GradCheck, SumIsExact) {
  EXPECT_LT(check([](const T64& x) { return sum(x); }, random_tensor({4, 3}, 9)), 1e-9);
}

TEST(GradCheck, SoftmaxSumOfSquares) {
  auto f = [](const T64& x) {
    auto y = softmax(x, 0.7);
    return sum(mul(y, y));
  };
  EXPECT_LT(check(f, random_tensor({3, 5}, 21)), 1e-5);
}

TEST(GradCheck, ReportsNaN) {
  auto f = [](const T64& x) { return sum(log(x)); };
  const auto r = grad_check<double>(f, T64::vector({-1.0, 1.0}));
  ASSERT_TRUE(r.nan_at.has_value());
  EXPECT_EQ(r.nan_at->second, 0u);
}

// Every primitive against central differences on inputs in [-2, 2].
TEST(GradCheck, Primitives) {
  const auto x = random_tensor({3, 4}, 77);
  const auto pos = random_tensor({3, 4}, 78, 0.2, 2.0);
  const auto other = random_tensor({3, 4}, 79);
  const auto w = random_tensor({5, 4}, 80);
  const auto bias = random_tensor({5}, 81);

  EXPECT_LT(check([&](const T64& a) { return sum(mul(a, other)); }, x), 1e-5);
  EXPECT_LT(check([&](const T64& a) { return sum(mul(sub(a, other), a)); }, x), 1e-5);
  EXPECT_LT(check([](const T64& a) { return sum(exp(a)); }, x), 1e-5);
  EXPECT_LT(check([](const T64& a) { return sum(log(a)); }, pos), 1e-5);
  EXPECT_LT(check([](const T64& a) { return sum(log_clamped(a)); }, pos), 1e-5);
  EXPECT_LT(check([&](const T64& a) { return mean(mul(a, other)); }, x), 1e-5);
  EXPECT_LT(check([&](const T64& a) { return sum(mul(sum_last(a), sum_last(other))); }, x), 1e-5);
  EXPECT_LT(check([](const T64& a) { return sum(std_first(a)); }, x), 1e-5);
  EXPECT_LT(check([](const T64& a) { return sum(l2_norm(a)); }, x), 1e-5);
  EXPECT_LT(check([&](const T64& a) { return sum(mul(l2_normalize(a), other)); }, x), 1e-5);
  EXPECT_LT(check([&](const T64& a) { return sum(mul(softmax(a, 0.5), other)); }, x), 1e-5);
  EXPECT_LT(check([&](const T64& a) { return sum(mul(log_softmax(a), other)); }, x), 1e-5);
  EXPECT_LT(check([&](const T64& a) { return sum(mul(matmul(a, transpose(w)), matmul(a, transpose(w)))); }, x), 1e-5);
  EXPECT_LT(check([&](const T64& a) { return sum(mul(matmul(other, transpose(a)), matmul(other, transpose(a)))); }, x), 1e-5);
  EXPECT_LT(check([&](const T64& a) { return sum(mul(linear(a, w, bias), linear(a, w, bias))); }, x), 1e-5);
  EXPECT_LT(check([&](const T64& a) { return sum(mul(linear(x, a, bias), linear(x, a, bias))); }, w), 1e-5);
  EXPECT_LT(check([&](const T64& a) { return sum(mul(linear(x, w, a), linear(x, w, a))); }, bias), 1e-5);
  EXPECT_LT(check([&](const T64& a) { return sum(mul(concat<double>({a, other}), concat<double>({other, a}))); }, x), 1e-5);
  EXPECT_LT(check([&](const T64& a) { return sum(mul(repeat(a, 3), repeat(other, 3))); }, x), 1e-5);
  EXPECT_LT(check([&](const T64& a) { return sum(mul(slice(a, 1, 3), slice(other, 0, 2))); }, x), 1e-5);

  // relu away from the kink
  auto away = x.clone();
  for (auto& v : away.mutable_data()) v = std::abs(v) < 0.05 ? 0.3 : v;
  EXPECT_LT(check([&](const T64& a) { return sum(mul(relu(a), other)); }, away), 1e-5);
}

TEST(GradCheck, Conv2d) {
  const auto x = random_tensor({2, 2, 6, 5}, 90);
  const auto w = random_tensor({3, 2, 3, 3}, 91);
  const auto b = random_tensor({3}, 92);
  auto sq = [](const T64& y) { return sum(mul(y, y)); };
  EXPECT_LT(check([&](const T64& a) { return sq(conv2d(a, w, b)); }, x), 1e-5);
  EXPECT_LT(check([&](const T64& a) { return sq(conv2d(x, a, b)); }, w), 1e-5);
  EXPECT_LT(check([&](const T64& a) { return sq(conv2d(x, w, a)); }, b), 1e-5);
}

TEST(Ops, Conv2dAgainstDirectLoop) {
  const auto x = random_tensor({2, 2, 5, 6}, 31);
  const auto w = random_tensor({3, 2, 2, 3}, 32);
  const auto b = random_tensor({3}, 33);
  const auto y = conv2d(x, w, b);
  ASSERT_EQ(y.shape(), (Shape{2, 3, 4, 4}));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t o = 0; o < 3; ++o)
      for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 4; ++c) {
          double acc = b[o];
          for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t u = 0; u < 2; ++u)
              for (std::size_t v = 0; v < 3; ++v)
                acc += w[((o * 2 + i) * 2 + u) * 3 + v] * x[((n * 2 + i) * 5 + r + u) * 6 + c + v];
          EXPECT_NEAR(y[((n * 3 + o) * 4 + r) * 4 + c], acc, 1e-12);
        }
}
