#include <cmath>
#include <functional>
#include <vector>

#include <gtest/gtest.h>

#include "olvit/gradcheck.hpp"
#include "olvit/ops.hpp"
#include "olvit/rng.hpp"

using namespace olvit;
using T64 = Tensor<double>;

namespace {

T64 random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal(0.0, scale);
  return T64(std::move(shape), std::move(v));
}

// Naive triple loop.
std::vector<double> naive_matmul(const T64& a, const T64& b) {
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a.at(i, p) * b.at(p, j);
  return c;
}

double fd_max_rel(const std::function<T64(const std::vector<T64>&)>& f, std::vector<T64> inputs) {
  std::vector<NamedTensor> named;
  for (std::size_t i = 0; i < inputs.size(); ++i) named.push_back({"x" + std::to_string(i), inputs[i]});
  auto report = check_gradients([&] { return f(inputs); }, named);
  return report.max_rel_error;
}

}  // namespace

TEST(Tensor, ShapeMatchesData) {
  EXPECT_THROW(T64({2, 3}, std::vector<double>(5)), DimensionError);
  T64 t({2, 3}, std::vector<double>(6, 1.0));
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.dim(1), 3u);
}

TEST(Matmul, IdentityLeavesOperandUnchanged) {
  Rng rng(3);
  auto b = random_tensor({2, 5}, rng);
  auto c = ops::matmul(T64::matrix(2, 2, {1, 0, 0, 1}), b);
  EXPECT_EQ(c.values(), b.values());
}

TEST(Matmul, TwoByTwoProduct) {
  auto c = ops::matmul(T64::matrix(2, 2, {1, 2, 3, 4}), T64::matrix(2, 2, {5, 6, 7, 8}));
  EXPECT_EQ(c.values(), (std::vector<double>{19, 22, 43, 50}));
}

TEST(Matmul, AgreesWithTripleLoop) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = 1 + rng.uniform_int(0, 6), k = 1 + rng.uniform_int(0, 6), n = 1 + rng.uniform_int(0, 6);
    auto a = random_tensor({std::size_t(m), std::size_t(k)}, rng);
    auto b = random_tensor({std::size_t(k), std::size_t(n)}, rng);
    auto c = ops::matmul(a, b);
    auto ref = naive_matmul(a, b);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(c.values()[i], ref[i], 1e-12);
  }
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    ops::matmul(T64::zeros({2, 3}), T64::zeros({2, 3}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
  }
}

TEST(Softmax, UniformInput) {
  auto s = ops::softmax(T64::row({0, 0, 0}), 1);
  for (double v : s.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, ShiftInvariance) {
  Rng rng(5);
  auto x = random_tensor({4, 7}, rng, 3.0);
  std::vector<double> shifted = x.values();
  for (auto& v : shifted) v += 17.25;
  auto a = ops::softmax(x, 1);
  auto b = ops::softmax(T64({4, 7}, shifted), 1);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.values()[i], b.values()[i], 1e-12);
}

TEST(Softmax, LogsOfOneTwoThree) {
  auto s = ops::softmax(T64::row({std::log(1.0), std::log(2.0), std::log(3.0)}), 1);
  EXPECT_NEAR(s.at(0), 1.0 / 6.0, 1e-15);
  EXPECT_NEAR(s.at(1), 2.0 / 6.0, 1e-15);
  EXPECT_NEAR(s.at(2), 3.0 / 6.0, 1e-15);
}

TEST(Softmax, RowsSumToOne) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    auto x = random_tensor({3, 9}, rng, 10.0);
    auto s64 = ops::softmax(x, 1);
    std::vector<float> xf(x.values().begin(), x.values().end());
    auto s32 = ops::softmax(Tensor<float>({3, 9}, xf), 1);
    for (std::size_t r = 0; r < 3; ++r) {
      double a = 0, b = 0;
      for (std::size_t c = 0; c < 9; ++c) {
        a += s64.at(r, c);
        b += s32.at(r, c);
        EXPECT_GE(s64.at(r, c), 0.0);
      }
      EXPECT_NEAR(a, 1.0, 1e-12);
      EXPECT_NEAR(b, 1.0, 1e-6);
    }
  }
}

TEST(Softmax, RejectsNaN) {
  EXPECT_THROW(ops::softmax(T64::row({0.0, std::nan("")}), 1), NumericError);
}

TEST(LayerNorm, ConstantRowBecomesZero) {
  auto y = ops::layer_norm(T64::row({4, 4, 4, 4}), T64({4}, {1, 1, 1, 1}), T64::zeros({4}));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, PlusMinusOneIsFixedPoint) {
  auto y = ops::layer_norm(T64::row({1, -1}), T64({2}, {1, 1}), T64::zeros({2}), 1e-12);
  EXPECT_NEAR(y.at(0), 1.0, 1e-10);
  EXPECT_NEAR(y.at(1), -1.0, 1e-10);
}

TEST(LayerNorm, ConstantRowTakesShift) {
  auto y = ops::layer_norm(T64::row({2, 2, 2}), T64({3}, {1, 1, 1}), T64({3}, {0.5, -1, 3}));
  EXPECT_NEAR(y.at(0), 0.5, 1e-12);
  EXPECT_NEAR(y.at(1), -1.0, 1e-12);
  EXPECT_NEAR(y.at(2), 3.0, 1e-12);
}

TEST(CrossEntropy, UniformOverForty) {
  EXPECT_NEAR(ops::cross_entropy(T64::zeros({40}), 7).item(), std::log(40.0), 1e-12);
}

TEST(CrossEntropy, LargeMarginGoesToZero) {
  std::vector<double> l(5, 0.0);
  l[2] = 80.0;
  EXPECT_LT(ops::cross_entropy(T64({5}, l), 2).item(), 1e-30);
}

TEST(CrossEntropy, MatchesLogSumExp) {
  const double lse = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
  EXPECT_NEAR(ops::cross_entropy(T64({3}, {1, 2, 3}), 2).item(), lse - 3.0, 1e-14);
}

TEST(CrossEntropy, TargetOutOfRange) { EXPECT_THROW(ops::cross_entropy(T64::zeros({3}), 3), IndexError); }

TEST(CrossEntropy, GradientIsSoftmaxMinusOneHot) {
  auto x = T64({4}, {0.3, -1.0, 2.0, 0.5});
  x.set_requires_grad(true);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  tape.backward(ops::cross_entropy(x, 1));
  auto p = ops::softmax(T64::row(x.values()), 1);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(x.grad()[i], p.at(i) - (i == 1 ? 1.0 : 0.0), 1e-14);
}

TEST(Backward, SumGivesOnes) {
  auto x = T64::full({2, 3}, 0.7, true);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  tape.backward(ops::sum_all(x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, HalfSquaredNormGivesInput) {
  auto x = T64({4}, {1.5, -2, 0.25, 3});
  x.set_requires_grad(true);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  tape.backward(ops::scale(ops::sum_all(ops::mul(x, x)), 0.5));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(x.grad()[i], x.values()[i]);
}

TEST(Backward, RepeatedCallsAccumulate) {
  auto x = T64::full({3}, 2.0, true);
  for (int i = 0; i < 3; ++i) {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    tape.backward(ops::sum_all(x));
  }
  for (double g : x.grad()) EXPECT_EQ(g, 3.0);
}

TEST(Backward, NonScalarLossRejected) {
  auto x = T64::full({3}, 2.0, true);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  auto y = ops::scale(x, 2.0);
  EXPECT_THROW(tape.backward(y), DimensionError);
}

TEST(Backward, NoGradScopeRecordsNothing) {
  auto x = T64::full({3}, 2.0, true);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  {
    NoGradScope<double> ng;
    ops::scale(x, 2.0);
  }
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Backward, RandomCompositeMatchesFiniteDifferences) {
  Rng rng(21);
  auto a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
  auto f = [](const std::vector<T64>& x) {
    return ops::sum_all(ops::mul(ops::softmax(ops::matmul(x[0], x[1]), 1), ops::matmul(x[0], x[1])));
  };
  EXPECT_LE(fd_max_rel(f, {a, b}), 1e-4);
}

// Every differentiable primitive, 100 random trials each.
TEST(Gradients, PrimitivesMatchFiniteDifferences) {
  Rng rng(1234);
  using Fn = std::function<T64(const std::vector<T64>&)>;
  struct Case {
    const char* name;
    std::vector<Shape> shapes;
    Fn f;
  };
  auto w = [&](Shape s) { return random_tensor(std::move(s), rng); };
  const auto weights = w({3, 4});
  const auto v4 = w({4}), v3 = w({3});
  auto weigh = [weights](const T64& y) { return ops::sum_all(ops::mul(y, weights)); };
  const std::vector<Case> cases = {
      {"matmul", {{3, 5}, {5, 4}}, [&](auto& x) { return weigh(ops::matmul(x[0], x[1])); }},
      {"linear", {{3, 5}, {4, 5}, {4}}, [&](auto& x) { return weigh(ops::linear(x[0], x[1], x[2])); }},
      {"add", {{3, 4}, {3, 4}}, [&](auto& x) { return weigh(ops::add(x[0], x[1])); }},
      {"sub", {{3, 4}, {3, 4}}, [&](auto& x) { return weigh(ops::sub(x[0], x[1])); }},
      {"mul", {{3, 4}, {3, 4}}, [&](auto& x) { return weigh(ops::mul(x[0], x[1])); }},
      {"row_bias", {{3, 4}, {4}}, [&](auto& x) { return weigh(ops::add_row_bias(x[0], x[1])); }},
      {"scale", {{3, 4}}, [&](auto& x) { return weigh(ops::scale(x[0], -1.7)); }},
      {"concat0", {{1, 4}, {2, 4}}, [&](auto& x) { return weigh(ops::concat<double>({x[0], x[1]}, 0)); }},
      {"concat1", {{3, 1}, {3, 3}}, [&](auto& x) { return weigh(ops::concat<double>({x[0], x[1]}, 1)); }},
      {"slice", {{5, 4}}, [&](auto& x) { return weigh(ops::slice_rows(x[0], 1, 4)); }},
      {"select", {{5, 4}}, [&](auto& x) { return weigh(ops::select_rows(x[0], {4, 0, 4})); }},
      {"gather", {{6, 4}}, [&](auto& x) { return weigh(ops::gather(x[0], {5, 2, 2})); }},
      {"transpose", {{4, 3}}, [&](auto& x) { return weigh(ops::transpose(x[0])); }},
      {"sum0", {{2, 4}}, [&](auto& x) { return ops::sum_all(ops::mul(ops::sum(x[0], 0), v4)); }},
      {"mean1", {{3, 5}}, [&](auto& x) { return ops::sum_all(ops::mul(ops::mean(x[0], 1), v3)); }},
      {"softmax", {{3, 4}}, [&](auto& x) { return weigh(ops::softmax(x[0], 1)); }},
      {"layer_norm", {{3, 4}, {4}, {4}}, [&](auto& x) { return weigh(ops::layer_norm(x[0], x[1], x[2])); }},
      {"gelu", {{3, 4}}, [&](auto& x) { return weigh(ops::gelu(x[0])); }},
      {"cross_entropy", {{1, 7}}, [&](auto& x) { return ops::cross_entropy(x[0], 3); }},
  };
  for (const auto& c : cases) {
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<T64> inputs;
      for (const auto& s : c.shapes) inputs.push_back(random_tensor(s, rng));
      worst = std::max(worst, fd_max_rel(c.f, inputs));
    }
    EXPECT_LE(worst, 1e-4) << c.name;
  }
}

TEST(Determinism, SameSeedSameBits) {
  auto run = [] {
    Rng rng(99);
    auto a = random_tensor({4, 6}, rng), b = random_tensor({6, 3}, rng);
    return ops::softmax(ops::matmul(a, b), 1).values();
  };
  EXPECT_EQ(run(), run());
}

TEST(Dropout, RateZeroIsIdentityAndSeedIsDeterministic) {
  Rng rng(4);
  auto x = random_tensor({5, 5}, rng);
  EXPECT_EQ(ops::dropout(x, 0.0, 1).values(), x.values());
  EXPECT_EQ(ops::dropout(x, 0.5, 7).values(), ops::dropout(x, 0.5, 7).values());
}
