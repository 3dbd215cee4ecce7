#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "cct/errors.hpp"
#include "cct/gradcheck.hpp"
#include "cct/ops.hpp"
#include "cct/tape.hpp"
#include "reference.hpp"

using namespace cct;
using T64 = Tensor<double>;

namespace {

T64 mat(std::int64_t r, std::int64_t c, std::vector<double> v, bool grad = false) {
  return T64(Shape{r, c}, std::move(v), grad);
}

std::vector<double> values(const T64& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

// ---------------------------------------------------------------------------
// tensor and tape

TEST(Tensor, ShapeAndDataAgree) {
  EXPECT_THROW(T64(Shape{2, 3}, std::vector<double>(5)), ShapeError);
  EXPECT_THROW(T64(Shape{2, 0}, {}), ShapeError);
  const auto t = T64::zeros({2, 3});
  EXPECT_EQ(t.numel(), 6);
  EXPECT_EQ(t.dim(-1), 3);
  EXPECT_FALSE(t.has_grad());
}

TEST(Tensor, CloneIsDeepAndDetachDropsIdentity) {
  auto a = T64::full({2}, 1.0, true);
  auto c = a.clone();
  c.mutable_data()[0] = 5.0;
  EXPECT_EQ(a.data()[0], 1.0);
  const auto d = a.detach();
  EXPECT_FALSE(d.requires_grad());
}

TEST(Tape, SumOfSquaresGradientIsTwoX) {
  auto x = T64(Shape{3}, {1.0, -2.0, 0.5}, true);
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    tape.backward(ops::sum(ops::mul(x, x)));
  }
  EXPECT_EQ(values(T64(Shape{3}, {x.grad().begin(), x.grad().end()})), (std::vector<double>{2.0, -4.0, 1.0}));
}

TEST(Tape, RepeatedBackwardAccumulatesLeafGrads) {
  auto x = T64(Shape{2}, {1.0, 3.0}, true);
  for (int i = 0; i < 2; ++i) {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    tape.backward(ops::sum(ops::scale(x, 2.0)));
  }
  EXPECT_EQ(x.grad()[0], 4.0);
  EXPECT_EQ(x.grad()[1], 4.0);
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
}

TEST(Tape, NonScalarLossIsAContractError) {
  auto x = T64(Shape{2}, {1.0, 3.0}, true);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  auto y = ops::scale(x, 2.0);
  EXPECT_THROW(tape.backward(y), ContractError);
}

TEST(Tape, LossFromAnotherTapeIsRejected) {
  auto x = T64(Shape{1}, {1.0}, true);
  Tape<double> a, b;
  T64 loss;
  {
    TapeScope<double> scope(a);
    loss = ops::sum(ops::mul(x, x));
  }
  EXPECT_THROW(b.backward(loss), ContractError);
}

TEST(Tape, NothingIsRecordedWithoutTapeOrUnderNoGrad) {
  auto x = T64(Shape{2}, {1.0, 2.0}, true);
  auto y = ops::mul(x, x);
  EXPECT_FALSE(y.requires_grad());
  Tape<double> tape;
  TapeScope<double> scope(tape);
  {
    NoGradScope<double> no_grad;
    ops::mul(x, x);
  }
  EXPECT_EQ(tape.size(), 0u);
  ops::mul(x, x);
  EXPECT_EQ(tape.size(), 1u);
}

TEST(Tape, DiamondGraphVisitsSharedNodeOnce) {
  // y = a*a + a*a where a = 3x; dy/dx = 4 * 3 * a = 36x.
  auto x = T64(Shape{1}, {2.0}, true);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  auto a = ops::scale(x, 3.0);
  tape.backward(ops::sum(ops::add(ops::mul(a, a), ops::mul(a, a))));
  EXPECT_DOUBLE_EQ(x.grad()[0], 72.0);
}

// ---------------------------------------------------------------------------
// matmul

TEST(Matmul, IdentityAndHandCase) {
  const auto a = mat(2, 2, {1, 2, 3, 4});
  EXPECT_EQ(values(ops::matmul(a, mat(2, 2, {1, 0, 0, 1}))), (std::vector<double>{1, 2, 3, 4}));
  EXPECT_EQ(values(ops::matmul(a, mat(2, 2, {5, 6, 7, 8}))), (std::vector<double>{19, 22, 43, 50}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    ops::matmul(T64::zeros({2, 3}), T64::zeros({2, 3}));
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("[2, 3]"), std::string::npos);
  }
}

TEST(Matmul, MatchesReferenceAcrossBlockingBoundaries) {
  Rng rng(11);
  for (auto [m, k, n] : {std::array<std::int64_t, 3>{1, 1, 1}, {5, 300, 7}, {70, 33, 40}, {129, 257, 65}}) {
    const auto a = ref::randn<double>({m, k}, rng), b = ref::randn<double>({k, n}, rng);
    const auto want = ref::matmul(ref::rows_of(a, 0, m, k), ref::rows_of(b, 0, k, n));
    const auto got = ops::matmul(a, b);
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < n; ++j)
        ASSERT_NEAR(got.at({i, j}), want[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)], 1e-9);
  }
}

TEST(Matmul, TransposedAndBroadcastForms) {
  Rng rng(3);
  const auto a = ref::randn<double>({2, 3, 4, 5}, rng);
  const auto b = ref::randn<double>({3, 6, 5}, rng);  // suffix-broadcast, transposed
  const auto y = ops::matmul(a, b, true);
  ASSERT_EQ(y.shape(), (Shape{2, 3, 4, 6}));
  for (std::int64_t p = 0; p < 2; ++p)
    for (std::int64_t q = 0; q < 3; ++q) {
      const auto am = ref::rows_of(a, (p * 3 + q) * 4, 4, 5);
      const auto bm = ref::transpose(ref::rows_of(b, q * 6, 6, 5));
      const auto want = ref::matmul(am, bm);
      for (std::int64_t i = 0; i < 4; ++i)
        for (std::int64_t j = 0; j < 6; ++j)
          ASSERT_NEAR(y.at({p, q, i, j}), want[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)], 1e-12);
    }
}

TEST(Matmul, FloatResultDoesNotDependOnRowBlocking) {
  // Row 0 computed alone must equal row 0 of the full product bit for bit.
  Rng rng(5);
  const auto a = ref::randn<float>({67, 301}, rng), b = ref::randn<float>({301, 45}, rng);
  const auto full = ops::matmul(a, b);
  const auto row = ops::matmul(Tensor<float>(Shape{1, 301}, {a.data().begin(), a.data().begin() + 301}), b);
  for (std::int64_t j = 0; j < 45; ++j) ASSERT_EQ(full.at({0, j}), row.at({0, j}));
}

TEST(Matmul, GradientOfSumMatchesFiniteDifferences) {
  Rng rng(7);
  const auto r = grad_check([](std::span<const T64> x) { return ops::sum(ops::matmul(x[0], x[1])); },
                            {ref::randn<double>({3, 4}, rng), ref::randn<double>({4, 2}, rng)});
  EXPECT_LT(r.max_rel_error, 1e-6);
}

// ---------------------------------------------------------------------------
// conv2d and maxpool2d

TEST(Conv2d, CenteredDeltaKernelIsIdentity) {
  Rng rng(1);
  const auto x = ref::randn<double>({2, 1, 5, 5}, rng);
  std::vector<double> w(9, 0.0);
  w[4] = 1.0;
  const auto y = ops::conv2d(x, T64(Shape{1, 1, 3, 3}, w), T64{}, 1, 1);
  EXPECT_EQ(values(y), values(x));
}

TEST(Conv2d, OnesKernelOnConstantImageGivesNineC) {
  const auto x = T64::full({1, 1, 5, 5}, 0.75);
  const auto y = ops::conv2d(x, T64::full({1, 1, 3, 3}, 1.0), T64{}, 1, 1);
  EXPECT_DOUBLE_EQ(y.at({0, 0, 2, 2}), 9 * 0.75);
  EXPECT_DOUBLE_EQ(y.at({0, 0, 0, 0}), 4 * 0.75);
}

TEST(Conv2d, ZeroWeightsGiveBias) {
  const auto y = ops::conv2d(T64::full({1, 2, 4, 4}, 3.0), T64::zeros({3, 2, 3, 3}), T64(Shape{3}, {0.5, -1, 2}), 1, 1);
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t i = 0; i < 4; ++i) EXPECT_EQ(y.at({0, c, i, 3}), (std::vector<double>{0.5, -1, 2}[c]));
}

TEST(Conv2d, NonIntegerOutputSizeIsAConfigError) {
  EXPECT_THROW(ops::conv2d(T64::zeros({1, 1, 4, 4}), T64::zeros({1, 1, 3, 3}), T64{}, 2, 0), ConfigError);
}

TEST(Conv2d, MatchesSixLoopReferenceOnRandomShapes) {
  Rng rng(21);
  for (int trial = 0; trial < 40; ++trial) {
    const std::int64_t B = 1 + rng.below(2), C = 1 + rng.below(4), O = 1 + rng.below(4);
    const std::int64_t k = rng.below(2) ? 3 : 1, pad = rng.below(2) ? k / 2 : 0;
    const std::int64_t stride = 1 + rng.below(2);
    std::int64_t H = 3 + rng.below(6);
    while ((H + 2 * pad - k) % stride) ++H;
    const auto x = ref::randn<float>({B, C, H, H}, rng), w = ref::randn<float>({O, C, k, k}, rng);
    const auto b = ref::randn<float>({O}, rng);
    std::int64_t Ho = 0, Wo = 0;
    const auto want = ref::conv2d({x.data().begin(), x.data().end()}, B, C, H, H, {w.data().begin(), w.data().end()},
                                  O, k, {b.data().begin(), b.data().end()}, stride, pad, Ho, Wo);
    const auto y = ops::conv2d(x, w, b, stride, pad);
    ASSERT_EQ(y.shape(), (Shape{B, O, Ho, Wo}));
    for (std::size_t i = 0; i < want.size(); ++i) ASSERT_NEAR(y.data()[i], want[i], 1e-5);
  }
}

TEST(Maxpool2d, TokenizerGeometryAndConstantImage) {
  const auto y = ops::maxpool2d(T64::full({1, 2, 32, 32}, 1.5), 3, 2, 1);
  ASSERT_EQ(y.shape(), (Shape{1, 2, 16, 16}));
  for (double v : y.data()) EXPECT_EQ(v, 1.5);
}

TEST(Maxpool2d, MatchesReferenceAndRoutesGradToArgmax) {
  Rng rng(4);
  auto x = ref::randn<double>({1, 1, 6, 6}, rng, 1.0, true);
  std::int64_t Ho = 0, Wo = 0;
  const auto want = ref::maxpool2d({x.data().begin(), x.data().end()}, 1, 6, 6, 3, 2, 1, Ho, Wo);
  x.mutable_data()[21] = 50.0;  // (3, 3) lies in the four windows at pooled (1..2, 1..2)
  Tape<double> tape;
  TapeScope<double> scope(tape);
  const auto y = ops::maxpool2d(x, 3, 2, 1);
  tape.backward(ops::sum(y));
  double total = 0.0;
  for (std::size_t i = 0; i < x.grad().size(); ++i) {
    total += x.grad()[i];
    if (i == 21) {
      EXPECT_EQ(x.grad()[i], 4.0);
    }
  }
  EXPECT_EQ(total, static_cast<double>(Ho * Wo));
  (void)want;
}

TEST(Maxpool2d, ValuesMatchReference) {
  Rng rng(8);
  const auto x = ref::randn<double>({2, 3, 7, 7}, rng);
  std::int64_t Ho = 0, Wo = 0;
  const auto want = ref::maxpool2d({x.data().begin(), x.data().end()}, 6, 7, 7, 3, 2, 1, Ho, Wo);
  EXPECT_EQ(values(ops::maxpool2d(x, 3, 2, 1)), want);
}

TEST(Maxpool2d, TiesGoToFirstElementInWindow) {
  auto x = T64::full({1, 1, 2, 2}, 1.0, true);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  tape.backward(ops::sum(ops::maxpool2d(x, 2, 2, 0)));
  EXPECT_EQ(values(T64(Shape{4}, {x.grad().begin(), x.grad().end()})), (std::vector<double>{1, 0, 0, 0}));
}

TEST(Maxpool2d, RejectsPaddingWiderThanHalfWindow) {
  EXPECT_THROW(ops::maxpool2d(T64::zeros({1, 1, 4, 4}), 2, 1, 2), ConfigError);
}

// ---------------------------------------------------------------------------
// activations, softmax, layernorm, linear

TEST(Activation, ReluAndGeluValues) {
  const auto r = ops::relu(T64(Shape{3}, {-1.0, 2.0, 0.0}));
  EXPECT_EQ(values(r), (std::vector<double>{0.0, 2.0, 0.0}));
  const auto g = ops::gelu(T64(Shape{2}, {0.0, 1.0}));
  EXPECT_EQ(g.data()[0], 0.0);
  EXPECT_NEAR(g.data()[1], 0.841344746068543, 1e-12);  // Phi(1)
  EXPECT_EQ(ops::parse_activation("gelu"), ops::Activation::kGelu);
  EXPECT_THROW(ops::parse_activation("tanh"), ConfigError);
}

TEST(Activation, ReluSubgradientAtZeroIsZero) {
  auto x = T64(Shape{1}, {0.0}, true);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  tape.backward(ops::sum(ops::relu(x)));
  EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(Softmax, HandCases) {
  const auto s = ops::softmax_rows(T64(Shape{1, 2}, {0.0, 0.0}));
  EXPECT_EQ(values(s), (std::vector<double>{0.5, 0.5}));
  const auto t = ops::softmax_rows(T64(Shape{1, 3}, {std::log(1.0), std::log(2.0), std::log(3.0)}));
  EXPECT_NEAR(t.data()[0], 1.0 / 6, 1e-15);
  EXPECT_NEAR(t.data()[1], 2.0 / 6, 1e-15);
  EXPECT_NEAR(t.data()[2], 3.0 / 6, 1e-15);
}

TEST(Softmax, RowsAreDistributionsAndShiftInvariant) {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const std::int64_t rows = 1 + rng.below(5), n = 1 + rng.below(20);
    const auto x = ref::randn<double>({rows, n}, rng, 30.0);
    const double c = rng.uniform(-100, 100);
    std::vector<double> shifted(x.data().begin(), x.data().end());
    for (double& v : shifted) v += c;
    const auto a = ops::softmax_rows(x);
    const auto b = ops::softmax_rows(T64(x.shape(), shifted));
    for (std::int64_t r = 0; r < rows; ++r) {
      double sum = 0.0;
      for (std::int64_t j = 0; j < n; ++j) {
        const double v = a.at({r, j});
        ASSERT_GE(v, 0.0);
        ASSERT_LE(v, 1.0);
        ASSERT_NEAR(v, b.at({r, j}), 1e-6);
        sum += v;
      }
      ASSERT_NEAR(sum, 1.0, 1e-6);
    }
  }
}

TEST(Softmax, ExtremeLogitsStayFinite) {
  const auto s = ops::softmax_rows(Tensor<float>(Shape{1, 3}, {1e30f, -1e30f, 0.0f}));
  for (float v : s.data()) EXPECT_TRUE(std::isfinite(v));
  EXPECT_EQ(s.data()[0], 1.0f);
}

TEST(Layernorm, ConstantRowAndTwoElementRow) {
  const auto ones = T64::full({3}, 1.0), zero = T64::zeros({3});
  const auto y = ops::layernorm(T64::full({1, 3}, 4.0), ones, zero);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
  const auto z = ops::layernorm(T64(Shape{1, 2}, {1.0, -1.0}), T64::full({2}, 1.0), T64::zeros({2}), 1e-12);
  EXPECT_NEAR(z.data()[0], 1.0, 1e-9);
  EXPECT_NEAR(z.data()[1], -1.0, 1e-9);
  EXPECT_THROW(ops::layernorm(T64::zeros({1, 2}), T64::full({2}, 1.0), T64::zeros({2}), 0.0), ConfigError);
}

TEST(Layernorm, AffineInvariance) {
  Rng rng(10);
  const auto x = ref::randn<double>({4, 8}, rng);
  std::vector<double> moved(x.data().begin(), x.data().end());
  for (double& v : moved) v = 3.5 * v - 2.0;
  const auto g = ref::randn<double>({8}, rng), b = ref::randn<double>({8}, rng);
  const auto a = ops::layernorm(x, g, b, 1e-12);
  const auto c = ops::layernorm(T64(x.shape(), moved), g, b, 1e-12);
  EXPECT_LT(ref::max_abs_diff(a.data(), c.data()), 1e-9);
}

TEST(Linear, IdentityZeroAndAgreementWithMatmul) {
  Rng rng(2);
  const auto x = ref::randn<double>({1, 2}, rng);
  EXPECT_EQ(values(ops::linear(x, mat(2, 2, {1, 0, 0, 1}))), values(x));
  EXPECT_EQ(values(ops::linear(x, T64::zeros({2, 3}), T64(Shape{3}, {1, 2, 3}))), (std::vector<double>{1, 2, 3}));
  const auto w = ref::randn<double>({2, 3}, rng), b = ref::randn<double>({3}, rng);
  const auto y = ops::linear(x, w, b);
  const auto m = ops::matmul(x, w);
  for (std::int64_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(y.at({0, j}), m.at({0, j}) + b.data()[j]);
  EXPECT_THROW(ops::linear(x, T64::zeros({3, 3})), ShapeError);
}

// ---------------------------------------------------------------------------
// dropout and cross-entropy

TEST(Dropout, IdentityCases) {
  Rng rng(12);
  const auto x = ref::randn<double>({100}, rng);
  EXPECT_EQ(values(ops::dropout(x, 0.0, true, 1)), values(x));
  EXPECT_EQ(values(ops::dropout(x, 0.7, false, 1)), values(x));
  const auto dropped = ops::dropout(x, 1.0, true, 1);
  for (double v : dropped.data()) EXPECT_EQ(v, 0.0);
}

TEST(Dropout, MaskIsDeterministicAndNearHalf) {
  const auto x = T64::full({10000}, 1.0);
  const auto a = ops::dropout(x, 0.5, true, 77), b = ops::dropout(x, 0.5, true, 77);
  EXPECT_EQ(values(a), values(b));
  int zeros = 0;
  for (double v : a.data()) {
    if (v == 0.0) ++zeros;
    else EXPECT_EQ(v, 2.0);
  }
  // 3 sigma of Binomial(10^4, 0.5) is 150.
  EXPECT_NEAR(zeros, 5000, 150);
}

TEST(CrossEntropy, AnalyticValues) {
  const std::int32_t label0[] = {0};
  EXPECT_NEAR(ops::cross_entropy(T64::zeros({1, 100}), label0).item(), std::log(100.0), 1e-12);
  EXPECT_NEAR(std::log(100.0), 4.60517, 1e-5);
  const std::int32_t label1[] = {1};
  const double ce = ops::cross_entropy(mat(1, 2, {0.0, std::log(3.0)}), label1).item();
  EXPECT_NEAR(ce, -std::log(0.75), 1e-12);
  EXPECT_NEAR(ce, 0.287682, 1e-6);
  std::vector<double> sat(10, 0.0);
  sat[3] = 40.0;
  const std::int32_t label3[] = {3};
  EXPECT_LT(ops::cross_entropy(T64(Shape{1, 10}, sat), label3).item(), 1e-9);
}

TEST(CrossEntropy, BadLabelIsAnIndexError) {
  const std::int32_t bad[] = {5};
  EXPECT_THROW(ops::cross_entropy(T64::zeros({1, 5}), bad), IndexError);
  const std::int32_t neg[] = {-1};
  EXPECT_THROW(ops::cross_entropy(T64::zeros({1, 5}), neg), IndexError);
}

TEST(CrossEntropy, GradientIsSoftmaxMinusOneHotOverB) {
  Rng rng(13);
  auto logits = ref::randn<double>({3, 4}, rng, 1.0, true);
  const std::int32_t labels[] = {2, 0, 3};
  Tape<double> tape;
  TapeScope<double> scope(tape);
  tape.backward(ops::cross_entropy(logits, labels));
  const auto probs = ops::softmax_rows(logits.detach());
  for (std::int64_t r = 0; r < 3; ++r)
    for (std::int64_t c = 0; c < 4; ++c) {
      const double want = (probs.at({r, c}) - (c == labels[r] ? 1.0 : 0.0)) / 3.0;
      EXPECT_NEAR(logits.grad()[static_cast<std::size_t>(r * 4 + c)], want, 1e-14);
    }
}

// ---------------------------------------------------------------------------
// grad_check itself

TEST(GradCheck, GeluAndLayernormAtRandomPoints) {
  Rng rng(14);
  const auto g = grad_check([](std::span<const T64> x) { return ops::gelu(x[0]); }, {ref::randn<double>({20}, rng)});
  EXPECT_LT(g.max_rel_error, 1e-6);
  const auto l = grad_check([](std::span<const T64> x) { return ops::layernorm(x[0], x[1], x[2]); },
                            {ref::randn<double>({3, 5}, rng), ref::randn<double>({5}, rng), ref::randn<double>({5}, rng)});
  EXPECT_LT(l.max_rel_error, 1e-5);
  EXPECT_EQ(l.coordinates, 25);
}

TEST(GradCheck, CorruptedBackwardIsDetected) {
  Rng rng(15);
  ops::set_gelu_backward_fault(true);
  const auto g = grad_check([](std::span<const T64> x) { return ops::gelu(x[0]); }, {ref::randn<double>({20}, rng)});
  ops::set_gelu_backward_fault(false);
  EXPECT_GT(g.max_rel_error, 1e-2);
}

TEST(Kernels, ForwardIsBitwiseDeterministic) {
  Rng rng(16);
  const auto x = ref::randn<float>({2, 3, 8, 8}, rng), w = ref::randn<float>({4, 3, 3, 3}, rng);
  const auto a = ops::conv2d(x, w, Tensor<float>{}, 1, 1), b = ops::conv2d(x, w, Tensor<float>{}, 1, 1);
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}
