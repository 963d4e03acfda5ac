// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>

#include "hieredit/numerics/hten.hpp"
#include "hieredit/numerics/ops.hpp"
#include "hieredit/numerics/rng.hpp"
#include "hieredit/testing/oracles.hpp"

using namespace hieredit;

namespace {

Tensor random_matrix(Rng& rng, std::size_t m, std::size_t n) { return rng_normal(rng, {m, n}); }

// Weighted sum so that ops with constant-sum outputs (softmax) still give a
// non-trivial gradient.
Tensor weighted_sum(const Tensor& x, std::uint64_t seed) {
  Rng rng(seed);
  Tensor w = rng_normal(rng, x.shape());
  return sum(mul(x, w));
}

void expect_grad_ok(const std::function<Tensor(const std::vector<Tensor>&)>& fn, const std::vector<Tensor>& inputs) {
  const auto res = oracle::check_gradients(fn, inputs, 1e-3);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    EXPECT_LE(res.relative_error[i], 1e-3) << "input " << i;
  }
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Rng rng(1);
  const Tensor m = random_matrix(rng, 3, 4);
  Tensor eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye.mutable_data()[i * 3 + i] = 1.0f;
  const Tensor out = matmul(eye, m);
  for (std::size_t i = 0; i < m.numel(); ++i) EXPECT_EQ(out[i], m[i]);
}

TEST(Matmul, ZeroMatrixAnnihilates) {
  const Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
  const Tensor out = matmul(a, Tensor::zeros({2, 2}));
  for (float v : out.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(7);
  const Tensor a = random_matrix(rng, 5, 7), b = random_matrix(rng, 7, 3);
  const Tensor got = matmul(a, b), want = oracle::naive_matmul(a, b);
  for (std::size_t i = 0; i < got.numel(); ++i) EXPECT_NEAR(got[i], want[i], 1e-6);
}

TEST(Matmul, InnerDimensionMismatchThrows) {
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
  EXPECT_THROW(matmul(Tensor::zeros({6}), Tensor::zeros({6, 1})), DimensionError);
}

TEST(Softmax, SingletonRowIsOne) {
  EXPECT_EQ(softmax_rows(Tensor::matrix(1, 1, {-3.5f}))[0], 1.0f);
}

TEST(Softmax, UniformRow) {
  const Tensor out = softmax_rows(Tensor::matrix(1, 4, {2, 2, 2, 2}));
  for (float v : out.data()) EXPECT_FLOAT_EQ(v, 0.25f);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  const Tensor out = softmax_rows(Tensor::matrix(1, 2, {1000.0f, 0.0f}));
  const auto want = oracle::softmax_extended({1000.0L, 0.0L});
  EXPECT_NEAR(out[0], static_cast<double>(want[0]), 1e-6);
  EXPECT_NEAR(out[1], static_cast<double>(want[1]), 1e-6);
}

TEST(Softmax, RowsSumToOne) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + rng.below(6), n = 1 + rng.below(9);
    const Tensor out = softmax_rows(scale(random_matrix(rng, m, n), 10.0f));
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < n; ++j) s += out.at(i, j);
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Backward, SumGivesOnes) {
  Tensor x = Tensor::matrix(2, 3, {1, -2, 3, 0.5f, 8, 9});
  x.set_requires_grad(true);
  Tape tape;
  tape.backward(sum(x));
  for (float g : x.grad()) EXPECT_EQ(g, 1.0f);
}

TEST(Backward, SquareGivesTwoX) {
  Tensor x({2}, {1.0f, 2.0f});
  x.set_requires_grad(true);
  Tape tape;
  backward(sum(mul(x, x)));
  EXPECT_EQ(x.grad(), (std::vector<float>{2.0f, 4.0f}));
}

TEST(Backward, NonScalarLossIsContractError) {
  Tensor x({2}, {1.0f, 2.0f});
  x.set_requires_grad(true);
  Tape tape;
  EXPECT_THROW(tape.backward(mul(x, x)), ContractError);
}

TEST(Backward, WithoutTapeIsContractError) {
  Tensor x({1}, {1.0f});
  x.set_requires_grad(true);
  EXPECT_THROW(backward(x), ContractError);
}

TEST(Backward, ConstantsGetNoGradient) {
  Tensor x({2}, {1.0f, 2.0f});
  const Tensor c({2}, {3.0f, 4.0f});
  x.set_requires_grad(true);
  Tape tape;
  tape.backward(sum(mul(x, c)));
  EXPECT_FALSE(c.has_grad());
  EXPECT_EQ(x.grad(), (std::vector<float>{3.0f, 4.0f}));
}

TEST(Backward, NoRecordingWhenTapeInactive) {
  Tensor x({2}, {1.0f, 2.0f});
  x.set_requires_grad(true);
  const Tensor y = mul(x, x);
  EXPECT_FALSE(y.requires_grad());
}

class FiniteDifference : public ::testing::Test {
 protected:
  Rng rng{2024};
};

TEST_F(FiniteDifference, Matmul) {
  expect_grad_ok([](const auto& x) { return weighted_sum(matmul(x[0], x[1]), 1); },
                 {random_matrix(rng, 3, 4), random_matrix(rng, 4, 2)});
}

TEST_F(FiniteDifference, MatmulNT) {
  expect_grad_ok([](const auto& x) { return weighted_sum(matmul_nt(x[0], x[1]), 2); },
                 {random_matrix(rng, 3, 4), random_matrix(rng, 5, 4)});
}

TEST_F(FiniteDifference, Transpose) {
  expect_grad_ok([](const auto& x) { return weighted_sum(transpose(x[0]), 3); }, {random_matrix(rng, 3, 5)});
}

TEST_F(FiniteDifference, AddSubMul) {
  expect_grad_ok([](const auto& x) { return weighted_sum(mul(add(x[0], x[1]), sub(x[1], x[0])), 4); },
                 {random_matrix(rng, 2, 3), random_matrix(rng, 2, 3)});
}

TEST_F(FiniteDifference, ScaleAndAddScalar) {
  expect_grad_ok([](const auto& x) { return weighted_sum(add_scalar(scale(x[0], -1.7f), 0.3f), 5); },
                 {random_matrix(rng, 4, 2)});
}

TEST_F(FiniteDifference, AddRow) {
  expect_grad_ok([](const auto& x) { return weighted_sum(add_row(x[0], x[1]), 6); },
                 {random_matrix(rng, 4, 3), random_matrix(rng, 1, 3)});
}

TEST_F(FiniteDifference, Silu) {
  expect_grad_ok([](const auto& x) { return weighted_sum(silu(x[0]), 7); }, {scale(random_matrix(rng, 3, 4), 2.0f)});
}

TEST_F(FiniteDifference, RmsNorm) {
  expect_grad_ok([](const auto& x) { return weighted_sum(rms_norm_rows(x[0]), 8); }, {random_matrix(rng, 3, 6)});
}

TEST_F(FiniteDifference, Softmax) {
  expect_grad_ok([](const auto& x) { return weighted_sum(softmax_rows(x[0]), 9); }, {random_matrix(rng, 3, 5)});
}

TEST_F(FiniteDifference, GatherScatter) {
  const std::vector<std::uint32_t> idx{2, 0, 2, 1};
  expect_grad_ok(
      [&](const auto& x) {
        return weighted_sum(scatter_rows(gather_rows(x[0], idx), std::vector<std::uint32_t>{1, 3, 0, 4}, 5), 10);
      },
      {random_matrix(rng, 3, 4)});
}

TEST_F(FiniteDifference, SliceAndConcat) {
  expect_grad_ok(
      [](const auto& x) {
        Tensor left = slice_cols(x[0], 1, 3);
        return weighted_sum(concat_rows({concat_cols({left, x[1]}), concat_cols({x[1], left})}), 11);
      },
      {random_matrix(rng, 3, 4), random_matrix(rng, 3, 2)});
}

TEST_F(FiniteDifference, RowScale) {
  const std::vector<float> w{0.0f, 1.0f, -2.5f};
  expect_grad_ok([&](const auto& x) { return weighted_sum(row_scale(x[0], w), 12); }, {random_matrix(rng, 3, 3)});
}

TEST_F(FiniteDifference, MeanAndMse) {
  expect_grad_ok([](const auto& x) { return add(mse(x[0], x[1]), mean(x[0])); },
                 {random_matrix(rng, 3, 3), random_matrix(rng, 3, 3)});
}

TEST_F(FiniteDifference, CompositeGraph) {
  expect_grad_ok(
      [](const auto& x) {
        Tensor h = silu(add_row(matmul(rms_norm_rows(x[0]), x[1]), x[2]));
        return mse(softmax_rows(h), scale(x[0], 0.1f));
      },
      {random_matrix(rng, 4, 3), random_matrix(rng, 3, 3), random_matrix(rng, 1, 3)});
}

TEST(NumericErrors, NonFiniteIsReportedImmediately) {
  const Tensor big = Tensor::full({1, 1}, 3e38f);
  EXPECT_THROW(scale(big, 10.0f), NumericError);
  EXPECT_THROW(matmul(big, big), NumericError);
  EXPECT_THROW(softmax_rows(Tensor::matrix(1, 2, {std::numeric_limits<float>::quiet_NaN(), 0.0f})), NumericError);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(0), b(0);
  const Tensor x = rng_normal(a, {4}), y = rng_normal(b, {4});
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(x[i], y[i]);
}

TEST(Rng, DifferentSeedsDiffer) {
  Rng a(0), b(1);
  const Tensor x = rng_normal(a, {4}), y = rng_normal(b, {4});
  bool differ = false;
  for (std::size_t i = 0; i < 4; ++i) differ = differ || x[i] != y[i];
  EXPECT_TRUE(differ);
}

TEST(Rng, NormalMoments) {
  Rng rng(42);
  const Tensor x = rng_normal(rng, {100000});
  double m = 0, v = 0;
  for (float s : x.data()) m += s;
  m /= static_cast<double>(x.numel());
  for (float s : x.data()) v += (s - m) * (s - m);
  v /= static_cast<double>(x.numel() - 1);
  EXPECT_NEAR(m, 0.0, 0.02);
  EXPECT_NEAR(v, 1.0, 0.05);
}

TEST(Rng, CounterResumesStream) {
  Rng a(9);
  a.next_u64();
  a.next_u64();
  Rng b(9, a.counter());
  EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(GatherScatter, InversePermutationRoundTripIsExact) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 2 + rng.below(20);
    const Tensor x = random_matrix(rng, n, 3);
    std::vector<std::uint32_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0u);
    for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    const Tensor back = scatter_rows(gather_rows(x, perm), perm, n);
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(back[i], x[i]);
  }
}

TEST(Determinism, RepeatedComputationIsBitwiseEqual) {
  auto run = [] {
    Rng rng(77);
    const Tensor a = rng_normal(rng, {6, 5}), b = rng_normal(rng, {5, 4});
    return softmax_rows(silu(matmul(a, b)));
  };
  const Tensor x = run(), y = run();
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(x[i], y[i]);
}

TEST(Hten, ByteLayout) {
  const Tensor t({2, 1}, {1.0f, -2.0f});
  const auto bytes = hten::encode(t);
  ASSERT_EQ(bytes.size(), 4u + 1 + 1 + 2 * 4 + 2 * 4);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "HTEN");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5], 2);
  EXPECT_EQ(bytes[6], 2);  // dim 0, little endian
  EXPECT_EQ(bytes[7], 0);
  EXPECT_EQ(bytes[10], 1);
  // 1.0f = 0x3f800000 little endian
  EXPECT_EQ(bytes[14], 0x00);
  EXPECT_EQ(bytes[17], 0x3f);
}

TEST(Hten, FileRoundTripAndErrors) {
  Rng rng(1);
  const Tensor t = rng_normal(rng, {3, 4, 2});
  const auto path = std::filesystem::temp_directory_path() / "hieredit_numerics_test.hten";
  hten::save(t, path);
  const Tensor back = hten::load(path);
  EXPECT_EQ(back.shape(), t.shape());
  for (std::size_t i = 0; i < t.numel(); ++i) EXPECT_EQ(back[i], t[i]);
  std::filesystem::remove(path);

  auto bytes = hten::encode(t);
  bytes[0] = 'X';
  EXPECT_THROW(hten::decode(bytes), IoError);
  bytes = hten::encode(t);
  bytes.pop_back();
  EXPECT_THROW(hten::decode(bytes), IoError);
}

TEST(TensorType, ShapeMustMatchData) {
  EXPECT_THROW(Tensor({2, 2}, {1.0f, 2.0f}), DimensionError);
}
