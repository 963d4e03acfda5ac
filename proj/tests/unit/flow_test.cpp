// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "hieredit/flow/init.hpp"
#include "hieredit/flow/sampler.hpp"
#include "hieredit/testing/fixtures.hpp"

using namespace hieredit;

namespace {

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

}  // namespace

TEST(Interpolate, EndpointsAndMidpoint) {
  Rng rng(1);
  Tensor x0 = rng_normal(rng, {4, 3}), x1 = rng_normal(rng, {4, 3});
  x0.mutable_data()[0] = -0.0f;
  EXPECT_TRUE(bitwise_equal(interpolate(x0, x1, 0.0), x0));
  EXPECT_TRUE(bitwise_equal(interpolate(x0, x1, 1.0), x1));
  const Tensor mid = interpolate(Tensor::zeros({2, 2}), Tensor({2, 2}, std::vector<float>(4, 2.0f)), 0.5);
  for (float v : mid.data()) EXPECT_EQ(v, 1.0f);
  EXPECT_THROW(interpolate(x0, x1, 1.01), ContractError);
  EXPECT_THROW(interpolate(x0, x1, -0.1), ContractError);
  EXPECT_THROW(interpolate(x0, Tensor({1, 3}), 0.3), DimensionError);
}

TEST(Schedule, DefaultsAndArithmetic) {
  const FlowSchedule s;
  EXPECT_EQ(s.total, 28u);
  EXPECT_EQ(s.executed, 10u);
  EXPECT_EQ(s.start_index(), 18u);
  const auto ts = s.timesteps();
  ASSERT_EQ(ts.size(), 29u);
  EXPECT_EQ(ts.front(), 1.0);
  EXPECT_EQ(ts.back(), 0.0);
  for (std::size_t i = 1; i < ts.size(); ++i) EXPECT_LT(ts[i], ts[i - 1]);
  for (std::size_t total : {1, 5, 28, 50})
    for (std::size_t exec = 1; exec <= total; ++exec) {
      const FlowSchedule f{total, exec};
      std::size_t count = 0;
      FlowState st;
      st.latent = Tensor::zeros({1, 1});
      st.step_index = f.start_index();
      euler_sample([&](const Tensor& z, double) { ++count; return Tensor::zeros(z.shape()); }, st, f);
      ASSERT_EQ(count, exec);
      ASSERT_EQ(f.start_index() + f.executed, f.total);
    }
  EXPECT_THROW((FlowSchedule{10, 11}.validate()), ConfigError);
  EXPECT_THROW((FlowSchedule{10, 0}.validate()), ConfigError);
}

TEST(Euler, ExactLinearFieldRecoversTarget) {
  Rng rng(2);
  const Tensor x0 = rng_normal(rng, {6, 5}), x1 = rng_normal(rng, {6, 5});
  // Constant field of the pair and the state-dependent field of a point mass at x0.
  const VelocityField constant = [&](const Tensor&, double) { return sub(x1, x0); };
  const VelocityField point = [&](const Tensor& z, double t) { return scale(sub(z, x0), static_cast<float>(1.0 / t)); };
  for (const auto* field : {&constant, &point}) {
    Tensor first;
    for (std::size_t steps : {1, 2, 7, 28, 100}) {
      FlowState st;
      st.latent = x1;
      const Tensor out = euler_sample(*field, st, FlowSchedule::full(steps));
      EXPECT_LE(max_abs_diff(out, x0), 1e-6) << steps;
      if (first.numel() == 0) first = out;
      EXPECT_LE(max_abs_diff(out, first), 1e-6);
    }
  }
}

TEST(Euler, ZeroFieldKeepsInitialization) {
  Rng rng(3);
  FlowState st;
  st.latent = rng_normal(rng, {3, 3});
  st.step_index = 4;
  const Tensor out =
      euler_sample([](const Tensor& z, double) { return Tensor::zeros(z.shape()); }, st, FlowSchedule{10, 6});
  EXPECT_TRUE(bitwise_equal(out, st.latent));
  st.step_index = 11;
  EXPECT_THROW(euler_sample([](const Tensor& z, double) { return z; }, st, FlowSchedule{10, 6}), ContractError);
}

TEST(Euler, ModelErrorsPropagate) {
  FlowState st;
  st.latent = Tensor::zeros({1, 2});
  EXPECT_THROW(euler_sample([](const Tensor&, double) -> Tensor { throw NumericError("layer 2: nan"); }, st,
                            FlowSchedule::full(3)),
               NumericError);
}

TEST(Euler, EngineOverloadMatchesCallback) {
  const ModelConfig cfg = oracle::tiny_config(2);
  Rng rng(4);
  auto fx = oracle::random_sequence(cfg, {}, rng);
  const ModelParams m = init_model(cfg, 5, InitStyle::Random);
  Engine a(m, fx.seq), b(m, fx.seq, {false, false, 1});
  FlowState st;
  st.latent = fx.z;
  std::vector<std::size_t> seen;
  const Tensor out1 = euler_sample(a, st, FlowSchedule::full(5), [&](std::size_t i, const Tensor&) { seen.push_back(i); });
  const Tensor out2 = euler_sample(b, st, FlowSchedule::full(5));
  EXPECT_EQ(seen, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
  EXPECT_LE(max_abs_diff(out1, out2), 1e-5);
}

TEST(IntermediateInit, EndpointsAndContract) {
  Rng r1(6), r2(6), r3(6);
  const Tensor ref = Tensor({2, 3}, std::vector<float>{0.1f, 0.2f, 0.3f, 0.4f, 0.5f, 0.6f});
  const FlowSchedule s;
  const FlowState noise = intermediate_init(ref, r1, 1.0, s, true);
  Rng pure(6);
  EXPECT_TRUE(bitwise_equal(noise.latent, rng_normal(pure, {2, 3})));
  EXPECT_EQ(noise.step_index, 18u);
  const FlowState clean = intermediate_init(ref, r2, 0.0, s, true);
  Rng fresh(6);
  rng_normal(fresh, {2, 3});
  EXPECT_TRUE(bitwise_equal(clean.latent, interpolate(ref, rng_normal(fresh, {2, 3}), s.start_time())));
  EXPECT_THROW(intermediate_init(ref, r3, 0.0, s), ContractError);
  EXPECT_THROW(intermediate_init(ref, r3, 1.0, s), ContractError);
  EXPECT_THROW(intermediate_init(ref, r3, 1.5, s, true), ContractError);
  const FlowState mid = intermediate_init(ref, r3, 0.7, s);
  EXPECT_EQ(mid.alpha, 0.7);
  EXPECT_EQ(mid.step_index, 18u);
}

TEST(IntermediateInit, BlendMatchesFormula) {
  Rng r1(7), r2(7);
  Rng data(8);
  const Tensor ref = rng_uniform(data, {5, 4}, 0, 1);
  const FlowSchedule s{28, 10};
  const FlowState st = intermediate_init(ref, r1, 0.3, s);
  const Tensor g = rng_normal(r2, {5, 4}), n = rng_normal(r2, {5, 4});
  const double t = s.start_time();
  for (std::size_t i = 0; i < ref.numel(); ++i) {
    const double expect = 0.3 * g[i] + 0.7 * ((1 - t) * ref[i] + t * n[i]);
    EXPECT_NEAR(st.latent[i], expect, 1e-6);
  }
}

TEST(SharpenUpsample, Examples) {
  const PixelImage flat(4, 3, 0.4f);
  const PixelImage up = sharpen_upsample(flat, 16, 12);
  for (float v : up.data) EXPECT_NEAR(v, 0.4f, 1e-6);
  Rng rng(9);
  PixelImage img(5, 4);
  for (float& v : img.data) v = static_cast<float>(rng.uniform());
  EXPECT_EQ(sharpen_upsample(img, 5, 4, {1.0, 0.0}), img);
  EXPECT_THROW(sharpen_upsample(img, 12, 8), ResampleError);
  EXPECT_THROW(sharpen_upsample(img, 10, 12), ResampleError);
}

TEST(SharpenUpsample, AddsHighFrequencyEnergy) {
  PixelImage board(8, 8);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x)
      for (std::size_t c = 0; c < 3; ++c) board.at(x, y, c) = ((x + y) % 2) ? 0.8f : 0.2f;
  const double sharp = laplacian_energy(sharpen_upsample(board, 32, 32));
  const double plain = laplacian_energy(bilinear_upsample(board, 4));
  EXPECT_GT(sharp, plain);
  const PixelImage s = sharpen_upsample(board, 32, 32, {1.0, 5.0});
  for (float v : s.data) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}
