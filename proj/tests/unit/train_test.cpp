// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>

#include "hieredit/pipeline/training.hpp"

using namespace hieredit;

namespace {

TrainConfig quick_config() {
  TrainConfig c;
  c.model.layers = 1;
  c.data.size = 32;
  c.dataset_size = 12;
  return c;
}

std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("hieredit_train_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  TrainConfig c = quick_config();
  c.adam.lr = 0.0;
  Trainer tr(c);
  const auto before = params_fingerprint(tr.model());
  for (int i = 0; i < 3; ++i) tr.step();
  EXPECT_EQ(params_fingerprint(tr.model()), before);
  EXPECT_EQ(tr.optimizer().step, 3);
}

TEST(Train, FrozenBaseStaysBitwiseIdentical) {
  TrainConfig c = quick_config();
  c.freeze_base = true;
  Trainer tr(c);
  const auto base = base_fingerprint(tr.model());
  const auto all = params_fingerprint(tr.model());
  for (int i = 0; i < 100; ++i) tr.step();
  EXPECT_EQ(base_fingerprint(tr.model()), base);
  EXPECT_NE(params_fingerprint(tr.model()), all);
}

TEST(Train, UnfrozenBaseMoves) {
  Trainer tr(quick_config());
  const auto base = base_fingerprint(tr.model());
  for (int i = 0; i < 3; ++i) tr.step();
  EXPECT_NE(base_fingerprint(tr.model()), base);
}

TEST(Train, DivergenceIsReportedWithStep) {
  TrainConfig c = quick_config();
  c.adam.divergence_loss = 1e-9;
  Trainer tr(c);
  try {
    tr.step();
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.step(), 1);
  }
}

TEST(Train, NonFiniteLossDiverges) {
  Trainer tr(quick_config());
  auto batch = tr.batch_for(0);
  batch[0].x0.mutable_data()[0] = std::numeric_limits<float>::infinity();
  OptimizerState opt = make_optimizer(tr.model());
  EXPECT_THROW(train_step(tr.model(), batch, opt, AdamWConfig{}), DivergenceError);
}

TEST(Train, BatchesDependOnlyOnStep) {
  Trainer a(quick_config()), b(quick_config());
  const auto x = a.batch_for(17), y = b.batch_for(17), z = a.batch_for(18);
  auto vec = [](const Tensor& t) { return std::vector<float>(t.data().begin(), t.data().end()); };
  EXPECT_EQ(vec(x[0].x1), vec(y[0].x1));
  EXPECT_EQ(x[0].t, y[0].t);
  EXPECT_NE(vec(x[0].x1), vec(z[0].x1));
}

TEST(Train, ResumeIsBitwise) {
  const auto dir = scratch_dir("resume");
  TrainConfig c = quick_config();
  c.batch = 2;
  Trainer tr(c);
  for (int i = 0; i < 4; ++i) tr.step();
  tr.save(dir);
  std::vector<double> cont;
  for (int i = 0; i < 3; ++i) cont.push_back(tr.step().loss);

  Checkpoint ck = load_checkpoint(dir);
  EXPECT_EQ(ck.optimizer.step, 4);
  EXPECT_EQ(ck.meta.at("data_seed"), "1");
  Trainer resumed(c, std::move(ck));
  for (int i = 0; i < 3; ++i) EXPECT_EQ(resumed.step().loss, cont[i]) << "step " << i;
  EXPECT_EQ(params_fingerprint(resumed.model()), params_fingerprint(tr.model()));
  std::filesystem::remove_all(dir);
}

TEST(Train, CheckpointErrors) {
  const auto dir = scratch_dir("errors");
  EXPECT_THROW(load_checkpoint(dir), IoError);
  Trainer tr(quick_config());
  tr.save(dir);
  std::filesystem::remove(dir / "final_w.hten");
  EXPECT_THROW(load_checkpoint(dir), Error);
  std::filesystem::remove_all(dir);
}

TEST(Train, LossFallsOnShortRun) {
  TrainConfig c = quick_config();
  Trainer tr(c);
  double first = 0, last = 0;
  for (int i = 0; i < 200; ++i) {
    const double l = tr.step().loss;
    if (i < 20) first += l / 20;
    if (i >= 180) last += l / 20;
  }
  EXPECT_LT(last, 0.8 * first);
}
