// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "log3d/binary_io.hpp"
#include "log3d/checkpoint.hpp"
#include "log3d/trainer.hpp"

using namespace log3d;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Small sphere corpus at N=16, s=2.
TrainConfig toy_config(const std::filesystem::path& dir, std::uint64_t steps) {
  const auto obj = dir / "sphere.obj";
  if (!std::filesystem::exists(obj)) save_mesh(fx::icosphere(2, 0.5), obj);
  TrainConfig cfg;
  cfg.n = 16;
  cfg.s = 2;
  cfg.steps = steps;
  cfg.seed = 7;
  cfg.corpus = {obj};
  return cfg;
}

}  // namespace

TEST(AdamW, MatchesScalarOracle) {
  AdamWHyper h;
  h.lr = 1e-2;
  h.weight_decay = 0.1;
  std::vector<double> p{0.5, -1.25, 2.0}, m(3, 0.0), v(3, 0.0);
  std::vector<double> op = p, om(3, 0.0), ov(3, 0.0);
  for (std::uint64_t t = 1; t <= 100; ++t) {
    std::vector<double> g(3);
    for (int i = 0; i < 3; ++i) g[i] = std::sin(0.37 * t + i) * (i + 1) + 0.1 * p[i];
    adamw_update<double>(p, g, m, v, t, h);
    for (int i = 0; i < 3; ++i) {
      const double gi = std::sin(0.37 * t + i) * (i + 1) + 0.1 * op[i];
      om[i] = 0.9 * om[i] + 0.1 * gi;
      ov[i] = 0.999 * ov[i] + 0.001 * gi * gi;
      const double mh = om[i] / (1.0 - std::pow(0.9, t));
      const double vh = ov[i] / (1.0 - std::pow(0.999, t));
      op[i] = op[i] - h.lr * h.weight_decay * op[i] - h.lr * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(p[i], op[i], 1e-12);
}

TEST(AdamW, ZeroGradientOnlyDecays) {
  AdamWHyper h;
  std::vector<double> p{1.0, -2.0, 0.0}, g(3, 0.0), m(3, 0.0), v(3, 0.0);
  adamw_update<double>(p, g, m, v, 1, h);
  EXPECT_EQ(p[0], 1.0 * (1.0 - 5e-5 * 0.01));
  EXPECT_EQ(p[1], -2.0 * (1.0 - 5e-5 * 0.01));
  EXPECT_EQ(p[2], 0.0);
  EXPECT_THROW(adamw_update<double>(p, g, m, v, 0, h), std::invalid_argument);
}

TEST(TrainConfig, Validation) {
  TrainConfig cfg = toy_config(fx::scratch_dir("train_cfg"), 1);
  EXPECT_NO_THROW(cfg.validate());
  cfg.steps = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  EXPECT_THROW(train(cfg), std::invalid_argument);
  cfg.steps = 1;
  cfg.s = 4;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg.s = 2;
  cfg.adam.lr = 0.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg.adam.lr = 1e-3;
  cfg.corpus.clear();
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Train, ToyLossDropsTenfold) {
  auto cfg = toy_config(fx::scratch_dir("train_toy"), 200);
  cfg.adam.lr = 1e-3;
  const auto r = train(cfg);
  ASSERT_EQ(r.history.size(), 200u);
  EXPECT_LT(r.history.back().total * 10.0, r.history.front().total);
}

TEST(Train, RepeatedRunsAreBitwiseIdentical) {
  const auto dir = fx::scratch_dir("train_repeat");
  auto cfg = toy_config(dir, 5);
  cfg.checkpoint_path = dir / "a.logv";
  const auto a = train(cfg);
  cfg.checkpoint_path = dir / "b.logv";
  const auto b = train(cfg);
  for (std::size_t i = 0; i < a.history.size(); ++i) EXPECT_EQ(a.history[i].total, b.history[i].total);
  EXPECT_EQ(slurp(dir / "a.logv"), slurp(dir / "b.logv"));
}

TEST(Train, ResumeMatchesUninterruptedRun) {
  const auto dir = fx::scratch_dir("train_resume");
  auto full = toy_config(dir, 6);
  full.checkpoint_path = dir / "full.logv";
  full.log_path = dir / "full.csv";
  train(full);

  auto first = full;
  first.steps = 3;
  first.checkpoint_path = dir / "part.logv";
  first.log_path = dir / "part.csv";
  train(first);
  auto second = first;
  second.steps = 6;
  second.resume_path = dir / "part.logv";
  const auto r = train(second);
  EXPECT_EQ(r.history.size(), 3u);
  EXPECT_EQ(r.optimizer.step, 6u);
  EXPECT_EQ(slurp(dir / "full.logv"), slurp(dir / "part.logv"));
  EXPECT_EQ(slurp(dir / "full.csv"), slurp(dir / "part.csv"));
}

TEST(Train, LogHasHeaderAndOneRowPerStep) {
  const auto dir = fx::scratch_dir("train_log");
  auto cfg = toy_config(dir, 3);
  cfg.log_path = dir / "loss.csv";
  train(cfg);
  std::ifstream in(cfg.log_path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "step,loss_total,loss_udf,loss_kl");
  int rows = 0;
  while (std::getline(in, line)) EXPECT_EQ(line.substr(0, 2), std::to_string(++rows) + ",");
  EXPECT_EQ(rows, 3);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  const auto params = LogVaeParams<float>::initialize(VaeArchitecture{}, 11);
  auto opt = AdamState::zeros_like(params);
  opt.step = 4;
  opt.m[0][0] = 0.25f;
  opt.v.back().back() = 3.5f;
  const std::string bytes = encode_checkpoint(params, &opt);
  const auto ck = decode_checkpoint(bytes);
  ASSERT_TRUE(ck.optimizer.has_value());
  EXPECT_EQ(*ck.optimizer, opt);
  EXPECT_EQ(encode_checkpoint(ck.params, &*ck.optimizer), bytes);
  EXPECT_FALSE(decode_checkpoint(encode_checkpoint(params)).optimizer.has_value());
}

TEST(Checkpoint, RejectsMismatchAndCorruption) {
  const auto params = LogVaeParams<float>::initialize(VaeArchitecture{}, 11);
  const std::string bytes = encode_checkpoint(params);
  VaeArchitecture other;
  other.d_model = 48;
  EXPECT_THROW(decode_checkpoint(bytes, &other), IoError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 1)), IoError);
  EXPECT_THROW(decode_checkpoint("LOGX" + bytes.substr(4)), IoError);
  EXPECT_THROW(decode_checkpoint(bytes + "x"), IoError);
  const auto small = LogVaeParams<float>::initialize(other, 1);
  EXPECT_THROW(decode_checkpoint(encode_checkpoint(small), &params.architecture()), IoError);
}

TEST(TrainStep, NonFiniteParameterIsNamed) {
  auto cfg = toy_config(fx::scratch_dir("train_nan"), 1);
  const auto blocks = load_training_shape(cfg.corpus[0], cfg);
  auto params = LogVaeParams<float>::initialize(cfg.arch, 1);
  params.get("dec.layer1.mlp.w2").mutable_values()[3] = std::numeric_limits<float>::quiet_NaN();
  const auto before = encode_checkpoint(params);
  auto opt = AdamState::zeros_like(params);
  try {
    train_step(params, blocks, opt, cfg, 1);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("dec.layer1.mlp.w2"), std::string::npos) << e.what();
  }
  EXPECT_EQ(opt.step, 0u);
  EXPECT_EQ(encode_checkpoint(params), before);
}

TEST(TrainStep, NoiseSeedsDifferPerStep) {
  EXPECT_NE(step_noise_seed(1, 1), step_noise_seed(1, 2));
  EXPECT_NE(step_noise_seed(1, 1), step_noise_seed(2, 1));
  EXPECT_EQ(step_noise_seed(3, 9), step_noise_seed(3, 9));
}
