#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "qmrf/optim.hpp"

using namespace qmrf::ad;

namespace {

ParameterList one_param(std::vector<double> v) {
  const std::size_t n = v.size();
  return {{"w", Tensor::from({n}, std::move(v), true)}};
}

void set_grad(Tensor& t, const std::vector<double>& g) {
  // Produce exactly g as the gradient through sum(w * g).
  t.clear_grad();
  sum(mul(t, Tensor::from(t.shape(), g))).backward();
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  auto p = one_param({1.0, -2.0, 3.0});
  AdamState st;
  set_grad(p[0].tensor, {0.0, 0.0, 0.0});
  adam_step(p, st, AdamConfig{});
  EXPECT_EQ(p[0].tensor.to_vector(), (std::vector<double>{1.0, -2.0, 3.0}));
}

TEST(Adam, FirstStepMovesByLrAgainstSign) {
  auto p = one_param({0.0, 0.0, 0.0});
  AdamState st;
  AdamConfig cfg;
  cfg.lr = 0.01;
  set_grad(p[0].tensor, {3.0, -0.5, 1e-2});
  adam_step(p, st, cfg);
  const auto v = p[0].tensor.to_vector();
  EXPECT_NEAR(v[0], -0.01, 1e-8);
  EXPECT_NEAR(v[1], 0.01, 1e-8);
  EXPECT_NEAR(v[2], -0.01, 1e-5);
}

TEST(Adam, ConvergesOnQuadratic) {
  const std::vector<double> target{0.3, -1.2, 2.0, 0.0};
  auto p = one_param({0.0, 0.0, 0.0, 0.0});
  AdamConfig cfg;
  cfg.lr = 0.05;
  Adam opt(p, cfg);
  auto wstar = Tensor::from({4}, target);
  for (int i = 0; i < 200; ++i) {
    opt.zero_grad();
    auto d = sub(p[0].tensor, wstar);
    sum(mul(d, d)).backward();
    opt.step();
    if (i == 150) opt.set_lr(0.005);
  }
  const auto v = p[0].tensor.to_vector();
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(v[i], target[i], 1e-3);
}

TEST(Adam, WeightDecayIsAddedToGradient) {
  // With g = 0 and L2 decay, the effective gradient is wd * w, so the first step is -lr * sign(w).
  auto p = one_param({2.0, -4.0});
  AdamState st;
  AdamConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.5;
  set_grad(p[0].tensor, {0.0, 0.0});
  adam_step(p, st, cfg);
  EXPECT_NEAR(p[0].tensor.to_vector()[0], 1.9, 1e-7);
  EXPECT_NEAR(p[0].tensor.to_vector()[1], -3.9, 1e-7);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  ParameterList p{{"good", Tensor::from({1}, {1.0}, true)}, {"bad.weight", Tensor::from({2}, {1.0, 1.0}, true)}};
  set_grad(p[0].tensor, {1.0});
  set_grad(p[1].tensor, {0.0, std::numeric_limits<double>::quiet_NaN()});
  AdamState st;
  try {
    adam_step(p, st, AdamConfig{});
    FAIL();
  } catch (const NonFiniteGradient& e) {
    EXPECT_EQ(e.parameter(), "bad.weight");
  }
  EXPECT_EQ(p[0].tensor.to_vector()[0], 1.0);  // nothing mutated
}

TEST(Adam, SeededTrajectoriesAreBitIdentical) {
  auto run = [] {
    auto p = one_param({0.1, 0.2, -0.3});
    Adam opt(p, AdamConfig{});
    auto c = Tensor::from({3}, {1.0, 2.0, 3.0});
    for (int i = 0; i < 50; ++i) {
      opt.zero_grad();
      sum(mul(mul(p[0].tensor, p[0].tensor), c)).backward();
      opt.step();
    }
    return p[0].tensor.to_vector();
  };
  EXPECT_EQ(run(), run());
}

TEST(Checkpoint, RoundTripAndHash) {
  ParameterList p{{"a", Tensor::from({2, 2}, {1.0, 2.0, 3.0, 4.5}, true)},
                  {"b", Tensor::from({3}, {-1.0, 0.0, 1e-300}, true)}};
  EXPECT_EQ(parameter_count(p), 7u);
  const auto stem = std::filesystem::temp_directory_path() / "qmrf_ckpt_test";
  save_checkpoint(stem, p, {{"note", "x"}});
  ParameterList q{{"a", Tensor::zeros({2, 2}, true)}, {"b", Tensor::zeros({3}, true)}};
  auto extra = load_checkpoint(stem, q);
  EXPECT_EQ(q[0].tensor.to_vector(), p[0].tensor.to_vector());
  EXPECT_EQ(q[1].tensor.to_vector(), p[1].tensor.to_vector());
  EXPECT_EQ(parameter_hash(p), parameter_hash(q));
  EXPECT_EQ(extra.at("note"), "x");
  ParameterList wrong{{"a", Tensor::zeros({4}, true)}, {"b", Tensor::zeros({3}, true)}};
  EXPECT_ANY_THROW(load_checkpoint(stem, wrong));
}
