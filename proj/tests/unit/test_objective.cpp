#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "test_util.hpp"
#include "textbcs/objective.hpp"

namespace textbcs::objective {
namespace {

Tensor two_class_probs(const std::vector<double>& fg, int h, int w) {
  Tensor p({1, 2, h, w});
  const std::size_t n = fg.size();
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = 1.0 - fg[i];
    p[n + i] = fg[i];
  }
  return p;
}

LabelMap row_labels(const std::vector<int>& v) {
  LabelMap l(1, 1, static_cast<int>(v.size()));
  l.data = v;
  return l;
}

Tensor random_probs(const Shape& shape, Rng& rng) {
  return softmax(testing::random_tensor(shape, rng, -3.0, 3.0));
}

LabelMap random_labels(int n, int h, int w, int classes, Rng& rng) {
  LabelMap l(n, h, w);
  for (int& v : l.data) v = static_cast<int>(rng.uniform(0.0, classes - 1e-9));
  return l;
}

TEST(Dice, HandExample) {
  // fg class: I = 2, |P| = 3, |Y| = 2 -> 4/5. bg class: I = 1, |P| = 1, |Y| = 2 -> 2/3.
  const LossGrad d = dice_loss(two_class_probs({1, 1, 1, 0}, 1, 4), row_labels({1, 1, 0, 0}));
  EXPECT_NEAR(d.value, 4.0 / 15.0, 1e-6);
}

TEST(Dice, PerfectPredictionIsZero) {
  const LossGrad d = dice_loss(two_class_probs({0, 1, 1, 0, 1, 0}, 2, 3), [] {
    LabelMap l(1, 2, 3);
    l.data = {0, 1, 1, 0, 1, 0};
    return l;
  }());
  EXPECT_NEAR(d.value, 0.0, 1e-12);
}

TEST(Dice, UniformPredictionClosedForm) {
  const int pixels = 16, k = 5;
  std::vector<int> labels(pixels, 0);
  for (int i = 0; i < k; ++i) labels[i] = 1;
  const LossGrad d = dice_loss(two_class_probs(std::vector<double>(pixels, 0.5), 1, pixels), row_labels(labels));
  const double fg = (k + kDiceSmooth) / (0.5 * pixels + k + kDiceSmooth);
  const double bg = (pixels - k + kDiceSmooth) / (0.5 * pixels + pixels - k + kDiceSmooth);
  EXPECT_NEAR(d.value, 1.0 - 0.5 * (fg + bg), 1e-12);
}

TEST(Dice, GradientMatchesFiniteDifferences) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const int c = 2 + trial % 3;
    Tensor probs = random_probs({2, c, 3, 4}, rng);
    const LabelMap labels = random_labels(2, 3, 4, c, rng);
    const LossGrad d = dice_loss(probs, labels);
    EXPECT_LT(testing::gradient_error([&] { return dice_loss(probs, labels).value; }, probs, d.grad), 1e-5);
  }
}

TEST(Dice, BoundedOverRandomInputs) {
  Rng rng(2);
  for (int trial = 0; trial < 500; ++trial) {
    const int c = 2 + trial % 3;
    const LossGrad d = dice_loss(random_probs({1, c, 4, 4}, rng), random_labels(1, 4, 4, c, rng));
    EXPECT_GE(d.value, -1e-12);
    EXPECT_LE(d.value, 1.0 + 1e-12);
  }
}

TEST(CrossEntropy, GradientAndSoftmaxBackward) {
  Rng rng(3);
  Tensor logits = testing::random_tensor({2, 3, 2, 3}, rng, -4.0, 4.0);
  const LabelMap labels = random_labels(2, 2, 3, 3, rng);
  const LossGrad ce = cross_entropy_from_logits(logits, labels);
  EXPECT_LT(testing::gradient_error([&] { return cross_entropy_from_logits(logits, labels).value; }, logits, ce.grad),
            1e-5);

  const Tensor weights = testing::random_tensor(logits.shape(), rng);
  auto f = [&] {
    const Tensor p = softmax(logits);
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += p[i] * weights[i];
    return s;
  };
  EXPECT_LT(testing::gradient_error(f, logits, softmax_backward(softmax(logits), weights)), 1e-5);
}

TEST(CrossEntropy, UniformLogitsGiveLogC) {
  const LabelMap labels = row_labels({0, 1, 2});
  EXPECT_NEAR(cross_entropy_from_logits(Tensor({1, 3, 1, 3}), labels).value, std::log(3.0), 1e-12);
}

TEST(KlWeight, WarmupSchedule) {
  EXPECT_EQ(lambda2_schedule(0, 5e-7, 100), 0.0);
  EXPECT_NEAR(lambda2_schedule(50, 5e-7, 100), 2.5e-7, 1e-20);
  EXPECT_NEAR(lambda2_schedule(100, 5e-7, 100), 5e-7, 1e-20);
  EXPECT_NEAR(lambda2_schedule(400, 5e-7, 100), 5e-7, 1e-20);
  EXPECT_THROW(lambda2_schedule(-1, 5e-7, 100), std::invalid_argument);
  double prev = -1.0;
  for (int e = 0; e < 300; ++e) {
    const double v = lambda2_schedule(e, 5e-7, 100);
    EXPECT_GE(v, prev);
    EXPECT_LE(v, 5e-7);
    prev = v;
  }
}

TEST(TotalLoss, WeightedSum) {
  ExperimentConfig cfg;
  const LossReport r = total_loss(0.2, 0.5, 1.0, 0.3, 10, cfg);
  // 0.2 + 0.01 * 0.5 + 5e-8 * 1.0 + 0.01 * 0.3
  EXPECT_NEAR(r.total, 0.20800005, 1e-15);
  EXPECT_NEAR(r.lambda2, 5e-8, 1e-22);
  EXPECT_DOUBLE_EQ(r.total, r.recompute_total());
}

TEST(TotalLoss, ZeroWeightsLeaveDice) {
  ExperimentConfig cfg;
  cfg.lambda1 = 0.0;
  cfg.lambda3 = 0.0;
  cfg.lambda2_max = 0.0;
  EXPECT_DOUBLE_EQ(total_loss(0.37, 4.0, 9.0, 2.0, 70, cfg).total, 0.37);
}

TEST(TotalLoss, NonFiniteComponentIsNamed) {
  ExperimentConfig cfg;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  try {
    total_loss(0.1, 0.2, nan, 0.1, 3, cfg);
    FAIL() << "expected domain_error";
  } catch (const std::domain_error& e) {
    EXPECT_NE(std::string(e.what()).find("kl"), std::string::npos) << e.what();
  }
  EXPECT_THROW(total_loss(std::numeric_limits<double>::infinity(), 0, 0, 0, 0, cfg), std::domain_error);
}

TEST(TotalLoss, DisabledComponentsAreDropped) {
  ExperimentConfig cfg;
  cfg.use_el = false;
  cfg.use_svli = false;
  const LossReport base = total_loss(0.2, 0.5, 1.0, 0.3, 10, cfg, 0.7);
  EXPECT_EQ(base.ice, 0.0);
  EXPECT_EQ(base.kl, 0.0);
  EXPECT_EQ(base.con, 0.0);
  EXPECT_NEAR(base.total, 0.2 + 0.01 * 0.7, 1e-15);

  cfg.use_svli = true;
  EXPECT_NEAR(total_loss(0.2, 0.5, 1.0, 0.3, 10, cfg, 0.7).total, 0.2 + 0.007 + 0.003, 1e-15);
  cfg.use_el = true;
  cfg.use_svli = false;
  EXPECT_NEAR(total_loss(0.2, 0.5, 1.0, 0.3, 10, cfg, 0.7).total, 0.2 + 0.005 + 5e-8, 1e-15);
}

}  // namespace
}  // namespace textbcs::objective
