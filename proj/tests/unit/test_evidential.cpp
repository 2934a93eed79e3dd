#include <gtest/gtest.h>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>
#include <cmath>

#include "oracles.hpp"
#include "test_util.hpp"
#include "textbcs/evidential.hpp"

namespace textbcs::evidential {
namespace {

LabelMap random_labels(int n, int h, int w, int classes, Rng& rng) {
  LabelMap l(n, h, w);
  for (int& v : l.data) v = static_cast<int>(rng.uniform(0.0, classes - 1e-9));
  return l;
}

TEST(Softplus, Examples) {
  EXPECT_NEAR(softplus(0.0), std::log(2.0), 1e-15);
  EXPECT_GE(softplus(-1000.0), 0.0);
  EXPECT_LT(std::abs(softplus(1000.0) - 1000.0) / 1000.0, 1e-12);
  EXPECT_TRUE(std::isfinite(softplus(1e6)));
}

TEST(DirichletStats, TwoClassExample) {
  // Evidence [3,1] at one pixel: alpha [4,2], S = 6, u = 1/3.
  const Tensor e({1, 2, 1, 1}, {3.0, 1.0});
  const EvidentialOutput o = dirichlet_stats(e);
  EXPECT_DOUBLE_EQ(o.alpha[0], 4.0);
  EXPECT_DOUBLE_EQ(o.alpha[1], 2.0);
  EXPECT_DOUBLE_EQ(o.strength[0], 6.0);
  EXPECT_NEAR(o.belief[0], 0.5, 1e-15);
  EXPECT_NEAR(o.belief[1], 1.0 / 6.0, 1e-15);
  EXPECT_NEAR(o.uncertainty[0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(o.expected_prob[0], 2.0 / 3.0, 1e-15);
}

TEST(DirichletStats, ZeroEvidenceIsFullyUncertain) {
  const EvidentialOutput o = dirichlet_stats(Tensor({2, 3, 2, 2}));
  for (double u : o.uncertainty.values()) EXPECT_DOUBLE_EQ(u, 1.0);
  for (double p : o.expected_prob.values()) EXPECT_NEAR(p, 1.0 / 3.0, 1e-15);
}

TEST(DirichletStats, MassConservation) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const int c = 2 + trial % 4;
    const Tensor e = testing::random_tensor({1, c, 2, 3}, rng, 0.0, trial % 2 ? 1e3 : 5.0);
    const EvidentialOutput o = dirichlet_stats(e);
    for (int px = 0; px < 6; ++px) {
      double mass = o.uncertainty[px], prob = 0.0;
      for (int k = 0; k < c; ++k) {
        const std::size_t i = static_cast<std::size_t>(k) * 6 + px;
        EXPECT_GE(o.belief[i], 0.0);
        mass += o.belief[i];
        prob += o.expected_prob[i];
      }
      EXPECT_NEAR(mass, 1.0, 1e-12);
      EXPECT_NEAR(prob, 1.0, 1e-12);
      EXPECT_GT(o.uncertainty[px], 0.0);
      EXPECT_LE(o.uncertainty[px], 1.0);
    }
  }
}

TEST(DirichletStats, MoreEvidenceLowersUncertainty) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor e = testing::random_tensor({1, 2, 1, 1}, rng, 0.0, 10.0);
    const double before = dirichlet_stats(e).uncertainty[0];
    e[trial % 2] += rng.uniform(0.01, 5.0);
    EXPECT_LT(dirichlet_stats(e).uncertainty[0], before);
  }
}

TEST(DirichletPdf, UniformAndClosedForm) {
  const std::vector<double> ones = {1.0, 1.0, 1.0};
  const std::vector<double> p = {0.2, 0.3, 0.5};
  EXPECT_NEAR(dirichlet_pdf(p, ones), 2.0, 1e-12);  // Gamma(3)
  const std::vector<double> a = {3.0, 2.0};
  const std::vector<double> q = {0.25, 0.75};
  // Gamma(5) / (Gamma(3) Gamma(2)) * 0.25^2 * 0.75 = 12 * 0.046875
  EXPECT_NEAR(dirichlet_pdf(q, a), 12.0 * 0.0625 * 0.75, 1e-12);
}

TEST(DirichletPdf, IntegratesToOne) {
  const std::vector<double> a = {3.0, 2.0};
  const double integral = oracle::mc_simplex_integral_2(
      [&](double p1, double p2) {
        const std::vector<double> p = {p1, p2};
        return dirichlet_pdf(p, a);
      },
      400000, 11);
  EXPECT_NEAR(integral, 1.0, 5e-3);
}

TEST(IntegratedCrossEntropy, Examples) {
  const std::vector<double> flat = {1.0, 1.0};
  EXPECT_NEAR(ice_pixel(flat, 0), 1.0, 1e-12);
  const std::vector<double> a = {2.0, 1.0};
  EXPECT_NEAR(ice_pixel(a, 0), 0.5, 1e-12);
  EXPECT_NEAR(ice_pixel(a, 1), 1.5, 1e-12);
}

TEST(IntegratedCrossEntropy, MatchesMonteCarlo) {
  const std::vector<double> a = {4.2, 1.7, 2.1};
  const oracle::Estimate mc = oracle::mc_expected_cross_entropy(a, 1, 400000, 21);
  EXPECT_NEAR(ice_pixel(a, 1), mc.mean, 5.0 * mc.stderr_ + 1e-4);
}

TEST(IntegratedCrossEntropy, AgreesWithIndependentDigamma) {
  Rng rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    const int c = 2 + trial % 4;
    std::vector<double> a(c);
    double s = 0.0;
    for (double& v : a) s += v = rng.uniform(1.0, 50.0);
    const int y = trial % c;
    const double want = boost::math::digamma(s) - boost::math::digamma(a[y]);
    EXPECT_NEAR(ice_pixel(a, y), want, 1e-10 * std::max(1.0, std::abs(want)));
  }
}

TEST(KlToUniform, Examples) {
  const std::vector<double> flat = {1.0, 1.0};
  EXPECT_NEAR(kl_pixel(flat, 0), 0.0, 1e-12);
  // Correct class evidence is masked away entirely.
  const std::vector<double> confident = {25.0, 1.0};
  EXPECT_NEAR(kl_pixel(confident, 0), 0.0, 1e-12);
  const std::vector<double> a = {2.0, 1.0};
  EXPECT_NEAR(kl_pixel(a, 1), std::log(2.0) - 0.5, 1e-9);
  EXPECT_EQ(masked_alpha(a, 0), (std::vector<double>{1.0, 1.0}));
  EXPECT_EQ(masked_alpha(a, 1), (std::vector<double>{2.0, 1.0}));
}

TEST(KlToUniform, NonNegativeOverRandomDraws) {
  Rng rng(4);
  for (int trial = 0; trial < 1000; ++trial) {
    const int c = 2 + trial % 4;
    std::vector<double> a(c);
    for (double& v : a) v = 1.0 + softplus(rng.uniform(-8.0, 8.0));
    EXPECT_GE(kl_pixel(a, trial % c), -1e-12);
  }
}

TEST(KlToUniform, MatchesMonteCarlo) {
  const std::vector<double> a = {1.0, 3.5, 2.2};
  const oracle::Estimate mc = oracle::mc_kl_to_uniform(a, 400000, 31);
  EXPECT_NEAR(kl_pixel(a, 0), mc.mean, 5.0 * mc.stderr_ + 1e-4);
}

TEST(KlToUniform, GradientAgreesWithTrigammaForm) {
  // For two classes with the label at index 0 masked, d KL / d alpha_1 is
  // (alpha_1 - 1) * (trigamma(alpha_1) - trigamma(1 + alpha_1)).
  for (double a1 : {1.0, 1.5, 3.0, 12.0}) {
    const std::vector<double> a = {7.0, a1};
    std::vector<double> d(2);
    kl_pixel(a, 0, d);
    const double want = (a1 - 1.0) * (boost::math::trigamma(a1) - boost::math::trigamma(1.0 + a1));
    EXPECT_NEAR(d[1], want, 1e-10);
    EXPECT_EQ(d[0], 0.0);
  }
}

TEST(LogitLosses, GradientsMatchFiniteDifferences) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const int c = 2 + trial % 3;
    Tensor logits = testing::random_tensor({2, c, 3, 3}, rng, -4.0, 4.0);
    const LabelMap labels = random_labels(2, 3, 3, c, rng);
    const LossGrad ice = ice_loss_from_logits(logits, labels);
    EXPECT_LT(testing::gradient_error([&] { return ice_loss_from_logits(logits, labels).value; }, logits, ice.grad),
              1e-5);
    const LossGrad kl = kl_from_logits(logits, labels);
    EXPECT_LT(testing::gradient_error([&] { return kl_from_logits(logits, labels).value; }, logits, kl.grad), 1e-5);
  }
}

TEST(LogitLosses, ValueMatchesAlphaForm) {
  Rng rng(6);
  const Tensor logits = testing::random_tensor({1, 2, 4, 4}, rng, -3.0, 3.0);
  const LabelMap labels = random_labels(1, 4, 4, 2, rng);
  const Tensor alpha = dirichlet_stats(evidence_from_logits(logits)).alpha;
  EXPECT_NEAR(ice_loss_from_logits(logits, labels).value, ice_loss(alpha, labels), 1e-14);
  EXPECT_NEAR(kl_from_logits(logits, labels).value, kl_to_uniform(alpha, labels), 1e-14);
}

TEST(ExpectedProbability, BackwardMatchesFiniteDifferences) {
  Rng rng(7);
  Tensor logits = testing::random_tensor({2, 3, 2, 2}, rng, -3.0, 3.0);
  const Tensor weights = testing::random_tensor(logits.shape(), rng);
  auto f = [&] {
    const Tensor p = expected_probability(logits);
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += p[i] * weights[i];
    return s;
  };
  EXPECT_LT(testing::gradient_error(f, logits, expected_probability_backward(logits, weights)), 1e-5);
}

TEST(Predict, TieGoesToLowerIndexAndMatchesArgmax) {
  const EvidentialOutput tie = dirichlet_stats(Tensor({1, 2, 1, 1}, {2.0, 2.0}));
  EXPECT_EQ(predict(tie).labels.data[0], 0);
  Rng rng(8);
  const Tensor e = testing::random_tensor({2, 3, 4, 4}, rng, 0.0, 6.0);
  const EvidentialOutput o = dirichlet_stats(e);
  const Prediction p = predict(o);
  for (int n = 0; n < 2; ++n) {
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 4; ++x) {
        int best = 0;
        for (int c = 1; c < 3; ++c) {
          if (e.at(n, c, y, x) > e.at(n, best, y, x)) best = c;
        }
        EXPECT_EQ(p.labels.at(n, y, x), best);
      }
    }
  }
  EXPECT_EQ(max_abs_diff(p.uncertainty, o.uncertainty), 0.0);
}

}  // namespace
}  // namespace textbcs::evidential
