#include <gtest/gtest.h>

#include <boost/math/distributions/students_t.hpp>
#include <fstream>

#include "oracles.hpp"
#include "test_util.hpp"
#include "textbcs/errors.hpp"
#include "textbcs/evalkit.hpp"
#include "textbcs/text.hpp"

namespace textbcs::evalkit {
namespace {

std::vector<std::string> read_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  return lines;
}

ExperimentConfig tiny() {
  ExperimentConfig cfg;
  cfg.image_size = 32;
  cfg.stage_channels = {4, 8, 8, 8};
  cfg.text_dim = 16;
  cfg.num_heads = 2;
  cfg.init_lr = 1e-3;
  cfg.max_epochs = 1;
  cfg.seed = 5;
  return cfg;
}

const synth::DatasetManifest& tiny_data() {
  static const synth::DatasetManifest m =
      synth::generate_dataset(tiny(), 10, 2, testing::scratch_dir("evalkit_data"));
  return m;
}

TEST(Metrics, HandExample) {
  const std::vector<int> pred = {1, 1, 1, 0}, gt = {1, 1, 0, 0};
  const metrics::ClassScores d = metrics::dice_metric(pred, gt, 2);
  EXPECT_NEAR(d.per_class[1], 80.0, 1e-12);
  EXPECT_NEAR(d.per_class[0], 200.0 / 3.0, 1e-12);
  const metrics::ClassScores j = metrics::miou_metric(pred, gt, 2);
  EXPECT_NEAR(j.per_class[1], 200.0 / 3.0, 1e-12);
  EXPECT_NEAR(j.per_class[0], 50.0, 1e-12);
  EXPECT_NEAR(j.mean, (200.0 / 3.0 + 50.0) / 2.0, 1e-12);
}

TEST(Metrics, EmptyClassScoresFull) {
  const std::vector<int> zeros(9, 0);
  EXPECT_EQ(metrics::dice_metric(zeros, zeros, 2).mean, 100.0);
  EXPECT_EQ(metrics::miou_metric(zeros, zeros, 2).mean, 100.0);
}

TEST(Metrics, ExhaustiveThreeByThreeAgainstBruteForce) {
  std::vector<int> pred(9), gt(9);
  for (int a = 0; a < 512; ++a) {
    for (int i = 0; i < 9; ++i) pred[i] = (a >> i) & 1;
    for (int b = 0; b < 512; ++b) {
      for (int i = 0; i < 9; ++i) gt[i] = (b >> i) & 1;
      const oracle::SetScores want = oracle::set_scores(pred, gt, 2);
      const metrics::ClassScores d = metrics::dice_metric(pred, gt, 2);
      const metrics::ClassScores j = metrics::miou_metric(pred, gt, 2);
      for (int c = 0; c < 2; ++c) {
        ASSERT_NEAR(d.per_class[c], 100.0 * want.dice[c], 1e-9) << a << " " << b;
        ASSERT_NEAR(j.per_class[c], 100.0 * want.iou[c], 1e-9) << a << " " << b;
      }
    }
  }
}

TEST(Metrics, IouNeverExceedsDice) {
  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const int c = 2 + trial % 3;
    std::vector<int> pred(64), gt(64);
    for (int i = 0; i < 64; ++i) {
      pred[i] = static_cast<int>(rng.uniform(0.0, c - 1e-9));
      gt[i] = static_cast<int>(rng.uniform(0.0, c - 1e-9));
    }
    const auto d = metrics::dice_metric(pred, gt, c);
    const auto j = metrics::miou_metric(pred, gt, c);
    for (int k = 0; k < c; ++k) EXPECT_LE(j.per_class[k], d.per_class[k] + 1e-12);
    EXPECT_GE(d.mean, 0.0);
    EXPECT_LE(d.mean, 100.0);
  }
}

TEST(TTest, HandExample) {
  const TTestResult r = paired_t_test({1, 2, 3, 4, 5}, {0, 0, 0, 0, 0});
  EXPECT_NEAR(r.t, 4.242640687, 1e-8);
  EXPECT_EQ(r.df, 4);
  EXPECT_NEAR(r.p, 0.0132, 5e-4);
  EXPECT_EQ(r.flag, "");
  const TTestResult g = paired_t_test({1, 2, 3, 4, 5}, {0, 0, 0, 0, 0}, Alternative::kGreater);
  EXPECT_NEAR(g.p, r.p / 2.0, 1e-12);
}

TEST(TTest, SymmetricDifferencesAndFlags) {
  const TTestResult sym = paired_t_test({1, -1, 2, -2}, {0, 0, 0, 0});
  EXPECT_NEAR(sym.t, 0.0, 1e-15);
  EXPECT_NEAR(sym.p, 1.0, 1e-12);
  EXPECT_EQ(paired_t_test({3, 4, 5}, {3, 4, 5}).flag, "zero_differences");
  EXPECT_EQ(paired_t_test({3, 4, 5}, {3, 4, 5}).p, 1.0);
  EXPECT_EQ(paired_t_test({4, 5, 6}, {3, 4, 5}).flag, "degenerate_variance");
  EXPECT_THROW(paired_t_test({1}, {0}), std::invalid_argument);
  EXPECT_THROW(paired_t_test({1, 2}, {0}), std::invalid_argument);
}

TEST(TTest, AgreesWithBoostStudentsT) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 3 + trial % 20;
    std::vector<double> a(n), b(n), d(n);
    for (int i = 0; i < n; ++i) {
      a[i] = rng.normal(70.0, 5.0);
      b[i] = a[i] + rng.normal(trial % 3 - 1.0, 2.0);
      d[i] = a[i] - b[i];
    }
    double mean = 0.0, var = 0.0;
    for (double v : d) mean += v / n;
    for (double v : d) var += (v - mean) * (v - mean) / (n - 1);
    const double t = mean / std::sqrt(var / n);
    const boost::math::students_t dist(n - 1);
    const double p2 = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
    const double p1 = boost::math::cdf(boost::math::complement(dist, t));
    const TTestResult two = paired_t_test(a, b);
    const TTestResult one = paired_t_test(a, b, Alternative::kGreater);
    EXPECT_NEAR(two.t, t, 1e-9 * std::max(1.0, std::abs(t)));
    EXPECT_NEAR(two.p, p2, 1e-6);
    EXPECT_NEAR(one.p, p1, 1e-6);
  }
}

TEST(Saliency, ConstantInputIsFlagged) {
  const Heatmap h = saliency_map(Tensor({1, 3, 4, 4}, 2.5), 0, 16);
  EXPECT_TRUE(h.degenerate);
  EXPECT_EQ(h.values.size(), 256u);
  for (double v : h.values) EXPECT_EQ(v, 0.0);
}

TEST(Saliency, NormalisedAndDeterministic) {
  Rng rng(3);
  const Tensor act = testing::random_tensor({2, 4, 8, 8}, rng);
  const Heatmap h = saliency_map(act, 1, 32);
  EXPECT_FALSE(h.degenerate);
  EXPECT_EQ(h.width, 32);
  const auto [lo, hi] = std::minmax_element(h.values.begin(), h.values.end());
  EXPECT_EQ(*lo, 0.0);
  EXPECT_EQ(*hi, 1.0);
  EXPECT_EQ(saliency_map(act, 1, 32).values, h.values);
  // Nearest upsampling: each 4x4 block is constant.
  EXPECT_EQ(h.values[0], h.values[3 * 32 + 3]);
  EXPECT_THROW(saliency_map(act, 2, 32), std::out_of_range);
  EXPECT_THROW(saliency_map(act, 0, 30), std::invalid_argument);
}

TEST(Morphology, DilateErodeSquare) {
  const int size = 9;
  std::vector<int> m(size * size, 0);
  for (int y = 3; y <= 5; ++y) {
    for (int x = 3; x <= 5; ++x) m[y * size + x] = 1;
  }
  const std::vector<int> d = dilate(m, size, 1), e = erode(m, size, 1);
  int nd = 0, ne = 0;
  for (int i = 0; i < size * size; ++i) {
    nd += d[i];
    ne += e[i];
    EXPECT_LE(e[i], m[i]);
    EXPECT_GE(d[i], m[i]);
  }
  EXPECT_EQ(nd, 25);
  EXPECT_EQ(ne, 1);
  EXPECT_EQ(e[4 * size + 4], 1);
  EXPECT_EQ(boundary_radius(64), 2);
  EXPECT_EQ(boundary_radius(32), 1);
  EXPECT_EQ(boundary_radius(16), 1);
}

TEST(Variants, ConfigSwitches) {
  const ExperimentConfig cfg;
  EXPECT_FALSE(variant_config(cfg, "base").use_svli);
  EXPECT_FALSE(variant_config(cfg, "base").use_el);
  EXPECT_TRUE(variant_config(cfg, "base+svli").use_svli);
  EXPECT_FALSE(variant_config(cfg, "base+svli").use_el);
  EXPECT_TRUE(variant_config(cfg, "base+el").use_el);
  EXPECT_FALSE(variant_config(cfg, "base+el").use_svli);
  EXPECT_TRUE(variant_config(cfg, "full").use_el && variant_config(cfg, "full").use_svli);
  EXPECT_THROW(variant_config(cfg, "base+text"), ConfigError);
}

TEST(Paraphrases, CoverEveryRecordAndStayInVocabularyWhenReordered) {
  const auto records = tiny_data().split(synth::Split::kTest);
  const ParaphraseTable table = default_paraphrases(records);
  const text::Vocabulary vocab = text::Vocabulary::prompt_vocabulary();
  for (const auto& r : records) {
    ASSERT_TRUE(table.count(r.prompt)) << r.prompt;
    const auto& styles = table.at(r.prompt);
    ASSERT_TRUE(styles.count("reordered"));
    ASSERT_TRUE(styles.count("paraphrase"));
    EXPECT_NE(styles.at("paraphrase"), r.prompt);
    const text::TokenizedPrompt t = text::tokenize(styles.at("reordered"), 12, vocab);
    for (std::size_t i = 0; i < t.ids.size(); ++i) {
      if (t.valid[i]) EXPECT_NE(t.ids[i], text::kUnk) << styles.at("reordered");
    }
  }
}

TEST(Harness, AblationTableAndCsv) {
  const auto out = testing::scratch_dir("ablation");
  const AblationTable t = run_ablation(tiny(), tiny_data(), {"base", "full"}, {1, 2}, out);
  ASSERT_EQ(t.rows.size(), 4u);
  const auto lines = read_lines(out / "ablation.csv");
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_EQ(lines[0], "variant,seed,dice,miou,epochs");
  EXPECT_EQ(lines[1].rfind("base,1,", 0), 0u);
  EXPECT_TRUE(t.tests.count("full_vs_base"));
  EXPECT_TRUE(std::filesystem::exists(out / "ttest.json"));
  for (const auto& r : t.rows) {
    EXPECT_GE(r.dice, 0.0);
    EXPECT_LE(r.dice, 100.0);
    EXPECT_EQ(r.epochs, 1);
  }
  // Second call reuses the finished runs.
  const AblationTable again = run_ablation(tiny(), tiny_data(), {"base", "full"}, {1, 2}, out);
  for (std::size_t i = 0; i < t.rows.size(); ++i) EXPECT_EQ(again.rows[i].dice, t.rows[i].dice);
}

TEST(Harness, SweepRejectsBadValuesAndFlagsBest) {
  const auto out = testing::scratch_dir("sweep");
  EXPECT_THROW(run_sweep(tiny(), tiny_data(), "lambda1", {0.01, -0.1}, out), ConfigError);
  EXPECT_THROW(run_sweep(tiny(), tiny_data(), "lambda2", {0.01}, out), ConfigError);
  const SweepTable t = run_sweep(tiny(), tiny_data(), "lambda3", {0.0, 0.1}, out);
  ASSERT_EQ(t.rows.size(), 2u);
  int flagged = 0;
  double best = -1.0;
  for (const auto& r : t.rows) {
    flagged += r.best;
    best = std::max(best, r.dice);
  }
  EXPECT_EQ(flagged, 1);
  for (const auto& r : t.rows) {
    if (r.best) EXPECT_EQ(r.dice, best);
  }
  EXPECT_EQ(read_lines(out / "sweep_lambda3.csv").front(), "lambda3,dice,miou,best");
}

TEST(Harness, BoundaryStatsAccounting) {
  ExperimentConfig cfg = tiny();
  Rng init = seed_all(cfg.seed).derive("init");
  TextBcsModel model(cfg, init);
  const synth::SplitData test(tiny_data(), synth::Split::kTest);
  const BoundaryStats s = uncertainty_boundary_stats(model, test, 10);
  EXPECT_EQ(s.ids.size() + static_cast<std::size_t>(s.skipped), test.size());
  EXPECT_EQ(s.band_per_image.size(), s.ids.size());
  ASSERT_EQ(s.histogram_edges.size(), 11u);
  long total = 0;
  for (std::size_t i = 0; i < 10; ++i) total += s.histogram_band[i] + s.histogram_interior[i] + s.histogram_background[i];
  EXPECT_GT(total, 0);
  EXPECT_LE(total, static_cast<long>(test.size()) * 32 * 32);
  for (double u : {s.mean_band, s.mean_interior, s.mean_background}) {
    EXPECT_GT(u, 0.0);
    EXPECT_LE(u, 1.0);
  }
  const auto dir = testing::scratch_dir("hist");
  s.write_histogram_csv(dir / "h.csv");
  const auto lines = read_lines(dir / "h.csv");
  EXPECT_EQ(lines.size(), 11u);
  EXPECT_EQ(lines[0], "bin_low,bin_high,band,interior,background");

  cfg.use_el = false;
  Rng init2 = seed_all(cfg.seed).derive("init");
  TextBcsModel plain(cfg, init2);
  EXPECT_THROW(uncertainty_boundary_stats(plain, test), std::invalid_argument);
}

TEST(Harness, RobustnessRowsPerStyle) {
  ExperimentConfig cfg = tiny();
  Rng init = seed_all(cfg.seed).derive("init");
  TextBcsModel model(cfg, init);
  const synth::SplitData test(tiny_data(), synth::Split::kTest);
  const RobustnessReport r =
      prompt_robustness_eval(model, test, default_paraphrases(tiny_data().split(synth::Split::kTest)));
  ASSERT_GE(r.rows.size(), 3u);
  EXPECT_EQ(r.rows[0].delta, 0.0);
  EXPECT_EQ(r.rows[0].unk_fraction, 0.0);
  for (const auto& row : r.rows) {
    EXPECT_GE(row.unk_fraction, 0.0);
    EXPECT_LE(row.unk_fraction, 1.0);
  }
}

}  // namespace
}  // namespace textbcs::evalkit
