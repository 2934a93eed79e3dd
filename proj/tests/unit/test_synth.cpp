#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "test_util.hpp"
#include "textbcs/errors.hpp"
#include "textbcs/hash.hpp"
#include "textbcs/image_io.hpp"
#include "textbcs/synth.hpp"

namespace textbcs::synth {
namespace {

// Independent 4-connected-with-diagonals flood fill, written recursively.
void flood(std::vector<int>& label, const std::vector<int>& mask, int size, int x, int y, int id) {
  if (x < 0 || y < 0 || x >= size || y >= size) return;
  const int p = y * size + x;
  if (!mask[p] || label[p]) return;
  label[p] = id;
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) {
      if (dx || dy) flood(label, mask, size, x + dx, y + dy, id);
    }
  }
}

int flood_components(const std::vector<int>& mask, int size) {
  std::vector<int> label(mask.size(), 0);
  int next = 0;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      if (mask[y * size + x] && !label[y * size + x]) flood(label, mask, size, x, y, ++next);
    }
  }
  return next;
}

LesionAttributes random_attributes(Rng& rng) {
  LesionAttributes a;
  a.location = rng.uniform() < 0.5 ? Location::kLeft : Location::kRight;
  a.shape = static_cast<Shape>(rng.uniform_int(0, 2));
  a.size = static_cast<SizeClass>(rng.uniform_int(0, 2));
  a.count = rng.uniform_int(1, 4);
  return a;
}

ExperimentConfig small_config(std::int64_t seed = 7) {
  ExperimentConfig cfg;
  cfg.seed = seed;
  return cfg;
}

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(RenderPrompt, Examples) {
  EXPECT_EQ(render_prompt({Location::kLeft, Shape::kIrregular, SizeClass::kMedium, 2}),
            "location left; shape irregular; size medium; number two.");
  EXPECT_EQ(render_prompt({Location::kRight, Shape::kIrregular, SizeClass::kLarge, 2}),
            "location right; shape irregular; size large; number two.");
  EXPECT_EQ(render_prompt({Location::kLeft, Shape::kRound, SizeClass::kSmall, 1}),
            "location left; shape round; size small; number one.");
  EXPECT_THROW(render_prompt({Location::kLeft, Shape::kRound, SizeClass::kSmall, 5}), DataError);
  EXPECT_THROW(render_prompt({Location::kLeft, Shape::kRound, SizeClass::kSmall, 0}), DataError);
}

TEST(Attributes, JsonRoundTripAndParsing) {
  const LesionAttributes a{Location::kRight, Shape::kEllipse, SizeClass::kLarge, 3};
  EXPECT_EQ(LesionAttributes::from_json(a.to_json()), a);
  EXPECT_THROW(parse_shape("square"), DataError);
  EXPECT_THROW(LesionAttributes::from_json({{"location", "left"}}), DataError);
}

TEST(GenerateSample, CountAndLocationExample) {
  Rng rng(5);
  const Sample s = generate_sample(rng, {Location::kLeft, Shape::kRound, SizeClass::kMedium, 2}, 0.2);
  EXPECT_EQ(flood_components(s.mask, s.size), 2);
  for (int y = 0; y < s.size; ++y) {
    for (int x = s.size / 2; x < s.size; ++x) EXPECT_EQ(s.mask[y * s.size + x], 0);
  }
}

TEST(GenerateSample, Deterministic) {
  const LesionAttributes a{Location::kRight, Shape::kIrregular, SizeClass::kLarge, 2};
  Rng r1(42), r2(42);
  const Sample s1 = generate_sample(r1, a, 0.2), s2 = generate_sample(r2, a, 0.2);
  EXPECT_EQ(s1.image, s2.image);
  EXPECT_EQ(s1.mask, s2.mask);
}

TEST(GenerateSample, ContrastRaisesLesionOffset) {
  const LesionAttributes a{Location::kLeft, Shape::kEllipse, SizeClass::kLarge, 1};
  Rng r1(9), r2(9);
  const Sample hi = generate_sample(r1, a, 1.0), lo = generate_sample(r2, a, 0.1);
  ASSERT_EQ(hi.mask, lo.mask);
  // Local background: pixels within 6 px of the lesion but at least 3 px away from it.
  auto offset = [](const Sample& s) {
    const int n = s.size;
    double in_sum = 0, out_sum = 0;
    int in_n = 0, out_n = 0;
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        if (s.mask[y * n + x]) {
          in_sum += s.image[y * n + x];
          ++in_n;
          continue;
        }
        int d = 99;
        for (int yy = std::max(0, y - 6); yy <= std::min(n - 1, y + 6); ++yy) {
          for (int xx = std::max(0, x - 6); xx <= std::min(n - 1, x + 6); ++xx) {
            if (s.mask[yy * n + xx]) d = std::min(d, std::max(std::abs(xx - x), std::abs(yy - y)));
          }
        }
        if (d >= 3 && d <= 6) {
          out_sum += s.image[y * n + x];
          ++out_n;
        }
      }
    }
    return in_sum / in_n - out_sum / out_n;
  };
  EXPECT_GT(offset(hi), offset(lo));
  EXPECT_GT(offset(lo), 0.0);
}

TEST(GenerateSample, PlacementFailureIsExplicit) {
  Rng rng(1);
  SampleOptions opts;
  opts.image_size = 16;
  try {
    generate_sample(rng, {Location::kLeft, Shape::kRound, SizeClass::kLarge, 4}, opts);
    FAIL() << "expected a placement error";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("cannot place"), std::string::npos);
  }
  EXPECT_THROW(generate_sample(rng, {Location::kLeft, Shape::kRound, SizeClass::kSmall, 1}, 0.0), DataError);
  EXPECT_THROW(generate_sample(rng, {Location::kLeft, Shape::kRound, SizeClass::kSmall, 1}, 1.5), DataError);
}

TEST(GenerateSampleProperties, InvariantsOverRandomAttributes) {
  Rng rng(2024);
  for (int trial = 0; trial < 300; ++trial) {
    const LesionAttributes a = random_attributes(rng);
    Rng sample_rng = rng.derive("trial/" + std::to_string(trial));
    SampleOptions opts;
    opts.contrast = rng.uniform(0.05, 1.0);
    opts.distractor_prob = 0.5;
    const Sample s = generate_sample(sample_rng, a, opts);
    ASSERT_EQ(s.image.size(), s.mask.size());
    ASSERT_EQ(s.image.size(), 64u * 64u);
    EXPECT_EQ(flood_components(s.mask, s.size), a.count) << render_prompt(a);
    EXPECT_EQ(count_components(s.mask, s.size, s.size), a.count);
    for (int y = 0; y < s.size; ++y) {
      for (int x = 0; x < s.size; ++x) {
        if (!s.mask[y * s.size + x]) continue;
        EXPECT_TRUE(a.location == Location::kLeft ? x < s.size / 2 : x >= s.size / 2);
      }
    }
    for (double v : s.image) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
    EXPECT_EQ(s.prompt, render_prompt(a));
  }
}

TEST(GenerateSampleProperties, SizeMonotonicity) {
  Rng rng(77);
  std::vector<double> mean_area;
  for (SizeClass size : {SizeClass::kSmall, SizeClass::kMedium, SizeClass::kLarge}) {
    double total = 0;
    for (int i = 0; i < 100; ++i) {
      LesionAttributes a = random_attributes(rng);
      a.size = size;
      a.count = 1;
      Rng r = rng.derive("s" + std::to_string(i));
      const Sample s = generate_sample(r, a, 0.2);
      for (int v : s.mask) total += v;
    }
    mean_area.push_back(total / 100.0);
  }
  EXPECT_LT(mean_area[0], mean_area[1]);
  EXPECT_LT(mean_area[1], mean_area[2]);
}

TEST(SplitCounts, Examples) {
  const SplitCounts a = split_group_counts(100);
  EXPECT_EQ(a.train, 70);
  EXPECT_EQ(a.val, 10);
  EXPECT_EQ(a.test, 20);
  const SplitCounts b = split_group_counts(10);
  EXPECT_EQ(b.train, 7);
  EXPECT_EQ(b.val, 1);
  EXPECT_EQ(b.test, 2);
  EXPECT_THROW(split_group_counts(5), ConfigError);
  for (int n = 10; n <= 300; ++n) {
    const SplitCounts c = split_group_counts(n);
    EXPECT_EQ(c.train + c.val + c.test, n);
    EXPECT_NEAR(c.train, 0.7 * n, 1.0);
    EXPECT_NEAR(c.val, 0.1 * n, 1.0);
    EXPECT_NEAR(c.test, 0.2 * n, 1.0);
  }
}

class DatasetTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new std::filesystem::path(testing::scratch_dir("dataset"));
    manifest_ = new DatasetManifest(generate_dataset(small_config(), 10, 10, *dir_ / "a"));
  }
  static void TearDownTestSuite() {
    delete manifest_;
    delete dir_;
  }
  static std::filesystem::path* dir_;
  static DatasetManifest* manifest_;
};

std::filesystem::path* DatasetTest::dir_ = nullptr;
DatasetManifest* DatasetTest::manifest_ = nullptr;

TEST_F(DatasetTest, LayoutAndSplits) {
  const auto root = *dir_ / "a";
  EXPECT_TRUE(std::filesystem::exists(root / "manifest.jsonl"));
  EXPECT_TRUE(std::filesystem::exists(root / "dataset.json"));
  EXPECT_EQ(manifest_->records.size(), 100u);
  EXPECT_EQ(manifest_->groups(Split::kTrain).size(), 7u);
  EXPECT_EQ(manifest_->groups(Split::kVal).size(), 1u);
  EXPECT_EQ(manifest_->groups(Split::kTest).size(), 2u);
  std::set<int> seen;
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
    for (int g : manifest_->groups(s)) EXPECT_TRUE(seen.insert(g).second) << "group in two splits";
  }
  for (const auto& r : manifest_->records) {
    EXPECT_TRUE(std::filesystem::exists(root / r.image));
    EXPECT_TRUE(std::filesystem::exists(root / r.mask));
  }
  // Every manifest line carries the documented keys.
  std::ifstream in(root / "manifest.jsonl");
  std::string line;
  std::getline(in, line);
  const auto j = nlohmann::json::parse(line);
  for (const char* key : {"id", "image", "mask", "prompt", "attributes", "group_id", "split"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
}

TEST_F(DatasetTest, RegenerationIsByteIdentical) {
  generate_dataset(small_config(), 10, 10, *dir_ / "b");
  EXPECT_EQ(sha256_file(*dir_ / "a" / "manifest.jsonl"), sha256_file(*dir_ / "b" / "manifest.jsonl"));
  for (const auto& r : manifest_->records) {
    ASSERT_EQ(read_text(*dir_ / "a" / r.image), read_text(*dir_ / "b" / r.image)) << r.id;
    ASSERT_EQ(read_text(*dir_ / "a" / r.mask), read_text(*dir_ / "b" / r.mask)) << r.id;
  }
  generate_dataset(small_config(8), 10, 10, *dir_ / "c");
  EXPECT_NE(sha256_file(*dir_ / "a" / "manifest.jsonl"), sha256_file(*dir_ / "c" / "manifest.jsonl"));
}

TEST_F(DatasetTest, LoadedManifestMatches) {
  const DatasetManifest m = load_manifest(*dir_ / "a");
  ASSERT_EQ(m.records.size(), manifest_->records.size());
  EXPECT_EQ(m.seed, 7u);
  EXPECT_EQ(m.version, kGeneratorVersion);
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    EXPECT_EQ(m.records[i].to_json(), manifest_->records[i].to_json());
  }
}

TEST_F(DatasetTest, PersistedSamplesKeepInvariants) {
  const SplitData train(*manifest_, Split::kTrain);
  for (const Sample& s : train.samples()) {
    EXPECT_EQ(flood_components(s.mask, s.size), s.attributes.count) << s.id;
    EXPECT_EQ(s.prompt, render_prompt(s.attributes));
  }
}

TEST_F(DatasetTest, BatchesCoverSplitOnce) {
  const SplitData test(*manifest_, Split::kTest);
  ASSERT_EQ(test.size(), 20u);
  Rng rng(3);
  const auto batches = test.batches(4, &rng);
  EXPECT_EQ(batches.size(), 5u);

  const SplitData train(*manifest_, Split::kTrain);
  std::multiset<std::string> ids;
  for (const Batch& b : train.batches(4, &rng)) {
    EXPECT_EQ(b.images.dim(1), 1);
    EXPECT_EQ(b.images.dim(2), 64);
    EXPECT_EQ(b.masks.batch, b.images.dim(0));
    ids.insert(b.ids.begin(), b.ids.end());
  }
  std::multiset<std::string> expected;
  for (const auto& r : manifest_->split(Split::kTrain)) expected.insert(r.id);
  EXPECT_EQ(ids, expected);
}

TEST_F(DatasetTest, ShuffleOnlyForTrain) {
  const SplitData val(*manifest_, Split::kVal), train(*manifest_, Split::kTrain);
  Rng a(1), b(2);
  auto order = [](const std::vector<Batch>& bs) {
    std::vector<std::string> ids;
    for (const auto& x : bs) ids.insert(ids.end(), x.ids.begin(), x.ids.end());
    return ids;
  };
  EXPECT_EQ(order(val.batches(4, &a)), order(val.batches(4, &b)));
  EXPECT_EQ(order(val.batches(4, &a)), order(val.batches(4, nullptr)));
  Rng c(1), d(2);
  EXPECT_NE(order(train.batches(4, &c)), order(train.batches(4, &d)));
  Rng e(1), f(1);
  EXPECT_EQ(order(train.batches(4, &e)), order(train.batches(4, &f)));
}

TEST_F(DatasetTest, MissingFileIsDataError) {
  const auto copy = *dir_ / "broken";
  std::filesystem::copy(*dir_ / "a", copy, std::filesystem::copy_options::recursive);
  const DatasetManifest m = load_manifest(copy);
  std::filesystem::remove(copy / m.split(Split::kVal).front().image);
  EXPECT_THROW(load_batches(m, Split::kVal, 4, nullptr), DataError);
  EXPECT_THROW(load_manifest(*dir_ / "nowhere"), DataError);
}

TEST(Dataset, TooFewGroups) {
  EXPECT_THROW(generate_dataset(small_config(), 5, 2, testing::scratch_dir("few")), ConfigError);
}

TEST(ImageIo, PngRoundTrip) {
  const auto dir = testing::scratch_dir("png");
  GrayImage g{5, 3, {}};
  for (int i = 0; i < 15; ++i) g.pixels.push_back(static_cast<std::uint8_t>(i * 17));
  write_png(dir / "g.png", g);
  const GrayImage back = read_png_gray(dir / "g.png");
  EXPECT_EQ(back.width, 5);
  EXPECT_EQ(back.height, 3);
  EXPECT_EQ(back.pixels, g.pixels);
  RgbImage rgb{2, 2, std::vector<std::uint8_t>(12, 200)};
  write_png(dir / "c.png", rgb);
  EXPECT_THROW(read_png_gray(dir / "c.png"), DataError);
  EXPECT_THROW(read_png_gray(dir / "missing.png"), DataError);
}

}  // namespace
}  // namespace textbcs::synth
