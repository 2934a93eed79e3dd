#include <gtest/gtest.h>

#include "test_util.hpp"
#include "textbcs/synth.hpp"
#include "textbcs/text.hpp"

namespace textbcs::text {
namespace {

const Vocabulary& vocab() {
  static const Vocabulary v = Vocabulary::prompt_vocabulary();
  return v;
}

ExperimentConfig text_config() {
  ExperimentConfig cfg;
  cfg.text_dim = 16;
  cfg.num_heads = 2;
  cfg.num_stages = 3;
  cfg.image_size = 32;
  cfg.stage_channels = {4, 4, 4};
  return cfg;
}

TEST(Vocabulary, ContiguousWithPadZero) {
  const Vocabulary& v = vocab();
  EXPECT_EQ(v.token(kPad), "[PAD]");
  EXPECT_EQ(v.token(kUnk), "[UNK]");
  EXPECT_EQ(v.token(kSep), "[SEP]");
  for (int i = 0; i < v.size(); ++i) EXPECT_EQ(v.id(v.token(i)), i);
  EXPECT_EQ(Vocabulary::from_json(v.to_json()).to_json(), v.to_json());
  EXPECT_THROW(Vocabulary::from_json({{"[PAD]", 0}, {"a", 2}}), std::exception);
}

TEST(Tokenize, TemplatePromptHasNineTokens) {
  const TokenizedPrompt t = tokenize("location left; shape round; size small; number one.", 12, vocab());
  ASSERT_EQ(t.ids.size(), 12u);
  int valid = 0;
  for (auto f : t.valid) valid += f;
  EXPECT_EQ(valid, 9);
  const std::vector<std::string> words = {"location", "left", "shape", "round", "size", "small", "number", "one"};
  for (std::size_t i = 0; i < words.size(); ++i) EXPECT_EQ(t.ids[i], vocab().id(words[i]));
  EXPECT_EQ(t.ids[8], kSep);
  for (std::size_t i = 9; i < 12; ++i) {
    EXPECT_EQ(t.ids[i], kPad);
    EXPECT_EQ(t.valid[i], 0);
  }
  EXPECT_FALSE(t.truncated);
}

TEST(Tokenize, UnknownWordsAndCase) {
  const TokenizedPrompt t = tokenize("heterogeneous", 4, vocab());
  EXPECT_EQ(t.ids[0], kUnk);
  EXPECT_EQ(t.valid[0], 1);
  EXPECT_EQ(tokenize("LOCATION Left", 4, vocab()).ids, tokenize("location left", 4, vocab()).ids);
}

TEST(Tokenize, EmptyPromptRejectedAndTruncation) {
  EXPECT_THROW(tokenize("", 12, vocab()), std::invalid_argument);
  EXPECT_THROW(tokenize(" ; ,  ", 12, vocab()), std::invalid_argument);
  const TokenizedPrompt t = tokenize("location left; shape round; size small; number one.", 5, vocab());
  EXPECT_TRUE(t.truncated);
  EXPECT_EQ(t.ids.size(), 5u);
  EXPECT_EQ(t.valid, std::vector<std::uint8_t>(5, 1));
}

TEST(Tokenize, NoUnknownTokensOverAttributeSpace) {
  using namespace synth;
  int checked = 0;
  for (Location loc : {Location::kLeft, Location::kRight}) {
    for (synth::Shape shape : {synth::Shape::kRound, synth::Shape::kEllipse, synth::Shape::kIrregular}) {
      for (SizeClass size : {SizeClass::kSmall, SizeClass::kMedium, SizeClass::kLarge}) {
        for (int count = 1; count <= kMaxLesions; ++count) {
          const TokenizedPrompt t = tokenize(render_prompt({loc, shape, size, count}), 12, vocab());
          for (std::size_t i = 0; i < t.ids.size(); ++i) {
            if (t.valid[i]) EXPECT_NE(t.ids[i], kUnk);
          }
          EXPECT_FALSE(t.truncated);
          ++checked;
        }
      }
    }
  }
  EXPECT_EQ(checked, 72);
}

TEST(TextEncoder, ShapesAndFinite) {
  const ExperimentConfig cfg = text_config();
  Rng rng(1);
  const TextEncoder enc(cfg, vocab().size(), rng);
  const TokenBatch b = tokenize_batch({"location left; shape round; size small; number one.", "location right"},
                                      cfg.token_length, vocab());
  const auto feats = enc.encode(b);
  ASSERT_EQ(feats.size(), 3u);
  for (const auto& f : feats) {
    EXPECT_EQ(f->value.shape(), (Shape{2, cfg.token_length, cfg.text_dim}));
    EXPECT_TRUE(f->value.all_finite());
  }
}

// Valid-position outputs of every stage for a hand-built token batch.
std::vector<Tensor> valid_outputs(const TextEncoder& enc, const TokenBatch& b) {
  std::vector<Tensor> out;
  for (const auto& f : enc.encode(b)) {
    Tensor kept({0});
    std::vector<double> vals;
    const int d = f->value.dim(2);
    for (int i = 0; i < b.batch * b.length; ++i) {
      if (!b.valid[i]) continue;
      for (int c = 0; c < d; ++c) vals.push_back(f->value[static_cast<std::size_t>(i) * d + c]);
    }
    out.emplace_back(Shape{static_cast<int>(vals.size())}, vals);
  }
  return out;
}

TEST(TextEncoder, PadContentDoesNotLeak) {
  const ExperimentConfig cfg = text_config();
  Rng rng(2);
  const TextEncoder enc(cfg, vocab().size(), rng);
  TokenBatch a = tokenize_batch({"location left; shape round; number two."}, cfg.token_length, vocab());
  TokenBatch b = a;
  // Fill the masked region with arbitrary ids.
  for (int i = 0; i < b.length; ++i) {
    if (!b.valid[i]) b.ids[i] = 3 + i % 10;
  }
  const auto va = valid_outputs(enc, a), vb = valid_outputs(enc, b);
  for (std::size_t s = 0; s < va.size(); ++s) EXPECT_LT(max_abs_diff(va[s], vb[s]), 1e-12);

  // Swapping two masked positions changes nothing either.
  TokenBatch c = b;
  std::swap(c.ids[10], c.ids[11]);
  const auto vc = valid_outputs(enc, c);
  for (std::size_t s = 0; s < va.size(); ++s) EXPECT_LT(max_abs_diff(va[s], vc[s]), 1e-12);
}

TEST(TextEncoder, GradientReachesEveryUsedEmbedding) {
  const ExperimentConfig cfg = text_config();
  Rng rng(3);
  const TextEncoder enc(cfg, vocab().size(), rng);
  const TokenBatch b = tokenize_batch({"location left; shape irregular; size medium; number two."}, cfg.token_length,
                                      vocab());
  const auto feats = enc.encode(b);
  const Tensor seed = testing::random_tensor(feats.back()->value.shape(), rng);
  ag::backward({{feats.back(), seed}});
  const Tensor& g = enc.token_table->grad;
  ASSERT_FALSE(g.empty());
  for (int i = 0; i < b.length; ++i) {
    if (!b.valid[i]) continue;
    double norm = 0.0;
    for (int c = 0; c < cfg.text_dim; ++c) norm += std::abs(g.at(b.ids[i], c));
    EXPECT_GT(norm, 0.0) << "token " << vocab().token(b.ids[i]);
  }
}

TEST(TextEncoder, MaskedKeysGetZeroWeight) {
  Rng rng(4);
  nn::MultiHeadCrossAttention attn(8, 2, rng);
  const ag::Var x = ag::constant(testing::random_tensor({1, 5, 8}, rng));
  const std::vector<std::uint8_t> valid = {1, 1, 1, 0, 0};
  Tensor weights;
  attn(x, x, valid, &weights);
  ASSERT_EQ(weights.shape(), (Shape{1, 2, 5, 5}));
  for (int h = 0; h < 2; ++h) {
    for (int i = 0; i < 5; ++i) {
      double row = 0.0;
      for (int j = 0; j < 5; ++j) {
        const double w = weights[((static_cast<std::size_t>(h) * 5) + i) * 5 + j];
        if (!valid[j]) EXPECT_EQ(w, 0.0);
        row += w;
      }
      EXPECT_NEAR(row, 1.0, 1e-12);
    }
  }
}

}  // namespace
}  // namespace textbcs::text
