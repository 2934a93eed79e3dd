#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "textbcs/config.hpp"
#include "textbcs/layers.hpp"

namespace textbcs::text {

using ag::Var;

inline constexpr int kPad = 0;
inline constexpr int kUnk = 1;
inline constexpr int kSep = 2;

// Closed token -> id map. Ids are contiguous from 0 and PAD = 0.
class Vocabulary {
 public:
  // PAD, UNK, SEP plus every word the prompt template can produce.
  static Vocabulary prompt_vocabulary();
  static Vocabulary from_json(const nlohmann::json& j);

  int id(const std::string& token) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  bool contains(const std::string& token) const { return ids_.count(token) > 0; }
  int size() const { return static_cast<int>(tokens_.size()); }
  nlohmann::json to_json() const;
  void save(const std::filesystem::path& path) const;

 private:
  explicit Vocabulary(std::vector<std::string> tokens);
  std::vector<std::string> tokens_;
  std::map<std::string, int> ids_;
};

struct TokenizedPrompt {
  std::vector<int> ids;             // length T, right-padded with PAD
  std::vector<std::uint8_t> valid;  // 1 for real tokens
  bool truncated = false;
};

// Lowercases, splits on whitespace, treats ';' and ',' as phrase delimiters and
// maps '.' to SEP. Unknown words become UNK. Throws std::invalid_argument for
// prompts without any token.
TokenizedPrompt tokenize(const std::string& prompt, int length, const Vocabulary& vocab);

struct TokenBatch {
  int batch = 0;
  int length = 0;
  std::vector<int> ids;
  std::vector<std::uint8_t> valid;
};

TokenBatch tokenize_batch(const std::vector<std::string>& prompts, int length, const Vocabulary& vocab);

// Pre-norm transformer block: self-attention then feed-forward, both residual.
class TextBlock {
 public:
  TextBlock() = default;
  TextBlock(int width, int heads, Rng& rng);

  Var operator()(const Var& x, const std::vector<std::uint8_t>& valid) const;
  void register_state(const std::string& prefix, nn::StateRefs& refs);

  nn::LayerNorm norm1;
  nn::MultiHeadCrossAttention self_attention;
  nn::LayerNorm norm2;
  nn::FeedForward ff;
};

// Token + position embedding followed by one block per stage. Block s emits
// L_s. With interaction enabled the caller feeds the vision-aware text F_L^s
// into block s+1 instead of L_s.
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(const ExperimentConfig& cfg, int vocab_size, Rng& rng);

  Var embed(const TokenBatch& tokens) const;
  Var stage(int s, const Var& stream, const TokenBatch& tokens) const;
  // Chains all stages without cross-modal interaction. Returns L_1..L_S.
  std::vector<Var> encode(const TokenBatch& tokens) const;
  void register_state(const std::string& prefix, nn::StateRefs& refs);

  Var token_table;
  Var positions;
  std::vector<TextBlock> blocks;
};

}  // namespace textbcs::text
