#include "textbcs/text.hpp"

#include <cctype>
#include <fstream>
#include <spdlog/spdlog.h>
#include <stdexcept>

#include "textbcs/errors.hpp"

namespace textbcs::text {

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw std::invalid_argument("duplicate vocabulary token \"" + tokens_[i] + "\"");
    }
  }
}

Vocabulary Vocabulary::prompt_vocabulary() {
  return Vocabulary({"[PAD]", "[UNK]", "[SEP]", "location", "shape", "size", "number", "left", "right", "round",
                     "ellipse", "irregular", "small", "medium", "large", "one", "two", "three", "four"});
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  std::vector<std::string> tokens(j.size());
  for (const auto& [token, id] : j.items()) {
    const int i = id.get<int>();
    if (i < 0 || i >= static_cast<int>(tokens.size()) || !tokens[i].empty()) {
      throw DataError("vocabulary ids must be contiguous from 0");
    }
    tokens[i] = token;
  }
  if (tokens.empty() || tokens[kPad] != "[PAD]") throw DataError("vocabulary must map [PAD] to 0");
  return Vocabulary(std::move(tokens));
}

int Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

nlohmann::json Vocabulary::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t i = 0; i < tokens_.size(); ++i) j[tokens_[i]] = i;
  return j;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

TokenizedPrompt tokenize(const std::string& prompt, int length, const Vocabulary& vocab) {
  std::vector<int> ids;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) ids.push_back(vocab.id(word));
    word.clear();
  };
  for (char raw : prompt) {
    const char ch = static_cast<char>(std::tolower(static_cast<unsigned char>(raw)));
    if (std::isspace(static_cast<unsigned char>(ch)) || ch == ';' || ch == ',') {
      flush();
    } else if (ch == '.') {
      flush();
      ids.push_back(kSep);
    } else {
      word.push_back(ch);
    }
  }
  flush();
  if (ids.empty()) throw std::invalid_argument("prompt is empty; a text prompt is required");

  TokenizedPrompt out;
  if (static_cast<int>(ids.size()) > length) {
    spdlog::warn("prompt has {} tokens, truncating to {}", ids.size(), length);
    ids.resize(static_cast<std::size_t>(length));
    out.truncated = true;
  }
  out.ids.assign(static_cast<std::size_t>(length), kPad);
  out.valid.assign(static_cast<std::size_t>(length), 0);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out.ids[i] = ids[i];
    out.valid[i] = 1;
  }
  return out;
}

TokenBatch tokenize_batch(const std::vector<std::string>& prompts, int length, const Vocabulary& vocab) {
  TokenBatch batch;
  batch.batch = static_cast<int>(prompts.size());
  batch.length = length;
  for (const auto& p : prompts) {
    TokenizedPrompt t = tokenize(p, length, vocab);
    batch.ids.insert(batch.ids.end(), t.ids.begin(), t.ids.end());
    batch.valid.insert(batch.valid.end(), t.valid.begin(), t.valid.end());
  }
  return batch;
}

TextBlock::TextBlock(int width, int heads, Rng& rng)
    : norm1(width), self_attention(width, heads, rng), norm2(width), ff(width, 2 * width, rng) {}

Var TextBlock::operator()(const Var& x, const std::vector<std::uint8_t>& valid) const {
  const Var h = norm1(x);
  const Var y = ag::add(x, self_attention(h, h, valid));
  return ag::add(y, ff(norm2(y)));
}

void TextBlock::register_state(const std::string& prefix, nn::StateRefs& refs) {
  norm1.register_state(prefix + ".norm1", refs);
  self_attention.register_state(prefix + ".attn", refs);
  norm2.register_state(prefix + ".norm2", refs);
  ff.register_state(prefix + ".ff", refs);
}

TextEncoder::TextEncoder(const ExperimentConfig& cfg, int vocab_size, Rng& rng) {
  Tensor table({vocab_size, cfg.text_dim});
  for (double& v : table.values()) v = rng.normal(0.0, 1.0);
  for (int j = 0; j < cfg.text_dim; ++j) table.at(kPad, j) = 0.0;
  token_table = ag::parameter(std::move(table));
  Tensor pos({cfg.token_length, cfg.text_dim});
  for (double& v : pos.values()) v = rng.normal(0.0, 0.1);
  positions = ag::parameter(std::move(pos));
  for (int s = 0; s < cfg.num_stages; ++s) blocks.emplace_back(cfg.text_dim, cfg.num_heads, rng);
}

Var TextEncoder::embed(const TokenBatch& tokens) const {
  return ag::add_rows(ag::embedding(tokens.ids, tokens.batch, tokens.length, token_table), positions);
}

Var TextEncoder::stage(int s, const Var& stream, const TokenBatch& tokens) const {
  return blocks.at(static_cast<std::size_t>(s))(stream, tokens.valid);
}

std::vector<Var> TextEncoder::encode(const TokenBatch& tokens) const {
  std::vector<Var> out;
  Var stream = embed(tokens);
  for (std::size_t s = 0; s < blocks.size(); ++s) {
    stream = stage(static_cast<int>(s), stream, tokens);
    out.push_back(stream);
  }
  return out;
}

void TextEncoder::register_state(const std::string& prefix, nn::StateRefs& refs) {
  refs.params.emplace_back(prefix + ".token_table", token_table);
  refs.params.emplace_back(prefix + ".positions", positions);
  for (std::size_t s = 0; s < blocks.size(); ++s) blocks[s].register_state(prefix + ".block" + std::to_string(s), refs);
}

}  // namespace textbcs::text
