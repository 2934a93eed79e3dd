#include "textbcs/model.hpp"

#include <stdexcept>

namespace textbcs {

TextBcsModel::TextBcsModel(const ExperimentConfig& cfg, Rng& rng) : cfg_(cfg), vocab_(text::Vocabulary::prompt_vocabulary()) {
  cfg_.validate();
  // Separate init streams keep the U-Net weights identical across ablation variants.
  Rng unet_rng = rng.derive("init/unet");
  unet_ = vision::UNet(cfg_, unet_rng);
  if (cfg_.use_svli) {
    Rng text_rng = rng.derive("init/text");
    text_ = text::TextEncoder(cfg_, vocab_.size(), text_rng);
    Rng svli_rng = rng.derive("init/svli");
    for (int s = 0; s < cfg_.num_stages; ++s) {
      stages_.emplace_back(cfg_.stage_channels[s], cfg_.text_dim, cfg_.num_heads, cfg_.tau_init, svli_rng);
    }
  }
}

ForwardResult TextBcsModel::forward(const Tensor& images, const text::TokenBatch& tokens, bool training) {
  ForwardResult out;
  const ag::Var input = ag::constant(images);
  if (!cfg_.use_svli) {
    out.stage_features = unet_.encode(input, training);
  } else {
    if (tokens.batch != images.dim(0) || tokens.length != cfg_.token_length) {
      throw std::invalid_argument("forward: token batch does not match images / token_length");
    }
    ag::Var stream = text_.embed(tokens);
    auto hook = [&](int s, const ag::Var& v) {
      const ag::Var l = text_.stage(s, stream, tokens);
      out.text_features.push_back(l);
      svli::StageOutput o = stages_[s](ag::to_tokens(v), l, tokens.valid);
      stream = o.text;
      out.interaction.push_back(o);
      return ag::from_tokens(o.vision, v->value.dim(2), v->value.dim(3));
    };
    out.stage_features = unet_.encode(input, training, hook);
  }
  out.logits = unet_.decode(out.stage_features, training);
  return out;
}

nn::StateRefs TextBcsModel::state() {
  nn::StateRefs refs;
  unet_.register_state("unet", refs);
  if (cfg_.use_svli) {
    text_.register_state("text", refs);
    for (std::size_t s = 0; s < stages_.size(); ++s) stages_[s].register_state("svli" + std::to_string(s), refs);
  }
  return refs;
}

std::size_t TextBcsModel::parameter_count() { return nn::count_parameters(state()); }

}  // namespace textbcs
