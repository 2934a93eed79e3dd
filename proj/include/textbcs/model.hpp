#pragma once

#include <vector>

#include "textbcs/config.hpp"
#include "textbcs/svli.hpp"
#include "textbcs/text.hpp"
#include "textbcs/vision.hpp"

namespace textbcs {

struct ForwardResult {
  ag::Var logits;                            // [N,C,H,W]
  std::vector<ag::Var> stage_features;       // per stage, NCHW (F_V^s, or V_s without interaction)
  std::vector<ag::Var> text_features;        // L_s entering each interaction stage
  std::vector<svli::StageOutput> interaction; // empty without interaction
};

// Text-guided U-Net: the text encoder and interaction stages exist only when
// cfg.use_svli is set; otherwise the model is the image-only baseline.
class TextBcsModel {
 public:
  TextBcsModel(const ExperimentConfig& cfg, Rng& rng);

  ForwardResult forward(const Tensor& images, const text::TokenBatch& tokens, bool training);

  nn::StateRefs state();
  std::size_t parameter_count();
  const ExperimentConfig& config() const { return cfg_; }
  const text::Vocabulary& vocab() const { return vocab_; }

  text::TextEncoder& text_encoder() { return text_; }
  vision::UNet& unet() { return unet_; }
  std::vector<svli::SvliStage>& stages() { return stages_; }

 private:
  ExperimentConfig cfg_;
  text::Vocabulary vocab_;
  text::TextEncoder text_;
  vision::UNet unet_;
  std::vector<svli::SvliStage> stages_;
};

}  // namespace textbcs
