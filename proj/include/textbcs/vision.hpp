#pragma once

#include <functional>
#include <vector>

#include "textbcs/config.hpp"
#include "textbcs/layers.hpp"

namespace textbcs::vision {

using ag::Var;

// conv3x3 -> BN -> ReLU, twice.
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(int in, int out, Rng& rng);

  Var operator()(const Var& x, bool training);
  void register_state(const std::string& prefix, nn::StateRefs& refs);

  nn::Conv2d conv1;
  nn::BatchNorm2d bn1;
  nn::Conv2d conv2;
  nn::BatchNorm2d bn2;
};

// U-shaped encoder/decoder. Stage s (0-based) runs at image_size / 2^s with
// stage_channels[s] channels; its output is the skip feature for the decoder
// and, after max-pooling, the input of stage s+1.
class UNet {
 public:
  // Receives the raw stage feature V_s (NCHW) and returns the feature that is
  // passed on (F_V^s with interaction enabled).
  using StageHook = std::function<Var(int stage, const Var& features)>;

  UNet() = default;
  UNet(const ExperimentConfig& cfg, Rng& rng);

  std::vector<Var> encode(const Var& images, bool training, const StageHook& hook = {});
  // Bottleneck plus upsampling path; returns [N,C,H,W] class logits.
  Var decode(const std::vector<Var>& stage_features, bool training);
  void register_state(const std::string& prefix, nn::StateRefs& refs);

  std::vector<ConvBlock> encoder;
  ConvBlock bottleneck;
  std::vector<nn::Conv2d> up_convs;
  std::vector<nn::BatchNorm2d> up_norms;
  std::vector<ConvBlock> decoder;
  nn::Conv2d head;
};

}  // namespace textbcs::vision
