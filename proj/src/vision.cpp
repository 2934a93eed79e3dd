#include "textbcs/vision.hpp"

#include <stdexcept>

namespace textbcs::vision {

ConvBlock::ConvBlock(int in, int out, Rng& rng) : conv1(in, out, 3, rng), bn1(out), conv2(out, out, 3, rng), bn2(out) {}

Var ConvBlock::operator()(const Var& x, bool training) {
  const Var h = ag::relu(bn1(conv1(x), training));
  return ag::relu(bn2(conv2(h), training));
}

void ConvBlock::register_state(const std::string& prefix, nn::StateRefs& refs) {
  conv1.register_state(prefix + ".conv1", refs);
  bn1.register_state(prefix + ".bn1", refs);
  conv2.register_state(prefix + ".conv2", refs);
  bn2.register_state(prefix + ".bn2", refs);
}

UNet::UNet(const ExperimentConfig& cfg, Rng& rng) {
  const auto& ch = cfg.stage_channels;
  const int s_count = cfg.num_stages;
  int in = 1;
  for (int s = 0; s < s_count; ++s) {
    encoder.emplace_back(in, ch[s], rng);
    in = ch[s];
  }
  bottleneck = ConvBlock(ch.back(), 2 * ch.back(), rng);
  int below = 2 * ch.back();
  up_convs.resize(s_count);
  up_norms.resize(s_count);
  decoder.resize(s_count);
  for (int s = s_count - 1; s >= 0; --s) {
    up_convs[s] = nn::Conv2d(below, ch[s], 3, rng);
    up_norms[s] = nn::BatchNorm2d(ch[s]);
    decoder[s] = ConvBlock(2 * ch[s], ch[s], rng);
    below = ch[s];
  }
  head = nn::Conv2d(ch[0], cfg.num_classes, 1, rng);
}

std::vector<Var> UNet::encode(const Var& images, bool training, const StageHook& hook) {
  if (images->value.rank() != 4 || images->value.dim(1) != 1) {
    throw std::invalid_argument("UNet::encode: expected [N,1,H,W] images, got " + shape_str(images->value.shape()));
  }
  const int size = images->value.dim(2);
  if (images->value.dim(3) != size || size % (1 << encoder.size()) != 0) {
    throw std::invalid_argument("UNet::encode: image size must be square and divisible by 2^S");
  }
  std::vector<Var> features;
  Var x = images;
  for (std::size_t s = 0; s < encoder.size(); ++s) {
    Var v = encoder[s](x, training);
    if (hook) v = hook(static_cast<int>(s), v);
    features.push_back(v);
    x = ag::max_pool2(v);
  }
  return features;
}

Var UNet::decode(const std::vector<Var>& stage_features, bool training) {
  if (stage_features.size() != encoder.size()) throw std::invalid_argument("UNet::decode: wrong number of stages");
  Var x = bottleneck(ag::max_pool2(stage_features.back()), training);
  for (int s = static_cast<int>(encoder.size()) - 1; s >= 0; --s) {
    const Var up = ag::relu(up_norms[s](up_convs[s](ag::upsample_nearest2(x)), training));
    x = decoder[s](ag::concat_channels(stage_features[s], up), training);
  }
  return head(x);
}

void UNet::register_state(const std::string& prefix, nn::StateRefs& refs) {
  for (std::size_t s = 0; s < encoder.size(); ++s) encoder[s].register_state(prefix + ".enc" + std::to_string(s), refs);
  bottleneck.register_state(prefix + ".bottleneck", refs);
  for (std::size_t s = 0; s < decoder.size(); ++s) {
    up_convs[s].register_state(prefix + ".up" + std::to_string(s) + ".conv", refs);
    up_norms[s].register_state(prefix + ".up" + std::to_string(s) + ".bn", refs);
    decoder[s].register_state(prefix + ".dec" + std::to_string(s), refs);
  }
  head.register_state(prefix + ".head", refs);
}

}  // namespace textbcs::vision
