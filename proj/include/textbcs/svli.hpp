#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "textbcs/config.hpp"
#include "textbcs/labels.hpp"
#include "textbcs/layers.hpp"
#include "textbcs/rng.hpp"

namespace textbcs::svli {

using ag::Var;
using nn::StateRefs;

inline constexpr double kTauMin = 0.01;
inline constexpr double kTauMax = 10.0;
inline constexpr double kCosineEps = 1e-8;

// Vision tokens query the stage text: two residual cross-attention rounds,
//   f = FF1(MCA1(V, L')) + V,   F = FF2(MCA2(f, L')) + f,
// where L' is the text projected to the stage's channel width.
class VisionQuery {
 public:
  VisionQuery() = default;
  VisionQuery(int channels, int text_dim, int heads, Rng& rng);

  // vision: [N,P,C]; text: [N,T,D]; text_valid: N*T flags. Returns [N,P,C].
  Var operator()(const Var& vision, const Var& text, const std::vector<std::uint8_t>& text_valid) const;
  void register_state(const std::string& prefix, StateRefs& refs);
  // Zeroes both residual branches so the block is the identity.
  void zero_residual_branches();

  nn::Linear text_to_vision;
  nn::MultiHeadCrossAttention round1;
  nn::FeedForward ff1;
  nn::MultiHeadCrossAttention round2;
  nn::FeedForward ff2;
};

// Text tokens query the text-aware vision tokens:
//   f = MCA(L, F_V'),   F_L = FF(f) + f.
class LanguageQuery {
 public:
  LanguageQuery() = default;
  LanguageQuery(int channels, int text_dim, int heads, Rng& rng);

  // text: [N,T,D]; vision: [N,P,C]. Returns [N,T,D].
  Var operator()(const Var& text, const Var& vision) const;
  void register_state(const std::string& prefix, StateRefs& refs);

  nn::Linear vision_to_text;
  nn::MultiHeadCrossAttention cross;
  nn::FeedForward ff;
};

struct StageOutput {
  Var vision;       // F_V, [N,P,C]
  Var text;         // F_L, [N,T,D]
  Var vision_align; // projected F_V, [N,P,D]
  Var text_align;   // projected F_L, [N,T,D]
};

// One interaction stage with its alignment projections and temperature.
class SvliStage {
 public:
  SvliStage() = default;
  SvliStage(int channels, int text_dim, int heads, double tau_init, Rng& rng);

  StageOutput operator()(const Var& vision, const Var& text, const std::vector<std::uint8_t>& text_valid) const;
  void register_state(const std::string& prefix, StateRefs& refs);

  VisionQuery vision_query;
  LanguageQuery language_query;
  nn::Linear align_vision;
  nn::Linear align_text;
  Var log_tau;  // tau = clamp(exp(log_tau), kTauMin, kTauMax)
};

double temperature(double log_tau);

// Independent reference for one attention head set: explicit loops, no
// projections. Used by tests; kept here so the loop form lives next to the op.
Tensor naive_attention(const Tensor& q, const Tensor& k, const Tensor& v, const std::vector<std::uint8_t>& key_valid,
                       int heads);

// ---- alignment loss ----

struct AlignmentPixelSets {
  std::vector<int> positive;  // Z+, foreground pixel indices at stage resolution
  std::vector<int> negative;  // Z-, sampled background pixel indices
};

// Nearest-neighbour downsampling of a label map by an integer factor.
LabelMap downsample_nearest(const LabelMap& labels, int factor);

// Z+ = all foreground pixels; Z- = min(|background|, ratio * |Z+|) background
// pixels drawn without replacement. One entry per image.
std::vector<AlignmentPixelSets> sample_alignment_pixels(const LabelMap& stage_labels, int negative_ratio, Rng& rng);

// -log sigma(sim / tau) for positives, -log(1 - sigma(sim / tau)) for negatives.
double alignment_term(double sim, double tau, bool positive);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

struct StageAlignmentInput {
  const Tensor* vision = nullptr;  // [N,P,D]
  const Tensor* text = nullptr;    // [N,T,D]
  const std::vector<std::uint8_t>* text_valid = nullptr;  // N*T
  std::vector<AlignmentPixelSets> pixels;                 // one per image
  double log_tau = 0.0;
};

struct StageAlignmentGrad {
  Tensor vision;
  Tensor text;
  double log_tau = 0.0;
};

struct AlignmentLoss {
  double value = 0.0;
  std::size_t terms = 0;
  std::vector<StageAlignmentGrad> grads;
};

// Text features are mean-pooled over valid tokens to one vector per image and
// paired with every selected pixel vector.
AlignmentLoss contrastive_loss(const std::vector<StageAlignmentInput>& stages, AlignmentNorm norm);

}  // namespace textbcs::svli
