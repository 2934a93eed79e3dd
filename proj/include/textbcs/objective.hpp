#pragma once

#include <nlohmann/json.hpp>

#include "textbcs/config.hpp"
#include "textbcs/evidential.hpp"
#include "textbcs/labels.hpp"
#include "textbcs/tensor.hpp"

namespace textbcs::objective {

using evidential::LossGrad;

inline constexpr double kDiceSmooth = 1e-6;

// 1 - mean over (image, class) of (2 I + eps) / (sum p + sum y + eps).
// probs: [N,C,H,W] with rows summing to 1. Gradient is with respect to probs.
LossGrad dice_loss(const Tensor& probs, const LabelMap& labels);

Tensor softmax(const Tensor& logits);
Tensor softmax_backward(const Tensor& probs, const Tensor& dprob);
// Mean pixelwise cross-entropy of softmax(logits); gradient with respect to logits.
LossGrad cross_entropy_from_logits(const Tensor& logits, const LabelMap& labels);

double lambda2_schedule(int epoch, double lambda2_max, int warmup_epochs);

struct LossReport {
  double dice = 0.0;
  double ice = 0.0;
  double ce = 0.0;  // only used when the evidential head is disabled
  double kl = 0.0;
  double con = 0.0;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double lambda3 = 0.0;
  double total = 0.0;

  double recompute_total() const { return dice + lambda1 * (ice + ce) + lambda2 * kl + lambda3 * con; }
  nlohmann::json to_json() const;
};

// Weighted objective. Components switched off by the config (evidential
// terms without use_el, alignment without use_svli) are zeroed. Throws
// std::domain_error naming the first non-finite component.
LossReport total_loss(double dice, double ice, double kl, double con, int epoch, const ExperimentConfig& cfg,
                      double ce = 0.0);

}  // namespace textbcs::objective
