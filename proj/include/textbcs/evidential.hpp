#pragma once

#include <span>
#include <vector>

#include "textbcs/labels.hpp"
#include "textbcs/tensor.hpp"

namespace textbcs::evidential {

// Value of a loss and its gradient with respect to the tensor it was computed from.
struct LossGrad {
  double value = 0.0;
  Tensor grad;
};

// log(1 + e^x) without overflow; equals x to double precision for large x.
double softplus(double x);
double sigmoid(double x);

// Per-pixel quantities of the Dirichlet head for a batch [N,C,H,W].
// `strength` and `uncertainty` are [N,H,W].
struct EvidentialOutput {
  Tensor evidence;
  Tensor alpha;
  Tensor strength;
  Tensor belief;
  Tensor uncertainty;
  Tensor expected_prob;
};

Tensor evidence_from_logits(const Tensor& logits);
EvidentialOutput dirichlet_stats(const Tensor& evidence);

// Single-pixel helpers. `dalpha`, when non-empty, receives d(loss)/d(alpha).
double dirichlet_pdf(std::span<const double> p, std::span<const double> alpha);
double ice_pixel(std::span<const double> alpha, int label, std::span<double> dalpha = {});
std::vector<double> masked_alpha(std::span<const double> alpha, int label);
double kl_pixel(std::span<const double> alpha, int label, std::span<double> dalpha = {});

// Mean over pixels of the integrated cross-entropy / masked-KL terms.
// alpha: [N,C,H,W]; labels: [N,H,W].
double ice_loss(const Tensor& alpha, const LabelMap& labels);
double kl_to_uniform(const Tensor& alpha, const LabelMap& labels);

// Same losses as functions of the decoder logits (alpha = softplus(logits) + 1),
// with gradients with respect to the logits.
LossGrad ice_loss_from_logits(const Tensor& logits, const LabelMap& labels);
LossGrad kl_from_logits(const Tensor& logits, const LabelMap& labels);

// alpha / W computed from logits, and the backward map from d/d(prob) to d/d(logits).
Tensor expected_probability(const Tensor& logits);
Tensor expected_probability_backward(const Tensor& logits, const Tensor& dprob);

struct Prediction {
  LabelMap labels;
  Tensor uncertainty;  // [N,H,W]
};

// argmax of the expected probability with ties going to the lower class index.
Prediction predict(const EvidentialOutput& out);

}  // namespace textbcs::evidential
