#include "textbcs/objective.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace textbcs::objective {

namespace {

void check_shapes(const Tensor& t, const LabelMap& labels) {
  if (t.rank() != 4 || labels.batch != t.dim(0) || labels.height != t.dim(2) || labels.width != t.dim(3)) {
    throw std::invalid_argument("probability/label shape mismatch: " + shape_str(t.shape()));
  }
  for (int y : labels.data) {
    if (y < 0 || y >= t.dim(1)) throw std::invalid_argument("label outside [0, C)");
  }
}

}  // namespace

LossGrad dice_loss(const Tensor& probs, const LabelMap& labels) {
  check_shapes(probs, labels);
  const int n = probs.dim(0), c = probs.dim(1);
  const std::size_t plane = labels.pixels();
  const double norm = 1.0 / (static_cast<double>(n) * c);
  LossGrad out{0.0, Tensor(probs.shape())};
  double mean_dice = 0.0;
  for (int i = 0; i < n; ++i) {
    const int* y = labels.data.data() + i * plane;
    for (int k = 0; k < c; ++k) {
      const double* p = probs.data() + (static_cast<std::size_t>(i) * c + k) * plane;
      double inter = 0.0, sum_p = 0.0, sum_y = 0.0;
      for (std::size_t j = 0; j < plane; ++j) {
        const double yk = y[j] == k ? 1.0 : 0.0;
        inter += p[j] * yk;
        sum_p += p[j];
        sum_y += yk;
      }
      const double num = 2.0 * inter + kDiceSmooth;
      const double den = sum_p + sum_y + kDiceSmooth;
      mean_dice += num / den;
      double* g = out.grad.data() + (static_cast<std::size_t>(i) * c + k) * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        const double yk = y[j] == k ? 1.0 : 0.0;
        g[j] = -norm * (2.0 * yk * den - num) / (den * den);
      }
    }
  }
  out.value = 1.0 - mean_dice * norm;
  return out;
}

Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 4) throw std::invalid_argument("softmax: expected NCHW");
  const int n = logits.dim(0), c = logits.dim(1);
  const std::size_t plane = static_cast<std::size_t>(logits.dim(2)) * logits.dim(3);
  Tensor out(logits.shape());
  for (int i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < plane; ++p) {
      double mx = logits[(static_cast<std::size_t>(i) * c) * plane + p];
      for (int k = 1; k < c; ++k) mx = std::max(mx, logits[(static_cast<std::size_t>(i) * c + k) * plane + p]);
      double z = 0.0;
      for (int k = 0; k < c; ++k) {
        const std::size_t idx = (static_cast<std::size_t>(i) * c + k) * plane + p;
        out[idx] = std::exp(logits[idx] - mx);
        z += out[idx];
      }
      for (int k = 0; k < c; ++k) out[(static_cast<std::size_t>(i) * c + k) * plane + p] /= z;
    }
  }
  return out;
}

Tensor softmax_backward(const Tensor& probs, const Tensor& dprob) {
  const int n = probs.dim(0), c = probs.dim(1);
  const std::size_t plane = static_cast<std::size_t>(probs.dim(2)) * probs.dim(3);
  Tensor out(probs.shape());
  for (int i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < plane; ++p) {
      double dot = 0.0;
      for (int k = 0; k < c; ++k) {
        const std::size_t idx = (static_cast<std::size_t>(i) * c + k) * plane + p;
        dot += dprob[idx] * probs[idx];
      }
      for (int k = 0; k < c; ++k) {
        const std::size_t idx = (static_cast<std::size_t>(i) * c + k) * plane + p;
        out[idx] = probs[idx] * (dprob[idx] - dot);
      }
    }
  }
  return out;
}

LossGrad cross_entropy_from_logits(const Tensor& logits, const LabelMap& labels) {
  check_shapes(logits, labels);
  const Tensor probs = softmax(logits);
  const int n = logits.dim(0), c = logits.dim(1);
  const std::size_t plane = labels.pixels();
  const double inv = 1.0 / (static_cast<double>(n) * plane);
  LossGrad out{0.0, Tensor(logits.shape())};
  for (int i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < plane; ++p) {
      const int y = labels.data[i * plane + p];
      for (int k = 0; k < c; ++k) {
        const std::size_t idx = (static_cast<std::size_t>(i) * c + k) * plane + p;
        out.grad[idx] = (probs[idx] - (k == y ? 1.0 : 0.0)) * inv;
      }
      out.value -= std::log(std::max(probs[(static_cast<std::size_t>(i) * c + y) * plane + p], 1e-300));
    }
  }
  out.value *= inv;
  return out;
}

double lambda2_schedule(int epoch, double lambda2_max, int warmup_epochs) {
  if (epoch < 0) throw std::invalid_argument("lambda2_schedule: epoch must be >= 0");
  return lambda2_max * std::min(1.0, static_cast<double>(epoch) / warmup_epochs);
}

nlohmann::json LossReport::to_json() const {
  return {{"dice", dice}, {"ice", ice},         {"ce", ce},           {"kl", kl},          {"con", con},
          {"lambda1", lambda1}, {"lambda2", lambda2}, {"lambda3", lambda3}, {"total", total}};
}

LossReport total_loss(double dice, double ice, double kl, double con, int epoch, const ExperimentConfig& cfg,
                      double ce) {
  const std::pair<const char*, double> parts[] = {{"dice", dice}, {"ice", ice}, {"kl", kl}, {"con", con}, {"ce", ce}};
  for (const auto& [name, v] : parts) {
    if (!std::isfinite(v)) throw std::domain_error(std::string("non-finite loss component: ") + name);
  }
  LossReport r;
  r.dice = dice;
  r.ice = cfg.use_el ? ice : 0.0;
  r.kl = cfg.use_el ? kl : 0.0;
  r.ce = cfg.use_el ? 0.0 : ce;
  r.con = cfg.use_svli ? con : 0.0;
  r.lambda1 = cfg.lambda1;
  r.lambda2 = cfg.use_el ? lambda2_schedule(epoch, cfg.lambda2_max, cfg.lambda2_warmup_epochs) : 0.0;
  r.lambda3 = cfg.lambda3;
  r.total = r.recompute_total();
  return r;
}

}  // namespace textbcs::objective
