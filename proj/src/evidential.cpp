#include "textbcs/evidential.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "textbcs/special.hpp"

namespace textbcs::evidential {

namespace {

struct Layout {
  int n, c;
  std::size_t plane;
  std::size_t index(int i, int cls, std::size_t p) const { return (static_cast<std::size_t>(i) * c + cls) * plane + p; }
};

Layout layout_of(const Tensor& t) {
  if (t.rank() != 4) throw std::invalid_argument("expected an [N,C,H,W] tensor, got " + shape_str(t.shape()));
  return {t.dim(0), t.dim(1), static_cast<std::size_t>(t.dim(2)) * t.dim(3)};
}

void check_labels(const Tensor& t, const LabelMap& labels) {
  if (labels.batch != t.dim(0) || labels.height != t.dim(2) || labels.width != t.dim(3)) {
    throw std::invalid_argument("label map shape does not match " + shape_str(t.shape()));
  }
  for (int y : labels.data) {
    if (y < 0 || y >= t.dim(1)) throw std::invalid_argument("label " + std::to_string(y) + " outside [0, C)");
  }
}

template <typename PixelFn>
double mean_over_pixels(const Tensor& alpha, const LabelMap& labels, PixelFn fn) {
  check_labels(alpha, labels);
  const Layout l = layout_of(alpha);
  std::vector<double> a(l.c);
  double total = 0.0;
  for (int i = 0; i < l.n; ++i) {
    for (std::size_t p = 0; p < l.plane; ++p) {
      for (int c = 0; c < l.c; ++c) a[c] = alpha[l.index(i, c, p)];
      total += fn(a, labels.data[i * l.plane + p]);
    }
  }
  return total / (static_cast<double>(l.n) * l.plane);
}

template <typename PixelFn>
LossGrad from_logits(const Tensor& logits, const LabelMap& labels, PixelFn fn) {
  check_labels(logits, labels);
  const Layout l = layout_of(logits);
  const double inv_count = 1.0 / (static_cast<double>(l.n) * l.plane);
  LossGrad out{0.0, Tensor(logits.shape())};
  std::vector<double> a(l.c), da(l.c);
  for (int i = 0; i < l.n; ++i) {
    for (std::size_t p = 0; p < l.plane; ++p) {
      for (int c = 0; c < l.c; ++c) a[c] = softplus(logits[l.index(i, c, p)]) + 1.0;
      out.value += fn(a, labels.data[i * l.plane + p], da);
      for (int c = 0; c < l.c; ++c) {
        const std::size_t k = l.index(i, c, p);
        out.grad[k] = da[c] * sigmoid(logits[k]) * inv_count;
      }
    }
  }
  out.value *= inv_count;
  return out;
}

}  // namespace

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor evidence_from_logits(const Tensor& logits) {
  Tensor e = logits;
  for (double& v : e.values()) v = std::max(0.0, softplus(v));
  return e;
}

EvidentialOutput dirichlet_stats(const Tensor& evidence) {
  const Layout l = layout_of(evidence);
  EvidentialOutput out;
  out.evidence = evidence;
  out.alpha = evidence;
  out.belief = Tensor(evidence.shape());
  out.expected_prob = Tensor(evidence.shape());
  out.strength = Tensor({l.n, evidence.dim(2), evidence.dim(3)});
  out.uncertainty = Tensor({l.n, evidence.dim(2), evidence.dim(3)});
  for (int i = 0; i < l.n; ++i) {
    for (std::size_t p = 0; p < l.plane; ++p) {
      double w = 0.0;
      for (int c = 0; c < l.c; ++c) {
        const double e = evidence[l.index(i, c, p)];
        if (!(e >= 0.0)) throw std::invalid_argument("dirichlet_stats: evidence must be non-negative");
        out.alpha[l.index(i, c, p)] = e + 1.0;
        w += e + 1.0;
      }
      for (int c = 0; c < l.c; ++c) {
        const std::size_t k = l.index(i, c, p);
        out.belief[k] = evidence[k] / w;
        out.expected_prob[k] = out.alpha[k] / w;
      }
      out.strength[i * l.plane + p] = w;
      out.uncertainty[i * l.plane + p] = l.c / w;
    }
  }
  return out;
}

double dirichlet_pdf(std::span<const double> p, std::span<const double> alpha) {
  if (p.size() != alpha.size() || p.empty()) throw std::invalid_argument("dirichlet_pdf: size mismatch");
  double sum = 0.0;
  for (double v : p) {
    if (v < 0.0 || v > 1.0) return 0.0;
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) return 0.0;
  double alpha_sum = 0.0;
  double log_density = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    alpha_sum += alpha[c];
    log_density -= std::lgamma(alpha[c]);
    if (alpha[c] != 1.0) log_density += (alpha[c] - 1.0) * std::log(p[c]);
  }
  log_density += std::lgamma(alpha_sum);
  return std::exp(log_density);
}

double ice_pixel(std::span<const double> alpha, int label, std::span<double> dalpha) {
  double w = 0.0;
  for (double a : alpha) w += a;
  const double value = special::digamma(w) - special::digamma(alpha[label]);
  if (!dalpha.empty()) {
    const double tw = special::trigamma(w);
    for (std::size_t c = 0; c < alpha.size(); ++c) dalpha[c] = tw;
    dalpha[label] -= special::trigamma(alpha[label]);
  }
  return value;
}

std::vector<double> masked_alpha(std::span<const double> alpha, int label) {
  std::vector<double> out(alpha.begin(), alpha.end());
  out[label] = 1.0;
  return out;
}

double kl_pixel(std::span<const double> alpha, int label, std::span<double> dalpha) {
  const std::vector<double> at = masked_alpha(alpha, label);
  const double c = static_cast<double>(at.size());
  double s = 0.0, excess = 0.0;
  for (double a : at) {
    s += a;
    excess += a - 1.0;
  }
  const double psi_s = special::digamma(s);
  double value = std::lgamma(s) - std::lgamma(c);
  for (double a : at) {
    value -= std::lgamma(a);
    if (a != 1.0) value += (a - 1.0) * (special::digamma(a) - psi_s);
  }
  if (!dalpha.empty()) {
    const double tri_s = special::trigamma(s);
    for (std::size_t k = 0; k < at.size(); ++k) {
      dalpha[k] = static_cast<int>(k) == label ? 0.0 : (at[k] - 1.0) * special::trigamma(at[k]) - tri_s * excess;
    }
  }
  return std::max(0.0, value);
}

double ice_loss(const Tensor& alpha, const LabelMap& labels) {
  return mean_over_pixels(alpha, labels, [](const std::vector<double>& a, int y) { return ice_pixel(a, y); });
}

double kl_to_uniform(const Tensor& alpha, const LabelMap& labels) {
  return mean_over_pixels(alpha, labels, [](const std::vector<double>& a, int y) { return kl_pixel(a, y); });
}

LossGrad ice_loss_from_logits(const Tensor& logits, const LabelMap& labels) {
  return from_logits(logits, labels,
                     [](const std::vector<double>& a, int y, std::vector<double>& da) { return ice_pixel(a, y, da); });
}

LossGrad kl_from_logits(const Tensor& logits, const LabelMap& labels) {
  return from_logits(logits, labels,
                     [](const std::vector<double>& a, int y, std::vector<double>& da) { return kl_pixel(a, y, da); });
}

Tensor expected_probability(const Tensor& logits) {
  const Layout l = layout_of(logits);
  Tensor prob(logits.shape());
  for (int i = 0; i < l.n; ++i) {
    for (std::size_t p = 0; p < l.plane; ++p) {
      double w = 0.0;
      for (int c = 0; c < l.c; ++c) {
        const double a = softplus(logits[l.index(i, c, p)]) + 1.0;
        prob[l.index(i, c, p)] = a;
        w += a;
      }
      for (int c = 0; c < l.c; ++c) prob[l.index(i, c, p)] /= w;
    }
  }
  return prob;
}

Tensor expected_probability_backward(const Tensor& logits, const Tensor& dprob) {
  const Layout l = layout_of(logits);
  Tensor dlogits(logits.shape());
  std::vector<double> a(l.c);
  for (int i = 0; i < l.n; ++i) {
    for (std::size_t p = 0; p < l.plane; ++p) {
      double w = 0.0;
      for (int c = 0; c < l.c; ++c) {
        a[c] = softplus(logits[l.index(i, c, p)]) + 1.0;
        w += a[c];
      }
      // d p_c / d alpha_k = (delta_ck - p_c) / W
      double g_dot_p = 0.0;
      for (int c = 0; c < l.c; ++c) g_dot_p += dprob[l.index(i, c, p)] * a[c] / w;
      for (int k = 0; k < l.c; ++k) {
        const std::size_t idx = l.index(i, k, p);
        dlogits[idx] = (dprob[idx] - g_dot_p) / w * sigmoid(logits[idx]);
      }
    }
  }
  return dlogits;
}

Prediction predict(const EvidentialOutput& out) {
  const Layout l = layout_of(out.expected_prob);
  const int h = out.expected_prob.dim(2), w = out.expected_prob.dim(3);
  Prediction pred{LabelMap(l.n, h, w), out.uncertainty};
  for (int i = 0; i < l.n; ++i) {
    for (std::size_t p = 0; p < l.plane; ++p) {
      int best = 0;
      for (int c = 1; c < l.c; ++c) {
        if (out.expected_prob[l.index(i, c, p)] > out.expected_prob[l.index(i, best, p)]) best = c;
      }
      pred.labels.data[i * l.plane + p] = best;
    }
  }
  return pred;
}

}  // namespace textbcs::evidential
