#include "textbcs/svli.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "textbcs/evidential.hpp"

namespace textbcs::svli {

VisionQuery::VisionQuery(int channels, int text_dim, int heads, Rng& rng)
    : text_to_vision(text_dim, channels, rng),
      round1(channels, heads, rng),
      ff1(channels, 2 * channels, rng),
      round2(channels, heads, rng),
      ff2(channels, 2 * channels, rng) {
  // Residual branches start closed so an untrained stage passes vision features through.
  zero_residual_branches();
}

Var VisionQuery::operator()(const Var& vision, const Var& text, const std::vector<std::uint8_t>& text_valid) const {
  const Var keys = text_to_vision(text);
  const Var intermediate = ag::add(ff1(round1(vision, keys, text_valid)), vision);
  return ag::add(ff2(round2(intermediate, keys, text_valid)), intermediate);
}

void VisionQuery::register_state(const std::string& prefix, StateRefs& refs) {
  text_to_vision.register_state(prefix + ".text_proj", refs);
  round1.register_state(prefix + ".mca1", refs);
  ff1.register_state(prefix + ".ff1", refs);
  round2.register_state(prefix + ".mca2", refs);
  ff2.register_state(prefix + ".ff2", refs);
}

void VisionQuery::zero_residual_branches() {
  ff1.zero_output();
  ff2.zero_output();
}

LanguageQuery::LanguageQuery(int channels, int text_dim, int heads, Rng& rng)
    : vision_to_text(channels, text_dim, rng), cross(text_dim, heads, rng), ff(text_dim, 2 * text_dim, rng) {}

Var LanguageQuery::operator()(const Var& text, const Var& vision) const {
  const Var attended = cross(text, vision_to_text(vision), {});
  return ag::add(ff(attended), attended);
}

void LanguageQuery::register_state(const std::string& prefix, StateRefs& refs) {
  vision_to_text.register_state(prefix + ".vision_proj", refs);
  cross.register_state(prefix + ".mca", refs);
  ff.register_state(prefix + ".ff", refs);
}

SvliStage::SvliStage(int channels, int text_dim, int heads, double tau_init, Rng& rng)
    : vision_query(channels, text_dim, heads, rng),
      language_query(channels, text_dim, heads, rng),
      align_vision(channels, text_dim, rng),
      align_text(text_dim, text_dim, rng),
      log_tau(ag::parameter(Tensor({1}, std::log(tau_init)))) {}

StageOutput SvliStage::operator()(const Var& vision, const Var& text,
                                  const std::vector<std::uint8_t>& text_valid) const {
  StageOutput out;
  out.vision = vision_query(vision, text, text_valid);
  out.text = language_query(text, out.vision);
  out.vision_align = align_vision(out.vision);
  out.text_align = align_text(out.text);
  return out;
}

void SvliStage::register_state(const std::string& prefix, StateRefs& refs) {
  vision_query.register_state(prefix + ".vision_query", refs);
  language_query.register_state(prefix + ".language_query", refs);
  align_vision.register_state(prefix + ".align_vision", refs);
  align_text.register_state(prefix + ".align_text", refs);
  refs.params.emplace_back(prefix + ".log_tau", log_tau);
}

double temperature(double log_tau) { return std::clamp(std::exp(log_tau), kTauMin, kTauMax); }

Tensor naive_attention(const Tensor& q, const Tensor& k, const Tensor& v, const std::vector<std::uint8_t>& key_valid,
                       int heads) {
  const int n = q.dim(0), lq = q.dim(1), d = q.dim(2), lk = k.dim(1);
  const int dh = d / heads;
  Tensor out({n, lq, d});
  std::vector<double> w(lk);
  for (int b = 0; b < n; ++b) {
    for (int h = 0; h < heads; ++h) {
      for (int i = 0; i < lq; ++i) {
        double total = 0.0;
        for (int j = 0; j < lk; ++j) {
          const bool ok = key_valid.empty() || key_valid[static_cast<std::size_t>(b) * lk + j];
          double dot = 0.0;
          for (int c = 0; c < dh; ++c) {
            dot += q[(static_cast<std::size_t>(b) * lq + i) * d + h * dh + c] *
                   k[(static_cast<std::size_t>(b) * lk + j) * d + h * dh + c];
          }
          w[j] = ok ? std::exp(dot / std::sqrt(static_cast<double>(dh))) : 0.0;
          total += w[j];
        }
        for (int c = 0; c < dh; ++c) {
          double acc = 0.0;
          for (int j = 0; j < lk; ++j) acc += w[j] / total * v[(static_cast<std::size_t>(b) * lk + j) * d + h * dh + c];
          out[(static_cast<std::size_t>(b) * lq + i) * d + h * dh + c] = acc;
        }
      }
    }
  }
  return out;
}

LabelMap downsample_nearest(const LabelMap& labels, int factor) {
  if (factor < 1 || labels.height % factor || labels.width % factor) {
    throw std::invalid_argument("downsample_nearest: factor must divide the label map size");
  }
  LabelMap out(labels.batch, labels.height / factor, labels.width / factor);
  for (int n = 0; n < out.batch; ++n) {
    for (int y = 0; y < out.height; ++y) {
      for (int x = 0; x < out.width; ++x) out.at(n, y, x) = labels.at(n, y * factor, x * factor);
    }
  }
  return out;
}

std::vector<AlignmentPixelSets> sample_alignment_pixels(const LabelMap& stage_labels, int negative_ratio, Rng& rng) {
  std::vector<AlignmentPixelSets> sets(stage_labels.batch);
  const int plane = static_cast<int>(stage_labels.pixels());
  std::vector<int> background;
  for (int n = 0; n < stage_labels.batch; ++n) {
    background.clear();
    for (int p = 0; p < plane; ++p) {
      if (stage_labels.data[static_cast<std::size_t>(n) * plane + p] > 0) {
        sets[n].positive.push_back(p);
      } else {
        background.push_back(p);
      }
    }
    const std::size_t want =
        std::min(background.size(), static_cast<std::size_t>(negative_ratio) * sets[n].positive.size());
    for (std::size_t i = 0; i < want; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(background.size() - i - 1)));
      std::swap(background[i], background[j]);
    }
    sets[n].negative.assign(background.begin(), background.begin() + static_cast<std::ptrdiff_t>(want));
    std::sort(sets[n].negative.begin(), sets[n].negative.end());
  }
  return sets;
}

double alignment_term(double sim, double tau, bool positive) {
  const double z = sim / tau;
  return positive ? evidential::softplus(-z) : evidential::softplus(z);
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / (std::sqrt(na) * std::sqrt(nb) + kCosineEps);
}

AlignmentLoss contrastive_loss(const std::vector<StageAlignmentInput>& stages, AlignmentNorm norm) {
  AlignmentLoss out;
  out.grads.resize(stages.size());
  std::vector<double> stage_sum(stages.size(), 0.0);
  std::vector<std::size_t> stage_terms(stages.size(), 0);
  // Per-term derivatives are accumulated unnormalized and scaled at the end.
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const StageAlignmentInput& in = stages[s];
    const Tensor& vis = *in.vision;
    const Tensor& txt = *in.text;
    const int n = vis.dim(0), p = vis.dim(1), d = vis.dim(2), t = txt.dim(1);
    if (txt.dim(0) != n || txt.dim(2) != d) throw std::invalid_argument("contrastive_loss: feature widths disagree");
    if (static_cast<int>(in.pixels.size()) != n) throw std::invalid_argument("contrastive_loss: pixel sets per image");
    StageAlignmentGrad& g = out.grads[s];
    g.vision = Tensor(vis.shape());
    g.text = Tensor(txt.shape());
    const double tau = temperature(in.log_tau);
    const bool tau_free = std::exp(in.log_tau) > kTauMin && std::exp(in.log_tau) < kTauMax;
    std::vector<double> pooled(d), dpooled(d);
    for (int b = 0; b < n; ++b) {
      int valid = 0;
      std::fill(pooled.begin(), pooled.end(), 0.0);
      for (int i = 0; i < t; ++i) {
        if (!(*in.text_valid)[static_cast<std::size_t>(b) * t + i]) continue;
        ++valid;
        for (int c = 0; c < d; ++c) pooled[c] += txt[(static_cast<std::size_t>(b) * t + i) * d + c];
      }
      if (valid == 0) throw std::invalid_argument("contrastive_loss: image without valid text tokens");
      for (double& v : pooled) v /= valid;
      double tnorm = 0.0;
      for (double v : pooled) tnorm += v * v;
      tnorm = std::sqrt(tnorm);
      std::fill(dpooled.begin(), dpooled.end(), 0.0);

      auto visit = [&](int pix, bool positive) {
        if (pix < 0 || pix >= p) throw std::invalid_argument("contrastive_loss: pixel index out of range");
        const double* v = vis.data() + (static_cast<std::size_t>(b) * p + pix) * d;
        double dot = 0.0, vnorm = 0.0;
        for (int c = 0; c < d; ++c) {
          dot += v[c] * pooled[c];
          vnorm += v[c] * v[c];
        }
        vnorm = std::sqrt(vnorm);
        const double den = vnorm * tnorm + kCosineEps;
        const double sim = dot / den;
        const double z = sim / tau;
        stage_sum[s] += positive ? evidential::softplus(-z) : evidential::softplus(z);
        ++stage_terms[s];
        const double dz = positive ? evidential::sigmoid(z) - 1.0 : evidential::sigmoid(z);
        const double dsim = dz / tau;
        if (tau_free) g.log_tau += dz * (-sim / (tau * tau)) * tau;
        double* gv = g.vision.data() + (static_cast<std::size_t>(b) * p + pix) * d;
        for (int c = 0; c < d; ++c) {
          const double dv = pooled[c] / den - (vnorm > 0.0 ? dot * tnorm * v[c] / (vnorm * den * den) : 0.0);
          const double dt = v[c] / den - (tnorm > 0.0 ? dot * vnorm * pooled[c] / (tnorm * den * den) : 0.0);
          gv[c] += dsim * dv;
          dpooled[c] += dsim * dt;
        }
      };
      for (int pix : in.pixels[b].positive) visit(pix, true);
      for (int pix : in.pixels[b].negative) visit(pix, false);

      for (int i = 0; i < t; ++i) {
        if (!(*in.text_valid)[static_cast<std::size_t>(b) * t + i]) continue;
        for (int c = 0; c < d; ++c) g.text[(static_cast<std::size_t>(b) * t + i) * d + c] += dpooled[c] / valid;
      }
    }
  }

  for (std::size_t s = 0; s < stages.size(); ++s) out.terms += stage_terms[s];
  if (norm == AlignmentNorm::kAllTerms) {
    if (out.terms == 0) return out;
    const double scale = 1.0 / static_cast<double>(out.terms);
    for (std::size_t s = 0; s < stages.size(); ++s) {
      out.value += stage_sum[s] * scale;
      out.grads[s].vision.scale_(scale);
      out.grads[s].text.scale_(scale);
      out.grads[s].log_tau *= scale;
    }
  } else {
    std::size_t active = 0;
    for (std::size_t s = 0; s < stages.size(); ++s) active += stage_terms[s] > 0 ? 1 : 0;
    for (std::size_t s = 0; s < stages.size(); ++s) {
      const double scale = stage_terms[s] > 0 ? 1.0 / (static_cast<double>(stage_terms[s]) * active) : 0.0;
      out.value += stage_sum[s] * scale;
      out.grads[s].vision.scale_(scale);
      out.grads[s].text.scale_(scale);
      out.grads[s].log_tau *= scale;
    }
  }
  return out;
}

}  // namespace textbcs::svli
