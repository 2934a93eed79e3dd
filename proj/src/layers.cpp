#include "textbcs/layers.hpp"

#include <cmath>

namespace textbcs::nn {

namespace {

Tensor random_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.normal(0.0, stddev);
  return t;
}

}  // namespace

std::size_t count_parameters(const StateRefs& refs) {
  std::size_t n = 0;
  for (const auto& [name, p] : refs.params) n += p->value.size();
  return n;
}

Linear::Linear(int in, int out, Rng& rng, bool with_bias)
    : weight(ag::parameter(random_tensor({out, in}, std::sqrt(2.0 / (in + out)), rng))) {
  if (with_bias) bias = ag::parameter(Tensor({out}));
}

void Linear::register_state(const std::string& prefix, StateRefs& refs) {
  refs.params.emplace_back(prefix + ".weight", weight);
  if (bias) refs.params.emplace_back(prefix + ".bias", bias);
}

void Linear::zero_() {
  weight->value.fill(0.0);
  if (bias) bias->value.fill(0.0);
}

void Linear::identity_() {
  Tensor& w = weight->value;
  w.fill(0.0);
  for (int i = 0; i < std::min(w.dim(0), w.dim(1)); ++i) w.at(i, i) = 1.0;
  if (bias) bias->value.fill(0.0);
}

Conv2d::Conv2d(int in, int out, int kernel, Rng& rng)
    : weight(ag::parameter(random_tensor({out, in, kernel, kernel}, std::sqrt(2.0 / (in * kernel * kernel)), rng))),
      bias(ag::parameter(Tensor({out}))) {}

void Conv2d::register_state(const std::string& prefix, StateRefs& refs) {
  refs.params.emplace_back(prefix + ".weight", weight);
  refs.params.emplace_back(prefix + ".bias", bias);
}

BatchNorm2d::BatchNorm2d(int channels)
    : gamma(ag::parameter(Tensor({channels}, 1.0))),
      beta(ag::parameter(Tensor({channels}))),
      stats{Tensor({channels}, 0.0), Tensor({channels}, 1.0)} {}

void BatchNorm2d::register_state(const std::string& prefix, StateRefs& refs) {
  refs.params.emplace_back(prefix + ".gamma", gamma);
  refs.params.emplace_back(prefix + ".beta", beta);
  refs.buffers.emplace_back(prefix + ".running_mean", &stats.mean);
  refs.buffers.emplace_back(prefix + ".running_var", &stats.var);
}

LayerNorm::LayerNorm(int width)
    : gamma(ag::parameter(Tensor({width}, 1.0))), beta(ag::parameter(Tensor({width}))) {}

void LayerNorm::register_state(const std::string& prefix, StateRefs& refs) {
  refs.params.emplace_back(prefix + ".gamma", gamma);
  refs.params.emplace_back(prefix + ".beta", beta);
}

FeedForward::FeedForward(int width, int hidden, Rng& rng) : in(width, hidden, rng), out(hidden, width, rng) {}

void FeedForward::register_state(const std::string& prefix, StateRefs& refs) {
  in.register_state(prefix + ".in", refs);
  out.register_state(prefix + ".out", refs);
}

MultiHeadCrossAttention::MultiHeadCrossAttention(int width, int num_heads, Rng& rng)
    : heads(num_heads),
      proj_q(width, width, rng),
      proj_k(width, width, rng),
      proj_v(width, width, rng),
      proj_out(width, width, rng) {}

Var MultiHeadCrossAttention::operator()(const Var& queries, const Var& context,
                                        const std::vector<std::uint8_t>& context_valid, Tensor* weights_out) const {
  const Var attended = ag::attention(proj_q(queries), proj_k(context), proj_v(context), context_valid, heads, weights_out);
  return proj_out(attended);
}

void MultiHeadCrossAttention::register_state(const std::string& prefix, StateRefs& refs) {
  proj_q.register_state(prefix + ".q", refs);
  proj_k.register_state(prefix + ".k", refs);
  proj_v.register_state(prefix + ".v", refs);
  proj_out.register_state(prefix + ".out", refs);
}

void MultiHeadCrossAttention::identity_projections() {
  proj_q.identity_();
  proj_k.identity_();
  proj_v.identity_();
  proj_out.identity_();
}

}  // namespace textbcs::nn
