#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "textbcs/autograd.hpp"
#include "textbcs/ops.hpp"
#include "textbcs/rng.hpp"

namespace textbcs::nn {

using ag::Var;

// Named references to trainable parameters and persistent buffers of a module tree.
struct StateRefs {
  std::vector<std::pair<std::string, Var>> params;
  std::vector<std::pair<std::string, Tensor*>> buffers;
};

std::size_t count_parameters(const StateRefs& refs);

class Linear {
 public:
  Linear() = default;
  Linear(int in, int out, Rng& rng, bool bias = true);

  Var operator()(const Var& x) const { return ag::linear(x, weight, bias); }
  void register_state(const std::string& prefix, StateRefs& refs);
  void zero_();
  void identity_();

  Var weight;
  Var bias;
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in, int out, int kernel, Rng& rng);

  Var operator()(const Var& x) const { return ag::conv2d(x, weight, bias); }
  void register_state(const std::string& prefix, StateRefs& refs);

  Var weight;
  Var bias;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels);

  Var operator()(const Var& x, bool training) { return ag::batch_norm2d(x, gamma, beta, stats, training); }
  void register_state(const std::string& prefix, StateRefs& refs);

  Var gamma;
  Var beta;
  ag::RunningStats stats;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(int width);

  Var operator()(const Var& x) const { return ag::layer_norm(x, gamma, beta); }
  void register_state(const std::string& prefix, StateRefs& refs);

  Var gamma;
  Var beta;
};

// Two-layer position-wise MLP with a GELU in between.
class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(int width, int hidden, Rng& rng);

  Var operator()(const Var& x) const { return out(ag::gelu(in(x))); }
  void register_state(const std::string& prefix, StateRefs& refs);
  // Zeroes the output layer so the block contributes nothing.
  void zero_output() { out.zero_(); }

  Linear in;
  Linear out;
};

// Multi-head attention with query/key/value/output projections. Queries come
// from one sequence, keys and values from another (self-attention passes the
// same sequence twice).
class MultiHeadCrossAttention {
 public:
  MultiHeadCrossAttention() = default;
  MultiHeadCrossAttention(int width, int heads, Rng& rng);

  Var operator()(const Var& queries, const Var& context, const std::vector<std::uint8_t>& context_valid,
                 Tensor* weights_out = nullptr) const;
  void register_state(const std::string& prefix, StateRefs& refs);
  void zero_output() { proj_out.zero_(); }
  void identity_projections();

  int heads = 1;
  Linear proj_q;
  Linear proj_k;
  Linear proj_v;
  Linear proj_out;
};

}  // namespace textbcs::nn
