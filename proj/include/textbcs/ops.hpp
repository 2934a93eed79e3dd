#pragma once

#include <cstdint>
#include <vector>

#include "textbcs/autograd.hpp"

namespace textbcs::ag {

Var add(const Var& a, const Var& b);
Var relu(const Var& x);
Var gelu(const Var& x);

// Stride-1 "same" convolution. x: [N,Cin,H,W], w: [Cout,Cin,k,k], b: [Cout] or null.
Var conv2d(const Var& x, const Var& w, const Var& b);
Var max_pool2(const Var& x);
Var upsample_nearest2(const Var& x);
Var concat_channels(const Var& a, const Var& b);

// [N,C,H,W] <-> [N,H*W,C]
Var to_tokens(const Var& x);
Var from_tokens(const Var& t, int height, int width);

// Affine map over the last dimension. w: [out,in], b: [out] or null.
Var linear(const Var& x, const Var& w, const Var& b);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

struct RunningStats {
  Tensor mean;
  Tensor var;
};

Var batch_norm2d(const Var& x, const Var& gamma, const Var& beta, RunningStats& stats, bool training,
                 double momentum = 0.1, double eps = 1e-5);

// ids: N*T token ids (row-major). table: [vocab, D]. Returns [N,T,D].
Var embedding(const std::vector<int>& ids, int batch, int length, const Var& table);
// x: [N,T,D] plus rows: [T,D] broadcast over the batch.
Var add_rows(const Var& x, const Var& rows);

// Scaled dot-product attention with `heads` heads over the last dimension.
// q: [N,Lq,d]; k, v: [N,Lk,d]; key_valid: N*Lk flags (empty = all valid).
// When `weights_out` is given it receives the [N,heads,Lq,Lk] attention weights.
// Throws if every key of some query row is masked.
Var attention(const Var& q, const Var& k, const Var& v, const std::vector<std::uint8_t>& key_valid, int heads,
              Tensor* weights_out = nullptr);

}  // namespace textbcs::ag
