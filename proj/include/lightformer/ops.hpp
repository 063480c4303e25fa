#pragma once

#include <cstdint>
#include <vector>

#include "lightformer/mask.hpp"
#include "lightformer/tensor.hpp"

namespace lightformer {

// Names the dropout stream: identical (seed, instance, step) keys reproduce
// the same mask bit-for-bit.
struct DropoutKey {
  std::uint64_t seed = 0;
  std::uint64_t instance = 0;
  std::uint64_t step = 0;
};

// a: [..,p,q] x b: [..,q,r] -> [..,p,r]. Supported layouts: 2D*2D, 3D*2D
// (weights broadcast over the leading dim), and 3D*3D with equal leading
// dims. transpose_b treats b as [..,r,q].
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);

Tensor add(const Tensor& a, const Tensor& b);            // same shape
Tensor add_bias(const Tensor& x, const Tensor& bias);    // bias over last dim
Tensor mul(const Tensor& a, const Tensor& b);            // elementwise
Tensor scale(const Tensor& x, double c);
Tensor relu(const Tensor& x);
Tensor sum(const Tensor& x);                             // scalar

// [B,n,D] -> [B*heads, n, D/heads] and back.
Tensor split_heads(const Tensor& x, std::int64_t heads);
Tensor merge_heads(const Tensor& x, std::int64_t heads);

// First n rows of a 2D table.
Tensor take_rows(const Tensor& x, std::int64_t n);

// x: [B,n,D] + rows: [n,D], broadcast over the batch.
Tensor add_rows(const Tensor& x, const Tensor& rows);

// Row-stabilized softmax over the trailing dim of [..,n,n] scores; entries
// with mask bit false are exactly 0, unmasked rows sum to 1. The mask may be
// larger than n; its top-left n x n block applies.
Tensor masked_softmax(const Tensor& scores, const AttentionMask& mask);

// Normalize over the last dim, then scale/shift: gain * (x-mu)/sqrt(var+eps)
// + bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

// Inverted dropout: zero with probability `rate`, scale survivors by
// 1/(1-rate). Identity when !training or rate == 0.
Tensor dropout(const Tensor& x, double rate, const DropoutKey& key,
               bool training);

// table: [V,D], ids: [B,n] -> [B,n,D].
Tensor embedding_lookup(const Tensor& table, const TokenBatch& ids);

// Mean over all positions of -log softmax(logits)[target].
// logits: [B,n,V], targets: [B,n] -> scalar.
Tensor cross_entropy(const Tensor& logits, const TokenBatch& targets);

// value <- value - lr * grad, after optional global-norm clipping
// (clip_norm <= 0 disables). Grads are zeroed afterwards.
void sgd_step(std::vector<Parameter>& params, double lr,
              double clip_norm = 0.0);

}  // namespace lightformer
