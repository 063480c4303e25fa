#pragma once

#include <cstdint>
#include <vector>

#include "lightformer/mask.hpp"
#include "lightformer/model_config.hpp"
#include "lightformer/ops.hpp"
#include "lightformer/tensor.hpp"

namespace lightformer {

inline constexpr double kLayerNormEps = 1e-5;

// Weights of one decoder block: attention projections with bias, the
// position-wise FFN, and two layer norms.
struct BlockWeights {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
};

// Per-forward context: training toggles dropout, (seed, step) key its masks.
struct ForwardCtx {
  bool training = false;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
};

// scores = (xWq)(xWk)^T / sqrt(head_dim) per head, masked softmax, value
// mixing, head concat, output projection. `layer` keys the dropout streams.
Tensor multi_head_attention(const Tensor& x, const AttentionMask& mask,
                            const BlockWeights& w, std::int64_t heads,
                            double dropout_rate, const ForwardCtx& ctx,
                            std::int64_t layer);

// relu(x W1 + b1) W2 + b2, independently per position.
Tensor position_wise_ffn(const Tensor& x, const BlockWeights& w);

// Post-norm block: y1 = LN(x + drop(attn(x))); y2 = LN(y1 + drop(ffn(y1))).
Tensor block_forward(const Tensor& x, const AttentionMask& mask,
                     const BlockWeights& w, std::int64_t heads,
                     double dropout_rate, const ForwardCtx& ctx,
                     std::int64_t layer);

// Decoder-only LM: token embedding + learned positions, a stack of blocks
// with per-layer pattern masks, and a tied output projection (the embedding
// transposed; no separate output matrix exists).
class LightTransformerLM {
 public:
  explicit LightTransformerLM(ModelConfig config);

  // Truncated-normal weights (sigma 0.02, cutoff 2 sigma); zero biases;
  // unit layer-norm gains. Fully determined by the seed.
  void init_parameters(std::uint64_t seed);

  // Unique names, deterministic order.
  std::vector<Parameter> parameters();

  const ModelConfig& config() const { return config_; }

  // h0 = embed(tokens) + positions.
  Tensor embed(const TokenBatch& tokens) const;

  // logits [batch, n, vocab]; softmax is the caller's business.
  Tensor forward(const TokenBatch& tokens, const ForwardCtx& ctx) const;

  // Runs the block stack and output projection on an already-embedded
  // [batch, n, dmodel] input (used by gradient and reachability probes).
  Tensor forward_embedded(const Tensor& h0, const ForwardCtx& ctx) const;

  Tensor& embedding() { return we_; }
  Tensor& positional() { return wp_; }
  std::vector<BlockWeights>& blocks() { return blocks_; }

 private:
  ModelConfig config_;
  Tensor we_;
  Tensor wp_;
  std::vector<BlockWeights> blocks_;
};

}  // namespace lightformer
