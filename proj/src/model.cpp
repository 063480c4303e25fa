#include "lightformer/model.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "lightformer/rng.hpp"

namespace lightformer {

void ModelConfig::validate() const {
  pattern.validate();
  if (layers < 0) {
    throw ConfigError("model: layers must be >= 0, got " +
                      std::to_string(layers));
  }
  if (dmodel < 1 || dff < 1 || heads < 1 || n_max < 1) {
    throw ConfigError("model: dmodel, dff, heads and n_max must be >= 1");
  }
  if (dmodel % heads != 0) {
    throw ConfigError("model: heads (" + std::to_string(heads) +
                      ") must divide dmodel (" + std::to_string(dmodel) + ")");
  }
  if (vocab < 1) {
    throw ConfigError("model: vocabulary size must be >= 1, got " +
                      std::to_string(vocab));
  }
  if (dropout < 0.0 || dropout >= 1.0) {
    throw ConfigError("model: dropout must be in [0,1), got " +
                      std::to_string(dropout));
  }
}

namespace {

// Dropout stream ids, one per call site per layer.
enum DropoutSite : std::uint64_t {
  kSiteAttnProbs = 0,
  kSiteAttnOut = 1,
  kSiteFfnOut = 2,
};

std::uint64_t dropout_instance(std::int64_t layer, DropoutSite site) {
  return static_cast<std::uint64_t>(layer) * 4 + site;
}

}  // namespace

Tensor multi_head_attention(const Tensor& x, const AttentionMask& mask,
                            const BlockWeights& w, std::int64_t heads,
                            double dropout_rate, const ForwardCtx& ctx,
                            std::int64_t layer) {
  if (x.rank() != 3) {
    throw ShapeError("attention: input must be [batch,n,dmodel], got " +
                     shape_str(x.shape()));
  }
  const std::int64_t n = x.dim(1);
  const std::int64_t d = x.dim(2);
  if (mask.n < n) {
    throw ShapeError("attention: sequence length " + std::to_string(n) +
                     " exceeds mask length " + std::to_string(mask.n));
  }
  if (d % heads != 0) {
    throw ShapeError("attention: heads must divide dmodel, got " +
                     std::to_string(d) + "/" + std::to_string(heads));
  }
  const std::int64_t head_dim = d / heads;

  Tensor q = split_heads(add_bias(matmul(x, w.wq), w.bq), heads);
  Tensor k = split_heads(add_bias(matmul(x, w.wk), w.bk), heads);
  Tensor v = split_heads(add_bias(matmul(x, w.wv), w.bv), heads);

  Tensor scores =
      scale(matmul(q, k, /*transpose_b=*/true), 1.0 / std::sqrt(head_dim));
  Tensor probs = masked_softmax(scores, mask);
  probs = dropout(probs, dropout_rate,
                  {ctx.seed, dropout_instance(layer, kSiteAttnProbs), ctx.step},
                  ctx.training);
  Tensor context = merge_heads(matmul(probs, v), heads);
  return add_bias(matmul(context, w.wo), w.bo);
}

Tensor position_wise_ffn(const Tensor& x, const BlockWeights& w) {
  Tensor hidden = relu(add_bias(matmul(x, w.ffn_w1), w.ffn_b1));
  return add_bias(matmul(hidden, w.ffn_w2), w.ffn_b2);
}

Tensor block_forward(const Tensor& x, const AttentionMask& mask,
                     const BlockWeights& w, std::int64_t heads,
                     double dropout_rate, const ForwardCtx& ctx,
                     std::int64_t layer) {
  Tensor attn = multi_head_attention(x, mask, w, heads, dropout_rate, ctx,
                                     layer);
  attn = dropout(attn, dropout_rate,
                 {ctx.seed, dropout_instance(layer, kSiteAttnOut), ctx.step},
                 ctx.training);
  Tensor y1 = layer_norm(add(x, attn), w.ln1_gain, w.ln1_bias, kLayerNormEps);

  Tensor ffn = position_wise_ffn(y1, w);
  ffn = dropout(ffn, dropout_rate,
                {ctx.seed, dropout_instance(layer, kSiteFfnOut), ctx.step},
                ctx.training);
  return layer_norm(add(y1, ffn), w.ln2_gain, w.ln2_bias, kLayerNormEps);
}

LightTransformerLM::LightTransformerLM(ModelConfig config)
    : config_(std::move(config)) {
  config_.validate();
  const std::int64_t d = config_.dmodel;
  we_ = Tensor::zeros({config_.vocab, d}, true);
  wp_ = Tensor::zeros({config_.n_max, d}, true);
  blocks_.resize(static_cast<std::size_t>(config_.layers));
  for (auto& b : blocks_) {
    b.wq = Tensor::zeros({d, d}, true);
    b.bq = Tensor::zeros({d}, true);
    b.wk = Tensor::zeros({d, d}, true);
    b.bk = Tensor::zeros({d}, true);
    b.wv = Tensor::zeros({d, d}, true);
    b.bv = Tensor::zeros({d}, true);
    b.wo = Tensor::zeros({d, d}, true);
    b.bo = Tensor::zeros({d}, true);
    b.ffn_w1 = Tensor::zeros({d, config_.dff}, true);
    b.ffn_b1 = Tensor::zeros({config_.dff}, true);
    b.ffn_w2 = Tensor::zeros({config_.dff, d}, true);
    b.ffn_b2 = Tensor::zeros({d}, true);
    b.ln1_gain = Tensor::zeros({d}, true);
    b.ln1_bias = Tensor::zeros({d}, true);
    b.ln2_gain = Tensor::zeros({d}, true);
    b.ln2_bias = Tensor::zeros({d}, true);
  }
}

void LightTransformerLM::init_parameters(std::uint64_t seed) {
  std::uint64_t index = 0;
  auto fill_normal = [&](Tensor& t) {
    const std::uint64_t key = rng::combine(seed, index++);
    for (std::size_t i = 0; i < t.values().size(); ++i) {
      t.values()[i] = rng::truncated_normal(key, i, 0.02);
    }
  };
  auto fill_const = [&](Tensor& t, double v) {
    ++index;
    for (auto& e : t.values()) e = v;
  };

  fill_normal(we_);
  fill_normal(wp_);
  for (auto& b : blocks_) {
    fill_normal(b.wq);
    fill_const(b.bq, 0.0);
    fill_normal(b.wk);
    fill_const(b.bk, 0.0);
    fill_normal(b.wv);
    fill_const(b.bv, 0.0);
    fill_normal(b.wo);
    fill_const(b.bo, 0.0);
    fill_normal(b.ffn_w1);
    fill_const(b.ffn_b1, 0.0);
    fill_normal(b.ffn_w2);
    fill_const(b.ffn_b2, 0.0);
    fill_const(b.ln1_gain, 1.0);
    fill_const(b.ln1_bias, 0.0);
    fill_const(b.ln2_gain, 1.0);
    fill_const(b.ln2_bias, 0.0);
  }
}

std::vector<Parameter> LightTransformerLM::parameters() {
  std::vector<Parameter> params;
  params.push_back({"embed.we", we_});
  params.push_back({"embed.wp", wp_});
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const std::string prefix = "block." + std::to_string(l) + ".";
    auto& b = blocks_[l];
    params.push_back({prefix + "attn.wq", b.wq});
    params.push_back({prefix + "attn.bq", b.bq});
    params.push_back({prefix + "attn.wk", b.wk});
    params.push_back({prefix + "attn.bk", b.bk});
    params.push_back({prefix + "attn.wv", b.wv});
    params.push_back({prefix + "attn.bv", b.bv});
    params.push_back({prefix + "attn.wo", b.wo});
    params.push_back({prefix + "attn.bo", b.bo});
    params.push_back({prefix + "ffn.w1", b.ffn_w1});
    params.push_back({prefix + "ffn.b1", b.ffn_b1});
    params.push_back({prefix + "ffn.w2", b.ffn_w2});
    params.push_back({prefix + "ffn.b2", b.ffn_b2});
    params.push_back({prefix + "ln1.gain", b.ln1_gain});
    params.push_back({prefix + "ln1.bias", b.ln1_bias});
    params.push_back({prefix + "ln2.gain", b.ln2_gain});
    params.push_back({prefix + "ln2.bias", b.ln2_bias});
  }
  return params;
}

Tensor LightTransformerLM::embed(const TokenBatch& tokens) const {
  if (tokens.n > config_.n_max) {
    throw ShapeError("model: sequence length " + std::to_string(tokens.n) +
                     " exceeds n_max " + std::to_string(config_.n_max));
  }
  Tensor h = embedding_lookup(we_, tokens);
  return add_rows(h, take_rows(wp_, tokens.n));
}

Tensor LightTransformerLM::forward(const TokenBatch& tokens,
                                   const ForwardCtx& ctx) const {
  return forward_embedded(embed(tokens), ctx);
}

Tensor LightTransformerLM::forward_embedded(const Tensor& h0,
                                            const ForwardCtx& ctx) const {
  if (h0.rank() != 3 || h0.dim(2) != config_.dmodel) {
    throw ShapeError("model: embedded input must be [batch,n,dmodel], got " +
                     shape_str(h0.shape()));
  }
  const std::int64_t n = h0.dim(1);
  if (n > config_.n_max) {
    throw ShapeError("model: sequence length " + std::to_string(n) +
                     " exceeds n_max " + std::to_string(config_.n_max));
  }
  Tensor h = h0;
  for (std::int64_t l = 0; l < config_.layers; ++l) {
    auto mask = cached_mask(config_.pattern, l, n);
    h = block_forward(h, *mask, blocks_[static_cast<std::size_t>(l)],
                      config_.heads, config_.dropout, ctx, l);
  }
  return matmul(h, we_, /*transpose_b=*/true);
}

}  // namespace lightformer
