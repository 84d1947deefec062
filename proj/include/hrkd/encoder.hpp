#pragma once

// Miniature BERT-style encoder: learned token + position embeddings, post-LN
// transformer layers, and one linear classification head per domain applied to
// the first token's final hidden state.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "hrkd/autodiff.hpp"
#include "hrkd/errors.hpp"
#include "hrkd/grad_check.hpp"
#include "hrkd/ops.hpp"

namespace hrkd {

struct EncoderConfig {
  std::size_t num_layers = 2;
  std::size_t hidden = 32;
  std::size_t ffn_hidden = 64;
  std::size_t heads = 2;
  std::size_t vocab_size = 128;
  std::size_t max_len = 32;
  std::vector<std::size_t> classes_per_domain{2, 2, 2};

  std::size_t num_domains() const { return classes_per_domain.size(); }
  std::size_t head_dim() const { return hidden / heads; }

  void validate() const {
    if (num_layers == 0) throw ConfigError("encoder: num_layers must be >= 1");
    if (hidden == 0 || heads == 0 || hidden % heads != 0) {
      throw ConfigError("encoder: hidden (" + std::to_string(hidden) + ") must be divisible by heads (" +
                        std::to_string(heads) + ")");
    }
    if (ffn_hidden == 0) throw ConfigError("encoder: ffn_hidden must be >= 1");
    if (vocab_size == 0) throw ConfigError("encoder: vocab_size must be >= 1");
    if (max_len == 0) throw ConfigError("encoder: max_len must be >= 1");
    if (classes_per_domain.empty()) throw ConfigError("encoder: num_domains must be >= 1");
    for (std::size_t c : classes_per_domain) {
      if (c < 2) throw ConfigError("encoder: every domain needs at least 2 classes");
    }
  }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct TransformerLayerParams {
  Var wq, bq, wk, bk, wv, bv, wo, bo;
  Var ln1_gamma, ln1_beta;
  Var w1, b1, w2, b2;
  Var ln2_gamma, ln2_beta;
};

struct DomainHead {
  Var weight;  // hidden × classes
  Var bias;    // classes
};

struct EncoderParams {
  Var token_embedding;     // vocab × hidden
  Var position_embedding;  // max_len × hidden
  Var emb_ln_gamma, emb_ln_beta;
  std::vector<TransformerLayerParams> layers;
  std::vector<DomainHead> heads;

  /// Every parameter with a stable checkpoint name, in a fixed order.
  std::vector<NamedParam> named() const {
    std::vector<NamedParam> out{{"embeddings.token", token_embedding},
                                {"embeddings.position", position_embedding},
                                {"embeddings.ln.gamma", emb_ln_gamma},
                                {"embeddings.ln.beta", emb_ln_beta}};
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& p = layers[l];
      const std::string pre = "layer" + std::to_string(l) + ".";
      for (auto [suffix, v] : std::vector<std::pair<const char*, Var>>{
               {"attn.wq", p.wq}, {"attn.bq", p.bq}, {"attn.wk", p.wk}, {"attn.bk", p.bk},
               {"attn.wv", p.wv}, {"attn.bv", p.bv}, {"attn.wo", p.wo}, {"attn.bo", p.bo},
               {"ln1.gamma", p.ln1_gamma}, {"ln1.beta", p.ln1_beta}, {"ffn.w1", p.w1}, {"ffn.b1", p.b1},
               {"ffn.w2", p.w2}, {"ffn.b2", p.b2}, {"ln2.gamma", p.ln2_gamma}, {"ln2.beta", p.ln2_beta}}) {
        out.push_back({pre + suffix, v});
      }
    }
    for (std::size_t d = 0; d < heads.size(); ++d) {
      out.push_back({"head" + std::to_string(d) + ".weight", heads[d].weight});
      out.push_back({"head" + std::to_string(d) + ".bias", heads[d].bias});
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : named()) n += p.var.size();
    return n;
  }

  void set_trainable(bool on) {
    for (auto& p : named()) {
      Var v = p.var;
      v.set_requires_grad(on);
    }
  }
};

/// Normal(0, 0.02) weights, zero biases, unit LayerNorm gains.
inline EncoderParams init_params(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  auto weight = [&](std::size_t rows, std::size_t cols) {
    Tensor t({rows, cols});
    for (double& v : t.data()) v = normal(rng);
    return Var::parameter(std::move(t));
  };
  auto filled = [](std::size_t n, double v) { return Var::parameter(Tensor({n}, v)); };

  const std::size_t h = config.hidden;
  EncoderParams p;
  p.token_embedding = weight(config.vocab_size, h);
  p.position_embedding = weight(config.max_len, h);
  p.emb_ln_gamma = filled(h, 1.0);
  p.emb_ln_beta = filled(h, 0.0);
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    TransformerLayerParams lp;
    lp.wq = weight(h, h);
    lp.bq = filled(h, 0.0);
    lp.wk = weight(h, h);
    lp.bk = filled(h, 0.0);
    lp.wv = weight(h, h);
    lp.bv = filled(h, 0.0);
    lp.wo = weight(h, h);
    lp.bo = filled(h, 0.0);
    lp.ln1_gamma = filled(h, 1.0);
    lp.ln1_beta = filled(h, 0.0);
    lp.w1 = weight(h, config.ffn_hidden);
    lp.b1 = filled(config.ffn_hidden, 0.0);
    lp.w2 = weight(config.ffn_hidden, h);
    lp.b2 = filled(h, 0.0);
    lp.ln2_gamma = filled(h, 1.0);
    lp.ln2_beta = filled(h, 0.0);
    p.layers.push_back(std::move(lp));
  }
  for (std::size_t c : config.classes_per_domain) p.heads.push_back({weight(h, c), filled(c, 0.0)});
  return p;
}

/// Tokenized samples of one domain, row-major [batch × len].
struct DomainBatch {
  std::size_t domain_id = 0;
  std::size_t batch = 0;
  std::size_t len = 0;
  std::vector<std::size_t> token_ids;
  std::vector<int> labels;
  std::vector<std::uint8_t> attention_mask;  // 1 = real token

  bool is_real(std::size_t b, std::size_t t) const { return attention_mask[b * len + t] != 0; }

  std::size_t real_token_count() const {
    std::size_t n = 0;
    for (auto m : attention_mask) n += m != 0;
    return n;
  }
};

struct EncoderOutput {
  Var embeddings;                  // (B·L) × hidden
  std::vector<Var> attentions;     // per layer: (B·heads) × L × L, post-softmax
  std::vector<Var> hidden_states;  // per layer: (B·L) × hidden
  Var logits;                      // B × classes of the batch's domain
  std::size_t batch = 0;
  std::size_t len = 0;
  std::size_t heads = 0;

  /// Attention of one sample, layer (0-based) and head as an L×L tensor.
  Tensor attention(std::size_t layer, std::size_t sample, std::size_t head) const {
    const Tensor& a = attentions.at(layer).value();
    Tensor out({len, len});
    const std::size_t off = (sample * heads + head) * len * len;
    std::copy_n(a.data().data() + off, len * len, out.data().data());
    return out;
  }
};

inline void validate_batch(const EncoderConfig& config, const DomainBatch& batch) {
  if (batch.domain_id >= config.num_domains()) {
    throw DomainError("forward: domain_id " + std::to_string(batch.domain_id) + " out of range for " +
                      std::to_string(config.num_domains()) + " domains");
  }
  if (batch.batch == 0 || batch.len == 0 || batch.len > config.max_len) {
    throw DimensionError("forward: batch " + std::to_string(batch.batch) + "x" + std::to_string(batch.len) +
                         " invalid for max_len " + std::to_string(config.max_len));
  }
  const std::size_t n = batch.batch * batch.len;
  if (batch.token_ids.size() != n || batch.attention_mask.size() != n) {
    throw DimensionError("forward: token/mask arrays do not match batch shape");
  }
  for (std::size_t id : batch.token_ids) {
    if (id >= config.vocab_size) {
      throw DomainError("forward: token id " + std::to_string(id) + " >= vocab_size " +
                        std::to_string(config.vocab_size));
    }
  }
}

/// Additive attention bias: 0 on real keys, −1e9 on padded keys. Shape (B·heads)×L×L.
inline Tensor attention_mask_bias(const DomainBatch& batch, std::size_t heads) {
  const std::size_t len = batch.len;
  Tensor bias({batch.batch * heads, len, len}, 0.0);
  for (std::size_t b = 0; b < batch.batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < len; ++i)
        for (std::size_t j = 0; j < len; ++j)
          if (!batch.is_real(b, j)) bias[((b * heads + h) * len + i) * len + j] = -1e9;
  return bias;
}

inline EncoderOutput forward(const EncoderConfig& config, const EncoderParams& params, const DomainBatch& batch) {
  validate_batch(config, batch);
  const std::size_t B = batch.batch, L = batch.len, heads = config.heads;

  EncoderOutput out;
  out.batch = B;
  out.len = L;
  out.heads = heads;

  std::vector<std::size_t> positions(B * L);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < L; ++t) positions[b * L + t] = t;
  Var x = add(gather_rows(params.token_embedding, batch.token_ids), gather_rows(params.position_embedding, positions));
  x = layer_norm(x, params.emb_ln_gamma, params.emb_ln_beta);
  out.embeddings = x;

  const Var mask_bias(attention_mask_bias(batch, heads));
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(config.head_dim()));
  for (const auto& lp : params.layers) {
    Var q = split_heads(add_bias(matmul(x, lp.wq), lp.bq), B, L, heads);
    Var k = split_heads(add_bias(matmul(x, lp.wk), lp.bk), B, L, heads);
    Var v = split_heads(add_bias(matmul(x, lp.wv), lp.bv), B, L, heads);
    Var probs = softmax(add(scale(bmm_nt(q, k), inv_sqrt_dh), mask_bias));
    out.attentions.push_back(probs);
    Var ctx = merge_heads(bmm(probs, v), B, L, heads);
    Var attn_out = add_bias(matmul(ctx, lp.wo), lp.bo);
    Var x1 = layer_norm(add(x, attn_out), lp.ln1_gamma, lp.ln1_beta);
    Var ffn = add_bias(matmul(gelu(add_bias(matmul(x1, lp.w1), lp.b1)), lp.w2), lp.b2);
    x = layer_norm(add(x1, ffn), lp.ln2_gamma, lp.ln2_beta);
    out.hidden_states.push_back(x);
  }

  std::vector<std::size_t> first_tokens(B);
  for (std::size_t b = 0; b < B; ++b) first_tokens[b] = b * L;
  const auto& head = params.heads[batch.domain_id];
  out.logits = add_bias(matmul(gather_rows(x, first_tokens), head.weight), head.bias);
  return out;
}

/// Uniform matching of student layer m (1-based) to teacher layer m·(N/M).
inline std::vector<std::size_t> layer_map(std::size_t student_layers, std::size_t teacher_layers) {
  if (student_layers == 0 || teacher_layers == 0 || teacher_layers % student_layers != 0) {
    throw ConfigError("layer_map: teacher layers (" + std::to_string(teacher_layers) +
                      ") must be a positive multiple of student layers (" + std::to_string(student_layers) + ")");
  }
  const std::size_t stride = teacher_layers / student_layers;
  std::vector<std::size_t> map(student_layers);
  for (std::size_t m = 1; m <= student_layers; ++m) map[m - 1] = m * stride;
  return map;
}

}  // namespace hrkd
