#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hrkd/encoder.hpp"
#include "oracles.hpp"

using namespace hrkd;
using oracle::Mat;
using oracle::Vec;

namespace {

EncoderConfig toy_config() {
  EncoderConfig c;
  c.num_layers = 2;
  c.hidden = 8;
  c.ffn_hidden = 16;
  c.heads = 2;
  c.vocab_size = 20;
  c.max_len = 8;
  c.classes_per_domain = {2, 3};
  return c;
}

DomainBatch make_batch(std::size_t domain, std::size_t batch, std::size_t len, std::vector<std::size_t> lengths,
                       std::uint64_t seed, std::size_t vocab) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> tok(3, vocab - 1);
  DomainBatch b;
  b.domain_id = domain;
  b.batch = batch;
  b.len = len;
  for (std::size_t s = 0; s < batch; ++s) {
    for (std::size_t t = 0; t < len; ++t) {
      const bool real = t < lengths[s];
      b.token_ids.push_back(t == 0 ? 2 : (real ? tok(rng) : 0));
      b.attention_mask.push_back(real ? 1 : 0);
    }
    b.labels.push_back(0);
  }
  return b;
}

Mat param_mat(const Var& v) { return oracle::to_mat(v.value()); }
Vec param_vec(const Var& v) { return oracle::to_vec(v.value()); }

Vec affine(const Vec& x, const Mat& w, const Vec& b) {
  Vec y(b);
  for (std::size_t j = 0; j < w[0].size(); ++j)
    for (std::size_t i = 0; i < x.size(); ++i) y[j] += x[i] * w[i][j];
  return y;
}

Vec norm(const Vec& x, const Vec& g, const Vec& b) {
  double mu = 0.0, var = 0.0;
  for (double v : x) mu += v;
  mu /= static_cast<double>(x.size());
  for (double v : x) var += (v - mu) * (v - mu);
  var /= static_cast<double>(x.size());
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mu) / std::sqrt(var + 1e-12) * g[i] + b[i];
  return y;
}

struct SampleTrace {
  std::vector<Mat> hidden;  // per layer, L rows
  Vec logits;
};

// One sample, written out position by position.
SampleTrace reference_forward(const EncoderConfig& c, const EncoderParams& p, const DomainBatch& batch,
                              std::size_t sample) {
  const std::size_t L = batch.len, H = c.hidden, dh = c.head_dim();
  const Mat tok = param_mat(p.token_embedding), pos = param_mat(p.position_embedding);
  Mat x(L);
  for (std::size_t t = 0; t < L; ++t) {
    Vec e(H);
    for (std::size_t k = 0; k < H; ++k) e[k] = tok[batch.token_ids[sample * L + t]][k] + pos[t][k];
    x[t] = norm(e, param_vec(p.emb_ln_gamma), param_vec(p.emb_ln_beta));
  }
  SampleTrace out;
  for (const auto& lp : p.layers) {
    Mat q(L), k(L), v(L);
    for (std::size_t t = 0; t < L; ++t) {
      q[t] = affine(x[t], param_mat(lp.wq), param_vec(lp.bq));
      k[t] = affine(x[t], param_mat(lp.wk), param_vec(lp.bk));
      v[t] = affine(x[t], param_mat(lp.wv), param_vec(lp.bv));
    }
    Mat ctx(L, Vec(H, 0.0));
    for (std::size_t h = 0; h < c.heads; ++h) {
      for (std::size_t i = 0; i < L; ++i) {
        Vec s(L);
        for (std::size_t j = 0; j < L; ++j) {
          double dot = 0.0;
          for (std::size_t r = 0; r < dh; ++r) dot += q[i][h * dh + r] * k[j][h * dh + r];
          s[j] = dot / std::sqrt(static_cast<double>(dh)) + (batch.is_real(sample, j) ? 0.0 : -1e9);
        }
        const Vec a = oracle::softmax(s);
        for (std::size_t j = 0; j < L; ++j)
          for (std::size_t r = 0; r < dh; ++r) ctx[i][h * dh + r] += a[j] * v[j][h * dh + r];
      }
    }
    Mat next(L);
    for (std::size_t t = 0; t < L; ++t) {
      Vec a = affine(ctx[t], param_mat(lp.wo), param_vec(lp.bo));
      for (std::size_t r = 0; r < H; ++r) a[r] += x[t][r];
      const Vec x1 = norm(a, param_vec(lp.ln1_gamma), param_vec(lp.ln1_beta));
      Vec f = affine(x1, param_mat(lp.w1), param_vec(lp.b1));
      for (double& z : f) z = oracle::gelu(z);
      Vec f2 = affine(f, param_mat(lp.w2), param_vec(lp.b2));
      for (std::size_t r = 0; r < H; ++r) f2[r] += x1[r];
      next[t] = norm(f2, param_vec(lp.ln2_gamma), param_vec(lp.ln2_beta));
    }
    x = next;
    out.hidden.push_back(x);
  }
  const auto& head = p.heads[batch.domain_id];
  out.logits = affine(x[0], param_mat(head.weight), param_vec(head.bias));
  return out;
}

// Larger-than-init weights so the oracle comparison exercises non-trivial activations.
void scramble(EncoderParams& p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.6, 0.6);
  for (auto& np : p.named()) {
    Var v = np.var;
    for (double& x : v.mutable_value().data()) x = u(rng);
  }
}

}  // namespace

TEST(Encoder, SingleTokenAttentionIsOne) {
  NoGradGuard no_grad;
  EncoderConfig c = toy_config();
  c.num_layers = 1;
  c.heads = 1;
  const auto p = init_params(c, 1);
  const DomainBatch b = make_batch(0, 1, 1, {1}, 2, c.vocab_size);
  const auto out = forward(c, p, b);
  EXPECT_EQ(out.attention(0, 0, 0), Tensor::matrix({{1.0}}));
}

TEST(Encoder, PermutingPaddedPositionsLeavesLogitsUnchanged) {
  NoGradGuard no_grad;
  const EncoderConfig c = toy_config();
  auto p = init_params(c, 3);
  scramble(p, 4);
  DomainBatch b = make_batch(1, 2, 7, {4, 5}, 5, c.vocab_size);
  b.token_ids[5] = 7;
  b.token_ids[6] = 11;
  const Tensor before = forward(c, p, b).logits.value();
  std::swap(b.token_ids[5], b.token_ids[6]);
  EXPECT_EQ(forward(c, p, b).logits.value(), before);
}

TEST(Encoder, MatchesStraightLineForwardOracle) {
  NoGradGuard no_grad;
  const EncoderConfig c = toy_config();
  auto p = init_params(c, 11);
  scramble(p, 12);
  const DomainBatch b = make_batch(1, 3, 6, {6, 3, 1}, 13, c.vocab_size);
  const auto out = forward(c, p, b);
  for (std::size_t s = 0; s < b.batch; ++s) {
    const SampleTrace ref = reference_forward(c, p, b, s);
    for (std::size_t m = 0; m < c.num_layers; ++m) {
      const Tensor& h = out.hidden_states[m].value();
      for (std::size_t t = 0; t < b.len; ++t)
        for (std::size_t k = 0; k < c.hidden; ++k) EXPECT_NEAR(h.at(s * b.len + t, k), ref.hidden[m][t][k], 1e-10);
    }
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(out.logits.value().at(s, j), ref.logits[j], 1e-10);
  }
}

TEST(Encoder, AttentionRowsOverRealKeysSumToOne) {
  NoGradGuard no_grad;
  const EncoderConfig c = toy_config();
  auto p = init_params(c, 21);
  scramble(p, 22);
  const DomainBatch b = make_batch(0, 3, 8, {8, 2, 5}, 23, c.vocab_size);
  const auto out = forward(c, p, b);
  for (std::size_t m = 0; m < c.num_layers; ++m)
    for (std::size_t s = 0; s < b.batch; ++s)
      for (std::size_t h = 0; h < c.heads; ++h) {
        const Tensor a = out.attention(m, s, h);
        for (std::size_t i = 0; i < b.len; ++i) {
          double total = 0.0;
          for (std::size_t j = 0; j < b.len; ++j) {
            if (b.is_real(s, j)) total += a.at(i, j);
            else EXPECT_EQ(a.at(i, j), 0.0);
          }
          EXPECT_NEAR(total, 1.0, 1e-6);
        }
      }
}

TEST(Encoder, ChangingOneHeadLeavesTrunkAndOtherHeadsAlone) {
  NoGradGuard no_grad;
  const EncoderConfig c = toy_config();
  auto p = init_params(c, 31);
  const DomainBatch b0 = make_batch(0, 2, 6, {6, 4}, 32, c.vocab_size);
  const auto before = forward(c, p, b0);
  Var w = p.heads[1].weight;
  for (double& v : w.mutable_value().data()) v += 0.5;
  const auto after = forward(c, p, b0);
  for (std::size_t m = 0; m < c.num_layers; ++m)
    EXPECT_EQ(after.hidden_states[m].value(), before.hidden_states[m].value());
  EXPECT_EQ(after.logits.value(), before.logits.value());
}

TEST(Encoder, ForwardIsDeterministic) {
  NoGradGuard no_grad;
  const EncoderConfig c = toy_config();
  const auto p = init_params(c, 41);
  const DomainBatch b = make_batch(1, 2, 5, {5, 3}, 42, c.vocab_size);
  EXPECT_EQ(forward(c, p, b).logits.value(), forward(c, p, b).logits.value());
}

TEST(Encoder, RejectsOutOfRangeDomainAndToken) {
  NoGradGuard no_grad;
  const EncoderConfig c = toy_config();
  const auto p = init_params(c, 1);
  DomainBatch b = make_batch(2, 1, 3, {3}, 1, c.vocab_size);
  EXPECT_THROW(forward(c, p, b), DomainError);
  b.domain_id = 0;
  b.token_ids[1] = c.vocab_size;
  EXPECT_THROW(forward(c, p, b), DomainError);
}

TEST(LayerMap, UniformStride) {
  EXPECT_EQ(layer_map(4, 12), (std::vector<std::size_t>{3, 6, 9, 12}));
  EXPECT_EQ(layer_map(3, 3), (std::vector<std::size_t>{1, 2, 3}));
  EXPECT_EQ(layer_map(2, 6), (std::vector<std::size_t>{3, 6}));
}

TEST(LayerMap, IndivisibleDepthIsConfigError) {
  EXPECT_THROW(layer_map(3, 4), ConfigError);
  EXPECT_THROW(layer_map(0, 4), ConfigError);
}

TEST(InitParams, SameSeedSameValuesDifferentSeedDiffers) {
  const EncoderConfig c = toy_config();
  const auto a = init_params(c, 5), b = init_params(c, 5), d = init_params(c, 6);
  const auto na = a.named(), nb = b.named(), nd = d.named();
  bool any_diff = false;
  for (std::size_t i = 0; i < na.size(); ++i) {
    EXPECT_EQ(na[i].var.value(), nb[i].var.value()) << na[i].name;
    any_diff = any_diff || !(na[i].var.value() == nd[i].var.value());
  }
  EXPECT_TRUE(any_diff);
}

TEST(InitParams, ParameterCountMatchesClosedForm) {
  EncoderConfig c;
  c.num_layers = 2;
  c.hidden = 32;
  c.ffn_hidden = 64;
  c.heads = 2;
  c.vocab_size = 100;
  c.max_len = 16;
  c.classes_per_domain = {2, 2, 2};
  // Counted by hand: embeddings 100·32 + 16·32 + 2·32; per layer 4·(32·32+32) + 2·32
  // + (32·64+64) + (64·32+32) + 2·32; heads 3·(32·2+2).
  EXPECT_EQ(init_params(c, 0).parameter_count(), 21062u);
}

TEST(EncoderConfig, RejectsIndivisibleHeads) {
  EncoderConfig c = toy_config();
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
}
