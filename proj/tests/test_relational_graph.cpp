#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "hrkd/relational_graph.hpp"
#include "oracles.hpp"

using namespace hrkd;

namespace {

std::vector<oracle::Mat> head_weights(const GraphLevelParams& p) {
  std::vector<oracle::Mat> out;
  for (const auto& h : p.heads) out.push_back(oracle::to_mat(h.weight.value()));
  return out;
}

std::vector<oracle::Vec> head_attention(const GraphLevelParams& p) {
  std::vector<oracle::Vec> out;
  for (const auto& h : p.heads) out.push_back(oracle::to_vec(h.attention.value()));
  return out;
}

Tensor identical_rows(std::size_t n, const Tensor& row) {
  Tensor t({n, row.size()});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < row.size(); ++k) t.at(i, k) = row[k];
  return t;
}

double row_sum(const Tensor& t, std::size_t i) {
  double s = 0.0;
  for (std::size_t j = 0; j < t.dim(1); ++j) s += t.at(i, j);
  return s;
}

}  // namespace

TEST(GatFirstLayer, SingleNodeAttendsToItself) {
  NoGradGuard ng;
  const auto params = init_graph_params(1, 4, 3, 2, 1);
  std::mt19937_64 rng(2);
  const Tensor h = oracle::random_tensor({1, 4}, rng);
  GatTrace trace;
  const Tensor out = gat_first_layer(Var(h), params.levels[0], &trace).value();
  ASSERT_EQ(out.shape(), (Shape{1, 6}));
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_EQ(trace.first_attention[k], Tensor::matrix({{1.0}}));
    const auto w = oracle::to_mat(params.levels[0].heads[k].weight.value());
    for (std::size_t r = 0; r < 3; ++r) {
      double z = 0.0;
      for (std::size_t c = 0; c < 4; ++c) z += w[r][c] * h[c];
      EXPECT_NEAR(out.at(0, k * 3 + r), oracle::elu(z), 1e-14);
    }
  }
}

TEST(GatFirstLayer, IdenticalInputsGiveUniformAttentionAndEqualOutputs) {
  NoGradGuard ng;
  const auto params = init_graph_params(1, 5, 2, 3, 3);
  std::mt19937_64 rng(4);
  const Tensor h = identical_rows(4, oracle::random_tensor({5}, rng));
  GatTrace trace;
  const Tensor out = gat_first_layer(Var(h), params.levels[0], &trace).value();
  for (const auto& a : trace.first_attention)
    for (double v : a.data()) EXPECT_DOUBLE_EQ(v, 0.25);
  for (std::size_t i = 1; i < 4; ++i)
    for (std::size_t c = 0; c < out.dim(1); ++c) EXPECT_EQ(out.at(i, c), out.at(0, c));
}

TEST(GatFirstLayer, MatchesNestedLoopOracle) {
  NoGradGuard ng;
  const auto params = init_graph_params(1, 6, 4, 2, 5);
  std::mt19937_64 rng(6);
  const Tensor h = oracle::random_tensor({3, 6}, rng, 2.0);
  const auto expected = oracle::gat_first(oracle::to_mat(h), head_weights(params.levels[0]),
                                          head_attention(params.levels[0]));
  EXPECT_LE(oracle::max_abs_diff(oracle::to_mat(gat_first_layer(Var(h), params.levels[0]).value()), expected), 1e-10);
}

TEST(GatFirstLayer, NonFiniteInputIsContractError) {
  NoGradGuard ng;
  const auto params = init_graph_params(1, 2, 2, 1, 7);
  Tensor h({2, 2}, 0.0);
  h[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(gat_first_layer(Var(h), params.levels[0]), ContractError);
  EXPECT_THROW(gat_first_layer(Var(Tensor({2, 3})), params.levels[0]), DimensionError);
}

TEST(GatSecondLayer, SingleNodeRatioIsOne) {
  NoGradGuard ng;
  const auto params = init_graph_params(1, 4, 2, 2, 8);
  std::mt19937_64 rng(9);
  EXPECT_EQ(gat_second_layer(Var(oracle::random_tensor({1, 4}, rng)), params.levels[0]).value(),
            Tensor::vector({1.0}));
}

TEST(GatSecondLayer, IdenticalNodesGiveUniformRatios) {
  NoGradGuard ng;
  const auto params = init_graph_params(1, 4, 2, 2, 10);
  std::mt19937_64 rng(11);
  const Tensor r = gat_second_layer(Var(identical_rows(5, oracle::random_tensor({4}, rng))), params.levels[0]).value();
  for (double v : r.data()) EXPECT_NEAR(v, 0.2, 1e-15);
}

TEST(GatSecondLayer, MatchesNestedLoopOracleAndSumsToOne) {
  NoGradGuard ng;
  const auto params = init_graph_params(1, 3, 3, 2, 12);
  std::mt19937_64 rng(13);
  const Tensor hp = oracle::random_tensor({4, 6}, rng, 2.0);
  const auto& lp = params.levels[0];
  const auto expected = oracle::gat_second(oracle::to_mat(hp), oracle::to_vec(lp.out_weight.value()),
                                           oracle::to_vec(lp.out_attention.value()));
  GatTrace trace;
  const Tensor r = gat_second_layer(Var(hp), lp, &trace).value();
  EXPECT_LE(oracle::max_abs_diff(oracle::to_vec(r), expected), 1e-10);
  double s = 0.0;
  for (double v : r.data()) {
    EXPECT_GT(v, 0.0);
    s += v;
  }
  EXPECT_NEAR(s, 1.0, 1e-12);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(row_sum(trace.second_attention, i), 1.0, 1e-12);
}

TEST(ComputeRatios, IdenticalPerDomainFeaturesGiveUniformRows) {
  NoGradGuard ng;
  const auto params = init_graph_params(3, 4, 2, 2, 14);
  std::mt19937_64 rng(15);
  std::vector<Var> feats;
  for (int m = 0; m < 3; ++m) feats.emplace_back(identical_rows(3, oracle::random_tensor({4}, rng)));
  const Tensor r = compute_ratios(feats, params).value();
  ASSERT_EQ(r.shape(), (Shape{3, 3}));
  for (double v : r.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(ComputeRatios, MatchesComposedOracle) {
  NoGradGuard ng;
  const auto params = init_graph_params(2, 5, 3, 2, 16);
  std::mt19937_64 rng(17);
  std::vector<Var> feats{Var(oracle::random_tensor({2, 5}, rng)), Var(oracle::random_tensor({2, 5}, rng))};
  std::vector<GatTrace> traces;
  const Tensor r = compute_ratios(feats, params, &traces).value();
  ASSERT_EQ(traces.size(), 2u);
  for (std::size_t m = 0; m < 2; ++m) {
    const auto& lp = params.levels[m];
    const auto hp = oracle::gat_first(oracle::to_mat(feats[m].value()), head_weights(lp), head_attention(lp));
    const auto expected = oracle::gat_second(hp, oracle::to_vec(lp.out_weight.value()),
                                             oracle::to_vec(lp.out_attention.value()));
    for (std::size_t d = 0; d < 2; ++d) EXPECT_NEAR(r.at(m, d), expected[d], 1e-10);
    EXPECT_NEAR(row_sum(r, m), 1.0, 1e-9);
  }
}

TEST(ComputeRatios, LevelCountMismatchIsConfigError) {
  NoGradGuard ng;
  const auto params = init_graph_params(3, 4, 2, 2, 18);
  EXPECT_THROW(compute_ratios({Var(Tensor({2, 4}))}, params), ConfigError);
}

TEST(ComputeRatios, PermutingDomainsPermutesRatios) {
  NoGradGuard ng;
  const auto params = init_graph_params(1, 4, 3, 2, 19);
  std::mt19937_64 rng(20);
  const Tensor h = oracle::random_tensor({4, 4}, rng, 2.0);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  Tensor hp({4, 4});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k = 0; k < 4; ++k) hp.at(i, k) = h.at(perm[i], k);
  const Tensor r = compute_ratios({Var(h)}, params).value();
  const Tensor rp = compute_ratios({Var(hp)}, params).value();
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(rp.at(0, i), r.at(0, perm[i]), 1e-14);
}

TEST(ComputeRatios, GradientsPassGradCheck) {
  const auto params = init_graph_params(2, 4, 2, 2, 21);
  std::mt19937_64 rng(22);
  Var h0 = Var::parameter(oracle::random_tensor({3, 4}, rng));
  Var h1 = Var::parameter(oracle::random_tensor({3, 4}, rng));
  const Tensor weights = oracle::random_tensor({2, 3}, rng);
  auto named = params.named();
  named.push_back({"h0", h0});
  named.push_back({"h1", h1});
  const auto report = grad_check([&] { return sum(mul(compute_ratios({h0, h1}, params), Var(weights))); }, named);
  EXPECT_TRUE(report.passed) << report.max_deviation;
}

TEST(GraphParams, InitIsDeterministicAndShaped) {
  const auto a = init_graph_params(2, 8, 4, 2, 5), b = init_graph_params(2, 8, 4, 2, 5);
  const auto na = a.named(), nb = b.named();
  ASSERT_EQ(na.size(), 2u * (2 * 2 + 2));
  for (std::size_t i = 0; i < na.size(); ++i) EXPECT_EQ(na[i].var.value(), nb[i].var.value());
  EXPECT_EQ(a.levels[0].heads[0].weight.shape(), (Shape{4, 8}));
  EXPECT_EQ(a.levels[0].heads[0].attention.shape(), (Shape{8}));
  EXPECT_EQ(a.levels[0].out_weight.shape(), (Shape{1, 8}));
  EXPECT_EQ(a.levels[0].out_attention.shape(), (Shape{2}));
}
