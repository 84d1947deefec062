#pragma once

// Domain-relational graphs: one two-layer graph attention network per student
// level over a complete graph (self-loops included) of D domain nodes. The first
// layer is multi-head with concatenated ELU outputs; the second maps every node to
// a scalar and a softmax across nodes yields the ratio row r_m.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "hrkd/autodiff.hpp"
#include "hrkd/errors.hpp"
#include "hrkd/grad_check.hpp"
#include "hrkd/ops.hpp"

namespace hrkd {

inline constexpr double kGatLeakySlope = 0.2;

struct GatHead {
  Var weight;     // F′ × F
  Var attention;  // 2F′
};

struct GraphLevelParams {
  std::vector<GatHead> heads;  // K first-layer heads
  Var out_weight;              // 1 × K·F′
  Var out_attention;           // 2

  std::size_t num_heads() const { return heads.size(); }
  std::size_t head_width() const { return heads.front().weight.shape()[0]; }
  std::size_t input_width() const { return heads.front().weight.shape()[1]; }
};

struct GraphParams {
  std::vector<GraphLevelParams> levels;  // one per student level m = 0..M

  std::vector<NamedParam> named() const {
    std::vector<NamedParam> out;
    for (std::size_t m = 0; m < levels.size(); ++m) {
      const std::string pre = "graph" + std::to_string(m) + ".";
      for (std::size_t k = 0; k < levels[m].heads.size(); ++k) {
        out.push_back({pre + "head" + std::to_string(k) + ".weight", levels[m].heads[k].weight});
        out.push_back({pre + "head" + std::to_string(k) + ".attention", levels[m].heads[k].attention});
      }
      out.push_back({pre + "out.weight", levels[m].out_weight});
      out.push_back({pre + "out.attention", levels[m].out_attention});
    }
    return out;
  }
};

/// Glorot-uniform initialization for every level's graph.
inline GraphParams init_graph_params(std::size_t levels, std::size_t input_width, std::size_t head_width,
                                     std::size_t num_heads, std::uint64_t seed) {
  if (levels == 0 || input_width == 0 || head_width == 0 || num_heads == 0) {
    throw ConfigError("graph: levels, F, F′ and K must all be >= 1");
  }
  std::mt19937_64 rng(seed);
  auto glorot = [&](Shape shape, std::size_t fan_in, std::size_t fan_out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = u(rng);
    return Var::parameter(std::move(t));
  };
  GraphParams p;
  for (std::size_t m = 0; m < levels; ++m) {
    GraphLevelParams lp;
    for (std::size_t k = 0; k < num_heads; ++k) {
      lp.heads.push_back({glorot({head_width, input_width}, input_width, head_width),
                          glorot({2 * head_width}, 2 * head_width, 1)});
    }
    lp.out_weight = glorot({1, num_heads * head_width}, num_heads * head_width, 1);
    lp.out_attention = glorot({2}, 2, 1);
    p.levels.push_back(std::move(lp));
  }
  return p;
}

/// Attention coefficients captured during a forward pass (values only).
struct GatTrace {
  std::vector<Tensor> first_attention;  // K tensors of D×D
  Tensor second_attention;              // D×D
  Tensor scores;                    // [D] pre-softmax node scores
};

namespace detail {

inline void require_finite(const Var& x, const char* where) {
  if (!x.value().all_finite()) throw ContractError(std::string(where) + ": non-finite input");
}

/// Row i: softmax over j of LeakyReLU(src_i + dst_j), for per-node source/destination terms.
inline Var gat_coefficients(const Var& src, const Var& dst) {
  return softmax(leaky_relu(outer_add(src, dst), kGatLeakySlope));
}

}  // namespace detail

/// h: D×F node features -> D×(K·F′), heads concatenated after ELU.
inline Var gat_first_layer(const Var& h, const GraphLevelParams& params, GatTrace* trace = nullptr) {
  detail::require_finite(h, "gat_first_layer");
  if (h.value().rank() != 2 || h.shape()[1] != params.input_width()) {
    throw DimensionError("gat_first_layer: features " + shape_str(h.shape()) + " vs weight " +
                         shape_str(params.heads.front().weight.shape()));
  }
  const std::size_t nodes = h.shape()[0];
  const std::size_t fp = params.head_width();
  std::vector<Var> outputs;
  for (const auto& head : params.heads) {
    Var z = matmul_nt(h, head.weight);  // row i = W·h_i
    Var a_src = reshape(slice_rows(head.attention, 0, fp), {fp, 1});
    Var a_dst = reshape(slice_rows(head.attention, fp, fp), {fp, 1});
    Var src = reshape(matmul(z, a_src), {nodes});
    Var dst = reshape(matmul(z, a_dst), {nodes});
    Var weights = detail::gat_coefficients(src, dst);
    if (trace) trace->first_attention.push_back(weights.value());
    outputs.push_back(elu(matmul(weights, z)));
  }
  return outputs.size() == 1 ? outputs.front() : concat_cols(outputs);
}

/// h′: D×(K·F′) -> ratio row [D] (positive, sums to 1).
inline Var gat_second_layer(const Var& hp, const GraphLevelParams& params, GatTrace* trace = nullptr) {
  detail::require_finite(hp, "gat_second_layer");
  if (hp.value().rank() != 2 || hp.shape()[1] != params.out_weight.shape()[1]) {
    throw DimensionError("gat_second_layer: features " + shape_str(hp.shape()) + " vs weight " +
                         shape_str(params.out_weight.shape()));
  }
  const std::size_t nodes = hp.shape()[0];
  Var z = matmul_nt(hp, params.out_weight);  // D×1, row i = W′·h′_i
  Var zv = reshape(z, {nodes});
  Var src = scale_by(zv, element(params.out_attention, 0));
  Var dst = scale_by(zv, element(params.out_attention, 1));
  Var weights = detail::gat_coefficients(src, dst);
  Var scores = reshape(elu(matmul(weights, z)), {nodes});
  if (trace) {
    trace->second_attention = weights.value();
    trace->scores = scores.value();
  }
  return softmax(scores);
}

/// Ratio matrix (M+1)×D from per-level node features (each D×F).
inline Var compute_ratios(const std::vector<Var>& level_features, const GraphParams& params,
                          std::vector<GatTrace>* traces = nullptr) {
  if (level_features.size() != params.levels.size()) {
    throw ConfigError("compute_ratios: " + std::to_string(level_features.size()) + " levels of features for " +
                      std::to_string(params.levels.size()) + " graphs");
  }
  std::vector<Var> rows;
  if (traces) traces->assign(level_features.size(), {});
  for (std::size_t m = 0; m < level_features.size(); ++m) {
    GatTrace* t = traces ? &(*traces)[m] : nullptr;
    rows.push_back(gat_second_layer(gat_first_layer(level_features[m], params.levels[m], t), params.levels[m], t));
  }
  return stack_rows(rows);
}

}  // namespace hrkd
