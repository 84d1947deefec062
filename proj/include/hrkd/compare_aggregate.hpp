#pragma once

// Reference prototypes (self-attention across the domains of one level) and the
// hierarchical compare-aggregate step that mixes a domain's level-0..m
// prototypes by their similarity to its reference prototype.

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
#include "hrkd/prototypes.hpp"

namespace hrkd {

struct CompareAggregateParams {
  std::vector<Var> reference;                // per level: F×F
  std::vector<std::vector<Var>> hierarchy;   // per level and domain: F×F

  std::vector<NamedParam> named() const {
    std::vector<NamedParam> out;
    for (std::size_t m = 0; m < reference.size(); ++m) {
      out.push_back({"compare" + std::to_string(m) + ".reference", reference[m]});
      for (std::size_t d = 0; d < hierarchy[m].size(); ++d) {
        out.push_back({"compare" + std::to_string(m) + ".hierarchy" + std::to_string(d), hierarchy[m][d]});
      }
    }
    return out;
  }
};

/// Normal(0, 1/√F) entries so initial scores are O(|h|²/√F).
inline CompareAggregateParams init_compare_aggregate_params(std::size_t levels, std::size_t domains, std::size_t width,
                                                            std::uint64_t seed) {
  if (levels == 0 || domains == 0 || width == 0) throw ConfigError("compare-aggregate: empty parameter shape");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(width)));
  auto square = [&] {
    Tensor t({width, width});
    for (double& v : t.data()) v = normal(rng);
    return Var::parameter(std::move(t));
  };
  CompareAggregateParams p;
  for (std::size_t m = 0; m < levels; ++m) {
    p.reference.push_back(square());
    p.hierarchy.emplace_back();
    for (std::size_t d = 0; d < domains; ++d) p.hierarchy.back().push_back(square());
  }
  return p;
}

struct ReferenceResult {
  Var prototypes;  // D×F
  Var weights;       // D×D, rows sum to 1
};

/// weights = softmax_rows(P·W·Pᵀ) over the D prototypes P of one level; result = weights·P.
inline ReferenceResult reference_prototypes(const Var& level, const Var& weight) {
  if (!level.value().all_finite()) throw ContractError("reference_prototypes: non-finite prototypes");
  if (level.value().rank() != 2 || weight.value().rank() != 2 || weight.shape()[0] != level.shape()[1] ||
      weight.shape()[1] != level.shape()[1]) {
    throw DimensionError("reference_prototypes: prototypes " + shape_str(level.shape()) + " vs weight " +
                         shape_str(weight.shape()));
  }
  Var weights = softmax(matmul_nt(matmul(level, weight), level));
  return {matmul(weights, level), weights};
}

struct AggregateResult {
  Var prototype;  // [F]
  Var weights;      // [m+1]
};

/// weights = softmax(history·W·reference); result = weightsᵀ·history. `history` holds levels 0..m in order.
inline AggregateResult aggregate(const Var& history, const Var& reference, const Var& weight, std::size_t level) {
  if (history.value().rank() != 2 || history.shape()[0] != level + 1) {
    throw ContractError("aggregate: expected " + std::to_string(level + 1) + " prototype rows, got " +
                        shape_str(history.shape()));
  }
  const std::size_t width = history.shape()[1];
  if (reference.shape() != Shape{width} || weight.shape() != Shape{width, width}) {
    throw DimensionError("aggregate: reference " + shape_str(reference.shape()) + ", weight " +
                         shape_str(weight.shape()) + " for width " + std::to_string(width));
  }
  Var scores = reshape(matmul(matmul(history, weight), reshape(reference, {width, 1})), {level + 1});
  Var weights = softmax(scores);
  Var ap = reshape(matmul(reshape(weights, {1, level + 1}), history), {width});
  return {ap, weights};
}

/// Which parts of the hierarchy feed the graphs.
struct AggregationSwitches {
  bool self_attention = true;     // off: RP_m = h_m
  bool compare_aggregate = true;  // off: AP = mean of levels 0..m
  bool hierarchical = true;       // off: AP = h_m
};

struct AggregatedSet {
  std::vector<Var> levels;                     // AP per level: D×F
  std::vector<Var> references;                 // RP per level (D×F); empty Var when unused
  std::vector<Tensor> reference_attention;     // per level (D×D); identity when self-attention is off
  std::vector<std::vector<Tensor>> similarity; // level weights per level and domain ([m+1])
};

inline AggregatedSet build_aggregated_set(const PrototypeSet& protos, const CompareAggregateParams& params,
                                          const AggregationSwitches& sw = {}) {
  const std::size_t levels = protos.levels(), domains = protos.domains();
  if (levels == 0 || domains == 0) throw DimensionError("build_aggregated_set: empty prototype set");
  if (sw.hierarchical && sw.compare_aggregate &&
      (params.reference.size() != levels || params.hierarchy.size() != levels)) {
    throw ConfigError("build_aggregated_set: parameters for " + std::to_string(params.reference.size()) +
                      " levels, prototypes for " + std::to_string(levels));
  }
  AggregatedSet out;
  for (std::size_t m = 0; m < levels; ++m) {
    std::vector<Var> rows;
    std::vector<Tensor> sims;
    if (!sw.hierarchical) {
      Tensor onehot({m + 1}, 0.0);
      onehot[m] = 1.0;
      out.levels.push_back(protos.level(m));
      out.references.emplace_back();
      out.reference_attention.push_back(Tensor());
      out.similarity.emplace_back(domains, onehot);
      continue;
    }
    if (!sw.compare_aggregate) {
      for (std::size_t d = 0; d < domains; ++d) {
        rows.push_back(mean_rows(protos.history(m, d)));
        sims.push_back(Tensor({m + 1}, 1.0 / static_cast<double>(m + 1)));
      }
      out.levels.push_back(stack_rows(rows));
      out.references.emplace_back();
      out.reference_attention.push_back(Tensor());
      out.similarity.push_back(std::move(sims));
      continue;
    }
    Var level = protos.level(m);
    Var rp = level;
    Tensor ref_attention({domains, domains}, 0.0);
    if (sw.self_attention) {
      auto ref = reference_prototypes(level, params.reference[m]);
      rp = ref.prototypes;
      ref_attention = ref.weights.value();
    } else {
      for (std::size_t d = 0; d < domains; ++d) ref_attention.at(d, d) = 1.0;
    }
    for (std::size_t d = 0; d < domains; ++d) {
      auto agg = aggregate(protos.history(m, d), row(rp, d), params.hierarchy[m][d], m);
      rows.push_back(agg.prototype);
      sims.push_back(agg.weights.value());
    }
    out.levels.push_back(stack_rows(rows));
    out.references.push_back(rp);
    out.reference_attention.push_back(std::move(ref_attention));
    out.similarity.push_back(std::move(sims));
  }
  return out;
}

}  // namespace hrkd
