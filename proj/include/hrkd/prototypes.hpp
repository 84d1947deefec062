#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "hrkd/autodiff.hpp"
#include "hrkd/encoder.hpp"
#include "hrkd/errors.hpp"
#include "hrkd/ops.hpp"

namespace hrkd {

/// Prototypes by_level[m][d], each of width F, for m = 0..M (0 = embeddings) and d = 0..D-1.
struct PrototypeSet {
  std::vector<std::vector<Var>> by_level;

  std::size_t levels() const { return by_level.size(); }
  std::size_t domains() const { return by_level.empty() ? 0 : by_level.front().size(); }
  std::size_t width() const { return by_level.empty() ? 0 : by_level.front().front().size(); }

  /// All domains' prototypes of one level as a D×F matrix.
  Var level(std::size_t m) const { return stack_rows(by_level.at(m)); }

  /// Levels 0..m of one domain as a (m+1)×F matrix.
  Var history(std::size_t m, std::size_t d) const {
    std::vector<Var> rows;
    for (std::size_t k = 0; k <= m; ++k) rows.push_back(by_level.at(k).at(d));
    return stack_rows(rows);
  }
};

/// Mean over every unmasked token of a batch of [(B·L)×F] states.
inline Var masked_token_mean(const Var& states, const DomainBatch& batch) {
  const std::size_t count = batch.real_token_count();
  if (count == 0) {
    throw DomainError("prototype: domain " + std::to_string(batch.domain_id) + " batch has no unmasked tokens");
  }
  std::vector<double> weights(batch.attention_mask.size());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    weights[i] = batch.attention_mask[i] ? 1.0 / static_cast<double>(count) : 0.0;
  }
  return weighted_row_sum(states, std::move(weights));
}

/// Prototypes from the student's per-domain outputs on the current batches.
/// With `detach`, gradients do not flow back into the encoder.
inline PrototypeSet compute_prototypes(const std::vector<EncoderOutput>& outputs, const std::vector<DomainBatch>& batches,
                                       bool detach = false) {
  if (outputs.empty() || outputs.size() != batches.size()) {
    throw DimensionError("compute_prototypes: " + std::to_string(outputs.size()) + " outputs for " +
                         std::to_string(batches.size()) + " batches");
  }
  const std::size_t layers = outputs.front().hidden_states.size();
  PrototypeSet set;
  set.by_level.assign(layers + 1, {});
  for (std::size_t d = 0; d < outputs.size(); ++d) {
    if (batches[d].batch == 0) throw DomainError("compute_prototypes: empty batch for domain " + std::to_string(d));
    const auto& out = outputs[d];
    if (out.hidden_states.size() != layers) throw DimensionError("compute_prototypes: layer count differs across domains");
    auto source = [&](const Var& v) { return detach ? v.detach() : v; };
    set.by_level[0].push_back(masked_token_mean(source(out.embeddings), batches[d]));
    for (std::size_t m = 1; m <= layers; ++m) {
      set.by_level[m].push_back(masked_token_mean(source(out.hidden_states[m - 1]), batches[d]));
    }
  }
  return set;
}

}  // namespace hrkd
