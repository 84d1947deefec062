#pragma once

// Distillation losses between a student and a teacher encoder, and the two
// ways of combining them: the plain multi-domain sum and the ratio-weighted sum.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "hrkd/autodiff.hpp"
#include "hrkd/errors.hpp"
#include "hrkd/ops.hpp"

namespace hrkd {

/// MSE(E_S·W_embd, E_T) over all elements.
inline Var embed_loss(const Var& student, const Var& projection, const Var& teacher) {
  if (student.value().rank() != 2 || projection.value().rank() != 2 || teacher.value().rank() != 2 ||
      student.shape()[1] != projection.shape()[0] || projection.shape()[1] != teacher.shape()[1] ||
      student.shape()[0] != teacher.shape()[0]) {
    throw DimensionError("embed/hidn loss: student " + shape_str(student.shape()) + ", projection " +
                         shape_str(projection.shape()) + ", teacher " + shape_str(teacher.shape()));
  }
  return mse(matmul(student, projection), teacher);
}

/// Per-layer hidden-state loss; same form as embed_loss with the layer's projection.
inline Var hidn_loss(const Var& student, const Var& projection, const Var& teacher) {
  return embed_loss(student, projection, teacher);
}

/// Soft cross-entropy −Σ_c softmax(z_T/t)·log softmax(z_S/t), averaged over rows.
/// Accepts a single logit vector [C] or a batch [B×C].
inline Var pred_loss(const Var& student_logits, const Var& teacher_logits, double temperature) {
  if (!(temperature > 0.0)) throw DomainError("pred_loss: temperature must be positive");
  if (student_logits.shape() != teacher_logits.shape()) {
    throw DimensionError("pred_loss: logits " + shape_str(student_logits.shape()) + " vs " +
                         shape_str(teacher_logits.shape()));
  }
  Var zs = student_logits, zt = teacher_logits;
  if (zs.value().rank() == 1) {
    zs = reshape(zs, {1, zs.size()});
    zt = reshape(zt, {1, zt.size()});
  }
  if (zs.value().rank() != 2) throw DimensionError("pred_loss: logits must be [C] or [B×C]");
  const double rows = static_cast<double>(zs.shape()[0]);
  Var target = softmax(scale(zt, 1.0 / temperature));
  Var log_probs = log_softmax(scale(zs, 1.0 / temperature));
  return scale(sum(mul(target, log_probs)), -1.0 / rows);
}

/// Mean over heads of per-head MSE between attention maps.
inline Var attn_loss(const std::vector<Var>& student_heads, const std::vector<Var>& teacher_heads) {
  if (student_heads.size() != teacher_heads.size() || student_heads.empty()) {
    throw DimensionError("attn_loss: head count " + std::to_string(student_heads.size()) + " vs " +
                         std::to_string(teacher_heads.size()));
  }
  Var total = mse(student_heads[0], teacher_heads[0]);
  for (std::size_t i = 1; i < student_heads.size(); ++i) total = add(total, mse(student_heads[i], teacher_heads[i]));
  return scale(total, 1.0 / static_cast<double>(student_heads.size()));
}

/// Stacked form: (B·h)×L×L maps with equal head layout; every head has the same
/// element count, so the stacked MSE equals the mean of per-head MSEs.
inline Var attn_loss(const Var& student_stack, const Var& teacher_stack) {
  if (student_stack.shape() != teacher_stack.shape()) {
    throw DimensionError("attn_loss: attention stacks " + shape_str(student_stack.shape()) + " vs " +
                         shape_str(teacher_stack.shape()) + " (head count or length mismatch)");
  }
  return mse(student_stack, teacher_stack);
}

/// Per-domain, per-layer distillation losses. Layer index m runs 1..M and is
/// stored 0-based.
struct LossBreakdown {
  std::vector<Var> embd;               // [D]
  std::vector<std::vector<Var>> attn;  // [M][D]
  std::vector<std::vector<Var>> hidn;  // [M][D]
  std::vector<Var> pred;               // [D]

  std::size_t domains() const { return embd.size(); }
  std::size_t layers() const { return attn.size(); }

  void validate() const {
    const std::size_t d = embd.size();
    if (d == 0 || pred.size() != d || hidn.size() != attn.size()) {
      throw ContractError("LossBreakdown: inconsistent component counts");
    }
    for (std::size_t m = 0; m < attn.size(); ++m) {
      if (attn[m].size() != d || hidn[m].size() != d) throw ContractError("LossBreakdown: layer row size mismatch");
    }
  }

  /// Builds a breakdown from plain numbers (tests, what-if computations).
  static LossBreakdown constant(const std::vector<double>& embd, const std::vector<std::vector<double>>& attn,
                                const std::vector<std::vector<double>>& hidn, const std::vector<double>& pred) {
    LossBreakdown b;
    for (double v : embd) b.embd.emplace_back(Tensor::scalar(v));
    for (const auto& row : attn) {
      b.attn.emplace_back();
      for (double v : row) b.attn.back().emplace_back(Tensor::scalar(v));
    }
    for (const auto& row : hidn) {
      b.hidn.emplace_back();
      for (double v : row) b.hidn.back().emplace_back(Tensor::scalar(v));
    }
    for (double v : pred) b.pred.emplace_back(Tensor::scalar(v));
    return b;
  }
};

/// Σ_d [ embd_d + Σ_m (attn_md + hidn_md) + γ·pred_d ].
inline Var total_base(const LossBreakdown& c, double pred_weight) {
  c.validate();
  Var total;
  for (std::size_t d = 0; d < c.domains(); ++d) {
    Var term = c.embd[d];
    for (std::size_t m = 0; m < c.layers(); ++m) term = add(term, add(c.attn[m][d], c.hidn[m][d]));
    term = add(term, scale(c.pred[d], pred_weight));
    total = d == 0 ? term : add(total, term);
  }
  return total;
}

/// Checks that r is (M+1)×D with unit row sums.
inline void check_ratio_rows(const Tensor& r, std::size_t layers_plus_one, std::size_t domains, double tol = 1e-6) {
  if (r.rank() != 2 || r.dim(0) != layers_plus_one || r.dim(1) != domains) {
    throw ContractError("ratio matrix must be " + std::to_string(layers_plus_one) + "x" + std::to_string(domains) +
                        ", got " + shape_str(r.shape()));
  }
  for (std::size_t m = 0; m < layers_plus_one; ++m) {
    double s = 0.0;
    for (std::size_t d = 0; d < domains; ++d) s += r.at(m, d);
    if (std::abs(s - 1.0) > tol) {
      throw ContractError("ratio row " + std::to_string(m) + " sums to " + std::to_string(s) + ", not 1");
    }
  }
}

/// Σ_d [ r_0d·embd_d + Σ_m r_md·(attn_md + hidn_md) + (γ/D)·pred_d ].
/// `ratios` is a (M+1)×D Var so gradients reach whatever produced it.
inline Var total_hrkd(const LossBreakdown& c, const Var& ratios, double pred_weight) {
  c.validate();
  const std::size_t D = c.domains(), M = c.layers();
  check_ratio_rows(ratios.value(), M + 1, D);
  const double shared_pred_weight = pred_weight / static_cast<double>(D);
  Var total;
  for (std::size_t d = 0; d < D; ++d) {
    Var term = mul(element(ratios, d), c.embd[d]);
    for (std::size_t m = 0; m < M; ++m) {
      term = add(term, mul(element(ratios, (m + 1) * D + d), add(c.attn[m][d], c.hidn[m][d])));
    }
    term = add(term, scale(c.pred[d], shared_pred_weight));
    total = d == 0 ? term : add(total, term);
  }
  return total;
}

/// Uniform ratio matrix, every entry 1/D.
inline Var uniform_ratios(std::size_t layers_plus_one, std::size_t domains) {
  return Var(Tensor({layers_plus_one, domains}, 1.0 / static_cast<double>(domains)));
}

}  // namespace hrkd
