#pragma once

// A small end-to-end distillation problem for finite-difference gradient checks:
// every individual loss term, both totals, and the full objective with graph and
// compare-aggregate parameters.

#include <random>
#include <string>
#include <vector>

#include "hrkd/grad_check.hpp"
#include "hrkd/trainer.hpp"

namespace hrkd {

struct GradProblem {
  RunConfig cfg;
  TeacherModel teacher;
  StudentModel student;
  std::vector<DomainBatch> batches;
};

namespace detail {

inline void jitter(const std::vector<NamedParam>& params, std::mt19937_64& rng, double width) {
  std::uniform_real_distribution<double> u(-width, width);
  for (const auto& p : params) {
    Var v = p.var;
    for (double& x : v.mutable_value().data()) x += u(rng);
  }
}

}  // namespace detail

/// D domains, M student layers of width F; teacher has 2M layers of width F + 4.
inline GradProblem make_grad_problem(std::size_t domains = 2, std::size_t layers = 2, std::size_t width = 8,
                                     std::uint64_t seed = 0) {
  GradProblem p;
  RunConfig& c = p.cfg;
  c.seed = seed;
  c.max_len = 5;
  c.batch_size = 2;
  c.teacher = {2 * layers, width + 4, 2 * (width + 4), 2, 0, c.max_len, {}};
  c.student = {layers, width, 2 * width, 2, 0, c.max_len, {}};
  c.gat_heads = 2;
  c.temperature = 1.5;
  std::vector<std::size_t> classes;
  for (std::size_t d = 0; d < domains; ++d) classes.push_back(2 + d % 2);
  c.bind(12, classes);
  c.validate();

  p.teacher.config = c.teacher;
  p.teacher.params = init_params(c.teacher, component_seed(seed, "grad.teacher"));
  p.student = init_student(c, c.student, c.teacher);

  // Move away from the tiny initial scale so every nonlinearity is exercised.
  std::mt19937_64 rng(component_seed(seed, "grad.jitter"));
  detail::jitter(p.teacher.params.named(), rng, 0.5);
  detail::jitter(p.student.named(), rng, 0.3);
  p.teacher.params.set_trainable(false);

  std::uniform_int_distribution<std::size_t> tok(3, 11);
  for (std::size_t d = 0; d < domains; ++d) {
    DomainBatch b;
    b.domain_id = d;
    b.batch = c.batch_size;
    b.len = c.max_len;
    for (std::size_t s = 0; s < b.batch; ++s) {
      const std::size_t real = c.max_len - s - d % 2;  // some padding in most rows
      for (std::size_t t = 0; t < b.len; ++t) {
        b.token_ids.push_back(t == 0 ? Vocabulary::kCls : (t < real ? tok(rng) : Vocabulary::kPad));
        b.attention_mask.push_back(t < real ? 1 : 0);
      }
      b.labels.push_back(0);
    }
    p.batches.push_back(std::move(b));
  }
  return p;
}

struct GradSuiteResult {
  std::string name;
  GradCheckReport report;
};

/// Checks each loss term, both totals and the full objective. `include_totals_only`
/// skips the per-term checks (faster, used by the CLI's quick mode).
inline std::vector<GradSuiteResult> run_grad_suite(GradProblem& p, double h = 1e-5, double tol = 1e-4,
                                                   bool include_totals_only = false) {
  std::vector<GradSuiteResult> out;
  auto encoder_and_projection = p.student.encoder.named();
  encoder_and_projection.push_back({"proj.embd", p.student.proj_embd});
  for (std::size_t m = 0; m < p.student.proj_hidn.size(); ++m) {
    encoder_and_projection.push_back({"proj.hidn" + std::to_string(m + 1), p.student.proj_hidn[m]});
  }
  const auto all = p.student.named();
  const std::size_t D = p.batches.size(), M = p.cfg.student.num_layers;

  auto objective = [&p](const RunConfig& cfg) { return distill_objective(cfg, p.teacher, p.student, p.batches); };

  if (!include_totals_only) {
    using Pick = std::function<Var(const StepGraph&)>;
    std::vector<std::pair<std::string, Pick>> terms;
    for (std::size_t d = 0; d < D; ++d) {
      const std::string ds = "[d" + std::to_string(d) + "]";
      terms.emplace_back("embd" + ds, [d](const StepGraph& g) { return g.components.embd[d]; });
      for (std::size_t m = 0; m < M; ++m) {
        const std::string ms = "[m" + std::to_string(m + 1) + "]";
        terms.emplace_back("attn" + ms + ds, [m, d](const StepGraph& g) { return g.components.attn[m][d]; });
        terms.emplace_back("hidn" + ms + ds, [m, d](const StepGraph& g) { return g.components.hidn[m][d]; });
      }
      terms.emplace_back("pred" + ds, [d](const StepGraph& g) { return g.components.pred[d]; });
    }
    RunConfig base = p.cfg;
    base.mode = DistillMode::base_kd;
    for (const auto& [name, pick] : terms) {
      out.push_back({name, grad_check([&, pick = pick] { return pick(objective(base)); }, encoder_and_projection, h, tol)});
    }
    out.push_back({"total_base", grad_check([&] { return objective(base).total; }, encoder_and_projection, h, tol)});
  }
  RunConfig hrkd = p.cfg;
  hrkd.mode = DistillMode::hrkd;
  out.push_back({"total_hrkd (full objective)", grad_check([&] { return objective(hrkd).total; }, all, h, tol)});
  return out;
}

}  // namespace hrkd
