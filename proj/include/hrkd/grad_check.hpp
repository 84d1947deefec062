#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "hrkd/autodiff.hpp"
#include "hrkd/errors.hpp"

namespace hrkd {

struct NamedParam {
  std::string name;
  Var var;
};

struct GradCheckEntry {
  std::string name;
  std::size_t elements = 0;
  double max_deviation = 0.0;
  std::size_t worst_index = 0;
  double worst_autodiff = 0.0;
  double worst_numeric = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_deviation = 0.0;
  double tol = 0.0;
  bool passed = false;
};

/// Deviation between an analytic and a numeric derivative, relative to the larger
/// magnitude. `floor` keeps near-zero gradients from amplifying roundoff.
inline double relative_deviation(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares autodiff gradients of the scalar `f` against central differences
/// (f(p+h) − f(p−h)) / 2h for every element of every parameter.
inline GradCheckReport grad_check(const std::function<Var()>& f, const std::vector<NamedParam>& params,
                                  double h = 1e-5, double tol = 1e-4, double floor = 1e-5) {
  if (!(h > 0.0)) throw DomainError("grad_check: step h must be positive");
  auto eval = [&] {
    NoGradGuard no_grad;
    return f().item();
  };
  const double first = eval();
  const double second = eval();
  if (first != second) {
    throw ContractError("grad_check: function is not deterministic (" + std::to_string(first) + " vs " +
                        std::to_string(second) + ")");
  }

  std::vector<Var> vars;
  for (const auto& p : params) {
    vars.push_back(p.var);
    vars.back().zero_grad();
    if (!p.var.requires_grad()) throw ContractError("grad_check: parameter '" + p.name + "' does not require grad");
  }
  std::vector<Tensor> analytic;
  {
    Tape tape;
    Var loss = f();
    backward(loss);
    for (const auto& v : vars) analytic.push_back(v.grad());
  }

  GradCheckReport report;
  report.tol = tol;
  for (std::size_t k = 0; k < params.size(); ++k) {
    GradCheckEntry entry;
    entry.name = params[k].name;
    Tensor& value = vars[k].mutable_value();
    entry.elements = value.size();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      value[i] = saved + h;
      const double up = eval();
      value[i] = saved - h;
      const double down = eval();
      value[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double dev = relative_deviation(analytic[k][i], numeric, floor);
      if (dev > entry.max_deviation || i == 0) {
        entry.max_deviation = std::max(entry.max_deviation, dev);
        entry.worst_index = i;
        entry.worst_autodiff = analytic[k][i];
        entry.worst_numeric = numeric;
      }
    }
    report.max_deviation = std::max(report.max_deviation, entry.max_deviation);
    report.entries.push_back(std::move(entry));
  }
  for (auto& v : vars) v.zero_grad();
  report.passed = report.max_deviation < tol;
  return report;
}

}  // namespace hrkd
