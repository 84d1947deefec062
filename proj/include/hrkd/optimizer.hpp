#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "hrkd/autodiff.hpp"
#include "hrkd/errors.hpp"
#include "hrkd/grad_check.hpp"

namespace hrkd {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double warmup_fraction = 0.1;
  std::size_t total_steps = 1;
};

/// Linear warmup to the peak rate, then linear decay to zero at total_steps.
inline double scheduled_lr(const AdamConfig& c, std::size_t step) {
  const auto total = static_cast<double>(std::max<std::size_t>(c.total_steps, 1));
  const double warm = std::floor(c.warmup_fraction * total);
  const double s = static_cast<double>(step);
  if (s < warm) return c.lr * (s + 1.0) / warm;
  if (total <= warm) return c.lr;
  return c.lr * std::max(0.0, (total - s) / (total - warm));
}

class Adam {
 public:
  Adam(std::vector<NamedParam> params, AdamConfig config) : params_(std::move(params)), config_(config) {
    if (!(config_.lr > 0.0)) throw ConfigError("adam: learning rate must be positive");
    if (!(config_.warmup_fraction >= 0.0 && config_.warmup_fraction < 1.0)) {
      throw ConfigError("adam: warmup_fraction must lie in [0, 1)");
    }
    for (const auto& p : params_) {
      m_.emplace_back(p.var.shape(), 0.0);
      v_.emplace_back(p.var.shape(), 0.0);
    }
  }

  std::size_t steps_taken() const { return step_; }
  double current_lr() const { return scheduled_lr(config_, step_); }

  /// One bias-corrected update from the gradients currently stored on the parameters.
  void step() {
    const double lr = current_lr();
    ++step_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Var& p = params_[i].var;
      if (!p.has_grad()) continue;
      const Tensor g = p.grad();
      if (!g.all_finite()) throw DomainError("adam: non-finite gradient for " + params_[i].name);
      auto w = p.mutable_value().data();
      auto m = m_[i].data();
      auto v = v_[i].data();
      for (std::size_t k = 0; k < w.size(); ++k) {
        m[k] = config_.beta1 * m[k] + (1.0 - config_.beta1) * g[k];
        v[k] = config_.beta2 * v[k] + (1.0 - config_.beta2) * g[k] * g[k];
        w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + config_.eps);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
  }

 private:
  std::vector<NamedParam> params_;
  AdamConfig config_;
  std::vector<Tensor> m_, v_;
  std::size_t step_ = 0;
};

}  // namespace hrkd
