#pragma once

// Differentiable primitives. Every op returns a fresh value; when an input takes
// part in differentiation the result is recorded on the active Tape.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "hrkd/autodiff.hpp"
#include "hrkd/errors.hpp"
#include "hrkd/tensor.hpp"

namespace hrkd {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// c (+)= op(a)·op(b) with op(a): p×q and op(b): q×r, all row-major.
inline void gemm(const double* a, bool trans_a, const double* b, bool trans_b, double* c, std::size_t p,
                 std::size_t q, std::size_t r, bool accumulate) {
  using CMap = Eigen::Map<const RowMat>;
  const auto ip = static_cast<Eigen::Index>(p);
  const auto iq = static_cast<Eigen::Index>(q);
  const auto ir = static_cast<Eigen::Index>(r);
  Eigen::Map<RowMat> cm(c, ip, ir);
  if (!accumulate) cm.setZero();
  if (!trans_a && !trans_b) {
    cm.noalias() += CMap(a, ip, iq) * CMap(b, iq, ir);
  } else if (!trans_a && trans_b) {
    cm.noalias() += CMap(a, ip, iq) * CMap(b, ir, iq).transpose();
  } else if (trans_a && !trans_b) {
    cm.noalias() += CMap(a, iq, ip).transpose() * CMap(b, iq, ir);
  } else {
    cm.noalias() += CMap(a, iq, ip).transpose() * CMap(b, ir, iq).transpose();
  }
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

inline void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
  }
}

inline Tensor* grad_of(Node& n, std::size_t i) {
  auto& in = *n.inputs[i];
  return in.requires_grad ? &in.grad_buffer() : nullptr;
}

template <class F>
Var unary_elementwise(const Var& x, F&& f, std::function<double(double, double)> dydx) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return make_result(std::move(out), {x}, [dydx = std::move(dydx)](Node& n) {
    Tensor* gx = grad_of(n, 0);
    if (!gx) return;
    const Tensor& xin = n.inputs[0]->value;
    for (std::size_t i = 0; i < xin.size(); ++i) (*gx)[i] += n.grad[i] * dydx(xin[i], n.value[i]);
  });
}

struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, int axis, const char* op) {
  const int rank = static_cast<int>(shape.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw DimensionError(std::string(op) + ": axis out of range for shape " + shape_str(shape));
  }
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  s.extent = shape[static_cast<std::size_t>(axis)];
  for (int i = axis + 1; i < rank; ++i) s.inner *= shape[static_cast<std::size_t>(i)];
  if (s.extent == 0) throw DomainError(std::string(op) + ": empty axis");
  return s;
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return detail::make_result(std::move(out), {a, b}, [](detail::Node& n) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (Tensor* g = detail::grad_of(n, k)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
      }
    }
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return detail::make_result(std::move(out), {a, b}, [](detail::Node& n) {
    if (Tensor* g = detail::grad_of(n, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
    }
    if (Tensor* g = detail::grad_of(n, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= n.grad[i];
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return detail::make_result(std::move(out), {a, b}, [](detail::Node& n) {
    const Tensor& av = n.inputs[0]->value;
    const Tensor& bv = n.inputs[1]->value;
    if (Tensor* g = detail::grad_of(n, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * bv[i];
    }
    if (Tensor* g = detail::grad_of(n, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * av[i];
    }
  });
}

inline Var scale(const Var& x, double c) {
  Tensor out = x.value();
  for (double& v : out.data()) v *= c;
  return detail::make_result(std::move(out), {x}, [c](detail::Node& n) {
    if (Tensor* g = detail::grad_of(n, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += c * n.grad[i];
    }
  });
}

/// Multiplies every element of `x` by the scalar Var `s`.
inline Var scale_by(const Var& x, const Var& s) {
  if (s.size() != 1) throw DimensionError("scale_by: scale must be scalar, got " + shape_str(s.shape()));
  const double c = s.item();
  Tensor out = x.value();
  for (double& v : out.data()) v *= c;
  return detail::make_result(std::move(out), {x, s}, [](detail::Node& n) {
    const Tensor& xv = n.inputs[0]->value;
    const double sc = n.inputs[1]->value[0];
    if (Tensor* g = detail::grad_of(n, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += sc * n.grad[i];
    }
    if (Tensor* g = detail::grad_of(n, 1)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < xv.size(); ++i) acc += n.grad[i] * xv[i];
      (*g)[0] += acc;
    }
  });
}

inline Var square(const Var& x) {
  return detail::unary_elementwise(
      x, [](double v) { return v * v; }, [](double xi, double) { return 2.0 * xi; });
}

inline Var leaky_relu(const Var& x, double slope = 0.2) {
  if (!(slope > 0.0 && slope < 1.0)) throw DomainError("leaky_relu: slope must lie in (0,1)");
  return detail::unary_elementwise(
      x, [slope](double v) { return v >= 0.0 ? v : slope * v; },
      [slope](double xi, double) { return xi >= 0.0 ? 1.0 : slope; });
}

inline Var elu(const Var& x) {
  return detail::unary_elementwise(
      x, [](double v) { return v >= 0.0 ? v : std::expm1(v); },
      [](double xi, double) { return xi >= 0.0 ? 1.0 : std::exp(xi); });
}

/// Exact (erf) GELU.
inline Var gelu(const Var& x) {
  return detail::unary_elementwise(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); },
      [](double xi, double) {
        const double cdf = 0.5 * (1.0 + std::erf(xi * std::numbers::sqrt2 / 2.0));
        const double pdf = std::exp(-0.5 * xi * xi) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + xi * pdf;
      });
}

// ---------------------------------------------------------------- reductions

inline Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return detail::make_result(Tensor::scalar(s), {x}, [](detail::Node& n) {
    if (Tensor* g = detail::grad_of(n, 0)) {
      const double gs = n.grad[0];
      for (double& v : g->data()) v += gs;
    }
  });
}

inline Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

/// Mean squared error over all elements.
inline Var mse(const Var& a, const Var& b) {
  detail::require_same_shape("mse", a.value(), b.value());
  return mean(square(sub(a, b)));
}

/// Column-wise mean of a 2-D tensor: [N×F] -> [F].
inline Var mean_rows(const Var& x) {
  detail::require_rank("mean_rows", x.value(), 2);
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  Tensor out({cols}, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out[j] += x.value().at(i, j);
  }
  for (double& v : out.data()) v /= static_cast<double>(rows);
  return detail::make_result(std::move(out), {x}, [rows, cols](detail::Node& n) {
    if (Tensor* g = detail::grad_of(n, 0)) {
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) g->at(i, j) += n.grad[j] / static_cast<double>(rows);
      }
    }
  });
}

/// Σ_i w_i·x_i over the rows of x with constant weights: [N×F] -> [F].
inline Var weighted_row_sum(const Var& x, std::vector<double> weights) {
  detail::require_rank("weighted_row_sum", x.value(), 2);
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  if (weights.size() != rows) {
    throw DimensionError("weighted_row_sum: " + std::to_string(weights.size()) + " weights for " +
                         std::to_string(rows) + " rows");
  }
  Tensor out({cols}, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    if (weights[i] == 0.0) continue;
    for (std::size_t j = 0; j < cols; ++j) out[j] += weights[i] * x.value().at(i, j);
  }
  return detail::make_result(std::move(out), {x}, [w = std::move(weights), cols](detail::Node& n) {
    if (Tensor* g = detail::grad_of(n, 0)) {
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (w[i] == 0.0) continue;
        for (std::size_t j = 0; j < cols; ++j) g->at(i, j) += w[i] * n.grad[j];
      }
    }
  });
}

// ---------------------------------------------------------------- linear algebra

inline Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(av.shape()) + " and " + shape_str(bv.shape()));
  }
  const std::size_t p = av.dim(0), q = av.dim(1), r = bv.dim(1);
  Tensor out({p, r});
  detail::gemm(av.data().data(), false, bv.data().data(), false, out.data().data(), p, q, r, false);
  return detail::make_result(std::move(out), {a, b}, [p, q, r](detail::Node& n) {
    const double* g = n.grad.data().data();
    if (Tensor* ga = detail::grad_of(n, 0)) {
      detail::gemm(g, false, n.inputs[1]->value.data().data(), true, ga->data().data(), p, r, q, true);
    }
    if (Tensor* gb = detail::grad_of(n, 1)) {
      detail::gemm(n.inputs[0]->value.data().data(), true, g, false, gb->data().data(), q, p, r, true);
    }
  });
}

/// a·bᵀ for a: p×q, b: r×q.
inline Var matmul_nt(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(1)) {
    throw DimensionError("matmul_nt: incompatible shapes " + shape_str(av.shape()) + " and " +
                         shape_str(bv.shape()));
  }
  const std::size_t p = av.dim(0), q = av.dim(1), r = bv.dim(0);
  Tensor out({p, r});
  detail::gemm(av.data().data(), false, bv.data().data(), true, out.data().data(), p, q, r, false);
  return detail::make_result(std::move(out), {a, b}, [p, q, r](detail::Node& n) {
    const double* g = n.grad.data().data();
    if (Tensor* ga = detail::grad_of(n, 0)) {
      detail::gemm(g, false, n.inputs[1]->value.data().data(), false, ga->data().data(), p, r, q, true);
    }
    if (Tensor* gb = detail::grad_of(n, 1)) {
      detail::gemm(g, true, n.inputs[0]->value.data().data(), false, gb->data().data(), r, p, q, true);
    }
  });
}

inline Var transpose(const Var& x) {
  detail::require_rank("transpose", x.value(), 2);
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  Tensor out({cols, rows});
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out.at(j, i) = x.value().at(i, j);
  }
  return detail::make_result(std::move(out), {x}, [rows, cols](detail::Node& n) {
    if (Tensor* g = detail::grad_of(n, 0)) {
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) g->at(i, j) += n.grad.at(j, i);
      }
    }
  });
}

namespace detail {

inline Var batched_matmul(const Var& a, const Var& b, bool trans_b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const char* op = trans_b ? "bmm_nt" : "bmm";
  if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) ||
      av.dim(2) != (trans_b ? bv.dim(2) : bv.dim(1))) {
    throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(av.shape()) + " and " +
                         shape_str(bv.shape()));
  }
  const std::size_t groups = av.dim(0), p = av.dim(1), q = av.dim(2);
  const std::size_t r = trans_b ? bv.dim(1) : bv.dim(2);
  Tensor out({groups, p, r});
  for (std::size_t g = 0; g < groups; ++g) {
    gemm(av.data().data() + g * p * q, false, bv.data().data() + g * q * r, trans_b, out.data().data() + g * p * r,
         p, q, r, false);
  }
  return make_result(std::move(out), {a, b}, [groups, p, q, r, trans_b](Node& n) {
    const double* gout = n.grad.data().data();
    const double* adata = n.inputs[0]->value.data().data();
    const double* bdata = n.inputs[1]->value.data().data();
    Tensor* ga = grad_of(n, 0);
    Tensor* gb = grad_of(n, 1);
    for (std::size_t g = 0; g < groups; ++g) {
      const double* go = gout + g * p * r;
      if (ga) {
        // dA = dC·op(B)ᵀ
        gemm(go, false, bdata + g * q * r, !trans_b, ga->data().data() + g * p * q, p, r, q, true);
      }
      if (gb) {
        if (trans_b) {
          // B: r×q, dB = dCᵀ·A
          gemm(go, true, adata + g * p * q, false, gb->data().data() + g * q * r, r, p, q, true);
        } else {
          // B: q×r, dB = Aᵀ·dC
          gemm(adata + g * p * q, true, go, false, gb->data().data() + g * q * r, q, p, r, true);
        }
      }
    }
  });
}

}  // namespace detail

/// Batched a[g]·b[g] for a: G×p×q, b: G×q×r.
inline Var bmm(const Var& a, const Var& b) { return detail::batched_matmul(a, b, false); }
/// Batched a[g]·b[g]ᵀ for a: G×p×q, b: G×r×q.
inline Var bmm_nt(const Var& a, const Var& b) { return detail::batched_matmul(a, b, true); }

// ---------------------------------------------------------------- normalization

/// Softmax along `axis`, computed with max-subtraction.
inline Var softmax(const Var& x, int axis = -1) {
  const auto s = detail::split_axis(x.shape(), axis, "softmax");
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      double mx = xv[base];
      for (std::size_t k = 1; k < s.extent; ++k) mx = std::max(mx, xv[base + k * s.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.extent; ++k) {
        const double e = std::exp(xv[base + k * s.inner] - mx);
        out[base + k * s.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < s.extent; ++k) out[base + k * s.inner] /= z;
    }
  }
  return detail::make_result(std::move(out), {x}, [s](detail::Node& n) {
    Tensor* g = detail::grad_of(n, 0);
    if (!g) return;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.extent * s.inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < s.extent; ++k) {
          const std::size_t i = base + k * s.inner;
          dot += n.grad[i] * n.value[i];
        }
        for (std::size_t k = 0; k < s.extent; ++k) {
          const std::size_t i = base + k * s.inner;
          (*g)[i] += n.value[i] * (n.grad[i] - dot);
        }
      }
    }
  });
}

inline Var log_softmax(const Var& x, int axis = -1) {
  const auto s = detail::split_axis(x.shape(), axis, "log_softmax");
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      double mx = xv[base];
      for (std::size_t k = 1; k < s.extent; ++k) mx = std::max(mx, xv[base + k * s.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.extent; ++k) z += std::exp(xv[base + k * s.inner] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t k = 0; k < s.extent; ++k) out[base + k * s.inner] = xv[base + k * s.inner] - lse;
    }
  }
  return detail::make_result(std::move(out), {x}, [s](detail::Node& n) {
    Tensor* g = detail::grad_of(n, 0);
    if (!g) return;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.extent * s.inner + in;
        double gs = 0.0;
        for (std::size_t k = 0; k < s.extent; ++k) gs += n.grad[base + k * s.inner];
        for (std::size_t k = 0; k < s.extent; ++k) {
          const std::size_t i = base + k * s.inner;
          (*g)[i] += n.grad[i] - std::exp(n.value[i]) * gs;
        }
      }
    }
  });
}

/// Row-wise layer normalization over the last axis with affine gamma/beta.
inline Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-12) {
  const Tensor& xv = x.value();
  const std::size_t width = xv.shape().back();
  if (gamma.value().shape() != Shape{width} || beta.value().shape() != Shape{width}) {
    throw DimensionError("layer_norm: gamma/beta must be [" + std::to_string(width) + "], got " +
                         shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
  }
  const std::size_t rows = xv.size() / width;
  Tensor out(xv.shape());
  std::vector<double> normed(xv.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data().data() + r * width;
    double mu = 0.0;
    for (std::size_t j = 0; j < width; ++j) mu += row[j];
    mu /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t j = 0; j < width; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(width);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < width; ++j) {
      const double xh = (row[j] - mu) * inv_std[r];
      normed[r * width + j] = xh;
      out[r * width + j] = gamma.value()[j] * xh + beta.value()[j];
    }
  }
  return detail::make_result(
      std::move(out), {x, gamma, beta},
      [rows, width, normed = std::move(normed), inv_std = std::move(inv_std)](detail::Node& n) {
        const Tensor& gam = n.inputs[1]->value;
        Tensor* gx = detail::grad_of(n, 0);
        Tensor* gg = detail::grad_of(n, 1);
        Tensor* gb = detail::grad_of(n, 2);
        std::vector<double> dxh(width);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* go = n.grad.data().data() + r * width;
          const double* xh = normed.data() + r * width;
          if (gg || gb) {
            for (std::size_t j = 0; j < width; ++j) {
              if (gg) (*gg)[j] += go[j] * xh[j];
              if (gb) (*gb)[j] += go[j];
            }
          }
          if (!gx) continue;
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t j = 0; j < width; ++j) {
            dxh[j] = go[j] * gam[j];
            m1 += dxh[j];
            m2 += dxh[j] * xh[j];
          }
          m1 /= static_cast<double>(width);
          m2 /= static_cast<double>(width);
          double* gr = gx->data().data() + r * width;
          for (std::size_t j = 0; j < width; ++j) gr[j] += inv_std[r] * (dxh[j] - m1 - xh[j] * m2);
        }
      });
}

// ---------------------------------------------------------------- broadcasting

/// x[..., C] + bias[C].
inline Var add_bias(const Var& x, const Var& bias) {
  const std::size_t width = x.shape().back();
  if (bias.value().shape() != Shape{width}) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match " + shape_str(x.shape()));
  }
  Tensor out = x.value();
  const std::size_t rows = out.size() / width;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] += bias.value()[j];
  }
  return detail::make_result(std::move(out), {x, bias}, [rows, width](detail::Node& n) {
    if (Tensor* g = detail::grad_of(n, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
    }
    if (Tensor* g = detail::grad_of(n, 1)) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < width; ++j) (*g)[j] += n.grad[r * width + j];
      }
    }
  });
}

/// out[i][j] = u[i] + v[j] for vectors u: [n], v: [m].
inline Var outer_add(const Var& u, const Var& v) {
  detail::require_rank("outer_add", u.value(), 1);
  detail::require_rank("outer_add", v.value(), 1);
  const std::size_t rows = u.size(), cols = v.size();
  Tensor out({rows, cols});
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out.at(i, j) = u.value()[i] + v.value()[j];
  }
  return detail::make_result(std::move(out), {u, v}, [rows, cols](detail::Node& n) {
    Tensor* gu = detail::grad_of(n, 0);
    Tensor* gv = detail::grad_of(n, 1);
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        if (gu) (*gu)[i] += n.grad.at(i, j);
        if (gv) (*gv)[j] += n.grad.at(i, j);
      }
    }
  });
}

// ---------------------------------------------------------------- indexing and layout

inline Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return detail::make_result(std::move(out), {x}, [](detail::Node& n) {
    if (Tensor* g = detail::grad_of(n, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
    }
  });
}

/// Rows of `table` selected by `ids`: [V×H] -> [len(ids)×H].
inline Var gather_rows(const Var& table, std::vector<std::size_t> ids) {
  detail::require_rank("gather_rows", table.value(), 2);
  const std::size_t rows = table.shape()[0], width = table.shape()[1];
  if (ids.empty()) throw DimensionError("gather_rows: empty index list");
  Tensor out({ids.size(), width});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= rows) {
      throw DomainError("gather_rows: index " + std::to_string(ids[i]) + " out of range for " +
                        std::to_string(rows) + " rows");
    }
    std::copy_n(table.value().data().data() + ids[i] * width, width, out.data().data() + i * width);
  }
  return detail::make_result(std::move(out), {table}, [ids = std::move(ids), width](detail::Node& n) {
    if (Tensor* g = detail::grad_of(n, 0)) {
      for (std::size_t i = 0; i < ids.size(); ++i) {
        for (std::size_t j = 0; j < width; ++j) (*g)[ids[i] * width + j] += n.grad[i * width + j];
      }
    }
  });
}

/// Element i (flat index) as a scalar.
inline Var element(const Var& x, std::size_t i) {
  if (i >= x.size()) throw DimensionError("element: index " + std::to_string(i) + " out of range " + shape_str(x.shape()));
  return detail::make_result(Tensor::scalar(x.value()[i]), {x}, [i](detail::Node& n) {
    if (Tensor* g = detail::grad_of(n, 0)) (*g)[i] += n.grad[0];
  });
}

/// Row i of a 2-D tensor as a vector [F].
inline Var row(const Var& x, std::size_t i) {
  detail::require_rank("row", x.value(), 2);
  const std::size_t rows = x.shape()[0], width = x.shape()[1];
  if (i >= rows) throw DimensionError("row: index " + std::to_string(i) + " out of range " + shape_str(x.shape()));
  Tensor out({width});
  std::copy_n(x.value().data().data() + i * width, width, out.data().data());
  return detail::make_result(std::move(out), {x}, [i, width](detail::Node& n) {
    if (Tensor* g = detail::grad_of(n, 0)) {
      for (std::size_t j = 0; j < width; ++j) (*g)[i * width + j] += n.grad[j];
    }
  });
}

/// Rows [begin, begin+count) of a 2-D tensor (or elements of a vector).
inline Var slice_rows(const Var& x, std::size_t begin, std::size_t count) {
  const Tensor& xv = x.value();
  if (xv.rank() == 0 || count == 0 || begin + count > xv.dim(0)) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") out of range for " + shape_str(xv.shape()));
  }
  const std::size_t stride = xv.size() / xv.dim(0);
  Shape shape = xv.shape();
  shape[0] = count;
  Tensor out(shape);
  std::copy_n(xv.data().data() + begin * stride, count * stride, out.data().data());
  return detail::make_result(std::move(out), {x}, [begin, count, stride](detail::Node& n) {
    if (Tensor* g = detail::grad_of(n, 0)) {
      for (std::size_t i = 0; i < count * stride; ++i) (*g)[begin * stride + i] += n.grad[i];
    }
  });
}

/// Stacks vectors [F] into a matrix [n×F].
inline Var stack_rows(const std::vector<Var>& rows) {
  if (rows.empty()) throw DimensionError("stack_rows: no rows");
  const std::size_t width = rows.front().size();
  for (const auto& r : rows) {
    if (r.value().rank() != 1 || r.size() != width) {
      throw DimensionError("stack_rows: row shape " + shape_str(r.shape()) + " differs from [" +
                           std::to_string(width) + "]");
    }
  }
  Tensor out({rows.size(), width});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(rows[i].value().data().data(), width, out.data().data() + i * width);
  }
  return detail::make_result(std::move(out), rows, [width](detail::Node& n) {
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      if (Tensor* g = detail::grad_of(n, i)) {
        for (std::size_t j = 0; j < width; ++j) (*g)[j] += n.grad[i * width + j];
      }
    }
  });
}

/// Concatenates 2-D tensors with equal row counts along columns.
inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t rows = parts.front().shape().at(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.value().rank() != 2 || p.shape()[0] != rows) {
      throw DimensionError("concat_cols: part " + shape_str(p.shape()) + " incompatible with " +
                           std::to_string(rows) + " rows");
    }
    widths.push_back(p.shape()[1]);
    total += p.shape()[1];
  }
  Tensor out({rows, total});
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t i = 0; i < rows; ++i) {
      std::copy_n(parts[k].value().data().data() + i * widths[k], widths[k],
                  out.data().data() + i * total + offset);
    }
    offset += widths[k];
  }
  return detail::make_result(std::move(out), parts, [rows, total, widths = std::move(widths)](detail::Node& n) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (Tensor* g = detail::grad_of(n, k)) {
        for (std::size_t i = 0; i < rows; ++i) {
          for (std::size_t j = 0; j < widths[k]; ++j) (*g)[i * widths[k] + j] += n.grad[i * total + off + j];
        }
      }
      off += widths[k];
    }
  });
}

/// [(B·L)×(h·dh)] -> [(B·h)×L×dh].
inline Var split_heads(const Var& x, std::size_t batch, std::size_t len, std::size_t heads) {
  detail::require_rank("split_heads", x.value(), 2);
  const std::size_t width = x.shape()[1];
  if (x.shape()[0] != batch * len || width % heads != 0) {
    throw DimensionError("split_heads: " + shape_str(x.shape()) + " incompatible with batch " +
                         std::to_string(batch) + ", length " + std::to_string(len) + ", heads " +
                         std::to_string(heads));
  }
  const std::size_t dh = width / heads;
  Tensor out({batch * heads, len, dh});
  const auto& src = x.value();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t h = 0; h < heads; ++h)
        std::copy_n(src.data().data() + (b * len + t) * width + h * dh, dh,
                    out.data().data() + ((b * heads + h) * len + t) * dh);
  return detail::make_result(std::move(out), {x}, [batch, len, heads, dh, width](detail::Node& n) {
    Tensor* g = detail::grad_of(n, 0);
    if (!g) return;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t t = 0; t < len; ++t)
        for (std::size_t h = 0; h < heads; ++h)
          for (std::size_t j = 0; j < dh; ++j)
            (*g)[(b * len + t) * width + h * dh + j] += n.grad[((b * heads + h) * len + t) * dh + j];
  });
}

/// Inverse of split_heads: [(B·h)×L×dh] -> [(B·L)×(h·dh)].
inline Var merge_heads(const Var& x, std::size_t batch, std::size_t len, std::size_t heads) {
  detail::require_rank("merge_heads", x.value(), 3);
  if (x.shape()[0] != batch * heads || x.shape()[1] != len) {
    throw DimensionError("merge_heads: " + shape_str(x.shape()) + " incompatible with batch " +
                         std::to_string(batch) + ", heads " + std::to_string(heads));
  }
  const std::size_t dh = x.shape()[2], width = heads * dh;
  Tensor out({batch * len, width});
  const auto& src = x.value();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t t = 0; t < len; ++t)
        std::copy_n(src.data().data() + ((b * heads + h) * len + t) * dh, dh,
                    out.data().data() + (b * len + t) * width + h * dh);
  return detail::make_result(std::move(out), {x}, [batch, len, heads, dh, width](detail::Node& n) {
    Tensor* g = detail::grad_of(n, 0);
    if (!g) return;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t t = 0; t < len; ++t)
          for (std::size_t j = 0; j < dh; ++j)
            (*g)[((b * heads + h) * len + t) * dh + j] += n.grad[(b * len + t) * width + h * dh + j];
  });
}

}  // namespace hrkd
