#pragma once

#include <atomic>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ftv/common.hpp"
#include "ftv/tensor.hpp"

namespace ftv {

// Reverse-mode automatic differentiation over Tensor. Graphs are built
// define-by-run; node ids increase monotonically so creation order is a
// valid topological order and backward() just replays it in reverse.

namespace detail {
inline std::atomic<std::uint64_t>& node_counter() {
  static std::atomic<std::uint64_t> c{0};
  return c;
}
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

// RAII switch for inference paths: value computation only, no tape.
class GradPause {
 public:
  GradPause() : prev_(detail::grad_enabled_flag()) {
    detail::grad_enabled_flag() = false;
  }
  ~GradPause() { detail::grad_enabled_flag() = prev_; }
  GradPause(const GradPause&) = delete;
  GradPause& operator=(const GradPause&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily, same shape as value
  bool requires_grad = false;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;  // reads this->grad, accumulates into parents

  Tensor& grad_buf() {
    if (grad.size() != value.size())
      grad = Tensor(value.rows(), value.cols(), 0.0);
    return grad;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  static Var leaf(Tensor value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad && grad_enabled();
    n->id = detail::node_counter().fetch_add(1, std::memory_order_relaxed);
    return Var(std::move(n));
  }

  static Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Var is a shared handle; value/grad mutation through a const handle is
  // intentional, mirroring shared_ptr semantics.
  bool valid() const { return n_ != nullptr; }
  const Tensor& value() const { return n_->value; }
  Tensor& mutable_value() const { return n_->value; }
  Tensor& grad() const { return n_->grad_buf(); }
  const Tensor& grad_ref() const { return n_->grad; }
  bool requires_grad() const { return n_->requires_grad; }
  std::shared_ptr<Node> node() const { return n_; }

  std::size_t rows() const { return n_->value.rows(); }
  std::size_t cols() const { return n_->value.cols(); }

  void zero_grad() const {
    if (n_->grad.size()) n_->grad.fill(0.0);
  }

 private:
  std::shared_ptr<Node> n_;
};

namespace detail {

inline Var make_op(Tensor value, std::vector<Var> inputs,
                   std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  n->requires_grad = needs;
  n->id = node_counter().fetch_add(1, std::memory_order_relaxed);
  if (needs) {
    n->parents.reserve(inputs.size());
    for (auto& in : inputs) n->parents.push_back(in.node());
    n->backprop = std::move(backprop);
  }
  return Var(std::move(n));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// arithmetic

inline Var add(const Var& a, const Var& b) {
  require_dim(a.value().same_shape(b.value()), "add: shape mismatch");
  Tensor out = a.value();
  out.mat() += b.value().mat();
  auto an = a.node(), bn = b.node();
  return detail::make_op(std::move(out), {a, b}, [an, bn](Node& n) {
    if (an->requires_grad) an->grad_buf().mat() += n.grad.mat();
    if (bn->requires_grad) bn->grad_buf().mat() += n.grad.mat();
  });
}

inline Var sub(const Var& a, const Var& b) {
  require_dim(a.value().same_shape(b.value()), "sub: shape mismatch");
  Tensor out = a.value();
  out.mat() -= b.value().mat();
  auto an = a.node(), bn = b.node();
  return detail::make_op(std::move(out), {a, b}, [an, bn](Node& n) {
    if (an->requires_grad) an->grad_buf().mat() += n.grad.mat();
    if (bn->requires_grad) bn->grad_buf().mat() -= n.grad.mat();
  });
}

inline Var mul(const Var& a, const Var& b) {
  require_dim(a.value().same_shape(b.value()), "mul: shape mismatch");
  Tensor out = a.value();
  out.mat().array() *= b.value().mat().array();
  auto an = a.node(), bn = b.node();
  return detail::make_op(std::move(out), {a, b}, [an, bn](Node& n) {
    if (an->requires_grad)
      an->grad_buf().mat().array() +=
          n.grad.mat().array() * bn->value.mat().array();
    if (bn->requires_grad)
      bn->grad_buf().mat().array() +=
          n.grad.mat().array() * an->value.mat().array();
  });
}

inline Var mul_scalar(const Var& a, Real s) {
  Tensor out = a.value();
  out.mat() *= s;
  auto an = a.node();
  return detail::make_op(std::move(out), {a}, [an, s](Node& n) {
    if (an->requires_grad) an->grad_buf().mat() += s * n.grad.mat();
  });
}

// elementwise multiply by a constant tensor (no gradient into the constant)
inline Var mul_constant(const Var& a, const Tensor& c) {
  require_dim(a.value().same_shape(c), "mul_constant: shape mismatch");
  Tensor out = a.value();
  out.mat().array() *= c.mat().array();
  auto an = a.node();
  Tensor cc = c;
  return detail::make_op(std::move(out), {a}, [an, cc](Node& n) {
    if (an->requires_grad)
      an->grad_buf().mat().array() += n.grad.mat().array() * cc.mat().array();
  });
}

// broadcast a 1 x C row over every row of x
inline Var add_rowvec(const Var& x, const Var& r) {
  require_dim(r.rows() == 1 && r.cols() == x.cols(),
              "add_rowvec: expected 1 x C row");
  Tensor out = x.value();
  out.mat().rowwise() += r.value().mat().row(0);
  auto xn = x.node(), rn = r.node();
  return detail::make_op(std::move(out), {x, r}, [xn, rn](Node& n) {
    if (xn->requires_grad) xn->grad_buf().mat() += n.grad.mat();
    if (rn->requires_grad)
      rn->grad_buf().mat().row(0) += n.grad.mat().colwise().sum();
  });
}

inline Var mul_rowvec(const Var& x, const Var& r) {
  require_dim(r.rows() == 1 && r.cols() == x.cols(),
              "mul_rowvec: expected 1 x C row");
  Tensor out = x.value();
  out.mat().array().rowwise() *= r.value().mat().row(0).array();
  auto xn = x.node(), rn = r.node();
  return detail::make_op(std::move(out), {x, r}, [xn, rn](Node& n) {
    if (xn->requires_grad)
      xn->grad_buf().mat().array() +=
          n.grad.mat().array().rowwise() * rn->value.mat().row(0).array();
    if (rn->requires_grad)
      rn->grad_buf().mat().row(0).array() +=
          (n.grad.mat().array() * xn->value.mat().array())
              .colwise()
              .sum();
  });
}

// multiply / divide every element by a 1 x 1 variable
inline Var mul_bcast(const Var& x, const Var& s) {
  require_dim(s.rows() == 1 && s.cols() == 1, "mul_bcast: scalar expected");
  const Real sv = s.value()[0];
  Tensor out = x.value();
  out.mat() *= sv;
  auto xn = x.node(), sn = s.node();
  return detail::make_op(std::move(out), {x, s}, [xn, sn](Node& n) {
    const Real svb = sn->value[0];
    if (xn->requires_grad) xn->grad_buf().mat() += svb * n.grad.mat();
    if (sn->requires_grad)
      sn->grad_buf()[0] += (n.grad.mat().array() * xn->value.mat().array()).sum();
  });
}

inline Var div_bcast(const Var& x, const Var& s) {
  require_dim(s.rows() == 1 && s.cols() == 1, "div_bcast: scalar expected");
  const Real sv = s.value()[0];
  require(sv != 0.0, "div_bcast: division by zero");
  Tensor out = x.value();
  out.mat() /= sv;
  auto xn = x.node(), sn = s.node();
  return detail::make_op(std::move(out), {x, s}, [xn, sn](Node& n) {
    const Real svb = sn->value[0];
    if (xn->requires_grad) xn->grad_buf().mat() += n.grad.mat() / svb;
    if (sn->requires_grad)
      sn->grad_buf()[0] -=
          (n.grad.mat().array() * xn->value.mat().array()).sum() / (svb * svb);
  });
}

// ---------------------------------------------------------------------------
// linear algebra

inline Var matmul(const Var& a, const Var& b) {
  require_dim(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  Tensor out(a.rows(), b.cols());
  out.mat().noalias() = a.value().mat() * b.value().mat();
  auto an = a.node(), bn = b.node();
  return detail::make_op(std::move(out), {a, b}, [an, bn](Node& n) {
    if (an->requires_grad)
      an->grad_buf().mat().noalias() += n.grad.mat() * bn->value.mat().transpose();
    if (bn->requires_grad)
      bn->grad_buf().mat().noalias() += an->value.mat().transpose() * n.grad.mat();
  });
}

// a * b^T
inline Var matmul_nt(const Var& a, const Var& b) {
  require_dim(a.cols() == b.cols(), "matmul_nt: inner dimension mismatch");
  Tensor out(a.rows(), b.rows());
  out.mat().noalias() = a.value().mat() * b.value().mat().transpose();
  auto an = a.node(), bn = b.node();
  return detail::make_op(std::move(out), {a, b}, [an, bn](Node& n) {
    if (an->requires_grad)
      an->grad_buf().mat().noalias() += n.grad.mat() * bn->value.mat();
    if (bn->requires_grad)
      bn->grad_buf().mat().noalias() += n.grad.mat().transpose() * an->value.mat();
  });
}

// x * W^T + b with W: out x in, b: 1 x out
inline Var affine(const Var& x, const Var& w, const Var& b) {
  require_dim(x.cols() == w.cols(), "affine: input width mismatch");
  require_dim(b.rows() == 1 && b.cols() == w.rows(), "affine: bias shape");
  Tensor out(x.rows(), w.rows());
  out.mat().noalias() = x.value().mat() * w.value().mat().transpose();
  out.mat().rowwise() += b.value().mat().row(0);
  auto xn = x.node(), wn = w.node(), bn = b.node();
  return detail::make_op(std::move(out), {x, w, b}, [xn, wn, bn](Node& n) {
    if (xn->requires_grad)
      xn->grad_buf().mat().noalias() += n.grad.mat() * wn->value.mat();
    if (wn->requires_grad)
      wn->grad_buf().mat().noalias() += n.grad.mat().transpose() * xn->value.mat();
    if (bn->requires_grad)
      bn->grad_buf().mat().row(0) += n.grad.mat().colwise().sum();
  });
}

// ---------------------------------------------------------------------------
// nonlinearities

inline Var relu(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.vec()) v = v > 0 ? v : 0;
  auto xn = x.node();
  return detail::make_op(std::move(out), {x}, [xn](Node& n) {
    if (!xn->requires_grad) return;
    Tensor& g = xn->grad_buf();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xn->value[i] > 0) g[i] += n.grad[i];
  });
}

namespace detail {
inline Real gelu_value(Real v, Real& dv) {
  // tanh approximation
  constexpr Real kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr Real kA = 0.044715;
  const Real u = kC * (v + kA * v * v * v);
  const Real t = std::tanh(u);
  const Real du = kC * (1 + 3 * kA * v * v);
  dv = 0.5 * (1 + t) + 0.5 * v * (1 - t * t) * du;
  return 0.5 * v * (1 + t);
}
}  // namespace detail

inline Var gelu(const Var& x) {
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    Real dv;
    out[i] = detail::gelu_value(x.value()[i], dv);
  }
  auto xn = x.node();
  return detail::make_op(std::move(out), {x}, [xn](Node& n) {
    if (!xn->requires_grad) return;
    Tensor& g = xn->grad_buf();
    for (std::size_t i = 0; i < g.size(); ++i) {
      Real dv;
      detail::gelu_value(xn->value[i], dv);
      g[i] += dv * n.grad[i];
    }
  });
}

// exp with the exponent clamped to [lo, hi]; gradient is zero outside
inline Var exp_clamped(const Var& x, Real lo, Real hi) {
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::exp(std::clamp(x.value()[i], lo, hi));
  auto xn = x.node();
  return detail::make_op(std::move(out), {x}, [xn, lo, hi](Node& n) {
    if (!xn->requires_grad) return;
    Tensor& g = xn->grad_buf();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Real v = xn->value[i];
      if (v > lo && v < hi) g[i] += n.value[i] * n.grad[i];
    }
  });
}

inline Var sqrt_elem(const Var& x) {
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    require(x.value()[i] >= 0, "sqrt_elem: negative input");
    out[i] = std::sqrt(x.value()[i]);
  }
  auto xn = x.node();
  return detail::make_op(std::move(out), {x}, [xn](Node& n) {
    if (!xn->requires_grad) return;
    Tensor& g = xn->grad_buf();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Real s = n.value[i];
      if (s > 0) g[i] += 0.5 / s * n.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// reductions

inline Var sum_all(const Var& x) {
  Tensor out = Tensor::scalar(x.value().sum());
  auto xn = x.node();
  return detail::make_op(std::move(out), {x}, [xn](Node& n) {
    if (xn->requires_grad) xn->grad_buf().mat().array() += n.grad[0];
  });
}

inline Var mean_all(const Var& x) {
  const Real inv = 1.0 / static_cast<Real>(x.value().size());
  Tensor out = Tensor::scalar(x.value().sum() * inv);
  auto xn = x.node();
  return detail::make_op(std::move(out), {x}, [xn, inv](Node& n) {
    if (xn->requires_grad) xn->grad_buf().mat().array() += inv * n.grad[0];
  });
}

inline Var mean_rows(const Var& x) {
  Tensor out(1, x.cols());
  out.mat().row(0) = x.value().mat().colwise().mean();
  const Real inv = 1.0 / static_cast<Real>(x.rows());
  auto xn = x.node();
  return detail::make_op(std::move(out), {x}, [xn, inv](Node& n) {
    if (xn->requires_grad)
      xn->grad_buf().mat().rowwise() += inv * n.grad.mat().row(0);
  });
}

// ---------------------------------------------------------------------------
// shape ops

inline Var reshape(const Var& x, std::size_t rows, std::size_t cols) {
  require_dim(rows * cols == x.value().size(), "reshape: element count mismatch");
  Tensor out(rows, cols);
  out.vec() = x.value().vec();
  auto xn = x.node();
  return detail::make_op(std::move(out), {x}, [xn](Node& n) {
    if (!xn->requires_grad) return;
    Tensor& g = xn->grad_buf();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  });
}

inline Var slice_cols(const Var& x, std::size_t c0, std::size_t len) {
  require_dim(c0 + len <= x.cols(), "slice_cols: out of range");
  Tensor out(x.rows(), len);
  out.mat() = x.value().mat().middleCols(static_cast<Eigen::Index>(c0),
                                         static_cast<Eigen::Index>(len));
  auto xn = x.node();
  return detail::make_op(std::move(out), {x}, [xn, c0, len](Node& n) {
    if (xn->requires_grad)
      xn->grad_buf().mat().middleCols(static_cast<Eigen::Index>(c0),
                                      static_cast<Eigen::Index>(len)) +=
          n.grad.mat();
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: empty input");
  const std::size_t rows = parts[0].rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_dim(p.rows() == rows, "concat_cols: row mismatch");
    total += p.cols();
  }
  Tensor out(rows, total);
  std::size_t off = 0;
  for (const auto& p : parts) {
    out.mat().middleCols(static_cast<Eigen::Index>(off),
                         static_cast<Eigen::Index>(p.cols())) = p.value().mat();
    off += p.cols();
  }
  std::vector<std::shared_ptr<Node>> nodes;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    nodes.push_back(p.node());
    widths.push_back(p.cols());
  }
  return detail::make_op(std::move(out), parts, [nodes, widths](Node& n) {
    std::size_t off2 = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (nodes[i]->requires_grad)
        nodes[i]->grad_buf().mat() +=
            n.grad.mat().middleCols(static_cast<Eigen::Index>(off2),
                                    static_cast<Eigen::Index>(widths[i]));
      off2 += widths[i];
    }
  });
}

// General gather over the flattened input: out.flat[k] = x.flat[idx[k]],
// with idx[k] == -1 meaning a structural zero (padding). Backward scatters.
inline Var gather(const Var& x, std::size_t rows, std::size_t cols,
                  std::shared_ptr<const std::vector<long>> idx) {
  require_dim(idx->size() == rows * cols, "gather: index size mismatch");
  Tensor out(rows, cols);
  const auto& xs = x.value();
  for (std::size_t k = 0; k < idx->size(); ++k) {
    const long i = (*idx)[k];
    out[k] = i < 0 ? 0.0 : xs[static_cast<std::size_t>(i)];
  }
  auto xn = x.node();
  return detail::make_op(std::move(out), {x}, [xn, idx](Node& n) {
    if (!xn->requires_grad) return;
    Tensor& g = xn->grad_buf();
    for (std::size_t k = 0; k < idx->size(); ++k) {
      const long i = (*idx)[k];
      if (i >= 0) g[static_cast<std::size_t>(i)] += n.grad[k];
    }
  });
}

// ---------------------------------------------------------------------------
// normalization / attention pieces

inline Var softmax_rows(const Var& x) {
  Tensor out(x.rows(), x.cols());
  const std::size_t C = x.cols();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    Real mx = x.value().at(i, 0);
    for (std::size_t j = 1; j < C; ++j) mx = std::max(mx, x.value().at(i, j));
    Real z = 0;
    for (std::size_t j = 0; j < C; ++j) {
      const Real e = std::exp(x.value().at(i, j) - mx);
      out.at(i, j) = e;
      z += e;
    }
    for (std::size_t j = 0; j < C; ++j) out.at(i, j) /= z;
  }
  auto xn = x.node();
  return detail::make_op(std::move(out), {x}, [xn](Node& n) {
    if (!xn->requires_grad) return;
    Tensor& g = xn->grad_buf();
    const std::size_t C = n.value.cols();
    for (std::size_t i = 0; i < n.value.rows(); ++i) {
      Real dot = 0;
      for (std::size_t j = 0; j < C; ++j)
        dot += n.grad.at(i, j) * n.value.at(i, j);
      for (std::size_t j = 0; j < C; ++j)
        g.at(i, j) += n.value.at(i, j) * (n.grad.at(i, j) - dot);
    }
  });
}

// Per-row layer norm with affine parameters gamma/beta (1 x C each).
inline Var layer_norm(const Var& x, const Var& gamma, const Var& beta,
                      Real eps = 1e-5) {
  const std::size_t C = x.cols();
  require_dim(gamma.rows() == 1 && gamma.cols() == C, "layer_norm: gamma shape");
  require_dim(beta.rows() == 1 && beta.cols() == C, "layer_norm: beta shape");
  Tensor out(x.rows(), C);
  Tensor xhat(x.rows(), C);
  Tensor inv_sigma(x.rows(), 1);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    Real mu = 0;
    for (std::size_t j = 0; j < C; ++j) mu += x.value().at(i, j);
    mu /= static_cast<Real>(C);
    Real var = 0;
    for (std::size_t j = 0; j < C; ++j) {
      const Real d = x.value().at(i, j) - mu;
      var += d * d;
    }
    var /= static_cast<Real>(C);
    const Real is = 1.0 / std::sqrt(var + eps);
    inv_sigma[i] = is;
    for (std::size_t j = 0; j < C; ++j) {
      const Real xh = (x.value().at(i, j) - mu) * is;
      xhat.at(i, j) = xh;
      out.at(i, j) = xh * gamma.value()[j] + beta.value()[j];
    }
  }
  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return detail::make_op(
      std::move(out), {x, gamma, beta},
      [xn, gn, bn, xhat, inv_sigma](Node& n) {
        const std::size_t C = n.value.cols();
        const Real invC = 1.0 / static_cast<Real>(C);
        for (std::size_t i = 0; i < n.value.rows(); ++i) {
          // dL/dxhat_j = g_j * gamma_j ; standard LN backward per row
          Real sum_dxh = 0, sum_dxh_xh = 0;
          for (std::size_t j = 0; j < C; ++j) {
            const Real dxh = n.grad.at(i, j) * gn->value[j];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xhat.at(i, j);
          }
          if (xn->requires_grad) {
            Tensor& g = xn->grad_buf();
            for (std::size_t j = 0; j < C; ++j) {
              const Real dxh = n.grad.at(i, j) * gn->value[j];
              g.at(i, j) += inv_sigma[i] *
                            (dxh - invC * sum_dxh - xhat.at(i, j) * invC * sum_dxh_xh);
            }
          }
          if (gn->requires_grad) {
            Tensor& gg = gn->grad_buf();
            for (std::size_t j = 0; j < C; ++j)
              gg[j] += n.grad.at(i, j) * xhat.at(i, j);
          }
          if (bn->requires_grad) {
            Tensor& gb = bn->grad_buf();
            for (std::size_t j = 0; j < C; ++j) gb[j] += n.grad.at(i, j);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// losses

// Numerically stable cross entropy from logits (1 x K) against a class index.
inline Var cross_entropy_logits(const Var& logits, std::size_t target) {
  require_dim(logits.rows() == 1, "cross_entropy_logits: expected 1 x K row");
  require(target < logits.cols(), "cross_entropy_logits: target out of range");
  const std::size_t K = logits.cols();
  Real mx = logits.value()[0];
  for (std::size_t j = 1; j < K; ++j) mx = std::max(mx, logits.value()[j]);
  Real z = 0;
  for (std::size_t j = 0; j < K; ++j) z += std::exp(logits.value()[j] - mx);
  const Real lse = mx + std::log(z);
  Tensor out = Tensor::scalar(lse - logits.value()[target]);
  auto ln = logits.node();
  return detail::make_op(std::move(out), {logits}, [ln, target, lse](Node& n) {
    if (!ln->requires_grad) return;
    Tensor& g = ln->grad_buf();
    for (std::size_t j = 0; j < g.size(); ++j) {
      const Real p = std::exp(ln->value[j] - lse);
      g[j] += n.grad[0] * (p - (j == target ? 1.0 : 0.0));
    }
  });
}

// Mean absolute error against a constant target of identical shape.
inline Var mae(const Var& pred, const Tensor& target) {
  require_dim(pred.value().same_shape(target), "mae: shape mismatch");
  require(target.size() > 0, "mae: empty target");
  Real s = 0;
  for (std::size_t i = 0; i < target.size(); ++i)
    s += std::abs(pred.value()[i] - target[i]);
  const Real inv = 1.0 / static_cast<Real>(target.size());
  Tensor out = Tensor::scalar(s * inv);
  auto pn = pred.node();
  Tensor tgt = target;
  return detail::make_op(std::move(out), {pred}, [pn, tgt, inv](Node& n) {
    if (!pn->requires_grad) return;
    Tensor& g = pn->grad_buf();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Real d = pn->value[i] - tgt[i];
      if (d > 0)
        g[i] += inv * n.grad[0];
      else if (d < 0)
        g[i] -= inv * n.grad[0];
    }
  });
}

// ---------------------------------------------------------------------------
// grid / signal ops

// 3x3 max pooling with stride 2 and zero padding 1 over a G x G token grid
// stored row-major as (G*G) x C. Output grid side is G/2.
inline Var maxpool_3x3_s2(const Var& x, std::size_t grid) {
  require_dim(grid >= 2 && grid % 2 == 0,
              "maxpool_3x3_s2: grid side must be even and >= 2");
  require_dim(x.rows() == grid * grid, "maxpool_3x3_s2: row count != G*G");
  const std::size_t C = x.cols();
  const std::size_t og = grid / 2;
  Tensor out(og * og, C);
  auto argmax = std::make_shared<std::vector<long>>(og * og * C, -1);
  for (std::size_t oy = 0; oy < og; ++oy) {
    for (std::size_t ox = 0; ox < og; ++ox) {
      for (std::size_t c = 0; c < C; ++c) {
        Real best = 0;
        long best_idx = -1;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const long iy = static_cast<long>(oy) * 2 + dy;
            const long ix = static_cast<long>(ox) * 2 + dx;
            if (iy < 0 || ix < 0 || iy >= static_cast<long>(grid) ||
                ix >= static_cast<long>(grid))
              continue;  // zero padding never beats a found value unless all missing
            const std::size_t flat =
                (static_cast<std::size_t>(iy) * grid + static_cast<std::size_t>(ix)) * C + c;
            const Real v = x.value()[flat];
            if (best_idx < 0 || v > best) {
              best = v;
              best_idx = static_cast<long>(flat);
            }
          }
        }
        // padding contributes an implicit zero candidate
        if (best < 0.0) {
          bool window_padded =
              (oy == 0 || ox == 0 || oy * 2 + 1 >= grid || ox * 2 + 1 >= grid);
          if (window_padded) {
            best = 0.0;
            best_idx = -1;
          }
        }
        out[(oy * og + ox) * C + c] = best;
        (*argmax)[(oy * og + ox) * C + c] = best_idx;
      }
    }
  }
  auto xn = x.node();
  return detail::make_op(std::move(out), {x}, [xn, argmax](Node& n) {
    if (!xn->requires_grad) return;
    Tensor& g = xn->grad_buf();
    for (std::size_t k = 0; k < argmax->size(); ++k) {
      const long i = (*argmax)[k];
      if (i >= 0) g[static_cast<std::size_t>(i)] += n.grad[k];
    }
  });
}

// Overlap-add synthesis of windowed zero-phase frames. Frame t is centered at
// sample t*hop; samples outside [0, out_len) are discarded. inv_env carries
// the precomputed reciprocal window-overlap envelope.
inline Var overlap_add(const Var& frames, std::size_t hop, std::size_t out_len,
                       const Tensor& window, const Tensor& inv_env) {
  const std::size_t n_fft = frames.cols();
  require_dim(window.size() == n_fft, "overlap_add: window length mismatch");
  require_dim(inv_env.size() == out_len, "overlap_add: envelope length mismatch");
  const std::size_t F = frames.rows();
  const long half = static_cast<long>(n_fft / 2);
  Tensor out(out_len, 1);
  for (std::size_t t = 0; t < F; ++t) {
    const long start = static_cast<long>(t * hop) - half;
    for (std::size_t j = 0; j < n_fft; ++j) {
      const long n = start + static_cast<long>(j);
      if (n < 0 || n >= static_cast<long>(out_len)) continue;
      out[static_cast<std::size_t>(n)] +=
          frames.value().at(t, j) * window[j];
    }
  }
  for (std::size_t n = 0; n < out_len; ++n) out[n] *= inv_env[n];
  auto fn = frames.node();
  Tensor w = window, ie = inv_env;
  return detail::make_op(
      std::move(out), {frames}, [fn, hop, out_len, w, ie, half](Node& n) {
        if (!fn->requires_grad) return;
        Tensor& g = fn->grad_buf();
        const std::size_t n_fft = fn->value.cols();
        for (std::size_t t = 0; t < fn->value.rows(); ++t) {
          const long start = static_cast<long>(t * hop) - half;
          for (std::size_t j = 0; j < n_fft; ++j) {
            const long s = start + static_cast<long>(j);
            if (s < 0 || s >= static_cast<long>(out_len)) continue;
            g.at(t, j) += n.grad[static_cast<std::size_t>(s)] * w[j] *
                          ie[static_cast<std::size_t>(s)];
          }
        }
      });
}

// ---------------------------------------------------------------------------
// backward

inline void backward(const Var& loss) {
  require_dim(loss.rows() == 1 && loss.cols() == 1,
              "backward: loss must be a 1 x 1 scalar");
  require(loss.requires_grad(),
          "backward: loss does not depend on any differentiable input");
  // Collect the reachable subgraph, then replay in descending creation order.
  std::vector<Node*> nodes;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{loss.node().get()};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    nodes.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second)
        stack.push_back(p.get());
    }
  }
  std::sort(nodes.begin(), nodes.end(),
            [](const Node* a, const Node* b) { return a->id > b->id; });
  loss.node()->grad_buf()[0] = 1.0;
  for (Node* n : nodes) {
    if (n->backprop && n->grad.size()) n->backprop(*n);
  }
}

}  // namespace ftv
