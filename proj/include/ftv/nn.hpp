#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ftv/autodiff.hpp"
#include "ftv/rng.hpp"
#include "ftv/tensor.hpp"

namespace ftv {

// Ordered registry of named trainable tensors. Construction order is fixed,
// which makes initialization, optimizer traversal, and checkpoints
// deterministic for a given config and seed.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t init_seed) : rng_(init_seed) {}

  Var create(const std::string& name, Tensor init) {
    for (const auto& [n, v] : items_)
      require(n != name, "ParamStore: duplicate parameter name " + name);
    Var v = Var::leaf(std::move(init), /*requires_grad=*/true);
    items_.emplace_back(name, v);
    return v;
  }

  Var create_normal(const std::string& name, std::size_t rows,
                    std::size_t cols, Real stddev) {
    return create(name, Tensor::randn(rows, cols, rng_, stddev));
  }

  Var create_zeros(const std::string& name, std::size_t rows, std::size_t cols) {
    return create(name, Tensor(rows, cols, 0.0));
  }

  Var create_const(const std::string& name, std::size_t rows, std::size_t cols,
                   Real value) {
    return create(name, Tensor(rows, cols, value));
  }

  const std::vector<std::pair<std::string, Var>>& items() const { return items_; }
  std::size_t count() const { return items_.size(); }

  std::size_t value_count() const {
    std::size_t n = 0;
    for (const auto& [name, v] : items_) n += v.value().size();
    return n;
  }

  Var find(const std::string& name) const {
    for (const auto& [n, v] : items_)
      if (n == name) return v;
    throw Error("ParamStore: no parameter named " + name);
  }

  void zero_grads() {
    for (auto& [n, v] : items_) v.zero_grad();
  }

  Rng& init_rng() { return rng_; }

 private:
  std::vector<std::pair<std::string, Var>> items_;
  Rng rng_;
};

struct Linear {
  Var w;  // out x in
  Var b;  // 1 x out
  Var operator()(const Var& x) const { return affine(x, w, b); }
};

inline Linear make_linear(ParamStore& ps, const std::string& name,
                          std::size_t in, std::size_t out) {
  const Real stddev = 1.0 / std::sqrt(static_cast<Real>(in));
  return Linear{ps.create_normal(name + ".w", out, in, stddev),
                ps.create_zeros(name + ".b", 1, out)};
}

struct LayerNormLayer {
  Var gamma;  // 1 x C
  Var beta;   // 1 x C
  Var operator()(const Var& x) const { return layer_norm(x, gamma, beta); }
};

inline LayerNormLayer make_layer_norm(ParamStore& ps, const std::string& name,
                                      std::size_t dim) {
  return LayerNormLayer{ps.create_const(name + ".gamma", 1, dim, 1.0),
                        ps.create_zeros(name + ".beta", 1, dim)};
}

// Global multi-head self-attention over the row dimension. In single-token
// mode attention weights are identically one, so the layer reduces to the
// learned per-token transform wo(wv(x)) and carries no query/key projections.
struct MultiHeadAttention {
  Linear wq, wk, wv, wo;
  std::size_t heads = 1;
  bool single_token = false;

  Var operator()(const Var& x) const {
    if (single_token) {
      require_dim(x.rows() == 1, "attention: built for a single token");
      return wo(wv(x));
    }
    const std::size_t dim = x.cols();
    const std::size_t dh = dim / heads;
    const Var q = wq(x), k = wk(x), v = wv(x);
    const Real scale = 1.0 / std::sqrt(static_cast<Real>(dh));
    std::vector<Var> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      const Var qh = slice_cols(q, h * dh, dh);
      const Var kh = slice_cols(k, h * dh, dh);
      const Var vh = slice_cols(v, h * dh, dh);
      const Var scores = mul_scalar(matmul_nt(qh, kh), scale);
      outs.push_back(matmul(softmax_rows(scores), vh));
    }
    return wo(concat_cols(outs));
  }
};

inline MultiHeadAttention make_attention(ParamStore& ps, const std::string& name,
                                         std::size_t dim, std::size_t heads,
                                         bool single_token = false) {
  require(heads >= 1 && dim % heads == 0,
          "attention: dim must be divisible by head count");
  MultiHeadAttention attn;
  if (!single_token) {
    attn.wq = make_linear(ps, name + ".wq", dim, dim);
    attn.wk = make_linear(ps, name + ".wk", dim, dim);
  }
  attn.wv = make_linear(ps, name + ".wv", dim, dim);
  attn.wo = make_linear(ps, name + ".wo", dim, dim);
  attn.heads = heads;
  attn.single_token = single_token;
  return attn;
}

struct FeedForward {
  Linear fc1, fc2;
  Var operator()(const Var& x) const { return fc2(gelu(fc1(x))); }
};

inline FeedForward make_feed_forward(ParamStore& ps, const std::string& name,
                                     std::size_t dim, std::size_t hidden) {
  return FeedForward{make_linear(ps, name + ".fc1", dim, hidden),
                     make_linear(ps, name + ".fc2", hidden, dim)};
}

// Pre-norm transformer block: x + MHSA(LN(x)), then x + FFN(LN(x)).
struct TransformerBlock {
  LayerNormLayer ln1, ln2;
  MultiHeadAttention attn;
  FeedForward ffn;

  Var operator()(const Var& x) const {
    const Var a = add(x, attn(ln1(x)));
    return add(a, ffn(ln2(a)));
  }
};

inline TransformerBlock make_transformer_block(ParamStore& ps,
                                               const std::string& name,
                                               std::size_t dim,
                                               std::size_t heads,
                                               std::size_t mlp_ratio = 4,
                                               bool single_token = false) {
  return TransformerBlock{make_layer_norm(ps, name + ".ln1", dim),
                          make_layer_norm(ps, name + ".ln2", dim),
                          make_attention(ps, name + ".attn", dim, heads,
                                         single_token),
                          make_feed_forward(ps, name + ".ffn", dim,
                                            dim * mlp_ratio)};
}

inline void check_finite(const Var& v, const std::string& what) {
  if (!v.value().all_finite())
    throw Error("non-finite values detected in " + what);
}

}  // namespace ftv
