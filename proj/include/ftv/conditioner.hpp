#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "ftv/autodiff.hpp"
#include "ftv/common.hpp"
#include "ftv/face_encoder.hpp"
#include "ftv/nn.hpp"

namespace ftv {

struct ConditionerConfig {
  std::size_t kernel_size = 3;
  bool residual = true;

  void validate() const {
    require(kernel_size >= 1 && kernel_size % 2 == 1,
            "conditioner: kernel size must be odd");
  }
};

// Gain / direction / bias triple that parameterizes the identity-conditioned
// 1-D convolution. The direction is stored tap-major: d[j*C + c] is the
// weight of tap j for channel c; the applied kernel is g * d / ||d||.
struct ConditioningParams {
  Var gain;       // 1 x 1
  Var direction;  // 1 x (C * k)
  Var bias;       // 1 x C
  std::size_t channels = 0;
  std::size_t kernel_size = 0;
};

namespace detail {
// Time-shift gather over a T x C sequence with zero padding.
inline std::shared_ptr<std::vector<long>> time_shift_indices(std::size_t T,
                                                             std::size_t C,
                                                             long offset) {
  auto idx = std::make_shared<std::vector<long>>(T * C);
  std::size_t k = 0;
  for (std::size_t t = 0; t < T; ++t) {
    const long src = static_cast<long>(t) + offset;
    for (std::size_t c = 0; c < C; ++c)
      (*idx)[k++] = (src < 0 || src >= static_cast<long>(T))
                        ? -1
                        : static_cast<long>(src) * static_cast<long>(C) +
                              static_cast<long>(c);
  }
  return idx;
}
}  // namespace detail

// Fuses the identity embedding into phoneme hidden states via a depthwise
// 1-D convolution whose kernel is derived from the embedding.
class Conditioner {
 public:
  Conditioner(ParamStore& ps, const ConditionerConfig& cfg,
              std::size_t channels, const std::string& prefix = "conditioner")
      : cfg_(cfg), channels_(channels) {
    cfg_.validate();
    const std::size_t out = 1 + channels * cfg_.kernel_size + channels;
    proj_ = make_linear(ps, prefix + ".proj", kIdentityDim, out);
  }

  const ConditionerConfig& config() const { return cfg_; }
  std::size_t channels() const { return channels_; }

  // Single linear projection of the 128-d embedding, split into (g, d, b).
  ConditioningParams derive_params(const Var& embedding) const {
    require_dim(embedding.rows() == 1 && embedding.cols() == kIdentityDim,
                "derive_params: expected a 1 x 128 embedding");
    const Var p = proj_(embedding);
    ConditioningParams params;
    params.gain = slice_cols(p, 0, 1);
    params.direction = slice_cols(p, 1, channels_ * cfg_.kernel_size);
    params.bias = slice_cols(p, 1 + channels_ * cfg_.kernel_size, channels_);
    params.channels = channels_;
    params.kernel_size = cfg_.kernel_size;
    Real norm_sq = 0;
    for (Real v : params.direction.value().vec()) norm_sq += v * v;
    if (!(norm_sq > 0))
      throw ConditioningError(
          "derive_params: direction vector has zero norm; kernel undefined");
    return params;
  }

  // (g * d/||d||) convolved depthwise over time, plus bias, plus the input
  // when the residual flag is set.
  Var modulate(const Var& x, const ConditioningParams& params) const {
    require_dim(x.cols() == params.channels,
                "modulate: channel count mismatch (" + std::to_string(x.cols()) +
                    " vs " + std::to_string(params.channels) + ")");
    require(params.kernel_size == cfg_.kernel_size,
            "modulate: kernel size mismatch");
    const std::size_t T = x.rows();
    const std::size_t C = params.channels;
    const std::size_t k = params.kernel_size;
    const long pad = static_cast<long>((k - 1) / 2);

    const Var norm = sqrt_elem(sum_all(mul(params.direction, params.direction)));
    require(norm.value()[0] > 0, "modulate: zero-norm direction");
    const Var kernel = mul_bcast(div_bcast(params.direction, norm), params.gain);

    Var conv;
    for (std::size_t j = 0; j < k; ++j) {
      const Var tap = slice_cols(kernel, j * C, C);
      const long offset = static_cast<long>(j) - pad;
      Var shifted = x;
      if (offset != 0)
        shifted = gather(x, T, C, detail::time_shift_indices(T, C, offset));
      const Var term = mul_rowvec(shifted, tap);
      conv = conv.valid() ? add(conv, term) : term;
    }
    Var out = add_rowvec(conv, params.bias);
    if (cfg_.residual) out = add(x, out);
    return out;
  }

 private:
  ConditionerConfig cfg_;
  std::size_t channels_;
  Linear proj_;
};

}  // namespace ftv
