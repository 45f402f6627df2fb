#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "ftv/autodiff.hpp"
#include "ftv/common.hpp"
#include "ftv/image.hpp"
#include "ftv/nn.hpp"
#include "ftv/tensor.hpp"

namespace ftv {

// The identity embedding is fixed at 128 dimensions for every configuration.
inline constexpr std::size_t kIdentityDim = 128;

struct EncoderConfig {
  std::size_t image_size = 64;
  std::size_t patch_size = 16;
  std::vector<std::size_t> dims = {64, 128, 128};
  std::vector<std::size_t> depths = {2, 2, 2};
  std::size_t heads = 4;
  bool positional_embeddings = true;
  bool use_fga = true;  // false: single flat token + vanilla transformer stack

  std::size_t base_grid() const { return image_size / patch_size; }

  // Number of hierarchy levels; the grid halves per aggregation until one
  // token remains, so the base grid side must be a power of two.
  std::size_t levels() const {
    std::size_t g = base_grid(), n = 1;
    while (g > 1) {
      g /= 2;
      ++n;
    }
    return n;
  }

  void validate() const {
    require(image_size > 0 && patch_size > 0, "encoder config: zero size");
    require_dim(image_size % patch_size == 0,
                "encoder config: image size " + std::to_string(image_size) +
                    " not divisible by patch size " + std::to_string(patch_size));
    std::size_t g = base_grid();
    while (g > 1) {
      require_dim(g % 2 == 0,
                  "encoder config: patch grid side must be a power of two");
      g /= 2;
    }
    if (use_fga) {
      require(dims.size() == levels() && depths.size() == levels(),
              "encoder config: dims/depths must have one entry per level (" +
                  std::to_string(levels()) + ")");
    } else {
      require(!dims.empty() && !depths.empty(),
              "encoder config: dims/depths must be non-empty");
    }
    for (std::size_t d : dims)
      require(d % heads == 0, "encoder config: dim not divisible by heads");
  }
};

// Token grid at one hierarchy level: (grid*grid) x dim, row-major spatially.
struct PatchGrid {
  Var tokens;
  std::size_t grid = 0;
  std::size_t level = 0;
};

struct IdentityEmbedding {
  Tensor values;  // 1 x 128

  void validate() const {
    require_dim(values.rows() == 1 && values.cols() == kIdentityDim,
                "identity embedding must be 1 x 128");
    require(values.all_finite(), "identity embedding contains non-finite values");
  }
};

namespace detail {

// Flattened-pixel gather indices for non-overlapping P x P patches of a
// planar 3 x side x side image. Row r = patch (pi, pj); column layout is
// (channel, y, x) within the patch.
inline std::shared_ptr<std::vector<long>> patch_gather_indices(
    std::size_t side, std::size_t patch) {
  const std::size_t grid = side / patch;
  const std::size_t cols = 3 * patch * patch;
  auto idx = std::make_shared<std::vector<long>>(grid * grid * cols);
  std::size_t k = 0;
  for (std::size_t pi = 0; pi < grid; ++pi)
    for (std::size_t pj = 0; pj < grid; ++pj)
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < patch; ++y)
          for (std::size_t x = 0; x < patch; ++x)
            (*idx)[k++] = static_cast<long>(
                (c * side + pi * patch + y) * side + pj * patch + x);
  return idx;
}

// im2col indices for a 3x3, stride-1, zero-pad-1 convolution over a G x G
// token grid with D channels; -1 marks padding. Column layout is tap-major.
inline std::shared_ptr<std::vector<long>> conv3x3_gather_indices(
    std::size_t grid, std::size_t dim) {
  auto idx = std::make_shared<std::vector<long>>(grid * grid * 9 * dim);
  std::size_t k = 0;
  for (std::size_t y = 0; y < grid; ++y)
    for (std::size_t x = 0; x < grid; ++x)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const long iy = static_cast<long>(y) + dy;
          const long ix = static_cast<long>(x) + dx;
          const bool in =
              iy >= 0 && ix >= 0 && iy < static_cast<long>(grid) &&
              ix < static_cast<long>(grid);
          for (std::size_t c = 0; c < dim; ++c)
            (*idx)[k++] =
                in ? static_cast<long>(
                         (static_cast<std::size_t>(iy) * grid +
                          static_cast<std::size_t>(ix)) *
                             dim +
                         c)
                   : -1;
        }
  return idx;
}

}  // namespace detail

// Hierarchical facial encoder: patch decomposition, per-level transformer
// blocks, and facial granularity aggregation down to a single token that is
// projected to the 128-d identity embedding.
class FaceEncoder {
 public:
  FaceEncoder(ParamStore& ps, const EncoderConfig& cfg,
              const std::string& prefix = "face_encoder")
      : cfg_(cfg) {
    cfg_.validate();
    if (!cfg_.use_fga) {
      // ablation variant: the whole image is one token
      const std::size_t dim = cfg_.dims[0];
      flat_proj_ = make_linear(ps, prefix + ".flat_proj",
                               3 * cfg_.image_size * cfg_.image_size, dim);
      std::size_t total_depth = 0;
      for (std::size_t d : cfg_.depths) total_depth += d;
      std::vector<TransformerBlock> blocks;
      for (std::size_t b = 0; b < total_depth; ++b)
        blocks.push_back(make_transformer_block(
            ps, prefix + ".block" + std::to_string(b), dim, cfg_.heads,
            /*mlp_ratio=*/4, /*single_token=*/true));
      levels_.push_back(Level{{}, std::move(blocks)});
      out_proj_ = make_linear(ps, prefix + ".out_proj", dim, kIdentityDim);
      return;
    }

    patch_proj_ = make_linear(ps, prefix + ".patch_proj",
                              3 * cfg_.patch_size * cfg_.patch_size,
                              cfg_.dims[0]);
    std::size_t grid = cfg_.base_grid();
    for (std::size_t l = 0; l < cfg_.levels(); ++l) {
      Level level;
      const std::size_t dim = cfg_.dims[l];
      if (cfg_.positional_embeddings)
        level.pos = ps.create_normal(
            prefix + ".level" + std::to_string(l) + ".pos", grid * grid, dim,
            0.02);
      for (std::size_t b = 0; b < cfg_.depths[l]; ++b)
        level.blocks.push_back(make_transformer_block(
            ps,
            prefix + ".level" + std::to_string(l) + ".block" + std::to_string(b),
            dim, cfg_.heads, /*mlp_ratio=*/4,
            /*single_token=*/grid == 1));
      levels_.push_back(std::move(level));
      if (l + 1 < cfg_.levels()) {
        Fga fga;
        fga.conv = make_linear(ps, prefix + ".fga" + std::to_string(l) + ".conv",
                               9 * cfg_.dims[l], cfg_.dims[l + 1]);
        fga.norm = make_layer_norm(ps, prefix + ".fga" + std::to_string(l) + ".ln",
                                   cfg_.dims[l + 1]);
        fgas_.push_back(std::move(fga));
      }
      grid /= 2;
    }
    out_proj_ = make_linear(ps, prefix + ".out_proj", cfg_.dims.back(),
                            kIdentityDim);
  }

  const EncoderConfig& config() const { return cfg_; }

  // Non-overlapping patch decomposition followed by linear projection.
  PatchGrid patchify(const Var& image_flat, std::size_t side) const {
    require_dim(image_flat.value().size() == 3 * side * side,
                "patchify: flattened image size mismatch");
    require_dim(side % cfg_.patch_size == 0,
                "patchify: image side " + std::to_string(side) +
                    " not divisible by patch size " +
                    std::to_string(cfg_.patch_size));
    const std::size_t grid = side / cfg_.patch_size;
    auto idx = detail::patch_gather_indices(side, cfg_.patch_size);
    const Var patches = gather(image_flat, grid * grid,
                               3 * cfg_.patch_size * cfg_.patch_size, idx);
    return PatchGrid{patch_proj_(patches), grid, 0};
  }

  PatchGrid patchify(const FaceImage& image) const {
    Var flat = Var::constant(Tensor::column(image.pixels));
    return patchify(flat, image.side);
  }

  // Applies the level's positional embedding (if enabled) and its
  // transformer blocks. Token count and dimension are preserved.
  PatchGrid transformer_level(const PatchGrid& in) const {
    require(in.level < levels_.size(), "transformer_level: level out of range");
    require(in.tokens.rows() >= 1, "transformer_level: empty token set");
    const Level& level = levels_[in.level];
    Var x = in.tokens;
    if (level.pos.valid()) {
      require_dim(level.pos.rows() == x.rows(),
                  "transformer_level: token count does not match level");
      x = add(x, level.pos);
    }
    for (const auto& block : level.blocks) x = block(x);
    return PatchGrid{x, in.grid, in.level};
  }

  // Facial granularity aggregation: 3x3 convolution over the token grid,
  // layer normalization, then 3x3/stride-2/pad-1 max pooling. Grid side
  // halves, token count drops by exactly four.
  PatchGrid fga_aggregate(const PatchGrid& in) const {
    require_dim(in.grid >= 2, "fga_aggregate: cannot aggregate a single token");
    require_dim(in.grid % 2 == 0, "fga_aggregate: grid side must be even");
    require(in.level < fgas_.size(), "fga_aggregate: no aggregation stage here");
    const Fga& fga = fgas_[in.level];
    auto idx = detail::conv3x3_gather_indices(in.grid, in.tokens.cols());
    const Var cols = gather(in.tokens, in.grid * in.grid,
                            9 * in.tokens.cols(), idx);
    const Var conv = fga.conv(cols);
    const Var normed = fga.norm(conv);
    const Var pooled = maxpool_3x3_s2(normed, in.grid);
    return PatchGrid{pooled, in.grid / 2, in.level + 1};
  }

  // Full forward pass to the 1 x 128 identity embedding.
  Var encode(const Var& image_flat, std::size_t side) const {
    if (!cfg_.use_fga) {
      Var token = flat_proj_(reshape(image_flat, 1, image_flat.value().size()));
      for (const auto& block : levels_[0].blocks) token = block(token);
      return out_proj_(token);
    }
    require_dim(side == cfg_.image_size,
                "encode: image side does not match configuration");
    PatchGrid grid = patchify(image_flat, side);
    for (;;) {
      grid = transformer_level(grid);
      check_finite(grid.tokens, "encoder level " + std::to_string(grid.level));
      if (grid.grid == 1) break;
      grid = fga_aggregate(grid);
      check_finite(grid.tokens, "FGA output at level " + std::to_string(grid.level));
    }
    return out_proj_(grid.tokens);
  }

  Var encode(const FaceImage& image) const {
    return encode(Var::constant(Tensor::column(image.pixels)), image.side);
  }

  IdentityEmbedding encode_face(const FaceImage& image) const {
    GradPause pause;
    IdentityEmbedding emb{encode(image).value()};
    emb.validate();
    return emb;
  }

 private:
  struct Level {
    Var pos;  // invalid when positional embeddings are disabled
    std::vector<TransformerBlock> blocks;
  };
  struct Fga {
    Linear conv;
    LayerNormLayer norm;
  };

  EncoderConfig cfg_;
  Linear patch_proj_;
  Linear flat_proj_;
  std::vector<Level> levels_;
  std::vector<Fga> fgas_;
  Linear out_proj_;
};

}  // namespace ftv
