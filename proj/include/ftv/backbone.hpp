#pragma once

#include <array>
#include <cctype>
#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ftv/attributes.hpp"
#include "ftv/autodiff.hpp"
#include "ftv/common.hpp"
#include "ftv/conditioner.hpp"
#include "ftv/face_encoder.hpp"
#include "ftv/mel.hpp"
#include "ftv/nn.hpp"

namespace ftv {

inline const char* kDefaultCharset = "abcdefghijklmnopqrstuvwxyz0123456789 .,?!'-";

// Character-level vocabulary; id 0 is the unknown token.
class PhonemeVocabulary {
 public:
  explicit PhonemeVocabulary(std::string charset = kDefaultCharset)
      : charset_(std::move(charset)) {
    require(!charset_.empty(), "vocabulary: empty charset");
    map_.fill(0);
    for (std::size_t i = 0; i < charset_.size(); ++i)
      map_[static_cast<unsigned char>(charset_[i])] = static_cast<int>(i + 1);
  }

  std::size_t size() const { return charset_.size() + 1; }
  const std::string& charset() const { return charset_; }

  std::vector<std::size_t> encode(const std::string& text) const {
    require(!text.empty(), "vocabulary: cannot encode empty text");
    std::vector<std::size_t> ids;
    ids.reserve(text.size());
    for (char ch : text)
      ids.push_back(static_cast<std::size_t>(
          map_[static_cast<unsigned char>(
              std::tolower(static_cast<unsigned char>(ch)))]));
    return ids;
  }

 private:
  std::string charset_;
  std::array<int, 256> map_;
};

struct BackboneConfig {
  std::size_t hidden = 192;  // phoneme hidden channels C
  std::size_t depth = 2;
  std::size_t heads = 4;
  std::size_t upsample = 4;  // mel frames per phoneme
  std::size_t max_positions = 512;
  std::string charset = kDefaultCharset;
  MelConfig mel;
  Real attr_weight = 1.0;  // weight of L_attr against the mel loss

  void validate() const {
    require(hidden >= 1 && depth >= 1 && heads >= 1 && upsample >= 1,
            "backbone config: zero-sized field");
    require(hidden % heads == 0, "backbone config: hidden not divisible by heads");
    require(max_positions >= 1, "backbone config: max_positions must be positive");
    require(!charset.empty(), "backbone config: empty charset");
    require(attr_weight >= 0, "backbone config: attr weight must be nonnegative");
    mel.validate();
  }
};

namespace detail {
inline std::shared_ptr<std::vector<long>> row_select_indices(
    const std::vector<std::size_t>& rows, std::size_t cols) {
  auto idx = std::make_shared<std::vector<long>>(rows.size() * cols);
  std::size_t k = 0;
  for (std::size_t r : rows)
    for (std::size_t c = 0; c < cols; ++c)
      (*idx)[k++] = static_cast<long>(r * cols + c);
  return idx;
}

// tap-major im2col over time with zero padding, for a width-k convolution
inline std::shared_ptr<std::vector<long>> conv1d_gather_indices(std::size_t T,
                                                                std::size_t C,
                                                                std::size_t k) {
  const long pad = static_cast<long>((k - 1) / 2);
  auto idx = std::make_shared<std::vector<long>>(T * C * k);
  std::size_t n = 0;
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < k; ++j) {
      const long src = static_cast<long>(t) + static_cast<long>(j) - pad;
      for (std::size_t c = 0; c < C; ++c)
        (*idx)[n++] = (src < 0 || src >= static_cast<long>(T))
                          ? -1
                          : static_cast<long>(src) * static_cast<long>(C) +
                                static_cast<long>(c);
    }
  return idx;
}
}  // namespace detail

// Phoneme encoder -> conditioner seam -> deterministic upsampling ->
// convolutional mel decoder -> fixed differentiable waveform inverter.
class AcousticBackbone {
 public:
  static constexpr std::size_t kDecoderKernel = 5;

  AcousticBackbone(ParamStore& ps, const BackboneConfig& cfg,
                   const std::string& prefix = "backbone")
      : cfg_(cfg), vocab_(cfg.charset) {
    cfg_.validate();
    const std::size_t C = cfg_.hidden;
    embed_ = ps.create_normal(prefix + ".embed", vocab_.size(), C, 0.02);
    pos_ = ps.create_normal(prefix + ".pos", cfg_.max_positions, C, 0.02);
    for (std::size_t b = 0; b < cfg_.depth; ++b)
      blocks_.push_back(make_transformer_block(
          ps, prefix + ".block" + std::to_string(b), C, cfg_.heads));
    final_norm_ = make_layer_norm(ps, prefix + ".final_ln", C);
    dec1_ = make_linear(ps, prefix + ".dec1", C * kDecoderKernel, C);
    dec1_norm_ = make_layer_norm(ps, prefix + ".dec1_ln", C);
    dec2_ = make_linear(ps, prefix + ".dec2", C * kDecoderKernel, C);
    dec2_norm_ = make_layer_norm(ps, prefix + ".dec2_ln", C);
    mel_proj_ = make_linear(ps, prefix + ".mel_proj", C, cfg_.mel.n_mels);
    inverter_ = MelInverterBasis::build(cfg_.mel);
  }

  const BackboneConfig& config() const { return cfg_; }
  const PhonemeVocabulary& vocabulary() const { return vocab_; }
  std::size_t channels() const { return cfg_.hidden; }

  // Text encoder output: T x C phoneme hidden states.
  Var encode_text(const std::vector<std::size_t>& ids) const {
    require(!ids.empty(), "encode_text: empty phoneme sequence");
    require(ids.size() <= cfg_.max_positions,
            "encode_text: sequence longer than max_positions (" +
                std::to_string(ids.size()) + " > " +
                std::to_string(cfg_.max_positions) + ")");
    for (std::size_t id : ids)
      require(id < vocab_.size(), "encode_text: id out of vocabulary");
    const std::size_t C = cfg_.hidden;
    Var x = gather(embed_, ids.size(), C,
                   detail::row_select_indices(ids, C));
    std::vector<std::size_t> positions(ids.size());
    for (std::size_t t = 0; t < ids.size(); ++t) positions[t] = t;
    x = add(x, gather(pos_, ids.size(), C,
                      detail::row_select_indices(positions, C)));
    for (const auto& block : blocks_) x = block(x);
    return final_norm_(x);
  }

  // Conditioned hidden states -> predicted log-mel, u frames per phoneme.
  Var decode_mel(const Var& hidden) const {
    const std::size_t T = hidden.rows();
    const std::size_t C = cfg_.hidden;
    require_dim(hidden.cols() == C, "decode_mel: channel mismatch");
    const std::size_t F = T * cfg_.upsample;
    std::vector<std::size_t> rows(F);
    for (std::size_t f = 0; f < F; ++f) rows[f] = f / cfg_.upsample;
    Var x = gather(hidden, F, C, detail::row_select_indices(rows, C));
    x = dec1_norm_(gelu(dec1_(gather(x, F, C * kDecoderKernel,
                                     detail::conv1d_gather_indices(F, C,
                                                                   kDecoderKernel)))));
    x = dec2_norm_(gelu(dec2_(gather(x, F, C * kDecoderKernel,
                                     detail::conv1d_gather_indices(F, C,
                                                                   kDecoderKernel)))));
    return mel_proj_(x);
  }

  // Fixed differentiable inverter: undo log compression, project through the
  // filterbank pseudo-inverse fused with zero-phase frame synthesis, then
  // overlap-add. Output length is exactly frames * hop.
  Var invert_mel(const Var& mel_log) const {
    require_dim(mel_log.cols() == cfg_.mel.n_mels, "invert_mel: mel bin mismatch");
    const std::size_t F = mel_log.rows();
    const Var magnitudes = exp_clamped(mel_log, -30.0, 6.0);
    const Var frames = matmul_nt(magnitudes, Var::constant(inverter_.synthesis));
    return overlap_add(frames, cfg_.mel.hop, F * cfg_.mel.hop,
                       inverter_.window, inverter_.inverse_envelope(F));
  }

  std::size_t waveform_length(std::size_t n_phonemes) const {
    return n_phonemes * cfg_.upsample * cfg_.mel.hop;
  }

 private:
  BackboneConfig cfg_;
  PhonemeVocabulary vocab_;
  Var embed_, pos_;
  std::vector<TransformerBlock> blocks_;
  LayerNormLayer final_norm_;
  Linear dec1_, dec2_;
  LayerNormLayer dec1_norm_, dec2_norm_;
  Linear mel_proj_;
  MelInverterBasis inverter_;
};

// ---------------------------------------------------------------------------
// total loss

struct TotalLossTerms {
  Var mel_loss;              // 1 x 1, mean absolute error over aligned frames
  AttributeLossTerms attr;
  Var total;                 // mel_loss + attr_weight * attr.total
};

// Predicted and target mels are truncated to their common frame count.
inline TotalLossTerms total_loss(const Var& predicted_mel,
                                 const Tensor& target_mel,
                                 const AttributeLossTerms& attr,
                                 Real attr_weight = 1.0) {
  require_dim(predicted_mel.cols() == target_mel.cols(),
              "total_loss: mel bin mismatch");
  const std::size_t common = std::min(predicted_mel.rows(), target_mel.rows());
  require_dim(common > 0, "total_loss: zero-length mel overlap");

  Var pred = predicted_mel;
  Tensor target = target_mel;
  const std::size_t M = target_mel.cols();
  if (pred.rows() != common) {
    std::vector<std::size_t> rows(common);
    for (std::size_t i = 0; i < common; ++i) rows[i] = i;
    pred = gather(pred, common, M, detail::row_select_indices(rows, M));
  }
  if (target.rows() != common) {
    Tensor trimmed(common, M);
    for (std::size_t i = 0; i < common * M; ++i) trimmed[i] = target[i];
    target = trimmed;
  }

  TotalLossTerms terms;
  terms.mel_loss = mae(pred, target);
  terms.attr = attr;
  terms.total = add(terms.mel_loss, mul_scalar(attr.total, attr_weight));
  return terms;
}

// ---------------------------------------------------------------------------
// full model

struct ModelConfig {
  EncoderConfig encoder;
  ConditionerConfig conditioner;
  AttributeConfig attributes;
  BackboneConfig backbone;

  void validate() const {
    encoder.validate();
    conditioner.validate();
    attributes.validate();
    backbone.validate();
  }
};

struct SynthesisOutput {
  Var mel;       // (u*T) x M log-mel
  Var waveform;  // (u*T*hop) x 1
};

// Aggregates the face encoder, conditioner, attribute heads, and backbone
// over one shared parameter store.
class FtvModel {
 public:
  FtvModel(const ModelConfig& cfg, const AttributeVocab& vocab,
           std::uint64_t init_seed)
      : cfg_(cfg), vocab_(vocab), params_(init_seed) {
    cfg_.validate();
    encoder_ = std::make_unique<FaceEncoder>(params_, cfg_.encoder);
    backbone_ = std::make_unique<AcousticBackbone>(params_, cfg_.backbone);
    conditioner_ = std::make_unique<Conditioner>(params_, cfg_.conditioner,
                                                 cfg_.backbone.hidden);
    if (cfg_.attributes.visual_enhancement)
      face_head_ = std::make_unique<FaceAttributeHead>(params_, cfg_.attributes,
                                                       vocab_);
    if (cfg_.attributes.audio_enhancement)
      audio_head_ = std::make_unique<AudioAttributeHead>(params_,
                                                         cfg_.attributes, vocab_);
  }

  const ModelConfig& config() const { return cfg_; }
  const AttributeVocab& vocab() const { return vocab_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const FaceEncoder& encoder() const { return *encoder_; }
  const AcousticBackbone& backbone() const { return *backbone_; }
  const Conditioner& conditioner() const { return *conditioner_; }
  const FaceAttributeHead* face_head() const { return face_head_.get(); }
  const AudioAttributeHead* audio_head() const { return audio_head_.get(); }

  std::size_t parameter_count() const { return params_.value_count(); }

  // Phoneme encoder -> identity modulation -> mel decoder -> inverter.
  SynthesisOutput synthesize(const std::vector<std::size_t>& ids,
                             const Var& embedding) const {
    const Var text = backbone_->encode_text(ids);
    const ConditioningParams cp = conditioner_->derive_params(embedding);
    const Var conditioned = conditioner_->modulate(text, cp);
    const Var mel = backbone_->decode_mel(conditioned);
    check_finite(mel, "synthesized mel");
    return SynthesisOutput{mel, backbone_->invert_mel(mel)};
  }

  SynthesisOutput synthesize_text(const std::string& text,
                                  const Var& embedding) const {
    return synthesize(backbone_->vocabulary().encode(text), embedding);
  }

 private:
  ModelConfig cfg_;
  AttributeVocab vocab_;
  ParamStore params_;
  std::unique_ptr<FaceEncoder> encoder_;
  std::unique_ptr<AcousticBackbone> backbone_;
  std::unique_ptr<Conditioner> conditioner_;
  std::unique_ptr<FaceAttributeHead> face_head_;
  std::unique_ptr<AudioAttributeHead> audio_head_;
};

}  // namespace ftv
