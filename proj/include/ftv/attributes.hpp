#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "ftv/autodiff.hpp"
#include "ftv/common.hpp"
#include "ftv/face_encoder.hpp"
#include "ftv/nn.hpp"

namespace ftv {

// Category vocabularies are fixed at dataset-preparation time and stored in
// the manifest header; these are the defaults used throughout.
struct AttributeVocab {
  std::vector<std::string> gender = {"male", "female"};
  std::vector<std::string> race = {"Caucasian",        "Asian",
                                   "Middle Eastern",   "African American",
                                   "Latino Hispanic",  "Indian"};

  std::size_t index_of_gender(const std::string& name) const {
    for (std::size_t i = 0; i < gender.size(); ++i)
      if (gender[i] == name) return i;
    throw Error("unknown gender category: " + name);
  }
  std::size_t index_of_race(const std::string& name) const {
    for (std::size_t i = 0; i < race.size(); ++i)
      if (race[i] == name) return i;
    throw Error("unknown race category: " + name);
  }

  bool operator==(const AttributeVocab& o) const {
    return gender == o.gender && race == o.race;
  }
};

struct AttributeLabel {
  std::size_t gender = 0;
  std::size_t race = 0;

  void validate(const AttributeVocab& vocab) const {
    require(gender < vocab.gender.size(),
            "attribute label: gender index " + std::to_string(gender) +
                " out of vocabulary");
    require(race < vocab.race.size(),
            "attribute label: race index " + std::to_string(race) +
                " out of vocabulary");
  }

  bool operator==(const AttributeLabel& o) const {
    return gender == o.gender && race == o.race;
  }
};

enum class LossReduction { kSum, kMean };

struct AttributeConfig {
  Real alpha = 0.3;
  LossReduction reduction = LossReduction::kSum;
  std::size_t resample_len = 8192;
  std::size_t hidden = 64;
  bool visual_enhancement = true;
  bool audio_enhancement = true;

  void validate() const {
    require(alpha >= 0, "attribute config: alpha must be nonnegative");
    require(resample_len >= 2, "attribute config: resample length must be >= 2");
    require(hidden >= 1, "attribute config: hidden width must be positive");
  }
};

// ---------------------------------------------------------------------------
// temporal linear resampling to a fixed length

namespace detail {
inline void resample_coords(std::size_t n, std::size_t target, std::size_t k,
                            std::size_t& i0, Real& w) {
  const Real pos = static_cast<Real>(k) * static_cast<Real>(n - 1) /
                   static_cast<Real>(target - 1);
  i0 = static_cast<std::size_t>(pos);
  if (i0 >= n - 1) {
    i0 = n - 2;
    w = 1.0;
  } else {
    w = pos - static_cast<Real>(i0);
  }
}
}  // namespace detail

// Endpoint-aligned linear interpolation of an N-sample signal to R samples.
inline std::vector<Real> resample_waveform(const std::vector<Real>& wav,
                                           std::size_t target_len) {
  require_dim(wav.size() >= 2, "resample_waveform: need at least 2 samples");
  require_dim(target_len >= 2, "resample_waveform: target length must be >= 2");
  std::vector<Real> out(target_len);
  for (std::size_t k = 0; k < target_len; ++k) {
    std::size_t i0;
    Real w;
    detail::resample_coords(wav.size(), target_len, k, i0, w);
    out[k] = (1.0 - w) * wav[i0] + w * wav[i0 + 1];
  }
  return out;
}

// Differentiable counterpart over an N x 1 column; identical arithmetic.
inline Var resample_rows(const Var& wav, std::size_t target_len) {
  require_dim(wav.cols() == 1, "resample_rows: expected a column vector");
  const std::size_t n = wav.rows();
  require_dim(n >= 2, "resample_rows: need at least 2 samples");
  require_dim(target_len >= 2, "resample_rows: target length must be >= 2");
  auto idx0 = std::make_shared<std::vector<long>>(target_len);
  auto idx1 = std::make_shared<std::vector<long>>(target_len);
  Tensor w0(target_len, 1), w1(target_len, 1);
  for (std::size_t k = 0; k < target_len; ++k) {
    std::size_t i0;
    Real w;
    detail::resample_coords(n, target_len, k, i0, w);
    (*idx0)[k] = static_cast<long>(i0);
    (*idx1)[k] = static_cast<long>(i0 + 1);
    w0[k] = 1.0 - w;
    w1[k] = w;
  }
  const Var lo = mul_constant(gather(wav, target_len, 1, idx0), w0);
  const Var hi = mul_constant(gather(wav, target_len, 1, idx1), w1);
  return add(lo, hi);
}

// ---------------------------------------------------------------------------
// prediction heads

struct AttributeLogits {
  Var gender;  // 1 x |gender vocab|
  Var race;    // 1 x |race vocab|
};

// Visual side: shared hidden layer, separate output layers
// (two fully connected layers per attribute: 128 -> hidden -> classes).
class FaceAttributeHead {
 public:
  FaceAttributeHead(ParamStore& ps, const AttributeConfig& cfg,
                    const AttributeVocab& vocab,
                    const std::string& prefix = "face_head")
      : hidden_(make_linear(ps, prefix + ".hidden", kIdentityDim, cfg.hidden)),
        gender_(make_linear(ps, prefix + ".gender", cfg.hidden,
                            vocab.gender.size())),
        race_(make_linear(ps, prefix + ".race", cfg.hidden, vocab.race.size())) {}

  AttributeLogits operator()(const Var& embedding) const {
    const Var h = relu(hidden_(embedding));
    return AttributeLogits{gender_(h), race_(h)};
  }

 private:
  Linear hidden_, gender_, race_;
};

// Acoustic side: one linear layer per attribute over the fixed-size
// resampled waveform.
class AudioAttributeHead {
 public:
  AudioAttributeHead(ParamStore& ps, const AttributeConfig& cfg,
                     const AttributeVocab& vocab,
                     const std::string& prefix = "audio_head")
      : resample_len_(cfg.resample_len),
        gender_(make_linear(ps, prefix + ".gender", cfg.resample_len,
                            vocab.gender.size())),
        race_(make_linear(ps, prefix + ".race", cfg.resample_len,
                          vocab.race.size())) {}

  // Input: fixed-length resampled waveform as a 1 x R row.
  AttributeLogits operator()(const Var& resampled) const {
    require_dim(resampled.rows() == 1 && resampled.cols() == resample_len_,
                "audio head: expected a 1 x " + std::to_string(resample_len_) +
                    " resampled waveform");
    return AttributeLogits{gender_(resampled), race_(resampled)};
  }

  std::size_t resample_len() const { return resample_len_; }

 private:
  std::size_t resample_len_;
  Linear gender_, race_;
};

// ---------------------------------------------------------------------------
// combined bilateral loss: L_attr = L_face + alpha * L_audio

struct AttributeLossTerms {
  Var face_loss;   // 1 x 1
  Var audio_loss;  // 1 x 1
  Var total;       // 1 x 1
  Real alpha = 0;
};

// Either side may be absent (enhancement disabled); its loss is a constant
// zero and contributes nothing to gradients.
inline AttributeLossTerms attribute_loss(
    const std::optional<AttributeLogits>& face,
    const std::optional<AttributeLogits>& audio, const AttributeLabel& label,
    Real alpha, LossReduction reduction = LossReduction::kSum) {
  require(alpha >= 0, "attribute_loss: alpha must be nonnegative");
  auto side_loss = [&](const AttributeLogits& logits) {
    require(label.gender < logits.gender.cols(),
            "attribute_loss: gender label out of vocabulary");
    require(label.race < logits.race.cols(),
            "attribute_loss: race label out of vocabulary");
    Var sum = add(cross_entropy_logits(logits.gender, label.gender),
                  cross_entropy_logits(logits.race, label.race));
    if (reduction == LossReduction::kMean) sum = mul_scalar(sum, 0.5);
    return sum;
  };

  AttributeLossTerms terms;
  terms.alpha = alpha;
  terms.face_loss = face ? side_loss(*face) : Var::constant(Tensor::scalar(0));
  terms.audio_loss = audio ? side_loss(*audio) : Var::constant(Tensor::scalar(0));
  terms.total = add(terms.face_loss, mul_scalar(terms.audio_loss, alpha));
  return terms;
}

}  // namespace ftv
