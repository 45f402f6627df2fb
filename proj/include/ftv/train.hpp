#pragma once

#include <chrono>
#include <cmath>
#include <deque>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ftv/backbone.hpp"
#include "ftv/checkpoint.hpp"
#include "ftv/config.hpp"
#include "ftv/pipeline.hpp"

namespace ftv {

// ---------------------------------------------------------------------------
// optimizer

class AdamOptimizer {
 public:
  explicit AdamOptimizer(Real lr, Real beta1 = 0.9, Real beta2 = 0.999,
                         Real eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void attach(const ParamStore& params) {
    m_.clear();
    v_.clear();
    for (const auto& [name, var] : params.items()) {
      m_.emplace_back(var.value().rows(), var.value().cols(), 0.0);
      v_.emplace_back(var.value().rows(), var.value().cols(), 0.0);
    }
  }

  void step(ParamStore& params) {
    require(m_.size() == params.count(), "Adam: attach() before step()");
    ++t_;
    const Real bc1 = 1.0 - std::pow(beta1_, static_cast<Real>(t_));
    const Real bc2 = 1.0 - std::pow(beta2_, static_cast<Real>(t_));
    std::size_t i = 0;
    for (auto& [name, var] : params.items()) {
      Tensor& value = var.mutable_value();
      const Tensor& grad = var.grad();
      Tensor& m = m_[i];
      Tensor& v = v_[i];
      for (std::size_t k = 0; k < value.size(); ++k) {
        m[k] = beta1_ * m[k] + (1 - beta1_) * grad[k];
        v[k] = beta2_ * v[k] + (1 - beta2_) * grad[k] * grad[k];
        value[k] -= lr_ * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + eps_);
      }
      ++i;
    }
  }

  std::size_t steps_taken() const { return t_; }

  void save_state(const ParamStore& params, Checkpoint& ckpt) const {
    std::size_t i = 0;
    for (const auto& [name, var] : params.items()) {
      ckpt.tensors["optim.m." + name] = m_[i];
      ckpt.tensors["optim.v." + name] = v_[i];
      ++i;
    }
    Tensor t(1, 1);
    t[0] = static_cast<Real>(t_);
    ckpt.tensors["optim.t"] = t;
  }

  void load_state(const ParamStore& params, const Checkpoint& ckpt) {
    attach(params);
    std::size_t i = 0;
    for (const auto& [name, var] : params.items()) {
      auto m_it = ckpt.tensors.find("optim.m." + name);
      auto v_it = ckpt.tensors.find("optim.v." + name);
      require(m_it != ckpt.tensors.end() && v_it != ckpt.tensors.end(),
              "checkpoint missing optimizer state for " + name);
      m_[i] = m_it->second;
      v_[i] = v_it->second;
      ++i;
    }
    auto t_it = ckpt.tensors.find("optim.t");
    require(t_it != ckpt.tensors.end(), "checkpoint missing optimizer step");
    t_ = static_cast<std::size_t>(t_it->second[0]);
  }

 private:
  Real lr_, beta1_, beta2_, eps_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------
// training data

// One record's preprocessed training data: the five face views, the phoneme
// ids, the target mel, and the inherited label.
struct TrainingRecord {
  std::string utterance_id;
  std::string speaker_id;
  std::vector<Tensor> views;  // each 3*H*W x 1, values in [-1, 1]
  std::vector<std::size_t> phoneme_ids;
  Tensor target_mel;
  AttributeLabel labels;
};

struct TrainingPairRef {
  std::size_t record = 0;
  std::size_t view = 0;
};

// Loads a manifest into memory and checks it against the model's
// vocabularies and configuration.
inline std::vector<TrainingRecord> load_training_records(
    const pipeline::Manifest& manifest, const FtvModel& model) {
  require(manifest.vocab == model.vocab(),
          "manifest attribute vocabulary does not match the model");
  require(!manifest.records.empty(), "manifest has no records");
  const auto& mel_cfg = model.config().backbone.mel;
  std::vector<TrainingRecord> records;
  records.reserve(manifest.records.size());
  for (const auto& r : manifest.records) {
    TrainingRecord rec;
    rec.utterance_id = r.utterance_id;
    rec.speaker_id = r.speaker_id;
    rec.labels = r.labels;
    rec.phoneme_ids = model.backbone().vocabulary().encode(r.text);
    AudioBuffer audio = read_wav(r.audio_path);
    rec.target_mel = mel_extract(audio, mel_cfg).frames;
    for (const auto& img_path : r.image_paths) {
      FaceImage face = FaceImage::from_image(read_image(img_path));
      require_dim(face.side == model.config().encoder.image_size,
                  "image " + img_path + " side " + std::to_string(face.side) +
                      " does not match encoder image_size");
      rec.views.push_back(Tensor::column(face.pixels));
    }
    records.push_back(std::move(rec));
  }
  return records;
}

// Deterministic seeded batch source over epoch pools. Multi-view emits all
// five (image, audio, text) pairs per record per epoch; single-view draws one
// view per record per epoch; off pins view 0 (the augmentation ablation).
// Batch k is a pure function of (seed, k), so resumed runs replay the exact
// stream; batches cross a queue-like boundary a concurrent producer could
// fill without changing the order.
class BatchQueue {
 public:
  BatchQueue(std::size_t n_records, std::size_t batch_size,
             Augmentation augmentation, std::uint64_t seed)
      : n_records_(n_records),
        batch_size_(batch_size),
        augmentation_(augmentation),
        seed_(seed) {
    require(n_records_ > 0, "BatchQueue: no records");
    require(batch_size_ > 0, "BatchQueue: zero batch size");
  }

  std::size_t pool_size() const {
    return augmentation_ == Augmentation::kMultiView
               ? n_records_ * pipeline::kViewsPerRecord
               : n_records_;
  }

  Augmentation mode() const { return augmentation_; }

  // Batch for 1-based step k: items [ (k-1)*B, k*B ) of the concatenated
  // per-epoch shuffled pools.
  std::vector<TrainingPairRef> pop(std::size_t step) {
    require(step >= 1, "BatchQueue: steps are 1-based");
    std::vector<TrainingPairRef> batch;
    batch.reserve(batch_size_);
    const std::size_t pool = pool_size();
    std::size_t index = (step - 1) * batch_size_;
    for (std::size_t i = 0; i < batch_size_; ++i, ++index) {
      const std::size_t epoch = index / pool;
      if (!cached_epoch_ || *cached_epoch_ != epoch) build_epoch(epoch);
      batch.push_back(epoch_pool_[index % pool]);
    }
    return batch;
  }

 private:
  void build_epoch(std::size_t epoch) {
    epoch_pool_.clear();
    if (augmentation_ == Augmentation::kMultiView) {
      for (std::size_t r = 0; r < n_records_; ++r)
        for (std::size_t v = 0; v < pipeline::kViewsPerRecord; ++v)
          epoch_pool_.push_back({r, v});
    } else if (augmentation_ == Augmentation::kSingleView) {
      Rng view_rng(mix_seed(seed_ ^ 0x5eedf00dULL, epoch));
      for (std::size_t r = 0; r < n_records_; ++r)
        epoch_pool_.push_back(
            {r, static_cast<std::size_t>(
                    view_rng.next_below(pipeline::kViewsPerRecord))});
    } else {
      for (std::size_t r = 0; r < n_records_; ++r) epoch_pool_.push_back({r, 0});
    }
    Rng rng(mix_seed(seed_, epoch));
    rng.shuffle(epoch_pool_);
    cached_epoch_ = epoch;
  }

  std::size_t n_records_, batch_size_;
  Augmentation augmentation_;
  std::uint64_t seed_;
  std::optional<std::size_t> cached_epoch_;
  std::vector<TrainingPairRef> epoch_pool_;
};

// ---------------------------------------------------------------------------
// trainer

struct TrainLogEntry {
  std::size_t step = 0;
  Real mel_loss = 0;
  Real face_loss = 0;
  Real audio_loss = 0;
  Real attr_loss = 0;
  Real total = 0;
  Real seconds = 0;
};

// Builds the full per-pair loss graph: face encoding, synthesis, bilateral
// attribute supervision, and mel reconstruction.
inline TotalLossTerms pair_loss(const FtvModel& model,
                                const TrainingRecord& rec, std::size_t view) {
  const auto& attr_cfg = model.config().attributes;
  const Var pixels = Var::constant(rec.views.at(view));
  const Var embedding =
      model.encoder().encode(pixels, model.config().encoder.image_size);

  std::optional<AttributeLogits> face_logits;
  if (model.face_head()) face_logits = (*model.face_head())(embedding);

  const Var text = model.backbone().encode_text(rec.phoneme_ids);
  const ConditioningParams cp = model.conditioner().derive_params(embedding);
  const Var mel = model.backbone().decode_mel(
      model.conditioner().modulate(text, cp));

  std::optional<AttributeLogits> audio_logits;
  if (model.audio_head()) {
    const Var waveform = model.backbone().invert_mel(mel);
    const Var resampled = reshape(
        resample_rows(waveform, attr_cfg.resample_len), 1, attr_cfg.resample_len);
    audio_logits = (*model.audio_head())(resampled);
  }

  const AttributeLossTerms attr =
      attribute_loss(face_logits, audio_logits, rec.labels, attr_cfg.alpha,
                     attr_cfg.reduction);
  return total_loss(mel, rec.target_mel, attr,
                    model.config().backbone.attr_weight);
}

class Trainer {
 public:
  Trainer(FtvModel& model, std::vector<TrainingRecord> records,
          const TrainSettings& settings, Augmentation augmentation,
          std::uint64_t seed)
      : model_(model),
        records_(std::move(records)),
        settings_(settings),
        optimizer_(settings.lr),
        queue_(records_.size(), settings.batch_size, augmentation, seed) {
    require(!records_.empty(), "Trainer: no training records");
    optimizer_.attach(model_.params());
  }

  std::size_t step_count() const { return step_; }
  const std::vector<TrainLogEntry>& history() const { return history_; }
  AdamOptimizer& optimizer() { return optimizer_; }
  void set_step(std::size_t step) { step_ = step; }

  // One optimizer step over a freshly sampled batch; returns the averaged
  // loss components.
  TrainLogEntry step() {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t next = step_ + 1;
    const auto batch = queue_.pop(next);

    model_.params().zero_grads();
    Var total, mel_sum, face_sum, audio_sum, attr_sum;
    for (const auto& ref : batch) {
      TotalLossTerms terms = pair_loss(model_, records_.at(ref.record), ref.view);
      auto acc = [](Var& into, const Var& term) {
        into = into.valid() ? add(into, term) : term;
      };
      acc(total, terms.total);
      acc(mel_sum, terms.mel_loss);
      acc(face_sum, terms.attr.face_loss);
      acc(audio_sum, terms.attr.audio_loss);
      acc(attr_sum, terms.attr.total);
    }
    const Real inv = 1.0 / static_cast<Real>(batch.size());
    total = mul_scalar(total, inv);
    backward(total);
    optimizer_.step(model_.params());
    step_ = next;

    TrainLogEntry entry;
    entry.step = step_;
    entry.mel_loss = mel_sum.value()[0] * inv;
    entry.face_loss = face_sum.value()[0] * inv;
    entry.audio_loss = audio_sum.value()[0] * inv;
    entry.attr_loss = attr_sum.value()[0] * inv;
    entry.total = total.value()[0];
    entry.seconds = std::chrono::duration<Real>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
    history_.push_back(entry);
    return entry;
  }

 private:
  FtvModel& model_;
  std::vector<TrainingRecord> records_;
  TrainSettings settings_;
  AdamOptimizer optimizer_;
  BatchQueue queue_;
  std::size_t step_ = 0;
  std::vector<TrainLogEntry> history_;
};

inline void log_entry(std::ostream& os, const TrainLogEntry& e) {
  os << "step " << e.step << " mel_loss " << e.mel_loss << " L_face "
     << e.face_loss << " L_audio " << e.audio_loss << " L_attr " << e.attr_loss
     << " total " << e.total << " sec " << e.seconds << "\n";
}

}  // namespace ftv
