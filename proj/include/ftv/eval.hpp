#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "ftv/attributes.hpp"
#include "ftv/audio.hpp"
#include "ftv/common.hpp"
#include "ftv/mel.hpp"

namespace ftv::eval {

// ---------------------------------------------------------------------------
// injected providers

// Maps a waveform to a fixed-dimension speaker vector. Implementations must
// be deterministic per input and declare whether concurrent read-only use is
// safe; the harness honors the flag.
struct SpeakerEmbeddingProvider {
  virtual ~SpeakerEmbeddingProvider() = default;
  virtual std::vector<Real> embed(const AudioBuffer& audio) const = 0;
  virtual std::size_t dim() const = 0;
  virtual bool thread_safe() const { return true; }
  virtual std::string name() const { return "provider"; }
};

// Built-in fallback: per-mel-bin mean and standard deviation statistics.
class MelStatsProvider : public SpeakerEmbeddingProvider {
 public:
  explicit MelStatsProvider(const MelConfig& cfg = {}) : cfg_(cfg) {}

  std::vector<Real> embed(const AudioBuffer& audio) const override {
    MelSpectrogram mel = mel_extract(audio, cfg_);
    const std::size_t M = mel.mel_bins();
    const std::size_t T = mel.frame_count();
    std::vector<Real> out(2 * M, 0.0);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t m = 0; m < M; ++m) out[m] += mel.frames.at(t, m);
    for (std::size_t m = 0; m < M; ++m) out[m] /= static_cast<Real>(T);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t m = 0; m < M; ++m) {
        const Real d = mel.frames.at(t, m) - out[m];
        out[M + m] += d * d;
      }
    for (std::size_t m = 0; m < M; ++m)
      out[M + m] = std::sqrt(out[M + m] / static_cast<Real>(T));
    return out;
  }

  std::size_t dim() const override { return 2 * cfg_.n_mels; }
  std::string name() const override { return "melstats"; }

 private:
  MelConfig cfg_;
};

// ASR transcription client; the utterance id is passed for caching or
// test doubles and may be ignored by real implementations.
struct AsrClient {
  virtual ~AsrClient() = default;
  virtual std::string transcribe(const AudioBuffer& audio,
                                 const std::string& utterance_id) = 0;
};

// ---------------------------------------------------------------------------
// metrics

inline Real cosine_similarity(const std::vector<Real>& a,
                              const std::vector<Real>& b) {
  require_dim(a.size() == b.size(), "cosine: dimension mismatch");
  Real dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na <= 0 || nb <= 0)
    throw EvalError("cosine: zero-norm speaker embedding");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

// Speaker-embedding cosine similarity on a [0, 100] scale.
inline Real secs(const AudioBuffer& synthesized, const AudioBuffer& reference,
                 const SpeakerEmbeddingProvider& provider) {
  return 100.0 *
         cosine_similarity(provider.embed(synthesized), provider.embed(reference));
}

// Character error rate: character-level edit distance over reference length.
inline Real cer(const std::string& hypothesis, const std::string& reference) {
  if (reference.empty()) throw EvalError("cer: empty reference");
  const std::size_t n = hypothesis.size(), m = reference.size();
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub =
          prev[j - 1] + (hypothesis[i - 1] == reference[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return static_cast<Real>(prev[m]) / static_cast<Real>(m);
}

// ---------------------------------------------------------------------------
// harness

struct EvalItem {
  std::string utterance_id;
  std::string speaker_id;
  std::string text;
  AttributeLabel labels;
  AudioBuffer synthesized;
  AudioBuffer reference;
};

struct EvalOptions {
  std::vector<std::string> seen_speakers;
  std::vector<std::string> unseen_speakers;
  bool per_speaker_average = false;
};

struct EvalReport {
  std::optional<Real> secs_seen;
  std::optional<Real> secs_unseen;
  std::optional<Real> mean_cer;
  std::map<std::string, Real> per_category;  // "gender:male" etc.
  std::vector<Real> per_item_secs;           // aligned with the input items
  std::size_t item_count = 0;
  std::vector<std::string> warnings;
};

namespace detail {
template <typename Fn>
void parallel_for(std::size_t n, bool allow_threads, Fn&& fn) {
  const std::size_t hw = std::thread::hardware_concurrency();
  if (!allow_threads || hw < 2 || n < 4) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(hw, 8);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
  for (auto& t : pool) t.join();
}

inline Real mean_of(const std::vector<Real>& xs) {
  Real s = 0;
  for (Real x : xs) s += x;
  return s / static_cast<Real>(xs.size());
}
}  // namespace detail

// Mean SECS grouped by gender and by race category. Empty categories are
// omitted (caller may warn).
inline std::map<std::string, Real> per_category_secs(
    const std::vector<EvalItem>& items, const std::vector<Real>& scores,
    const AttributeVocab& vocab) {
  require_dim(items.size() == scores.size(), "per_category_secs: size mismatch");
  std::map<std::string, std::vector<Real>> buckets;
  for (std::size_t i = 0; i < items.size(); ++i) {
    items[i].labels.validate(vocab);
    buckets["gender:" + vocab.gender[items[i].labels.gender]].push_back(scores[i]);
    buckets["race:" + vocab.race[items[i].labels.race]].push_back(scores[i]);
  }
  std::map<std::string, Real> out;
  for (const auto& [key, vals] : buckets) out[key] = detail::mean_of(vals);
  return out;
}

inline EvalReport evaluate(const std::vector<EvalItem>& items,
                           const SpeakerEmbeddingProvider& provider,
                           AsrClient* asr, const AttributeVocab& vocab,
                           const EvalOptions& options) {
  require(!items.empty(), "evaluate: no items");
  EvalReport report;
  report.item_count = items.size();
  report.per_item_secs.assign(items.size(), 0.0);

  std::vector<std::string> failures(items.size());
  detail::parallel_for(items.size(), provider.thread_safe(), [&](std::size_t i) {
    try {
      report.per_item_secs[i] = secs(items[i].synthesized, items[i].reference,
                                     provider);
    } catch (const Error& e) {
      failures[i] = e.what();
    }
  });
  for (std::size_t i = 0; i < items.size(); ++i)
    if (!failures[i].empty())
      throw EvalError("scoring " + items[i].utterance_id + ": " + failures[i]);

  auto group_mean = [&](const std::vector<std::string>& speakers)
      -> std::optional<Real> {
    if (speakers.empty()) return std::nullopt;
    const std::set<std::string> wanted(speakers.begin(), speakers.end());
    if (options.per_speaker_average) {
      std::map<std::string, std::vector<Real>> by_speaker;
      for (std::size_t i = 0; i < items.size(); ++i)
        if (wanted.count(items[i].speaker_id))
          by_speaker[items[i].speaker_id].push_back(report.per_item_secs[i]);
      if (by_speaker.empty()) return std::nullopt;
      std::vector<Real> means;
      for (const auto& [spk, vals] : by_speaker)
        means.push_back(detail::mean_of(vals));
      return detail::mean_of(means);
    }
    std::vector<Real> vals;
    for (std::size_t i = 0; i < items.size(); ++i)
      if (wanted.count(items[i].speaker_id))
        vals.push_back(report.per_item_secs[i]);
    if (vals.empty()) return std::nullopt;
    return detail::mean_of(vals);
  };

  report.secs_seen = group_mean(options.seen_speakers);
  report.secs_unseen = group_mean(options.unseen_speakers);
  if (!report.secs_seen)
    report.warnings.push_back("seen speaker list empty or unmatched; seen SECS omitted");
  if (!report.secs_unseen)
    report.warnings.push_back("unseen speaker list empty or unmatched; unseen SECS omitted");

  report.per_category = per_category_secs(items, report.per_item_secs, vocab);

  if (asr) {
    std::vector<Real> cers;
    for (const auto& item : items)
      cers.push_back(cer(asr->transcribe(item.synthesized, item.utterance_id),
                         item.text));
    report.mean_cer = detail::mean_of(cers);
  } else {
    report.warnings.push_back("no ASR client configured; CER omitted");
  }
  return report;
}

// One row per utterance: utterance_id, speaker_id, then the embedding values,
// tab-separated, with a header line naming the dimension.
inline void export_embeddings(const std::vector<EvalItem>& items,
                              const SpeakerEmbeddingProvider& provider,
                              const std::string& out_path,
                              bool use_reference = false) {
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw IoError("cannot write embeddings: " + out_path);
  out << "#utterance_id\tspeaker_id\tdim=" << provider.dim() << "\n";
  out.precision(17);
  for (const auto& item : items) {
    const std::vector<Real> emb =
        provider.embed(use_reference ? item.reference : item.synthesized);
    require_dim(emb.size() == provider.dim(),
                "export_embeddings: provider dimension mismatch");
    out << item.utterance_id << '\t' << item.speaker_id;
    for (Real v : emb) out << '\t' << v;
    out << "\n";
  }
  if (!out) throw IoError("failed writing embeddings: " + out_path);
}

}  // namespace ftv::eval
