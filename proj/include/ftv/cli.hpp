#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ftv/checkpoint.hpp"
#include "ftv/config.hpp"
#include "ftv/eval.hpp"
#include "ftv/pipeline.hpp"
#include "ftv/train.hpp"

namespace ftv::cli {

// Shared flag surface: --config --seed --manifest --ckpt --out plus
// command-specific positionals. Commands return process exit codes; results
// go to stdout, diagnostics to stderr.

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
};

inline RunConfig load_config(const CommonOptions& opts) {
  RunConfig cfg = load_run_config(opts.config_path);
  if (opts.seed) {
    cfg.seed = *opts.seed;
    cfg.pipeline.seed = *opts.seed;
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// prepare

inline int run_prepare(const CommonOptions& opts, const std::string& source_dir,
                       const std::string& out_dir, std::ostream& out = std::cout,
                       std::ostream& err = std::cerr) {
  try {
    const RunConfig cfg = load_config(opts);
    pipeline::PipelineSettings settings;
    settings.seed = cfg.pipeline.seed;
    settings.split_train = cfg.pipeline.split_train;
    settings.split_val = cfg.pipeline.split_val;
    settings.fill_policy = cfg.pipeline.fill_policy;
    AttributeVocab vocab;
    pipeline::CenterCropDetector detector(cfg.model.encoder.image_size);
    pipeline::IntensityStubLabeler labeler(vocab);
    const pipeline::PrepareStats stats = pipeline::prepare_dataset(
        source_dir, out_dir, settings, detector, labeler, vocab);
    for (const auto& w : stats.warnings) err << "warning: " << w << "\n";
    out << "prepared " << stats.prepared << " records, skipped "
        << stats.skipped << "\n";
    out << "train manifest: " << out_dir << "/train.manifest\n";
    out << "val manifest: " << out_dir << "/val.manifest\n";
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

// ---------------------------------------------------------------------------
// train

inline int run_train(const CommonOptions& opts, const std::string& manifest_path,
                     const std::string& ckpt_dir,
                     const std::string& resume_path = "",
                     std::ostream& out = std::cout,
                     std::ostream& err = std::cerr) {
  try {
    namespace fs = std::filesystem;
    RunConfig cfg = load_config(opts);
    std::size_t start_step = 0;
    std::optional<Checkpoint> resume;
    if (!resume_path.empty()) {
      resume = load_checkpoint(resume_path);
      cfg = resume->config;  // the snapshot governs a resumed run
      start_step = resume->step;
    }

    const pipeline::Manifest manifest = pipeline::read_manifest(manifest_path);
    const AttributeVocab vocab =
        resume ? resume->vocab : manifest.vocab;
    FtvModel model(cfg.model, vocab, cfg.seed);
    std::vector<TrainingRecord> records = load_training_records(manifest, model);

    Trainer trainer(model, std::move(records), cfg.train,
                    cfg.pipeline.augmentation, cfg.seed);
    if (resume) {
      restore_parameters(*resume, model.params());
      trainer.optimizer().load_state(model.params(), *resume);
      trainer.set_step(resume->step);
      err << "resumed from " << resume_path << " at step " << resume->step
          << "\n";
    }

    fs::create_directories(ckpt_dir);
    auto save = [&](std::size_t step) {
      Checkpoint ckpt;
      ckpt.config = cfg;
      ckpt.vocab = vocab;
      ckpt.step = step;
      collect_parameters(model.params(), ckpt);
      trainer.optimizer().save_state(model.params(), ckpt);
      std::ostringstream name;
      name << "step_" << std::setw(6) << std::setfill('0') << step << ".ckpt";
      const std::string path = (fs::path(ckpt_dir) / name.str()).string();
      save_checkpoint(ckpt, path);
      save_checkpoint(ckpt, (fs::path(ckpt_dir) / "latest.ckpt").string());
      err << "checkpoint written: " << path << "\n";
    };

    for (std::size_t step = start_step + 1; step <= cfg.train.iterations;
         ++step) {
      const TrainLogEntry entry = trainer.step();
      log_entry(out, entry);
      if (cfg.train.checkpoint_every > 0 &&
          (step % cfg.train.checkpoint_every == 0 ||
           step == cfg.train.iterations))
        save(step);
    }
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

// ---------------------------------------------------------------------------
// synthesize

inline int run_synthesize(const std::string& ckpt_path,
                          const std::string& face_image_path,
                          const std::string& text, const std::string& out_wav,
                          std::ostream& out = std::cout,
                          std::ostream& err = std::cerr) {
  try {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    FtvModel model(ckpt.config.model, ckpt.vocab, ckpt.config.seed);
    restore_parameters(ckpt, model.params());

    const FaceImage face = FaceImage::from_image(read_image(face_image_path));
    require_dim(face.side == ckpt.config.model.encoder.image_size,
                "face image side " + std::to_string(face.side) +
                    " does not match the checkpoint's encoder image_size " +
                    std::to_string(ckpt.config.model.encoder.image_size));

    GradPause pause;
    const Var embedding = model.encoder().encode(face);
    const SynthesisOutput synth = model.synthesize_text(text, embedding);
    AudioBuffer audio;
    audio.sample_rate = ckpt.config.model.backbone.mel.sample_rate;
    audio.samples = synth.waveform.value().vec();
    write_wav(audio, out_wav);
    out << "wrote " << audio.samples.size() << " samples to " << out_wav
        << "\n";
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

// ---------------------------------------------------------------------------
// evaluate / export-embeddings

// Identity transcription: a wiring check that echoes each record's reference
// text, pinning CER to zero through the full metric path.
class IdentityAsr : public eval::AsrClient {
 public:
  explicit IdentityAsr(std::map<std::string, std::string> texts)
      : texts_(std::move(texts)) {}
  std::string transcribe(const AudioBuffer&, const std::string& utt) override {
    auto it = texts_.find(utt);
    return it == texts_.end() ? "" : it->second;
  }

 private:
  std::map<std::string, std::string> texts_;
};

inline std::vector<eval::EvalItem> synthesize_manifest(
    const FtvModel& model, const pipeline::Manifest& manifest) {
  GradPause pause;
  std::vector<eval::EvalItem> items;
  for (const auto& r : manifest.records) {
    eval::EvalItem item;
    item.utterance_id = r.utterance_id;
    item.speaker_id = r.speaker_id;
    item.text = r.text;
    item.labels = r.labels;
    item.reference = read_wav(r.audio_path);
    const FaceImage face = FaceImage::from_image(read_image(r.image_paths[0]));
    const Var embedding = model.encoder().encode(face);
    const SynthesisOutput synth = model.synthesize_text(r.text, embedding);
    item.synthesized.sample_rate = model.config().backbone.mel.sample_rate;
    item.synthesized.samples = synth.waveform.value().vec();
    items.push_back(std::move(item));
  }
  return items;
}

inline std::unique_ptr<eval::SpeakerEmbeddingProvider> make_provider(
    const RunConfig& cfg) {
  require(cfg.eval.speaker_provider == "melstats",
          "unknown speaker provider '" + cfg.eval.speaker_provider +
              "' (built-in: melstats; external providers are injected "
              "programmatically)");
  return std::make_unique<eval::MelStatsProvider>(cfg.model.backbone.mel);
}

inline void print_report(const eval::EvalReport& report, std::ostream& out) {
  out << std::fixed << std::setprecision(4);
  out << "items evaluated: " << report.item_count << "\n";
  if (report.secs_seen) out << "seen SECS:   " << *report.secs_seen << "\n";
  if (report.secs_unseen) out << "unseen SECS: " << *report.secs_unseen << "\n";
  if (report.mean_cer) out << "CER:         " << *report.mean_cer << "\n";
  if (!report.per_category.empty()) {
    out << "per-category SECS:\n";
    for (const auto& [key, value] : report.per_category)
      out << "  " << key << ": " << value << "\n";
  }
  out.unsetf(std::ios::fixed);
}

inline Json report_to_json(const eval::EvalReport& report) {
  Json j;
  j["items"] = report.item_count;
  if (report.secs_seen) j["secs_seen"] = *report.secs_seen;
  if (report.secs_unseen) j["secs_unseen"] = *report.secs_unseen;
  if (report.mean_cer) j["cer"] = *report.mean_cer;
  j["per_category"] = report.per_category;
  j["per_item_secs"] = report.per_item_secs;
  j["warnings"] = report.warnings;
  return j;
}

inline int run_evaluate(const CommonOptions& opts, const std::string& ckpt_path,
                        const std::string& manifest_path,
                        const std::string& out_report,
                        std::ostream& out = std::cout,
                        std::ostream& err = std::cerr) {
  try {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    RunConfig cfg = ckpt.config;
    if (!opts.config_path.empty()) {
      // eval settings may be overridden by a fresh config file
      cfg.eval = load_run_config(opts.config_path).eval;
    }
    FtvModel model(cfg.model, ckpt.vocab, cfg.seed);
    restore_parameters(ckpt, model.params());

    const pipeline::Manifest manifest = pipeline::read_manifest(manifest_path);
    require(manifest.vocab == ckpt.vocab,
            "manifest attribute vocabulary does not match the checkpoint");
    const std::vector<eval::EvalItem> items =
        synthesize_manifest(model, manifest);

    auto provider = make_provider(cfg);
    std::unique_ptr<eval::AsrClient> asr;
    if (cfg.eval.asr == "identity") {
      std::map<std::string, std::string> texts;
      for (const auto& r : manifest.records) texts[r.utterance_id] = r.text;
      asr = std::make_unique<IdentityAsr>(std::move(texts));
    } else {
      require(cfg.eval.asr == "none",
              "unknown asr client '" + cfg.eval.asr +
                  "' (built-in: none, identity)");
    }

    eval::EvalOptions options;
    options.seen_speakers = cfg.eval.seen_speakers;
    options.unseen_speakers = cfg.eval.unseen_speakers;
    options.per_speaker_average = cfg.eval.per_speaker_average;
    const eval::EvalReport report =
        eval::evaluate(items, *provider, asr.get(), ckpt.vocab, options);

    for (const auto& w : report.warnings) err << "warning: " << w << "\n";
    print_report(report, out);
    if (!out_report.empty()) {
      std::ofstream f(out_report);
      if (!f) throw IoError("cannot write report: " + out_report);
      f << report_to_json(report).dump(2) << "\n";
      out << "report written: " << out_report << "\n";
    }
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

inline int run_export_embeddings(const CommonOptions& opts,
                                 const std::string& ckpt_path,
                                 const std::string& manifest_path,
                                 const std::string& out_path,
                                 bool use_reference = false,
                                 std::ostream& out = std::cout,
                                 std::ostream& err = std::cerr) {
  try {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    RunConfig cfg = ckpt.config;
    if (!opts.config_path.empty()) cfg.eval = load_run_config(opts.config_path).eval;
    FtvModel model(cfg.model, ckpt.vocab, cfg.seed);
    restore_parameters(ckpt, model.params());
    const pipeline::Manifest manifest = pipeline::read_manifest(manifest_path);
    const std::vector<eval::EvalItem> items =
        synthesize_manifest(model, manifest);
    auto provider = make_provider(cfg);
    eval::export_embeddings(items, *provider, out_path, use_reference);
    out << "wrote " << items.size() << " embeddings to " << out_path << "\n";
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace ftv::cli
