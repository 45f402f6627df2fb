// Face-to-voice synthesis CLI: dataset preparation, training, synthesis,
// objective evaluation, and speaker-embedding export, driven by a single
// versioned run-config file.

#include <CLI11.hpp>

#include <cstdint>
#include <optional>
#include <string>

#include "ftv/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"ftv: face-to-voice speech synthesis"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "run-config JSON file")
      ->envname("FTV_CONFIG");
  app.add_option("--seed", seed, "override the configured seed");

  auto common = [&] {
    ftv::cli::CommonOptions opts;
    opts.config_path = config_path;
    opts.seed = seed;
    return opts;
  };

  // prepare
  auto* prepare = app.add_subcommand(
      "prepare", "build train/val manifests from a raw source tree");
  std::string source_dir, prep_out;
  prepare->add_option("source", source_dir, "source tree root")->required();
  prepare->add_option("--out", prep_out, "output directory")->required();

  // train
  auto* train = app.add_subcommand("train", "train from a manifest");
  std::string manifest_path, ckpt_dir, resume_path;
  train->add_option("--manifest", manifest_path, "training manifest")
      ->required();
  train->add_option("--ckpt", ckpt_dir, "checkpoint output directory")
      ->required();
  train->add_option("--resume", resume_path, "checkpoint to resume from");

  // synthesize
  auto* synth = app.add_subcommand(
      "synthesize", "synthesize speech for a face image and text");
  std::string synth_ckpt, face_path, text, out_wav;
  synth->add_option("--ckpt", synth_ckpt, "checkpoint file")->required();
  synth->add_option("--face", face_path, "face image (PPM/PGM)")->required();
  synth->add_option("--text", text, "text to speak")->required();
  synth->add_option("--out", out_wav, "output wav path")->required();

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "objective evaluation");
  std::string eval_ckpt, eval_manifest, eval_report;
  evaluate->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
  evaluate->add_option("--manifest", eval_manifest, "evaluation manifest")
      ->required();
  evaluate->add_option("--out", eval_report, "report JSON output path");

  // export-embeddings
  auto* exp = app.add_subcommand("export-embeddings",
                                 "export speaker embeddings per utterance");
  std::string exp_ckpt, exp_manifest, exp_out;
  bool use_reference = false;
  exp->add_option("--ckpt", exp_ckpt, "checkpoint file")->required();
  exp->add_option("--manifest", exp_manifest, "manifest")->required();
  exp->add_option("--out", exp_out, "output TSV path")->required();
  exp->add_flag("--reference", use_reference,
                "embed reference audio instead of synthesized audio");

  CLI11_PARSE(app, argc, argv);

  if (prepare->parsed())
    return ftv::cli::run_prepare(common(), source_dir, prep_out);
  if (train->parsed())
    return ftv::cli::run_train(common(), manifest_path, ckpt_dir, resume_path);
  if (synth->parsed())
    return ftv::cli::run_synthesize(synth_ckpt, face_path, text, out_wav);
  if (evaluate->parsed())
    return ftv::cli::run_evaluate(common(), eval_ckpt, eval_manifest,
                                  eval_report);
  if (exp->parsed())
    return ftv::cli::run_export_embeddings(common(), exp_ckpt, exp_manifest,
                                           exp_out, use_reference);
  return 1;
}
