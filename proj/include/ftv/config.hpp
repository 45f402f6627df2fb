#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ftv/backbone.hpp"
#include "ftv/common.hpp"
#include "ftv/pipeline.hpp"

namespace ftv {

using Json = nlohmann::json;

struct TrainSettings {
  Real lr = 2e-4;
  std::size_t batch_size = 20;
  std::size_t iterations = 500;
  std::size_t checkpoint_every = 100;
};

// Multi-view handling for the training loader: all five views in the pair
// pool, one randomly sampled view per step, or the first view only (the
// augmentation-off ablation).
enum class Augmentation { kMultiView, kSingleView, kOff };

struct PipelineRunSettings {
  std::uint64_t seed = 1234;
  std::size_t split_train = 9;
  std::size_t split_val = 1;
  pipeline::FillPolicy fill_policy = pipeline::FillPolicy::kError;
  Augmentation augmentation = Augmentation::kMultiView;
};

struct EvalSettings {
  std::string speaker_provider = "melstats";
  std::string asr = "none";  // none | identity (wiring check)
  std::vector<std::string> seen_speakers;
  std::vector<std::string> unseen_speakers;
  bool per_speaker_average = false;
};

// The single versioned run configuration. Every field has a default; a file
// overrides selectively; unknown keys are a hard error.
struct RunConfig {
  static constexpr int kVersion = 1;
  std::uint64_t seed = 1234;  // model init + batch sampling
  ModelConfig model;
  TrainSettings train;
  PipelineRunSettings pipeline;
  EvalSettings eval;
};

namespace detail {

inline void check_keys(const Json& j, const std::string& section,
                       std::initializer_list<const char*> allowed) {
  require(j.is_object(), "config: section '" + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) ok = true;
    if (!ok)
      throw ConfigError("config: unknown key '" + key + "' in section '" +
                        section + "'");
  }
}

template <typename T>
void maybe(const Json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const Json::exception& e) {
      throw ConfigError("config: bad value for '" + std::string(key) +
                        "': " + e.what());
    }
  }
}

inline void parse_split_ratio(const std::string& text, std::size_t& a,
                              std::size_t& b) {
  const auto pos = text.find(':');
  try {
    require(pos != std::string::npos, "missing ':'");
    a = std::stoul(text.substr(0, pos));
    b = std::stoul(text.substr(pos + 1));
  } catch (const std::exception&) {
    throw ConfigError("config: split_ratio must look like \"9:1\", got \"" +
                      text + "\"");
  }
  require(a + b > 0, "config: split_ratio cannot be 0:0");
}

}  // namespace detail

inline RunConfig parse_run_config(const Json& j) {
  RunConfig cfg;
  detail::check_keys(j, "(root)",
                     {"version", "seed", "encoder", "conditioner", "backbone",
                      "attributes", "pipeline", "eval"});
  int version = RunConfig::kVersion;
  detail::maybe(j, "version", version);
  require(version == RunConfig::kVersion,
          "config: unsupported version " + std::to_string(version));
  detail::maybe(j, "seed", cfg.seed);

  if (j.contains("encoder")) {
    const Json& e = j.at("encoder");
    detail::check_keys(e, "encoder",
                       {"image_size", "patch_size", "dims", "depths", "heads",
                        "positional_embeddings", "use_fga"});
    auto& enc = cfg.model.encoder;
    detail::maybe(e, "image_size", enc.image_size);
    detail::maybe(e, "patch_size", enc.patch_size);
    detail::maybe(e, "dims", enc.dims);
    detail::maybe(e, "depths", enc.depths);
    detail::maybe(e, "heads", enc.heads);
    detail::maybe(e, "positional_embeddings", enc.positional_embeddings);
    detail::maybe(e, "use_fga", enc.use_fga);
  }
  if (j.contains("conditioner")) {
    const Json& c = j.at("conditioner");
    detail::check_keys(c, "conditioner", {"kernel_size", "residual"});
    detail::maybe(c, "kernel_size", cfg.model.conditioner.kernel_size);
    detail::maybe(c, "residual", cfg.model.conditioner.residual);
  }
  if (j.contains("backbone")) {
    const Json& b = j.at("backbone");
    detail::check_keys(
        b, "backbone",
        {"hidden", "depth", "heads", "upsample", "max_positions", "charset",
         "mel_bins", "n_fft", "hop", "sample_rate", "log_floor", "fmin", "fmax",
         "attr_weight", "lr", "batch_size", "iterations", "checkpoint_every"});
    auto& bb = cfg.model.backbone;
    detail::maybe(b, "hidden", bb.hidden);
    detail::maybe(b, "depth", bb.depth);
    detail::maybe(b, "heads", bb.heads);
    detail::maybe(b, "upsample", bb.upsample);
    detail::maybe(b, "max_positions", bb.max_positions);
    detail::maybe(b, "charset", bb.charset);
    detail::maybe(b, "mel_bins", bb.mel.n_mels);
    detail::maybe(b, "n_fft", bb.mel.n_fft);
    detail::maybe(b, "hop", bb.mel.hop);
    detail::maybe(b, "sample_rate", bb.mel.sample_rate);
    detail::maybe(b, "log_floor", bb.mel.log_floor);
    detail::maybe(b, "fmin", bb.mel.fmin);
    detail::maybe(b, "fmax", bb.mel.fmax);
    detail::maybe(b, "attr_weight", bb.attr_weight);
    detail::maybe(b, "lr", cfg.train.lr);
    detail::maybe(b, "batch_size", cfg.train.batch_size);
    detail::maybe(b, "iterations", cfg.train.iterations);
    detail::maybe(b, "checkpoint_every", cfg.train.checkpoint_every);
  }
  if (j.contains("attributes")) {
    const Json& a = j.at("attributes");
    detail::check_keys(a, "attributes",
                       {"alpha", "reduction", "resample_len", "hidden",
                        "visual_enhancement", "audio_enhancement"});
    auto& at = cfg.model.attributes;
    detail::maybe(a, "alpha", at.alpha);
    if (a.contains("reduction")) {
      const std::string r = a.at("reduction").get<std::string>();
      if (r == "sum")
        at.reduction = LossReduction::kSum;
      else if (r == "mean")
        at.reduction = LossReduction::kMean;
      else
        throw ConfigError("config: reduction must be sum|mean, got " + r);
    }
    detail::maybe(a, "resample_len", at.resample_len);
    detail::maybe(a, "hidden", at.hidden);
    detail::maybe(a, "visual_enhancement", at.visual_enhancement);
    detail::maybe(a, "audio_enhancement", at.audio_enhancement);
  }
  if (j.contains("pipeline")) {
    const Json& p = j.at("pipeline");
    detail::check_keys(p, "pipeline",
                       {"seed", "split_ratio", "fill_policy", "augmentation"});
    detail::maybe(p, "seed", cfg.pipeline.seed);
    if (p.contains("split_ratio"))
      detail::parse_split_ratio(p.at("split_ratio").get<std::string>(),
                                cfg.pipeline.split_train, cfg.pipeline.split_val);
    if (p.contains("fill_policy")) {
      const std::string f = p.at("fill_policy").get<std::string>();
      if (f == "error")
        cfg.pipeline.fill_policy = pipeline::FillPolicy::kError;
      else if (f == "repeat_to_fill")
        cfg.pipeline.fill_policy = pipeline::FillPolicy::kRepeatToFill;
      else
        throw ConfigError("config: fill_policy must be error|repeat_to_fill");
    }
    if (p.contains("augmentation")) {
      const std::string a = p.at("augmentation").get<std::string>();
      if (a == "multi_view")
        cfg.pipeline.augmentation = Augmentation::kMultiView;
      else if (a == "single_view")
        cfg.pipeline.augmentation = Augmentation::kSingleView;
      else if (a == "off")
        cfg.pipeline.augmentation = Augmentation::kOff;
      else
        throw ConfigError(
            "config: augmentation must be multi_view|single_view|off");
    }
  }
  if (j.contains("eval")) {
    const Json& e = j.at("eval");
    detail::check_keys(e, "eval",
                       {"speaker_provider", "asr", "seen_speakers",
                        "unseen_speakers", "per_speaker_average"});
    detail::maybe(e, "speaker_provider", cfg.eval.speaker_provider);
    detail::maybe(e, "asr", cfg.eval.asr);
    detail::maybe(e, "seen_speakers", cfg.eval.seen_speakers);
    detail::maybe(e, "unseen_speakers", cfg.eval.unseen_speakers);
    detail::maybe(e, "per_speaker_average", cfg.eval.per_speaker_average);
  }
  cfg.model.validate();
  return cfg;
}

inline Json to_json(const RunConfig& cfg) {
  Json j;
  j["version"] = RunConfig::kVersion;
  j["seed"] = cfg.seed;
  const auto& enc = cfg.model.encoder;
  j["encoder"] = {{"image_size", enc.image_size},
                  {"patch_size", enc.patch_size},
                  {"dims", enc.dims},
                  {"depths", enc.depths},
                  {"heads", enc.heads},
                  {"positional_embeddings", enc.positional_embeddings},
                  {"use_fga", enc.use_fga}};
  j["conditioner"] = {{"kernel_size", cfg.model.conditioner.kernel_size},
                      {"residual", cfg.model.conditioner.residual}};
  const auto& bb = cfg.model.backbone;
  j["backbone"] = {{"hidden", bb.hidden},
                   {"depth", bb.depth},
                   {"heads", bb.heads},
                   {"upsample", bb.upsample},
                   {"max_positions", bb.max_positions},
                   {"charset", bb.charset},
                   {"mel_bins", bb.mel.n_mels},
                   {"n_fft", bb.mel.n_fft},
                   {"hop", bb.mel.hop},
                   {"sample_rate", bb.mel.sample_rate},
                   {"log_floor", bb.mel.log_floor},
                   {"fmin", bb.mel.fmin},
                   {"fmax", bb.mel.fmax},
                   {"attr_weight", bb.attr_weight},
                   {"lr", cfg.train.lr},
                   {"batch_size", cfg.train.batch_size},
                   {"iterations", cfg.train.iterations},
                   {"checkpoint_every", cfg.train.checkpoint_every}};
  const auto& at = cfg.model.attributes;
  j["attributes"] = {
      {"alpha", at.alpha},
      {"reduction", at.reduction == LossReduction::kSum ? "sum" : "mean"},
      {"resample_len", at.resample_len},
      {"hidden", at.hidden},
      {"visual_enhancement", at.visual_enhancement},
      {"audio_enhancement", at.audio_enhancement}};
  j["pipeline"] = {
      {"seed", cfg.pipeline.seed},
      {"split_ratio", std::to_string(cfg.pipeline.split_train) + ":" +
                          std::to_string(cfg.pipeline.split_val)},
      {"fill_policy", cfg.pipeline.fill_policy == pipeline::FillPolicy::kError
                          ? "error"
                          : "repeat_to_fill"},
      {"augmentation",
       cfg.pipeline.augmentation == Augmentation::kMultiView    ? "multi_view"
       : cfg.pipeline.augmentation == Augmentation::kSingleView ? "single_view"
                                                                : "off"}};
  j["eval"] = {{"speaker_provider", cfg.eval.speaker_provider},
               {"asr", cfg.eval.asr},
               {"seen_speakers", cfg.eval.seen_speakers},
               {"unseen_speakers", cfg.eval.unseen_speakers},
               {"per_speaker_average", cfg.eval.per_speaker_average}};
  return j;
}

// Defaults when no file is given; file values override defaults.
inline RunConfig load_run_config(const std::string& path = "") {
  if (path.empty()) return RunConfig{};
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path);
  Json j;
  try {
    in >> j;
  } catch (const Json::exception& e) {
    throw ConfigError("config: invalid JSON in " + path + ": " + e.what());
  }
  return parse_run_config(j);
}

}  // namespace ftv
