#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ftv/attributes.hpp"
#include "ftv/common.hpp"
#include "ftv/image.hpp"
#include "ftv/rng.hpp"

namespace ftv::pipeline {

// ---------------------------------------------------------------------------
// injected clients

// Face detection over one frame; nullopt when no face is found.
struct FaceDetectorClient {
  virtual ~FaceDetectorClient() = default;
  virtual std::optional<Image> detect_face(const Image& frame) = 0;
};

// Deterministic stub: center square crop resized to a fixed side.
class CenterCropDetector : public FaceDetectorClient {
 public:
  explicit CenterCropDetector(std::size_t out_side) : out_side_(out_side) {}
  std::optional<Image> detect_face(const Image& frame) override {
    if (frame.height == 0 || frame.width == 0) return std::nullopt;
    return resize_bilinear(center_crop_square(frame), out_side_, out_side_);
  }

 private:
  std::size_t out_side_;
};

// Demographic labeling of one face image; nullopt on failure.
struct AttributeLabelerClient {
  virtual ~AttributeLabelerClient() = default;
  virtual std::optional<AttributeLabel> label(const Image& image) = 0;
  virtual std::size_t call_count() const { return 0; }
};

// Deterministic stub keyed on channel statistics: the green channel mean
// selects the gender bucket, the blue channel mean the race bucket.
class IntensityStubLabeler : public AttributeLabelerClient {
 public:
  explicit IntensityStubLabeler(const AttributeVocab& vocab = {})
      : vocab_(vocab) {}

  std::optional<AttributeLabel> label(const Image& image) override {
    ++calls_;
    if (image.channels != 3 || image.height == 0) return std::nullopt;
    AttributeLabel out;
    out.gender = image.mean_channel(1) >= 0.5 ? 1 : 0;
    const Real b = image.mean_channel(2);
    out.race = std::min<std::size_t>(
        vocab_.race.size() - 1,
        static_cast<std::size_t>(b * static_cast<Real>(vocab_.race.size())));
    return out;
  }

  std::size_t call_count() const override { return calls_; }

 private:
  AttributeVocab vocab_;
  std::size_t calls_ = 0;
};

// ---------------------------------------------------------------------------
// records

struct FrameSet {
  std::vector<Image> frames;  // source order
};

inline constexpr std::size_t kViewsPerRecord = 5;

struct UtteranceRecord {
  std::string utterance_id;
  std::string speaker_id;
  std::string text;
  std::string audio_path;
  std::array<std::string, kViewsPerRecord> image_paths;
  AttributeLabel labels;
};

enum class FillPolicy { kError, kRepeatToFill };

// ---------------------------------------------------------------------------
// operations

// Runs the detector over every frame of a clip (a directory of PNM frames,
// lexicographically ordered) and returns the crops in source order.
inline FrameSet extract_faces(const std::vector<Image>& frames,
                              FaceDetectorClient& detector) {
  FrameSet out;
  for (const Image& frame : frames) {
    if (auto face = detector.detect_face(frame)) out.frames.push_back(*face);
  }
  return out;
}

inline std::vector<Image> load_clip_frames(const std::string& frames_dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(frames_dir))
    throw IoError("frame directory not found: " + frames_dir);
  std::vector<std::string> paths;
  for (const auto& entry : fs::directory_iterator(frames_dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = entry.path().extension().string();
    if (ext == ".ppm" || ext == ".pgm") paths.push_back(entry.path().string());
  }
  std::sort(paths.begin(), paths.end());
  std::vector<Image> frames;
  frames.reserve(paths.size());
  for (const auto& p : paths) frames.push_back(read_image(p));
  return frames;
}

inline FrameSet extract_faces(const std::string& frames_dir,
                              FaceDetectorClient& detector) {
  return extract_faces(load_clip_frames(frames_dir), detector);
}

// Seeded uniform shuffle, first five taken. With fewer than five frames the
// default policy is a record-level error; repeat-to-fill cycles the shuffled
// frames instead.
inline std::vector<Image> select_views(const FrameSet& frames,
                                       std::uint64_t seed,
                                       FillPolicy policy = FillPolicy::kError) {
  const std::size_t n = frames.frames.size();
  if (n == 0)
    throw RecordError("select_views: no face frames available");
  if (n < kViewsPerRecord && policy == FillPolicy::kError)
    throw RecordError("select_views: only " + std::to_string(n) +
                      " face frames, need " + std::to_string(kViewsPerRecord));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<Image> views;
  views.reserve(kViewsPerRecord);
  for (std::size_t i = 0; i < kViewsPerRecord; ++i)
    views.push_back(frames.frames[order[i % n]]);
  return views;
}

// Algorithm-1 pseudo-labeling: the labeler is consulted image by image until
// one labeling succeeds; that label is inherited by all five views.
inline AttributeLabel assign_pseudo_labels(const std::vector<Image>& images,
                                           AttributeLabelerClient& labeler) {
  require(images.size() == kViewsPerRecord,
          "assign_pseudo_labels: expected exactly " +
              std::to_string(kViewsPerRecord) + " images");
  std::optional<AttributeLabel> annotation;
  for (const Image& image : images) {
    if (!annotation) annotation = labeler.label(image);
  }
  if (!annotation)
    throw RecordError("assign_pseudo_labels: labeler failed on all views");
  return *annotation;
}

// ---------------------------------------------------------------------------
// manifest

struct Manifest {
  AttributeVocab vocab;
  std::vector<UtteranceRecord> records;
};

inline void validate_manifest_field(const std::string& value,
                                    const std::string& what) {
  if (value.find('|') != std::string::npos ||
      value.find('\n') != std::string::npos)
    throw Error("manifest field '" + what + "' contains a reserved character");
}

namespace detail {
inline std::string join(const std::vector<std::string>& parts,
                        const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}
}  // namespace detail

// Line format: utterance_id|speaker_id|text|audio_path|img1..img5|gender|race
// with a header block declaring the attribute vocabularies.
inline void write_manifest(const Manifest& manifest, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest: " + path);
  out << "#ftv-manifest v1\n";
  out << "#gender " << detail::join(manifest.vocab.gender, ",") << "\n";
  out << "#race " << detail::join(manifest.vocab.race, ",") << "\n";
  for (const auto& r : manifest.records) {
    validate_manifest_field(r.utterance_id, "utterance_id");
    validate_manifest_field(r.speaker_id, "speaker_id");
    validate_manifest_field(r.text, "text");
    validate_manifest_field(r.audio_path, "audio_path");
    r.labels.validate(manifest.vocab);
    out << r.utterance_id << '|' << r.speaker_id << '|' << r.text << '|'
        << r.audio_path;
    for (const auto& p : r.image_paths) {
      validate_manifest_field(p, "image_path");
      out << '|' << p;
    }
    out << '|' << r.labels.gender << '|' << r.labels.race << "\n";
  }
  if (!out) throw IoError("failed writing manifest: " + path);
}

inline Manifest read_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "#ftv-manifest v1")
    throw IoError("manifest header missing or wrong version: " + path);
  Manifest manifest;
  if (!std::getline(in, line) || line.rfind("#gender ", 0) != 0)
    throw IoError("manifest gender vocabulary missing: " + path);
  manifest.vocab.gender = detail::split(line.substr(8), ',');
  if (!std::getline(in, line) || line.rfind("#race ", 0) != 0)
    throw IoError("manifest race vocabulary missing: " + path);
  manifest.vocab.race = detail::split(line.substr(6), ',');

  std::size_t lineno = 3;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto fields = detail::split(line, '|');
    if (fields.size() != 4 + kViewsPerRecord + 2)
      throw IoError("manifest line " + std::to_string(lineno) + ": expected " +
                    std::to_string(4 + kViewsPerRecord + 2) + " fields, got " +
                    std::to_string(fields.size()));
    UtteranceRecord r;
    r.utterance_id = fields[0];
    r.speaker_id = fields[1];
    r.text = fields[2];
    r.audio_path = fields[3];
    for (std::size_t i = 0; i < kViewsPerRecord; ++i)
      r.image_paths[i] = fields[4 + i];
    r.labels.gender = static_cast<std::size_t>(std::stoul(fields[9]));
    r.labels.race = static_cast<std::size_t>(std::stoul(fields[10]));
    r.labels.validate(manifest.vocab);
    manifest.records.push_back(std::move(r));
  }
  return manifest;
}

// Seeded by-utterance split; speaker disjointness is not enforced. With a
// ratio a:b, the first n*a/(a+b) shuffled records form the training split.
inline std::pair<Manifest, Manifest> build_manifest(
    const std::vector<UtteranceRecord>& records, std::size_t ratio_train,
    std::size_t ratio_val, std::uint64_t seed,
    const AttributeVocab& vocab = {}) {
  require(!records.empty(), "build_manifest: no records");
  require(ratio_train + ratio_val > 0, "build_manifest: zero ratio");
  std::vector<UtteranceRecord> ordered = records;
  std::sort(ordered.begin(), ordered.end(),
            [](const UtteranceRecord& a, const UtteranceRecord& b) {
              return a.utterance_id < b.utterance_id;
            });
  Rng rng(seed);
  rng.shuffle(ordered);
  const std::size_t n_train =
      ordered.size() * ratio_train / (ratio_train + ratio_val);
  Manifest train{vocab, {}}, val{vocab, {}};
  for (std::size_t i = 0; i < ordered.size(); ++i)
    (i < n_train ? train : val).records.push_back(ordered[i]);
  return {train, val};
}

// ---------------------------------------------------------------------------
// end-to-end preparation over a source tree:
//   source_dir/<speaker>/<utterance>/{frames/*.ppm, audio.wav, text.txt}

struct PipelineSettings {
  std::uint64_t seed = 1234;
  std::size_t split_train = 9;
  std::size_t split_val = 1;
  FillPolicy fill_policy = FillPolicy::kError;
};

struct PrepareStats {
  std::size_t prepared = 0;
  std::size_t skipped = 0;
  std::vector<std::string> warnings;
};

inline PrepareStats prepare_dataset(const std::string& source_dir,
                                    const std::string& out_dir,
                                    const PipelineSettings& settings,
                                    FaceDetectorClient& detector,
                                    AttributeLabelerClient& labeler,
                                    const AttributeVocab& vocab = {}) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(source_dir))
    throw IoError("source directory not found: " + source_dir);
  fs::create_directories(fs::path(out_dir) / "images");

  struct Clip {
    std::string speaker_id, utterance_id, dir;
  };
  std::vector<Clip> clips;
  for (const auto& spk : fs::directory_iterator(source_dir)) {
    if (!spk.is_directory()) continue;
    for (const auto& utt : fs::directory_iterator(spk.path())) {
      if (!utt.is_directory()) continue;
      clips.push_back({spk.path().filename().string(),
                       utt.path().filename().string(), utt.path().string()});
    }
  }
  // stable ordering regardless of directory enumeration order
  std::sort(clips.begin(), clips.end(), [](const Clip& a, const Clip& b) {
    return a.utterance_id < b.utterance_id;
  });
  require(!clips.empty(), "prepare_dataset: no clips under " + source_dir);

  PrepareStats stats;
  std::vector<UtteranceRecord> records;
  for (const Clip& clip : clips) {
    try {
      const std::string frames_dir = clip.dir + "/frames";
      const std::string audio_path = clip.dir + "/audio.wav";
      const std::string text_path = clip.dir + "/text.txt";
      if (!fs::exists(audio_path))
        throw RecordError("missing audio.wav in " + clip.dir);
      std::ifstream text_in(text_path);
      if (!text_in) throw RecordError("missing text.txt in " + clip.dir);
      std::string text;
      std::getline(text_in, text);
      if (text.empty()) throw RecordError("empty text in " + text_path);

      FrameSet face_frames = extract_faces(frames_dir, detector);
      if (face_frames.frames.empty())
        throw RecordError("no face found in any frame of " + clip.dir);
      const std::uint64_t record_seed =
          mix_seed(settings.seed, fnv1a(clip.utterance_id));
      std::vector<Image> views =
          select_views(face_frames, record_seed, settings.fill_policy);
      const AttributeLabel labels = assign_pseudo_labels(views, labeler);
      labels.validate(vocab);

      UtteranceRecord record;
      record.utterance_id = clip.utterance_id;
      record.speaker_id = clip.speaker_id;
      record.text = text;
      record.audio_path = audio_path;
      record.labels = labels;
      for (std::size_t i = 0; i < kViewsPerRecord; ++i) {
        const std::string img_path =
            (fs::path(out_dir) / "images" /
             (clip.utterance_id + "_" + std::to_string(i) + ".ppm"))
                .string();
        write_image(views[i], img_path);
        record.image_paths[i] = img_path;
      }
      records.push_back(std::move(record));
      ++stats.prepared;
    } catch (const RecordError& e) {
      ++stats.skipped;
      stats.warnings.push_back(clip.utterance_id + ": " + e.what());
    }
  }
  require(!records.empty(), "prepare_dataset: every record failed");

  auto [train, val] = build_manifest(records, settings.split_train,
                                     settings.split_val, settings.seed, vocab);
  write_manifest(train, (fs::path(out_dir) / "train.manifest").string());
  write_manifest(val, (fs::path(out_dir) / "val.manifest").string());
  return stats;
}

}  // namespace ftv::pipeline
