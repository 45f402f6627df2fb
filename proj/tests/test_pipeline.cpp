#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <vector>

#include "ftv/pipeline.hpp"
#include "support/toy_corpus.hpp"

using namespace ftv;
using namespace ftv::pipeline;

namespace {

Image flat_frame(Real r, Real g, Real b, std::size_t h = 40, std::size_t w = 48) {
  Image img;
  img.channels = 3;
  img.height = h;
  img.width = w;
  img.data.resize(3 * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      img.at(0, y, x) = r;
      img.at(1, y, x) = g;
      img.at(2, y, x) = b;
    }
  return img;
}

std::vector<Image> numbered_frames(std::size_t count) {
  std::vector<Image> frames;
  for (std::size_t i = 0; i < count; ++i)
    frames.push_back(flat_frame(static_cast<Real>(i) / 255.0, 0.3, 0.1));
  return frames;
}

// detector that only reports a face on selected frame indices
class SelectiveDetector : public FaceDetectorClient {
 public:
  explicit SelectiveDetector(std::set<std::size_t> hits) : hits_(std::move(hits)) {}
  std::optional<Image> detect_face(const Image& frame) override {
    const bool hit = hits_.count(index_++) > 0;
    if (!hit) return std::nullopt;
    return frame;
  }

 private:
  std::set<std::size_t> hits_;
  std::size_t index_ = 0;
};

class FlakyLabeler : public AttributeLabelerClient {
 public:
  explicit FlakyLabeler(std::size_t fail_first_n) : fail_(fail_first_n) {}
  std::optional<AttributeLabel> label(const Image&) override {
    ++calls_;
    if (calls_ <= fail_) return std::nullopt;
    return AttributeLabel{1, 3};
  }
  std::size_t call_count() const override { return calls_; }

 private:
  std::size_t fail_ = 0;
  std::size_t calls_ = 0;
};

TEST(ExtractFaces, StubPassthroughKeepsOrderAndCount) {
  CenterCropDetector detector(16);
  FrameSet set = extract_faces(numbered_frames(20), detector);
  ASSERT_EQ(set.frames.size(), 20u);
  for (std::size_t i = 0; i < 20; ++i) {
    EXPECT_EQ(set.frames[i].height, 16u);
    EXPECT_EQ(set.frames[i].width, 16u);
    EXPECT_NEAR(set.frames[i].at(0, 8, 8), static_cast<Real>(i) / 255.0, 1e-9);
  }
}

TEST(ExtractFaces, DetectorMissesAreFiltered) {
  SelectiveDetector detector({3, 7});
  FrameSet set = extract_faces(numbered_frames(10), detector);
  ASSERT_EQ(set.frames.size(), 2u);
  EXPECT_NEAR(set.frames[0].at(0, 0, 0), 3.0 / 255.0, 1e-9);
  EXPECT_NEAR(set.frames[1].at(0, 0, 0), 7.0 / 255.0, 1e-9);
}

TEST(ExtractFaces, DeterministicOverIdenticalInput) {
  CenterCropDetector detector(8);
  FrameSet a = extract_faces(numbered_frames(6), detector);
  FrameSet b = extract_faces(numbered_frames(6), detector);
  ASSERT_EQ(a.frames.size(), b.frames.size());
  for (std::size_t i = 0; i < a.frames.size(); ++i)
    EXPECT_EQ(a.frames[i].data, b.frames[i].data);
}

TEST(SelectViews, SeededSelectionIsReproducible) {
  FrameSet frames{numbered_frames(12)};
  auto a = select_views(frames, 42);
  auto b = select_views(frames, 42);
  ASSERT_EQ(a.size(), kViewsPerRecord);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].data, b[i].data);
  auto c = select_views(frames, 43);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].data != c[i].data) any_diff = true;
  EXPECT_TRUE(any_diff);
}

TEST(SelectViews, ExactlyFiveFramesUsesAllInShuffledOrder) {
  FrameSet frames{numbered_frames(5)};
  auto views = select_views(frames, 7);
  std::set<int> seen;
  for (const auto& v : views)
    seen.insert(static_cast<int>(v.at(0, 0, 0) * 255.0 + 0.5));
  EXPECT_EQ(seen.size(), 5u);
}

TEST(SelectViews, PolicyControlsShortClips) {
  FrameSet frames{numbered_frames(3)};
  EXPECT_THROW(select_views(frames, 1, FillPolicy::kError), RecordError);
  auto filled = select_views(frames, 1, FillPolicy::kRepeatToFill);
  EXPECT_EQ(filled.size(), kViewsPerRecord);
  FrameSet none{};
  EXPECT_THROW(select_views(none, 1, FillPolicy::kRepeatToFill), RecordError);
}

TEST(SelectViews, UniformSelectionFrequencyOverSeeds) {
  FrameSet frames{numbered_frames(10)};
  std::vector<std::size_t> hits(10, 0);
  const std::size_t trials = 10000;
  for (std::size_t seed = 0; seed < trials; ++seed) {
    for (const auto& v : select_views(frames, seed)) {
      const std::size_t idx =
          static_cast<std::size_t>(v.at(0, 0, 0) * 255.0 + 0.5);
      hits[idx]++;
    }
  }
  for (std::size_t i = 0; i < 10; ++i) {
    const Real freq = static_cast<Real>(hits[i]) / trials;
    EXPECT_NEAR(freq, 0.5, 0.02) << "frame " << i;
  }
}

TEST(PseudoLabels, LabelerInvokedOncePerRecord) {
  FlakyLabeler labeler(0);
  auto views = numbered_frames(5);
  AttributeLabel label = assign_pseudo_labels(views, labeler);
  EXPECT_EQ(labeler.call_count(), 1u);
  EXPECT_EQ(label.gender, 1u);
  EXPECT_EQ(label.race, 3u);
}

TEST(PseudoLabels, FailedFirstImageFallsThroughToSecond) {
  FlakyLabeler labeler(1);
  AttributeLabel label = assign_pseudo_labels(numbered_frames(5), labeler);
  EXPECT_EQ(labeler.call_count(), 2u);
  EXPECT_EQ(label.race, 3u);
}

TEST(PseudoLabels, AllFailuresAreARecordError) {
  FlakyLabeler labeler(5);
  EXPECT_THROW(assign_pseudo_labels(numbered_frames(5), labeler), RecordError);
  EXPECT_EQ(labeler.call_count(), 5u);
}

std::vector<UtteranceRecord> fake_records(std::size_t n) {
  std::vector<UtteranceRecord> records;
  for (std::size_t i = 0; i < n; ++i) {
    UtteranceRecord r;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "utt%04zu", i);
    r.utterance_id = buf;
    r.speaker_id = "spk" + std::to_string(i % 7);
    r.text = "hello world";
    r.audio_path = "/audio/" + r.utterance_id + ".wav";
    for (auto& p : r.image_paths) p = "/img/" + r.utterance_id + ".ppm";
    r.labels = AttributeLabel{i % 2, i % 6};
    records.push_back(r);
  }
  return records;
}

TEST(BuildManifest, NinetyTenSplit) {
  auto [train, val] = build_manifest(fake_records(100), 9, 1, 5);
  EXPECT_EQ(train.records.size(), 90u);
  EXPECT_EQ(val.records.size(), 10u);
}

TEST(BuildManifest, DegenerateAllTrainSplit) {
  auto [train, val] = build_manifest(fake_records(17), 1, 0, 5);
  EXPECT_EQ(train.records.size(), 17u);
  EXPECT_TRUE(val.records.empty());
}

TEST(BuildManifest, SeededMembershipIsStable) {
  auto [t1, v1] = build_manifest(fake_records(40), 9, 1, 11);
  auto [t2, v2] = build_manifest(fake_records(40), 9, 1, 11);
  ASSERT_EQ(t1.records.size(), t2.records.size());
  for (std::size_t i = 0; i < t1.records.size(); ++i)
    EXPECT_EQ(t1.records[i].utterance_id, t2.records[i].utterance_id);
  EXPECT_THROW(build_manifest({}, 9, 1, 1), Error);
}

TEST(Manifest, WriteReadRoundTrip) {
  ftv::test::TempDir tmp("manifest");
  Manifest m{AttributeVocab{}, fake_records(7)};
  const std::string path = tmp.sub("x.manifest");
  write_manifest(m, path);
  Manifest back = read_manifest(path);
  ASSERT_EQ(back.records.size(), 7u);
  EXPECT_TRUE(back.vocab == m.vocab);
  for (std::size_t i = 0; i < 7; ++i) {
    EXPECT_EQ(back.records[i].utterance_id, m.records[i].utterance_id);
    EXPECT_EQ(back.records[i].text, m.records[i].text);
    EXPECT_TRUE(back.records[i].labels == m.records[i].labels);
    EXPECT_EQ(back.records[i].image_paths, m.records[i].image_paths);
  }
}

TEST(Manifest, ReservedCharacterInFieldIsRejected) {
  ftv::test::TempDir tmp("manifest_bad");
  auto records = fake_records(1);
  records[0].text = "evil|field";
  Manifest m{AttributeVocab{}, records};
  EXPECT_THROW(write_manifest(m, tmp.sub("bad.manifest")), Error);
}

TEST(Prepare, ToyCorpusEndToEnd) {
  ftv::test::TempDir tmp("prepare");
  ftv::test::write_toy_corpus(tmp.sub("src"));

  PipelineSettings settings;
  settings.seed = 9;
  settings.split_train = 9;
  settings.split_val = 1;
  AttributeVocab vocab;
  CenterCropDetector detector(64);
  IntensityStubLabeler labeler(vocab);
  PrepareStats stats = pipeline::prepare_dataset(tmp.sub("src"), tmp.sub("out"),
                                                 settings, detector, labeler, vocab);
  EXPECT_EQ(stats.prepared, 10u);
  EXPECT_EQ(stats.skipped, 0u);
  EXPECT_EQ(labeler.call_count(), 10u);  // once per record, never 5x

  Manifest train = read_manifest(tmp.sub("out") + "/train.manifest");
  Manifest val = read_manifest(tmp.sub("out") + "/val.manifest");
  EXPECT_EQ(train.records.size() + val.records.size(), 10u);
  EXPECT_EQ(train.records.size(), 9u);

  // label constancy within records, correct stub labels per speaker
  for (const Manifest* m : {&train, &val}) {
    for (const auto& r : m->records) {
      for (const auto& p : r.image_paths) EXPECT_TRUE(std::filesystem::exists(p));
      if (r.speaker_id == "spk_a") {
        EXPECT_EQ(r.labels.gender, 0u);
        EXPECT_EQ(r.labels.race, 0u);
      } else {
        EXPECT_EQ(r.labels.gender, 1u);
        EXPECT_EQ(r.labels.race, 1u);
      }
    }
  }
}

TEST(Prepare, RerunsAreByteIdentical) {
  ftv::test::TempDir tmp("prepare_idem");
  ftv::test::write_toy_corpus(tmp.sub("src"));
  PipelineSettings settings;
  settings.seed = 21;
  AttributeVocab vocab;

  auto run = [&](const std::string& out) {
    CenterCropDetector detector(64);
    IntensityStubLabeler labeler(vocab);
    pipeline::prepare_dataset(tmp.sub("src"), out, settings, detector, labeler,
                              vocab);
    std::ifstream in(out + "/train.manifest", std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  EXPECT_EQ(run(tmp.sub("out1")), run(tmp.sub("out2")));
}

TEST(Prepare, ShortClipIsSkippedWithWarningByDefault) {
  ftv::test::TempDir tmp("prepare_short");
  ftv::test::write_toy_corpus(tmp.sub("src"));
  // add a clip with only 3 frames
  namespace fs = std::filesystem;
  const fs::path clip = fs::path(tmp.sub("src")) / "spk_a" / "utt_short";
  fs::create_directories(clip / "frames");
  for (int f = 0; f < 3; ++f)
    write_image(ftv::test::toy_face_frame(ftv::test::toy_speakers()[0], f),
                (clip / "frames" / ("frame_00" + std::to_string(f) + ".ppm"))
                    .string());
  write_wav(ftv::test::toy_reference_audio(ftv::test::toy_speakers()[0], "abc"),
            (clip / "audio.wav").string());
  std::ofstream((clip / "text.txt").string()) << "abc\n";

  PipelineSettings settings;
  AttributeVocab vocab;
  CenterCropDetector detector(64);
  IntensityStubLabeler labeler(vocab);
  PrepareStats stats = pipeline::prepare_dataset(
      tmp.sub("src"), tmp.sub("out"), settings, detector, labeler, vocab);
  EXPECT_EQ(stats.prepared, 10u);
  EXPECT_EQ(stats.skipped, 1u);
  ASSERT_EQ(stats.warnings.size(), 1u);
  EXPECT_NE(stats.warnings[0].find("utt_short"), std::string::npos);

  settings.fill_policy = FillPolicy::kRepeatToFill;
  CenterCropDetector detector2(64);
  IntensityStubLabeler labeler2(vocab);
  PrepareStats stats2 = pipeline::prepare_dataset(
      tmp.sub("src"), tmp.sub("out2"), settings, detector2, labeler2, vocab);
  EXPECT_EQ(stats2.prepared, 11u);
  EXPECT_EQ(stats2.skipped, 0u);
}

}  // namespace
