#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "ftv/backbone.hpp"
#include "ftv/checkpoint.hpp"
#include "ftv/train.hpp"
#include "support/gradcheck.hpp"
#include "support/toy_corpus.hpp"

using namespace ftv;

namespace {

// vocab 8 (7 chars + unk), C=16, M=16 micro configuration
RunConfig micro_config() {
  RunConfig cfg;
  cfg.seed = 321;
  cfg.model.encoder.image_size = 16;
  cfg.model.encoder.patch_size = 8;
  cfg.model.encoder.dims = {16, 16};
  cfg.model.encoder.depths = {1, 1};
  cfg.model.encoder.heads = 2;
  cfg.model.backbone.hidden = 16;
  cfg.model.backbone.depth = 1;
  cfg.model.backbone.heads = 2;
  cfg.model.backbone.upsample = 2;
  cfg.model.backbone.charset = "abcdefg";
  cfg.model.backbone.mel.sample_rate = 4000;
  cfg.model.backbone.mel.n_fft = 64;
  cfg.model.backbone.mel.hop = 16;
  cfg.model.backbone.mel.n_mels = 16;
  cfg.model.backbone.mel.fmax = 2000;
  cfg.model.attributes.resample_len = 64;
  cfg.model.attributes.hidden = 8;
  return cfg;
}

TrainingRecord micro_record(const FtvModel& model, std::uint64_t seed) {
  Rng rng(seed);
  TrainingRecord rec;
  rec.utterance_id = "u" + std::to_string(seed);
  rec.speaker_id = "s";
  rec.views.push_back(Tensor::randn(3 * 16 * 16, 1, rng, 0.4));
  rec.phoneme_ids = model.backbone().vocabulary().encode("abcg");
  rec.target_mel = Tensor::randn(4 * model.config().backbone.upsample,
                                 model.config().backbone.mel.n_mels, rng);
  rec.labels = AttributeLabel{1, 2};
  return rec;
}

TEST(Vocabulary, EncodeAndErrors) {
  PhonemeVocabulary vocab;  // default charset
  auto ids = vocab.encode("Ab c!");
  ASSERT_EQ(ids.size(), 5u);
  EXPECT_EQ(ids[0], ids[1] - 1);   // 'a' then 'b' are adjacent
  EXPECT_NE(ids[2], 0u);           // space is in the charset
  EXPECT_THROW(vocab.encode(""), Error);
  PhonemeVocabulary small("abcdefg");
  EXPECT_EQ(small.size(), 8u);
  EXPECT_EQ(small.encode("z")[0], 0u);  // unknown maps to id 0
}

TEST(Backbone, MelFrameCountIsUpsampleTimesPhonemes) {
  RunConfig cfg = micro_config();
  FtvModel model(cfg.model, AttributeVocab{}, cfg.seed);
  Rng rng(1);
  Var emb = Var::constant(Tensor::randn(1, 128, rng));
  for (const std::string text : {"a", "abc", "gfedcba"}) {
    const auto ids = model.backbone().vocabulary().encode(text);
    GradPause pause;
    SynthesisOutput outp = model.synthesize(ids, emb);
    EXPECT_EQ(outp.mel.rows(), ids.size() * cfg.model.backbone.upsample);
    EXPECT_EQ(outp.mel.cols(), cfg.model.backbone.mel.n_mels);
    EXPECT_EQ(outp.waveform.rows(),
              ids.size() * cfg.model.backbone.upsample *
                  cfg.model.backbone.mel.hop);
  }
}

TEST(Backbone, SynthesisIsPure) {
  RunConfig cfg = micro_config();
  FtvModel model(cfg.model, AttributeVocab{}, cfg.seed);
  Rng rng(2);
  Var emb = Var::constant(Tensor::randn(1, 128, rng));
  GradPause pause;
  const auto ids = model.backbone().vocabulary().encode("fade");
  Tensor a = model.synthesize(ids, emb).waveform.value();
  Tensor b = model.synthesize(ids, emb).waveform.value();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Backbone, DifferentEmbeddingsChangeTheOutput) {
  RunConfig cfg = micro_config();
  FtvModel model(cfg.model, AttributeVocab{}, cfg.seed);
  Rng rng(3);
  GradPause pause;
  const auto ids = model.backbone().vocabulary().encode("bead");
  Tensor a = model.synthesize(ids, Var::constant(Tensor::randn(1, 128, rng)))
                 .mel.value();
  Tensor b = model.synthesize(ids, Var::constant(Tensor::randn(1, 128, rng)))
                 .mel.value();
  Real l1 = 0;
  for (std::size_t i = 0; i < a.size(); ++i) l1 += std::abs(a[i] - b[i]);
  EXPECT_GT(l1, 0.0);
}

TEST(TotalLoss, PerfectReconstructionWithZeroAttrIsZero) {
  Rng rng(4);
  Tensor target = Tensor::randn(6, 4, rng);
  Var pred = Var::constant(target);
  auto attr = attribute_loss(std::nullopt, std::nullopt, AttributeLabel{0, 0},
                             0.3);
  auto terms = total_loss(pred, target, attr);
  EXPECT_EQ(terms.total.value()[0], 0.0);
}

TEST(TotalLoss, ArithmeticallyCombinesComponents) {
  Rng rng(5);
  Tensor target = Tensor::randn(6, 4, rng);
  Tensor shifted = target;
  for (auto& v : shifted.vec()) v += 0.5;
  auto attr = attribute_loss(std::nullopt, std::nullopt, AttributeLabel{0, 0},
                             0.3);
  auto terms = total_loss(Var::constant(shifted), target, attr);
  EXPECT_NEAR(terms.mel_loss.value()[0], 0.5, 1e-12);  // MAE of constant shift
  EXPECT_NEAR(terms.total.value()[0], 0.5, 1e-12);
}

TEST(TotalLoss, TruncatesToCommonLength) {
  Rng rng(6);
  Tensor target = Tensor::randn(10, 4, rng);
  Tensor pred_v = Tensor::randn(7, 4, rng);
  auto attr = attribute_loss(std::nullopt, std::nullopt, AttributeLabel{0, 0},
                             0.3);
  auto terms = total_loss(Var::constant(pred_v), target, attr);
  // oracle over the first 7 frames
  Real want = 0;
  for (std::size_t i = 0; i < 7 * 4; ++i)
    want += std::abs(pred_v[i] - target[i]);
  want /= 7 * 4;
  EXPECT_NEAR(terms.mel_loss.value()[0], want, 1e-12);

  Tensor empty(0, 4);
  EXPECT_THROW(total_loss(Var::constant(pred_v), empty, attr), DimensionError);
}

TEST(Backbone, EndToEndGradientsOnMicroConfig) {
  RunConfig cfg = micro_config();
  FtvModel model(cfg.model, AttributeVocab{}, cfg.seed);
  TrainingRecord rec = micro_record(model, 7);

  // at least 20 parameters sampled across all modules
  std::vector<Var> leaves;
  const auto& items = model.params().items();
  for (std::size_t i = 0; i < items.size(); i += std::max<std::size_t>(1, items.size() / 24))
    leaves.push_back(items[i].second);
  ASSERT_GE(leaves.size(), 20u);

  auto res = ftv::test::check_gradients(
      leaves, [&] { return pair_loss(model, rec, 0).total; }, 1e-5, 1e-4, 1e-8,
      /*max_per_leaf=*/2, /*seed=*/5);
  EXPECT_TRUE(res.ok()) << res.first_failure << " worst rel " << res.worst_rel;
  EXPECT_GE(res.checked, 20u);
}

TEST(Backbone, GradientsReachEveryModelParameter) {
  RunConfig cfg = micro_config();
  FtvModel model(cfg.model, AttributeVocab{}, cfg.seed);
  TrainingRecord rec = micro_record(model, 8);
  model.params().zero_grads();
  backward(pair_loss(model, rec, 0).total);
  for (const auto& [name, v] : model.params().items()) {
    bool nonzero = false;
    for (Real g : v.grad().vec())
      if (g != 0) nonzero = true;
    EXPECT_TRUE(nonzero) << "no gradient reached " << name;
  }
}

TEST(Backbone, EnhancementSwitchesChangeParameterCountAndLossFlow) {
  RunConfig cfg = micro_config();
  FtvModel full(cfg.model, AttributeVocab{}, cfg.seed);

  ModelConfig no_audio = cfg.model;
  no_audio.attributes.audio_enhancement = false;
  FtvModel m_no_audio(no_audio, AttributeVocab{}, cfg.seed);

  ModelConfig no_visual = cfg.model;
  no_visual.attributes.visual_enhancement = false;
  FtvModel m_no_visual(no_visual, AttributeVocab{}, cfg.seed);

  EXPECT_LT(m_no_audio.parameter_count(), full.parameter_count());
  EXPECT_LT(m_no_visual.parameter_count(), full.parameter_count());
  EXPECT_NE(m_no_audio.parameter_count(), m_no_visual.parameter_count());

  TrainingRecord rec = micro_record(m_no_audio, 9);
  auto terms = pair_loss(m_no_audio, rec, 0);
  EXPECT_EQ(terms.attr.audio_loss.value()[0], 0.0);
  EXPECT_GT(terms.attr.face_loss.value()[0], 0.0);

  TrainingRecord rec2 = micro_record(m_no_visual, 10);
  auto terms2 = pair_loss(m_no_visual, rec2, 0);
  EXPECT_EQ(terms2.attr.face_loss.value()[0], 0.0);
  EXPECT_GT(terms2.attr.audio_loss.value()[0], 0.0);
}

TEST(Checkpoint, RoundTripRestoresParametersExactly) {
  RunConfig cfg = micro_config();
  FtvModel model(cfg.model, AttributeVocab{}, cfg.seed);
  Checkpoint ckpt;
  ckpt.config = cfg;
  ckpt.vocab = model.vocab();
  ckpt.step = 42;
  collect_parameters(model.params(), ckpt);

  const std::string path = "/tmp/ftv_test_ckpt.ckpt";
  save_checkpoint(ckpt, path);
  Checkpoint loaded = load_checkpoint(path);
  EXPECT_EQ(loaded.step, 42u);
  EXPECT_EQ(to_json(loaded.config), to_json(cfg));

  FtvModel fresh(loaded.config.model, loaded.vocab, /*different seed=*/999);
  restore_parameters(loaded, fresh.params());
  for (const auto& [name, v] : model.params().items()) {
    const Tensor& restored = fresh.params().find(name).value();
    for (std::size_t i = 0; i < restored.size(); ++i)
      ASSERT_EQ(restored[i], v.value()[i]) << name;
  }
  std::filesystem::remove(path);
}

TEST(Checkpoint, MismatchedConfigurationIsRejected) {
  RunConfig cfg = micro_config();
  FtvModel model(cfg.model, AttributeVocab{}, cfg.seed);
  Checkpoint ckpt;
  ckpt.config = cfg;
  ckpt.vocab = model.vocab();
  collect_parameters(model.params(), ckpt);

  RunConfig other = micro_config();
  other.model.backbone.hidden = 32;  // different shapes
  FtvModel bigger(other.model, AttributeVocab{}, 1);
  EXPECT_THROW(restore_parameters(ckpt, bigger.params()), Error);
}

}  // namespace
