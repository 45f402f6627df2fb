#include <gtest/gtest.h>

#include <cmath>
#include <optional>
#include <vector>

#include "ftv/attributes.hpp"
#include "ftv/nn.hpp"
#include "ftv/rng.hpp"
#include "support/gradcheck.hpp"

using namespace ftv;

namespace {

// independent softmax cross-entropy for oracle comparisons
Real oracle_ce(const Tensor& logits, std::size_t target) {
  Real mx = logits[0];
  for (std::size_t i = 1; i < logits.size(); ++i) mx = std::max(mx, logits[i]);
  Real z = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += std::exp(logits[i] - mx);
  return mx + std::log(z) - logits[target];
}

TEST(Resample, HandComputedExamples) {
  // endpoint-aligned interpolation applied by hand
  EXPECT_EQ(resample_waveform({1, 2, 3, 4}, 2), (std::vector<Real>{1, 4}));
  EXPECT_EQ(resample_waveform({0, 2}, 3), (std::vector<Real>{0, 1, 2}));
}

TEST(Resample, IdentityAtEqualLength) {
  std::vector<Real> wav{0.5, -1.25, 3.0, 0.0, 2.5};
  EXPECT_EQ(resample_waveform(wav, wav.size()), wav);
}

TEST(Resample, EndpointsCoincideExactly) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng.next_below(500);
    const std::size_t r = 2 + rng.next_below(500);
    std::vector<Real> wav(n);
    for (auto& v : wav) v = rng.next_normal();
    auto out = resample_waveform(wav, r);
    EXPECT_EQ(out.front(), wav.front());
    EXPECT_EQ(out.back(), wav.back());
  }
}

TEST(Resample, PreservesRangeHull) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng.next_below(300);
    const std::size_t r = 2 + rng.next_below(300);
    std::vector<Real> wav(n);
    for (auto& v : wav) v = rng.next_normal();
    const Real lo = *std::min_element(wav.begin(), wav.end());
    const Real hi = *std::max_element(wav.begin(), wav.end());
    for (Real v : resample_waveform(wav, r)) {
      EXPECT_GE(v, lo);
      EXPECT_LE(v, hi);
    }
  }
}

TEST(Resample, RejectsDegenerateInputs) {
  EXPECT_THROW(resample_waveform({1.0}, 4), DimensionError);
  EXPECT_THROW(resample_waveform({1.0, 2.0}, 1), DimensionError);
}

TEST(Resample, DifferentiableVersionMatchesPlain) {
  Rng rng(3);
  std::vector<Real> wav(37);
  for (auto& v : wav) v = rng.next_normal();
  auto plain = resample_waveform(wav, 13);
  Tensor got = resample_rows(Var::constant(Tensor::column(wav)), 13).value();
  ASSERT_EQ(got.rows(), 13u);
  for (std::size_t i = 0; i < 13; ++i) EXPECT_EQ(got[i], plain[i]);
}

TEST(Resample, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  Var wav = Var::leaf(Tensor::randn(25, 1, rng), true);
  auto res = ftv::test::check_gradients({wav}, [&] {
    Var r = resample_rows(wav, 9);
    return mean_all(mul(r, r));
  });
  EXPECT_TRUE(res.ok()) << res.first_failure;
}

TEST(FaceHead, LogitShapesMatchVocabularies) {
  ParamStore ps(5);
  AttributeVocab vocab;
  FaceAttributeHead head(ps, AttributeConfig{}, vocab);
  Rng rng(6);
  AttributeLogits out = head(Var::constant(Tensor::randn(1, 128, rng)));
  EXPECT_EQ(out.gender.cols(), 2u);
  EXPECT_EQ(out.race.cols(), 6u);
}

TEST(FaceHead, ZeroOutputLayersGiveUniformPosterior) {
  ParamStore ps(7);
  AttributeVocab vocab;
  FaceAttributeHead head(ps, AttributeConfig{}, vocab);
  ps.find("face_head.gender.w").mutable_value().fill(0.0);
  ps.find("face_head.gender.b").mutable_value().fill(0.0);
  ps.find("face_head.race.w").mutable_value().fill(0.0);
  ps.find("face_head.race.b").mutable_value().fill(0.0);
  AttributeLogits out = head(Var::constant(Tensor(1, 128, 0.0)));
  EXPECT_NEAR(cross_entropy_logits(out.gender, 0).value()[0], std::log(2.0), 1e-12);
  EXPECT_NEAR(cross_entropy_logits(out.race, 3).value()[0], std::log(6.0), 1e-12);
}

// Linearly separable toy set: embedding dimension 0 carries the gender sign.
// Plain gradient descent on the head must reach 95% training accuracy.
TEST(FaceHead, LearnsLinearlySeparableToySet) {
  ParamStore ps(8);
  AttributeVocab vocab;
  AttributeConfig cfg;
  cfg.hidden = 16;
  FaceAttributeHead head(ps, cfg, vocab);

  Rng rng(9);
  const std::size_t n = 64;
  std::vector<Tensor> embeddings;
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor e = Tensor::randn(1, 128, rng, 0.1);
    const std::size_t label = i % 2;
    e[0] = label == 0 ? -1.0 : 1.0;
    embeddings.push_back(e);
    labels.push_back(label);
  }

  const Real lr = 0.5;
  for (int step = 0; step < 200; ++step) {
    ps.zero_grads();
    Var loss;
    for (std::size_t i = 0; i < n; ++i) {
      Var l = cross_entropy_logits(head(Var::constant(embeddings[i])).gender,
                                   labels[i]);
      loss = loss.valid() ? add(loss, l) : l;
    }
    loss = mul_scalar(loss, 1.0 / n);
    backward(loss);
    for (auto& [name, v] : ps.items()) {
      const Tensor& g = v.grad();  // allocates zeros for untouched params
      for (std::size_t k = 0; k < v.value().size(); ++k)
        v.mutable_value()[k] -= lr * g[k];
    }
  }

  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    GradPause pause;
    Tensor logits = head(Var::constant(embeddings[i])).gender.value();
    const std::size_t pred = logits[1] > logits[0] ? 1 : 0;
    if (pred == labels[i]) ++correct;
  }
  EXPECT_GE(correct * 100 / n, 95u);
}

TEST(AudioHead, ZeroInputZeroBiasGivesUniformPosterior) {
  ParamStore ps(10);
  AttributeVocab vocab;
  AttributeConfig cfg;
  cfg.resample_len = 32;
  AudioAttributeHead head(ps, cfg, vocab);
  AttributeLogits out = head(Var::constant(Tensor(1, 32, 0.0)));
  for (Real v : out.gender.value().vec()) EXPECT_EQ(v, 0.0);
  for (Real v : out.race.value().vec()) EXPECT_EQ(v, 0.0);
  EXPECT_NEAR(cross_entropy_logits(out.race, 0).value()[0], std::log(6.0), 1e-12);
}

TEST(AudioHead, InputGradientMatchesFiniteDifferencesAtR32) {
  ParamStore ps(11);
  AttributeVocab vocab;
  AttributeConfig cfg;
  cfg.resample_len = 32;
  AudioAttributeHead head(ps, cfg, vocab);
  Rng rng(12);
  Var input = Var::leaf(Tensor::randn(1, 32, rng), true);
  auto res = ftv::test::check_gradients(
      {input},
      [&] { return cross_entropy_logits(head(input).gender, 1); }, 1e-5,
      1e-3, 1e-9);
  EXPECT_TRUE(res.ok()) << res.first_failure;
}

TEST(AttributeLoss, TotalIsFacePlusAlphaAudioExactly) {
  Rng rng(13);
  AttributeLabel label{1, 4};
  for (int trial = 0; trial < 100; ++trial) {
    AttributeLogits face{Var::constant(Tensor::randn(1, 2, rng)),
                         Var::constant(Tensor::randn(1, 6, rng))};
    AttributeLogits audio{Var::constant(Tensor::randn(1, 2, rng)),
                          Var::constant(Tensor::randn(1, 6, rng))};
    auto terms = attribute_loss(face, audio, label, 0.3);
    // hand arithmetic on independently computed cross-entropies
    const Real want_face = oracle_ce(face.gender.value(), 1) +
                           oracle_ce(face.race.value(), 4);
    const Real want_audio = oracle_ce(audio.gender.value(), 1) +
                            oracle_ce(audio.race.value(), 4);
    EXPECT_NEAR(terms.face_loss.value()[0], want_face, 1e-9);
    EXPECT_NEAR(terms.audio_loss.value()[0], want_audio, 1e-9);
    EXPECT_NEAR(terms.total.value()[0], want_face + 0.3 * want_audio, 1e-9);
    EXPECT_GE(terms.face_loss.value()[0], 0.0);
    EXPECT_GE(terms.audio_loss.value()[0], 0.0);
  }
}

TEST(AttributeLoss, PerfectlyConfidentLogitsGiveZeroTotal) {
  Tensor g(1, 2, -40.0);
  g[0] = 40.0;
  Tensor r(1, 6, -40.0);
  r[2] = 40.0;
  AttributeLogits face{Var::constant(g), Var::constant(r)};
  AttributeLogits audio{Var::constant(g), Var::constant(r)};
  auto terms = attribute_loss(face, audio, AttributeLabel{0, 2}, 0.3);
  EXPECT_NEAR(terms.total.value()[0], 0.0, 1e-6);
}

TEST(AttributeLoss, AlphaZeroAnnihilatesAudioSide) {
  Rng rng(14);
  AttributeLogits face{Var::constant(Tensor::randn(1, 2, rng)),
                       Var::constant(Tensor::randn(1, 6, rng))};
  AttributeLogits audio{Var::constant(Tensor::randn(1, 2, rng)),
                        Var::constant(Tensor::randn(1, 6, rng))};
  auto terms = attribute_loss(face, audio, AttributeLabel{0, 0}, 0.0);
  EXPECT_EQ(terms.total.value()[0], terms.face_loss.value()[0]);
}

TEST(AttributeLoss, MonotoneInAlphaWhenAudioLossPositive) {
  Rng rng(15);
  AttributeLogits face{Var::constant(Tensor::randn(1, 2, rng)),
                       Var::constant(Tensor::randn(1, 6, rng))};
  AttributeLogits audio{Var::constant(Tensor::randn(1, 2, rng)),
                        Var::constant(Tensor::randn(1, 6, rng))};
  Real prev = -1;
  for (Real alpha : {0.0, 0.1, 0.3, 1.0, 2.5}) {
    auto terms = attribute_loss(face, audio, AttributeLabel{1, 5}, alpha);
    EXPECT_GT(terms.total.value()[0], prev);
    prev = terms.total.value()[0];
  }
}

TEST(AttributeLoss, MeanReductionHalvesSums) {
  Rng rng(16);
  AttributeLogits face{Var::constant(Tensor::randn(1, 2, rng)),
                       Var::constant(Tensor::randn(1, 6, rng))};
  auto sum_terms =
      attribute_loss(face, std::nullopt, AttributeLabel{0, 1}, 0.3,
                     LossReduction::kSum);
  auto mean_terms =
      attribute_loss(face, std::nullopt, AttributeLabel{0, 1}, 0.3,
                     LossReduction::kMean);
  EXPECT_DOUBLE_EQ(mean_terms.face_loss.value()[0],
                   0.5 * sum_terms.face_loss.value()[0]);
}

TEST(AttributeLoss, OutOfVocabularyLabelIsAnError) {
  Rng rng(17);
  AttributeLogits face{Var::constant(Tensor::randn(1, 2, rng)),
                       Var::constant(Tensor::randn(1, 6, rng))};
  EXPECT_THROW(attribute_loss(face, std::nullopt, AttributeLabel{2, 0}, 0.3),
               Error);
  EXPECT_THROW(attribute_loss(face, std::nullopt, AttributeLabel{0, 6}, 0.3),
               Error);
}

TEST(Heads, FaceAndAudioParametersAreDisjoint) {
  ParamStore ps(18);
  AttributeVocab vocab;
  AttributeConfig cfg;
  cfg.resample_len = 16;
  FaceAttributeHead face(ps, cfg, vocab);
  AudioAttributeHead audio(ps, cfg, vocab);

  std::vector<Tensor> audio_before;
  for (const auto& [name, v] : ps.items())
    if (name.rfind("audio_head.", 0) == 0) audio_before.push_back(v.value());

  // update only the face side
  for (auto& [name, v] : ps.items())
    if (name.rfind("face_head.", 0) == 0)
      for (auto& x : v.mutable_value().vec()) x += 0.123;

  std::size_t i = 0;
  for (const auto& [name, v] : ps.items())
    if (name.rfind("audio_head.", 0) == 0) {
      const Tensor& now = v.value();
      for (std::size_t k = 0; k < now.size(); ++k)
        ASSERT_EQ(now[k], audio_before[i][k]) << name;
      ++i;
    }
}

TEST(Vocab, LabelValidation) {
  AttributeVocab vocab;
  AttributeLabel ok{1, 5};
  ok.validate(vocab);
  EXPECT_THROW((AttributeLabel{2, 0}).validate(vocab), Error);
  EXPECT_EQ(vocab.index_of_race("Middle Eastern"), 2u);
  EXPECT_THROW(vocab.index_of_gender("other"), Error);
}

}  // namespace
