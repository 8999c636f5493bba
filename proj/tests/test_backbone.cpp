#include <catch2/catch_amalgamated.hpp>

#include "prosograph/backbone.hpp"
#include "prosograph/gradcheck.hpp"
#include "test_helpers.hpp"

using namespace prosograph;
using prosograph::testing::sentence_from_tree;

namespace {

BackboneParams small_backbone(ParamStore& store, uint64_t seed, int n_phonemes = 8,
                              int d_model = 6, int d_mel = 3) {
  Rng rng(seed);
  return BackboneParams::create(store, "bb", n_phonemes, d_model, d_mel, rng);
}

}  // namespace

TEST_CASE("encode_phonemes shapes, weight sharing, and range errors") {
  ParamStore store;
  BackboneParams p = small_backbone(store, 3);

  CHECK(encode_phonemes(p, {2}).shape() == Shape{1, 6});

  DiffTensor out = encode_phonemes(p, {4, 4, 4});
  for (int j = 0; j < 6; ++j) {
    CHECK(out.at(0, j) == out.at(1, j));
    CHECK(out.at(1, j) == out.at(2, j));
  }

  try {
    encode_phonemes(p, {1, 99});
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    std::string msg = e.what();
    CHECK(msg.find("99") != std::string::npos);
    CHECK(msg.find("index 1") != std::string::npos);
  }
}

TEST_CASE("length regulator repeats rows in order") {
  DiffTensor hidden = DiffTensor::from_rows({{1, 0}, {2, 0}, {3, 0}});
  DiffTensor frames = length_regulate(hidden, {2, 1, 3});
  REQUIRE(frames.shape() == Shape{6, 2});
  const std::vector<double> expect = {1, 1, 2, 3, 3, 3};
  for (int r = 0; r < 6; ++r) CHECK(frames.at(r, 0) == expect[r]);

  CHECK(length_regulate(hidden, {1, 1, 1}).values() == hidden.values());
  CHECK_THROWS_AS(length_regulate(hidden, {1, 0, 2}), ValidationError);
  CHECK_THROWS_AS(length_regulate(hidden, {1, 2}), ValidationError);
}

TEST_CASE("forward_tts obeys the shape contract and the zero-weight case") {
  ParamStore store;
  BackboneParams p = small_backbone(store, 5);
  SentenceRecord s = sentence_from_tree({{0, "HED"}, {1, "VOB"}});  // 4 phonemes

  DiffTensor conditioned = encode_phonemes(p, {1, 2, 3, 4});
  TtsPredictions preds = forward_tts(p, conditioned, s.durations);
  const int frames = s.total_frames();
  CHECK(preds.mel.shape() == Shape{frames, 3});
  CHECK(preds.f0.shape() == Shape{frames});
  CHECK(preds.logdur.shape() == Shape{4});

  for (auto& [name, t] : store)
    std::fill(t.mutable_values().begin(), t.mutable_values().end(), 0.0);
  DiffTensor zeroed = encode_phonemes(p, {1, 2, 3, 4});
  TtsPredictions zpred = forward_tts(p, zeroed, s.durations);
  for (double v : zpred.mel.values()) CHECK(v == 0.0);
  for (double v : zpred.f0.values()) CHECK(v == 0.0);
  for (double v : zpred.logdur.values()) CHECK(v == 0.0);
}

TEST_CASE("backbone losses: perfect predictions, constant offsets, log-space durations") {
  ParamStore store;
  BackboneParams p = small_backbone(store, 21, 8, 4, 3);
  SentenceRecord s = sentence_from_tree({{0, "HED"}});  // 2 phonemes
  const int frames = s.total_frames();

  // hand-built predictions equal to the targets
  std::vector<double> mel_flat;
  for (const auto& f : s.mel) mel_flat.insert(mel_flat.end(), f.begin(), f.end());
  TtsPredictions perfect;
  perfect.mel = DiffTensor::constant({frames, 3}, mel_flat);
  perfect.f0 = DiffTensor::constant({frames}, s.f0);
  std::vector<double> logdur;
  for (int d : s.durations) logdur.push_back(std::log(static_cast<double>(d)));
  perfect.logdur = DiffTensor::constant({static_cast<int>(logdur.size())}, logdur);

  BackboneLosses l = backbone_loss(p, perfect, s);
  CHECK(l.mel.value() == 0.0);
  CHECK(l.f0.value() == 0.0);
  CHECK(l.dur.value() == 0.0);

  // mel off by a constant c on every channel -> L_mel = c^2
  TtsPredictions offset = perfect;
  offset.mel = scalar_affine(perfect.mel, 1.0, 0.7);
  CHECK(backbone_loss(p, offset, s).mel.value() == Catch::Approx(0.49).epsilon(1e-12));

  // f0 loss is standardized: an offset of c scores (c / f0_std)^2
  p.f0_mean = 150.0;
  p.f0_std = 20.0;
  CHECK(backbone_loss(p, perfect, s).f0.value() == Catch::Approx(0.0).margin(1e-18));
  TtsPredictions f0_off = perfect;
  f0_off.f0 = scalar_affine(perfect.f0, 1.0, 5.0);
  CHECK(backbone_loss(p, f0_off, s).f0.value() == Catch::Approx(0.0625).epsilon(1e-12));
}

TEST_CASE("pitch head output is de-standardized to Hz") {
  ParamStore store;
  BackboneParams p = small_backbone(store, 23, 8, 4, 3);
  p.f0_mean = 180.0;
  p.f0_std = 25.0;
  for (auto& [name, t] : store)
    std::fill(t.mutable_values().begin(), t.mutable_values().end(), 0.0);
  SentenceRecord s = sentence_from_tree({{0, "HED"}});
  DiffTensor conditioned = encode_phonemes(p, {1, 2});
  TtsPredictions preds = forward_tts(p, conditioned, s.durations);
  for (double v : preds.f0.values()) CHECK(v == 180.0);  // zero weights -> mean pitch
}

TEST_CASE("predicted durations exponentiate, round, and clamp to >= 1") {
  DiffTensor logdur = DiffTensor::constant({3}, {std::log(2.0), std::log(4.0), -3.0});
  CHECK(predicted_durations(logdur) == std::vector<int>{2, 4, 1});
}

TEST_CASE("backbone end-to-end loss passes the gradient check at tiny dims") {
  ParamStore store;
  BackboneParams p = small_backbone(store, 7, 6, 4, 2);
  SentenceRecord s = sentence_from_tree({{0, "HED"}, {1, "SBV"}}, 1, 2);  // 2 words, 1 phoneme each

  auto f = [&]() {
    DiffTensor conditioned = encode_phonemes(p, {0, 3});
    TtsPredictions preds = forward_tts(p, conditioned, s.durations);
    BackboneLosses l = backbone_loss(p, preds, s);
    return add(add(l.mel, l.f0), l.dur);
  };
  auto report = finite_difference_check(f, store, 1e-5, 1e-4);
  INFO("worst " << report.worst_param << " rel err " << report.max_rel_err);
  CHECK(report.passed);
}

TEST_CASE("backbone alone trains: losses decrease over 200 steps") {
  ParamStore store;
  BackboneParams p = small_backbone(store, 11, 8, 8, 3);
  std::vector<SentenceRecord> sentences = {
      sentence_from_tree({{0, "HED"}, {1, "VOB"}}),
      sentence_from_tree({{2, "SBV"}, {0, "HED"}, {2, "VOB"}}),
  };
  // scale targets into a learnable range
  for (auto& s : sentences)
    for (double& v : s.f0) v = (v - 170.0) / 10.0;

  std::vector<std::vector<int>> phoneme_ids;
  for (const auto& s : sentences) {
    std::vector<int> ids;
    for (const auto& w : s.words)
      for (int ph : w.phonemes) ids.push_back(ph);
    phoneme_ids.push_back(ids);
  }

  AdamOptimizer opt(1e-3);
  double first = -1.0, last = -1.0;
  for (int step = 0; step < 200; ++step) {
    DiffTensor total;
    for (size_t i = 0; i < sentences.size(); ++i) {
      DiffTensor conditioned = encode_phonemes(p, phoneme_ids[i]);
      BackboneLosses l =
          backbone_loss(p, forward_tts(p, conditioned, sentences[i].durations), sentences[i]);
      DiffTensor sum = add(add(l.mel, l.f0), l.dur);
      total = i == 0 ? sum : add(total, sum);
    }
    total = scalar_mul(total, 0.5);
    if (step == 0) first = total.value();
    last = total.value();
    store.zero_grad();
    backprop(total);
    opt.step(store);
  }
  CHECK(last < first);
  CHECK(last < 0.5 * first);
}
