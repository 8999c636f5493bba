#include <catch2/catch_amalgamated.hpp>

#include "prosograph/conditioning.hpp"
#include "prosograph/gradcheck.hpp"

using namespace prosograph;

namespace {

// identity projections (d_rep == d_ctx == d_model == 2) expose the raw reps
ConditioningParams identity_params() {
  ConditioningParams p;
  p.word_proj = DiffTensor::from_rows({{1, 0}, {0, 1}});
  p.sentence_proj = DiffTensor::from_rows({{1, 0}, {0, 1}});
  p.context_proj = DiffTensor::from_rows({{1, 0}, {0, 1}});
  return p;
}

ProsodyHierarchy small_hierarchy() {
  ProsodyHierarchy h;
  h.word_reps = DiffTensor::from_rows({{1, 10}, {2, 20}, {3, 30}});
  h.sentence_rep = DiffTensor::from_rows({{7, 70}});
  h.context_rep = DiffTensor::from_rows({{9, 90}});
  return h;
}

}  // namespace

TEST_CASE("upsampling repeats each word over its phoneme span, in order") {
  auto streams = upsample_hierarchy(identity_params(), small_hierarchy(), {2, 1, 3});
  REQUIRE(streams.word.shape() == Shape{6, 2});
  const std::vector<double> expected_first = {1, 1, 2, 3, 3, 3};
  for (int r = 0; r < 6; ++r) CHECK(streams.word.at(r, 0) == expected_first[r]);

  // sentence and context streams repeat the single row across all P slots
  for (int r = 0; r < 6; ++r) {
    CHECK(streams.sentence.at(r, 0) == 7.0);
    CHECK(streams.context.at(r, 1) == 90.0);
  }
}

TEST_CASE("degenerate single word, single phoneme") {
  ProsodyHierarchy h;
  h.word_reps = DiffTensor::from_rows({{4, 5}});
  h.sentence_rep = DiffTensor::from_rows({{6, 7}});
  h.context_rep = DiffTensor::from_rows({{8, 9}});
  auto streams = upsample_hierarchy(identity_params(), h, {1});
  CHECK(streams.word.shape() == Shape{1, 2});
  CHECK(streams.sentence.shape() == Shape{1, 2});
  CHECK(streams.context.shape() == Shape{1, 2});
}

TEST_CASE("word-count mismatch raises an alignment error naming the sentence") {
  try {
    upsample_hierarchy(identity_params(), small_hierarchy(), {2, 1}, "doc3 sentence 5");
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("doc3 sentence 5") != std::string::npos);
  }
}

TEST_CASE("upsampling conserves content: span mean equals the projected word rep") {
  ParamStore store;
  Rng rng(3);
  ConditioningParams p = ConditioningParams::create(store, "cond", 4, 4, 4, rng);
  ProsodyHierarchy h;
  h.word_reps = DiffTensor::from_rows(
      {{0.4, -0.2, 0.3, 0.9}, {-0.5, 0.1, 0.8, 0.0}, {0.2, 0.6, -0.7, 0.5}});
  h.sentence_rep = DiffTensor::from_rows({{0.1, 0.2, 0.3, 0.4}});
  h.context_rep = DiffTensor::from_rows({{-0.1, 0.5, 0.2, -0.3}});

  std::vector<int> counts = {3, 1, 4};
  auto streams = upsample_hierarchy(p, h, counts);
  DiffTensor projected = matmul(h.word_reps, p.word_proj);
  int row = 0;
  for (int w = 0; w < 3; ++w) {
    for (int c = 0; c < 4; ++c) {
      double mean = 0.0;
      for (int k = 0; k < counts[w]; ++k) mean += streams.word.at(row + k, c) / counts[w];
      CHECK(mean == projected.at(w, c));  // identical rows: mean is exact
    }
    row += counts[w];
  }
}

TEST_CASE("inject is additive with encoder output identity under zero streams") {
  DiffTensor enc = DiffTensor::from_rows({{1, 2}, {3, 4}, {5, 6}});
  ConditioningStreams zero{DiffTensor::zeros({3, 2}), DiffTensor::zeros({3, 2}),
                           DiffTensor::zeros({3, 2})};
  CHECK(inject(enc, zero).values() == enc.values());

  ConditioningStreams s{DiffTensor::from_rows({{1, 0}, {0, 1}, {1, 1}}),
                        DiffTensor::from_rows({{2, 2}, {2, 2}, {2, 2}}),
                        DiffTensor::from_rows({{0, 3}, {3, 0}, {0, 0}})};
  DiffTensor out = inject(enc, s);
  CHECK(out.at(0, 0) == 4.0);   // 1+1+2+0
  CHECK(out.at(1, 1) == 7.0);   // 4+1+2+0
  CHECK(out.at(2, 0) == 8.0);   // 5+1+2+0
}

TEST_CASE("doubling a stream projection doubles its additive contribution") {
  ParamStore store;
  Rng rng(7);
  ConditioningParams p = ConditioningParams::create(store, "cond", 2, 2, 2, rng);
  ProsodyHierarchy h;
  h.word_reps = DiffTensor::from_rows({{0.5, -0.5}});
  h.sentence_rep = DiffTensor::from_rows({{0.3, 0.4}});
  h.context_rep = DiffTensor::from_rows({{0.2, -0.8}});
  DiffTensor enc = DiffTensor::from_rows({{1.0, 1.0}});

  DiffTensor out1 = inject(enc, upsample_hierarchy(p, h, {1}));
  for (double& v : store.get("cond.context_proj").mutable_values()) v *= 2.0;
  DiffTensor out2 = inject(enc, upsample_hierarchy(p, h, {1}));

  // difference equals one extra copy of the original context contribution
  DiffTensor base_ctx = matmul(h.context_rep, scalar_mul(store.get("cond.context_proj"), 0.5));
  for (int j = 0; j < 2; ++j)
    CHECK(out2.at(0, j) - out1.at(0, j) == Catch::Approx(base_ctx.at(0, j)).margin(1e-14));
}

TEST_CASE("per-phoneme gradients reach a word only through its own span") {
  ParamStore store;
  Rng rng(11);
  ConditioningParams p = ConditioningParams::create(store, "cond", 3, 3, 3, rng);
  DiffTensor word_reps = store.create("reps", {3, 3},
                                      {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9});
  ProsodyHierarchy h;
  h.word_reps = word_reps;
  h.sentence_rep = DiffTensor::from_rows({{0, 0, 0}});
  h.context_rep = DiffTensor::from_rows({{0, 0, 0}});

  std::vector<int> counts = {2, 2, 1};
  auto streams = upsample_hierarchy(p, h, counts);
  // loss touches only the middle word's span (rows 2 and 3)
  DiffTensor span = gather_rows(streams.word, {2, 3});
  store.zero_grad();
  backprop(reduce_mean_all(mul(span, span)));

  const auto& g = store.get("reps").grad();
  double word0 = std::abs(g[0]) + std::abs(g[1]) + std::abs(g[2]);
  double word1 = std::abs(g[3]) + std::abs(g[4]) + std::abs(g[5]);
  double word2 = std::abs(g[6]) + std::abs(g[7]) + std::abs(g[8]);
  CHECK(word0 == 0.0);
  CHECK(word1 > 0.0);
  CHECK(word2 == 0.0);
}

TEST_CASE("conditioning path passes the gradient check") {
  ParamStore store;
  Rng rng(13);
  ConditioningParams p = ConditioningParams::create(store, "cond", 4, 4, 4, rng);
  store.create("reps", {2, 4}, {0.4, -0.2, 0.3, 0.9, -0.5, 0.1, 0.8, 0.0});
  store.create("sent", {1, 4}, {0.1, 0.2, 0.3, 0.4});
  store.create("ctxr", {1, 4}, {-0.1, 0.5, 0.2, -0.3});
  DiffTensor enc = DiffTensor::from_rows({{0.3, 0.3, 0.3, 0.3},
                                          {0.1, -0.1, 0.1, -0.1},
                                          {0.0, 0.2, 0.4, 0.6}});
  std::vector<double> target(12, 0.25);

  auto f = [&]() {
    ProsodyHierarchy h;
    h.word_reps = store.get("reps");
    h.sentence_rep = store.get("sent");
    h.context_rep = store.get("ctxr");
    auto streams = upsample_hierarchy(p, h, {1, 2});
    DiffTensor out = inject(enc, streams);
    return mse_loss(reshape(out, {12}), DiffTensor::constant({12}, target));
  };
  auto report = finite_difference_check(f, store, 1e-5, 1e-4);
  CHECK(report.passed);
}
