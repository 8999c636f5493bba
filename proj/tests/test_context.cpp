#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "prosograph/context_attention.hpp"
#include "prosograph/gradcheck.hpp"
#include "test_helpers.hpp"

using namespace prosograph;
using prosograph::testing::sentence_from_tree;

namespace {

ContextAttentionParams small_params(ParamStore& store, Rng& rng, int d_in = 4, int d_ctx = 4) {
  return ContextAttentionParams::create(store, "ctx", d_in, d_ctx, rng);
}

}  // namespace

TEST_CASE("build_caf fills slots in order and masks absent neighbors") {
  ParamStore store;
  Rng rng(3);
  ContextAttentionParams p = small_params(store, rng);
  DiffTensor prev = DiffTensor::from_rows({{1, 1, 1, 1}});
  DiffTensor cur = DiffTensor::from_rows({{2, 2, 2, 2}});
  DiffTensor next = DiffTensor::from_rows({{3, 3, 3, 3}});

  auto all = build_caf(p, &prev, cur, &next);
  CHECK(all.mask == std::array<bool, 3>{true, true, true});
  CHECK(all.slots.at(0, 0) == 1.0);
  CHECK(all.slots.at(1, 0) == 2.0);
  CHECK(all.slots.at(2, 0) == 3.0);

  auto initial = build_caf(p, nullptr, cur, &next);
  CHECK(initial.mask == std::array<bool, 3>{false, true, true});
  for (int j = 0; j < 4; ++j) CHECK(initial.slots.at(0, j) == p.absent.at(0, j));

  auto isolated = build_caf(p, nullptr, cur, nullptr);
  CHECK(isolated.mask == std::array<bool, 3>{false, true, false});
}

TEST_CASE("single surviving slot reduces to output-projected value of cur") {
  ParamStore store;
  Rng rng(7);
  ContextAttentionParams p = small_params(store, rng);
  DiffTensor cur = DiffTensor::from_rows({{0.4, -0.3, 0.8, 0.1}});
  auto caf = build_caf(p, nullptr, cur, nullptr);
  ForwardCtx ctx;
  DiffTensor rep = cross_sentence_attention(p, caf, cur, ctx);
  DiffTensor expected = matmul(matmul(cur, p.w_value), p.w_out);
  REQUIRE(rep.shape() == expected.shape());
  for (int j = 0; j < 4; ++j) CHECK(rep.at(0, j) == Catch::Approx(expected.at(0, j)).epsilon(1e-12));
}

TEST_CASE("identical present slots attend uniformly") {
  ParamStore store;
  Rng rng(11);
  ContextAttentionParams p = small_params(store, rng);
  DiffTensor rep_vec = DiffTensor::from_rows({{0.2, 0.9, -0.5, 0.3}});
  auto caf = build_caf(p, &rep_vec, rep_vec, &rep_vec);

  AttentionTrace trace;
  ForwardCtx ctx;
  ctx.trace = &trace;
  DiffTensor rep = cross_sentence_attention(p, caf, rep_vec, ctx);
  REQUIRE(trace.row_sums.size() == 1);
  CHECK(trace.row_sums[0] == Catch::Approx(1.0).margin(1e-9));

  // with all slots equal the attention output equals the shared value row
  DiffTensor expected = matmul(matmul(rep_vec, p.w_value), p.w_out);
  for (int j = 0; j < 4; ++j) CHECK(rep.at(0, j) == Catch::Approx(expected.at(0, j)).epsilon(1e-12));
}

TEST_CASE("hand-sized attention matches an independent brute-force computation") {
  // d_in = d_ctx = 2 with explicit weights, all slots present
  ContextAttentionParams p;
  p.d_in = 2;
  p.d_ctx = 2;
  p.w_query = DiffTensor::from_rows({{0.5, -0.2}, {0.3, 0.8}});
  p.w_key = DiffTensor::from_rows({{0.9, 0.1}, {-0.4, 0.6}});
  p.w_value = DiffTensor::from_rows({{0.2, 0.7}, {0.5, -0.3}});
  p.w_out = DiffTensor::from_rows({{1.1, 0.0}, {-0.2, 0.9}});
  p.absent = DiffTensor::zeros({1, 2});

  DiffTensor prev = DiffTensor::from_rows({{0.3, -0.6}});
  DiffTensor cur = DiffTensor::from_rows({{0.8, 0.2}});
  DiffTensor next = DiffTensor::from_rows({{-0.1, 0.5}});
  auto caf = build_caf(p, &prev, cur, &next);
  ForwardCtx ctx;
  DiffTensor rep = cross_sentence_attention(p, caf, cur, ctx);

  // brute force with plain loops
  auto matvec = [](const DiffTensor& m, const std::vector<double>& x) {
    std::vector<double> out(m.dim(1), 0.0);
    for (int i = 0; i < m.dim(0); ++i)
      for (int j = 0; j < m.dim(1); ++j) out[j] += x[i] * m.at(i, j);
    return out;
  };
  std::vector<std::vector<double>> slots = {{0.3, -0.6}, {0.8, 0.2}, {-0.1, 0.5}};
  auto q = matvec(p.w_query, slots[1]);
  std::vector<double> scores(3), weights(3);
  double z = 0.0;
  for (int s = 0; s < 3; ++s) {
    auto k = matvec(p.w_key, slots[s]);
    scores[s] = (q[0] * k[0] + q[1] * k[1]) / std::sqrt(2.0);
  }
  double mx = std::max({scores[0], scores[1], scores[2]});
  for (int s = 0; s < 3; ++s) {
    weights[s] = std::exp(scores[s] - mx);
    z += weights[s];
  }
  std::vector<double> pooled(2, 0.0);
  for (int s = 0; s < 3; ++s) {
    auto v = matvec(p.w_value, slots[s]);
    for (int j = 0; j < 2; ++j) pooled[j] += weights[s] / z * v[j];
  }
  auto expected = matvec(p.w_out, pooled);
  CHECK(rep.at(0, 0) == Catch::Approx(expected[0]).epsilon(1e-12));
  CHECK(rep.at(0, 1) == Catch::Approx(expected[1]).epsilon(1e-12));
}

TEST_CASE("masked slots contribute exactly zero") {
  ParamStore store;
  Rng rng(13);
  ContextAttentionParams p = small_params(store, rng);
  DiffTensor cur = DiffTensor::from_rows({{0.4, -0.3, 0.8, 0.1}});
  DiffTensor next = DiffTensor::from_rows({{-0.2, 0.6, 0.0, 0.9}});

  ForwardCtx ctx;
  auto caf = build_caf(p, nullptr, cur, &next);
  DiffTensor rep1 = cross_sentence_attention(p, caf, cur, ctx);

  // blow up the absent embedding; a masked slot must not leak into the output
  for (double& v : store.get("ctx.absent").mutable_values()) v = 1e6;
  auto caf2 = build_caf(p, nullptr, cur, &next);
  DiffTensor rep2 = cross_sentence_attention(p, caf2, cur, ctx);
  CHECK(rep1.values() == rep2.values());
}

TEST_CASE("gradient flows from context_rep back into the previous sentence's features") {
  RelationVocab vocab;
  vocab.add("SBV");
  vocab.add("VOB");
  SentenceRecord prev_s = sentence_from_tree({{2, "SBV"}, {0, "HED"}, {2, "VOB"}});
  SentenceRecord cur_s = sentence_from_tree({{0, "HED"}, {1, "VOB"}});
  SyntaxGraph g_prev = build_syntax_graph(prev_s, vocab);
  SyntaxGraph g_cur = build_syntax_graph(cur_s, vocab);

  ParamStore store;
  Rng rng(17);
  GraphEncoderParams enc =
      GraphEncoderParams::create(store, "enc", 4, 4, 2, 1, 0.0, vocab.n_relations(), rng);
  ContextAttentionParams att = ContextAttentionParams::create(store, "ctx", 8, 4, rng);

  // node features as parameters so we can read their gradients directly
  DiffTensor x_prev = store.create("x_prev", {g_prev.n_nodes(), 4},
                                   {0.1, -0.2, 0.3, 0.4, 0.5, -0.6, 0.7, 0.8,
                                    -0.9, 1.0, -1.1, 1.2, 0.15, 0.25, -0.35, 0.45});
  std::vector<double> xc(static_cast<size_t>(g_cur.n_nodes()) * 4);
  Rng frng(19);
  for (double& v : xc) v = frng.uniform(-1.0, 1.0);
  DiffTensor x_cur = store.create("x_cur", {g_cur.n_nodes(), 4}, xc);

  ForwardCtx ctx;
  ProsodyHierarchy h_prev = fuse_and_extract(g_prev, x_prev, encode_graph(enc, g_prev, x_prev, ctx));
  ProsodyHierarchy h_cur = fuse_and_extract(g_cur, x_cur, encode_graph(enc, g_cur, x_cur, ctx));
  auto caf = build_caf(att, &h_prev.sentence_rep, h_cur.sentence_rep, nullptr);
  DiffTensor rep = cross_sentence_attention(att, caf, h_cur.sentence_rep, ctx);

  store.zero_grad();
  backprop(reduce_mean_all(mul(rep, rep)));
  double grad_norm = 0.0;
  for (double gv : store.get("x_prev").grad()) grad_norm += gv * gv;
  CHECK(grad_norm > 0.0);
}

TEST_CASE("cross_sentence_attention passes the gradient check") {
  ParamStore store;
  Rng rng(23);
  ContextAttentionParams p = small_params(store, rng, 6, 4);
  DiffTensor prev = store.create("rep_prev", {1, 6}, {0.3, -0.6, 0.2, 0.8, -0.1, 0.4});
  DiffTensor cur = store.create("rep_cur", {1, 6}, {0.5, 0.1, -0.4, 0.2, 0.9, -0.7});
  std::vector<double> target = {0.2, -0.1, 0.4, 0.05};

  auto f = [&]() {
    ForwardCtx ctx;
    auto caf = build_caf(p, &prev, cur, nullptr);
    DiffTensor rep = cross_sentence_attention(p, caf, cur, ctx);
    return mse_loss(reshape(rep, {4}), DiffTensor::constant({4}, target));
  };
  auto report = finite_difference_check(f, store, 1e-5, 1e-4);
  INFO("worst " << report.worst_param << " rel err " << report.max_rel_err);
  CHECK(report.passed);
}
