#include <catch2/catch_amalgamated.hpp>

#include <queue>
#include <set>

#include "prosograph/syntax_graph.hpp"
#include "test_helpers.hpp"

using namespace prosograph;
using prosograph::testing::i_love_you;
using prosograph::testing::sentence_from_tree;

namespace {

RelationVocab basic_vocab() {
  RelationVocab v;
  v.add("SBV");
  v.add("VOB");
  return v;
}

// undirected (=directed, both ways exist per link) eccentricity via BFS
int diameter(const SyntaxGraph& g) {
  int best = 0;
  for (int start = 0; start < g.n_nodes(); ++start) {
    std::vector<int> dist(g.n_nodes(), -1);
    std::queue<int> q;
    dist[start] = 0;
    q.push(start);
    while (!q.empty()) {
      int u = q.front();
      q.pop();
      for (const auto& e : g.edges)
        if (e.src == u && dist[e.dst] < 0) {
          dist[e.dst] = dist[u] + 1;
          q.push(e.dst);
        }
    }
    for (int d : dist) best = std::max(best, d);
  }
  return best;
}

}  // namespace

TEST_CASE("the Fig.-style three-word graph has 10 edges and a global node") {
  RelationVocab vocab = basic_vocab();
  SyntaxGraph g = build_syntax_graph(i_love_you(), vocab);

  CHECK(g.n_words == 3);
  CHECK(g.n_nodes() == 4);
  REQUIRE(g.edges.size() == 10);

  const int glb = g.global_index();
  std::set<std::tuple<int, int, int, int>> got;
  for (const auto& e : g.edges)
    got.insert({e.src, e.dst, e.relation, static_cast<int>(e.dir)});

  const int sbv = vocab.id_of("SBV"), vob = vocab.id_of("VOB");
  // love (index 1) -> I (0) and -> you (2), plus reverses
  CHECK(got.count({1, 0, sbv, 0}) == 1);
  CHECK(got.count({0, 1, sbv, 1}) == 1);
  CHECK(got.count({1, 2, vob, 0}) == 1);
  CHECK(got.count({2, 1, vob, 1}) == 1);
  for (int i = 0; i < 3; ++i) {
    CHECK(got.count({glb, i, RelationVocab::kGlb, 0}) == 1);
    CHECK(got.count({i, glb, RelationVocab::kGlb, 1}) == 1);
  }
}

TEST_CASE("single-word sentence yields only the two global links") {
  SyntaxGraph g = build_syntax_graph(sentence_from_tree({{0, "HED"}}), basic_vocab());
  CHECK(g.n_nodes() == 2);
  CHECK(g.edges.size() == 2);
}

TEST_CASE("edge count follows 2(W-1) + 2W") {
  // chain of 4 words
  SyntaxGraph g = build_syntax_graph(
      sentence_from_tree({{0, "HED"}, {1, "VOB"}, {2, "VOB"}, {3, "VOB"}}), basic_vocab());
  CHECK(g.edges.size() == 2 * 3 + 2 * 4);
}

TEST_CASE("graph structure invariants: in-degree, no self edges, no duplicates, determinism") {
  RelationVocab vocab = basic_vocab();
  SentenceRecord s = sentence_from_tree({{2, "SBV"}, {0, "HED"}, {2, "VOB"}, {3, "ATT"}, {2, "ADV"}});
  SyntaxGraph g = build_syntax_graph(s, vocab);

  for (int i = 0; i < g.n_nodes(); ++i) CHECK(!g.in_edges[i].empty());
  std::set<std::tuple<int, int, int, int>> unique_edges;
  for (const auto& e : g.edges) {
    CHECK(e.src != e.dst);
    CHECK(unique_edges.insert({e.src, e.dst, e.relation, static_cast<int>(e.dir)}).second);
  }

  SyntaxGraph g2 = build_syntax_graph(s, vocab);
  CHECK(g.edges == g2.edges);
  CHECK(std::is_sorted(g.edges.begin(), g.edges.end()));
}

TEST_CASE("global node gives 2-hop diameter; removing it can exceed 2") {
  auto chain = sentence_from_tree({{0, "HED"}, {1, "VOB"}, {2, "VOB"}, {3, "VOB"}});
  SyntaxGraph with_global = build_syntax_graph(chain, basic_vocab(), true);
  SyntaxGraph without = build_syntax_graph(chain, basic_vocab(), false);
  CHECK(diameter(with_global) <= 2);
  CHECK(diameter(without) == 3);
  CHECK(without.n_nodes() == 4);
  CHECK(without.edges.size() == 2 * 3);
}

TEST_CASE("unknown deprel maps to UNK") {
  RelationVocab vocab = basic_vocab();
  SentenceRecord s = sentence_from_tree({{0, "HED"}, {1, "XYZZY"}});
  SyntaxGraph g = build_syntax_graph(s, vocab);
  bool saw_unk = false;
  for (const auto& e : g.edges) saw_unk = saw_unk || e.relation == RelationVocab::kUnk;
  CHECK(saw_unk);
}

TEST_CASE("relation vocab from corpus is sorted and stable through json") {
  Corpus c;
  Document d;
  d.doc_id = "d";
  d.sentences = {sentence_from_tree({{0, "HED"}, {1, "VOB"}, {1, "ATT"}}),
                 sentence_from_tree({{0, "HED"}, {1, "SBV"}})};
  c.docs.push_back(d);
  RelationVocab v = RelationVocab::from_corpus(c);
  CHECK(v.labels == std::vector<std::string>{"GLB", "UNK", "HED", "ATT", "SBV", "VOB"});

  RelationVocab round = RelationVocab::from_json(v.to_json());
  CHECK(round.labels == v.labels);
  CHECK(round.id_of("SBV") == v.id_of("SBV"));
  CHECK(round.id_of("never-seen") == RelationVocab::kUnk);
}

TEST_CASE("node feature initialization: fallback, mean global, cls override") {
  EmbeddingTable table;
  table.dim = 2;
  table.entries["a"] = {1.0, 0.0};
  table.entries["b"] = {0.0, 2.0};
  table.entries["<UNK>"] = {0.5, 0.5};
  table.fallback = table.entries["<UNK>"];

  DiffTensor proj = DiffTensor::from_rows({{2.0, 0.0, 1.0}, {0.0, 3.0, 1.0}});  // [2x3]

  SECTION("all words unknown: every word row equals proj(fallback)") {
    SentenceRecord s = sentence_from_tree({{0, "HED"}, {1, "VOB"}});
    SyntaxGraph g = build_syntax_graph(s, RelationVocab{});
    DiffTensor feats = init_node_features(g, s, table, proj);
    REQUIRE(feats.shape() == Shape{3, 3});
    for (int i = 0; i < 2; ++i) {
      CHECK(feats.at(i, 0) == 1.0);   // 0.5*2
      CHECK(feats.at(i, 1) == 1.5);   // 0.5*3
      CHECK(feats.at(i, 2) == 1.0);   // 0.5+0.5
    }
    // identical word vectors -> global row equals the shared projection
    CHECK(feats.at(2, 0) == 1.0);
    CHECK(feats.at(2, 1) == 1.5);
    CHECK(feats.at(2, 2) == 1.0);
  }

  SECTION("two known words: global row is proj of the mean vector") {
    SentenceRecord s = sentence_from_tree({{0, "HED"}, {1, "VOB"}});
    s.words[0].form = "a";
    s.words[1].form = "b";
    SyntaxGraph g = build_syntax_graph(s, RelationVocab{});
    DiffTensor feats = init_node_features(g, s, table, proj);
    // mean = (0.5, 1.0); proj mean = (1.0, 3.0, 1.5)
    CHECK(feats.at(2, 0) == Catch::Approx(1.0).epsilon(1e-14));
    CHECK(feats.at(2, 1) == Catch::Approx(3.0).epsilon(1e-14));
    CHECK(feats.at(2, 2) == Catch::Approx(1.5).epsilon(1e-14));
  }

  SECTION("cls embedding overrides the mean") {
    SentenceRecord s = sentence_from_tree({{0, "HED"}, {1, "VOB"}});
    s.cls_embedding = std::vector<double>{1.0, 1.0};
    SyntaxGraph g = build_syntax_graph(s, RelationVocab{});
    DiffTensor feats = init_node_features(g, s, table, proj);
    CHECK(feats.at(2, 0) == 2.0);
    CHECK(feats.at(2, 1) == 3.0);
    CHECK(feats.at(2, 2) == 2.0);
  }
}
