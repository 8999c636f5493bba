#pragma once

#include <algorithm>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "prosograph/corpus.hpp"
#include "prosograph/errors.hpp"
#include "prosograph/tensor.hpp"

namespace prosograph {

// Relation labels -> stable ids. GLB (global link), UNK, HED are always
// present; unseen labels at build time map to UNK.
struct RelationVocab {
  static constexpr int kGlb = 0;
  static constexpr int kUnk = 1;
  static constexpr int kHed = 2;

  std::vector<std::string> labels = {"GLB", "UNK", "HED"};
  std::unordered_map<std::string, int> ids = {{"GLB", 0}, {"UNK", 1}, {"HED", 2}};

  int n_relations() const { return static_cast<int>(labels.size()); }

  int id_of(const std::string& label) const {
    auto it = ids.find(label);
    return it == ids.end() ? kUnk : it->second;
  }

  void add(const std::string& label) {
    if (!ids.count(label)) {
      ids.emplace(label, n_relations());
      labels.push_back(label);
    }
  }

  // Scans every deprel in the corpus; extra labels are appended in sorted
  // order so ids are independent of document order.
  static RelationVocab from_corpus(const Corpus& corpus) {
    RelationVocab vocab;
    std::vector<std::string> seen;
    for (const auto& doc : corpus.docs)
      for (const auto& s : doc.sentences)
        for (const auto& w : s.words)
          if (!vocab.ids.count(w.deprel)) seen.push_back(w.deprel);
    std::sort(seen.begin(), seen.end());
    seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
    for (const auto& label : seen) vocab.add(label);
    return vocab;
  }

  nlohmann::json to_json() const { return labels; }

  static RelationVocab from_json(const nlohmann::json& j) {
    RelationVocab vocab;
    auto stored = j.get<std::vector<std::string>>();
    if (stored.size() < 3 || stored[0] != "GLB" || stored[1] != "UNK" || stored[2] != "HED")
      throw ValidationError("relation vocabulary must start with GLB, UNK, HED");
    for (size_t i = 3; i < stored.size(); ++i) vocab.add(stored[i]);
    return vocab;
  }
};

enum class EdgeDir : int { kFwd = 0, kRev = 1 };

struct GraphEdge {
  int src = 0;
  int dst = 0;
  int relation = 0;
  EdgeDir dir = EdgeDir::kFwd;

  // row into the (relation, direction)-indexed edge-embedding matrix
  int embedding_row() const { return relation * 2 + static_cast<int>(dir); }

  friend bool operator<(const GraphEdge& a, const GraphEdge& b) {
    return std::tie(a.src, a.dst, a.relation, a.dir) < std::tie(b.src, b.dst, b.relation, b.dir);
  }
  friend bool operator==(const GraphEdge& a, const GraphEdge& b) {
    return a.src == b.src && a.dst == b.dst && a.relation == b.relation && a.dir == b.dir;
  }
};

// Word nodes 0..W-1 plus, unless ablated, a virtual global node at index W
// connected to every word in both directions.
struct SyntaxGraph {
  int n_words = 0;
  bool has_global = true;
  std::vector<GraphEdge> edges;            // sorted by (src, dst, relation, dir)
  std::vector<std::vector<int>> in_edges;  // per node, indices into edges with dst == node
  DiffTensor node_features;                // [(n_nodes) x d_node] once initialized

  int n_nodes() const { return n_words + (has_global ? 1 : 0); }
  int global_index() const { return n_words; }  // valid only when has_global
};

// Dependency edges run head -> dependent with the sentence's relation, each
// duplicated with swapped endpoints and a reverse tag so that in-neighbor
// aggregation sees both directions. Global links use GLB both ways.
inline SyntaxGraph build_syntax_graph(const SentenceRecord& sentence, const RelationVocab& vocab,
                                      bool with_global = true) {
  validate_sentence(sentence, "<adhoc>", 0);
  SyntaxGraph g;
  g.n_words = sentence.n_words();
  g.has_global = with_global;

  for (int i = 0; i < g.n_words; ++i) {
    const auto& w = sentence.words[i];
    if (w.head == 0) continue;  // root has no incoming dependency edge
    const int head = w.head - 1;
    const int rel = vocab.id_of(w.deprel);
    g.edges.push_back({head, i, rel, EdgeDir::kFwd});
    g.edges.push_back({i, head, rel, EdgeDir::kRev});
  }
  if (with_global) {
    const int global = g.global_index();
    for (int i = 0; i < g.n_words; ++i) {
      g.edges.push_back({global, i, RelationVocab::kGlb, EdgeDir::kFwd});
      g.edges.push_back({i, global, RelationVocab::kGlb, EdgeDir::kRev});
    }
  }
  std::sort(g.edges.begin(), g.edges.end());

  g.in_edges.assign(g.n_nodes(), {});
  for (size_t e = 0; e < g.edges.size(); ++e) g.in_edges[g.edges[e].dst].push_back(static_cast<int>(e));
  return g;
}

// Word node i <- proj(table[form_i]); global node <- proj(cls_embedding) when
// present, otherwise proj(mean of the word vectors).
inline DiffTensor init_node_features(SyntaxGraph& graph, const SentenceRecord& sentence,
                                     const EmbeddingTable& table, const DiffTensor& proj) {
  if (proj.ndim() != 2 || proj.dim(0) != table.dim)
    throw ValidationError("init_node_features: projection expects input dim " +
                          std::to_string(table.dim) + ", got " + shape_str(proj.shape()));
  const int w = graph.n_words;
  const int d_emb = table.dim;
  std::vector<double> raw(static_cast<size_t>(graph.n_nodes()) * d_emb, 0.0);
  for (int i = 0; i < w; ++i) {
    const auto& vec = table.lookup(sentence.words[i].form);
    std::copy(vec.begin(), vec.end(), raw.begin() + static_cast<size_t>(i) * d_emb);
  }
  if (graph.has_global) {
    double* global_row = raw.data() + static_cast<size_t>(w) * d_emb;
    if (sentence.cls_embedding) {
      if (static_cast<int>(sentence.cls_embedding->size()) != d_emb)
        throw ValidationError("init_node_features: cls_embedding length " +
                              std::to_string(sentence.cls_embedding->size()) + " vs table dim " +
                              std::to_string(d_emb));
      std::copy(sentence.cls_embedding->begin(), sentence.cls_embedding->end(), global_row);
    } else {
      for (int i = 0; i < w; ++i) {
        const double* row = raw.data() + static_cast<size_t>(i) * d_emb;
        for (int j = 0; j < d_emb; ++j) global_row[j] += row[j] / w;
      }
    }
  }
  DiffTensor raw_features = DiffTensor::constant({graph.n_nodes(), d_emb}, std::move(raw));
  graph.node_features = matmul(raw_features, proj);
  return graph.node_features;
}

}  // namespace prosograph
