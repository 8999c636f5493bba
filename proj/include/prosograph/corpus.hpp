#pragma once

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "prosograph/errors.hpp"

namespace prosograph {

// One parsed word: dependency head (0 = syntactic root, else 1-based index of
// the head word), relation label, and its phoneme ids.
struct WordRecord {
  std::string form;
  int head = 0;
  std::string deprel;
  std::vector<int> phonemes;
};

struct SentenceRecord {
  std::vector<WordRecord> words;
  std::vector<int> durations;            // per phoneme, frames
  std::vector<double> f0;                // per frame, Hz
  std::vector<std::vector<double>> mel;  // per frame, D_mel channels
  int speaker_id = 0;
  std::optional<std::vector<double>> cls_embedding;

  int n_words() const { return static_cast<int>(words.size()); }
  int total_phonemes() const {
    int n = 0;
    for (const auto& w : words) n += static_cast<int>(w.phonemes.size());
    return n;
  }
  int total_frames() const {
    int n = 0;
    for (int d : durations) n += d;
    return n;
  }
};

struct Document {
  std::string doc_id;
  std::vector<SentenceRecord> sentences;
};

// (previous, current, next) view over physically adjacent sentences of one
// document; neighbors are null at document boundaries.
struct DocumentWindow {
  const SentenceRecord* prev = nullptr;
  const SentenceRecord* cur = nullptr;
  const SentenceRecord* next = nullptr;
  std::string doc_id;
  int position = 0;
};

struct Corpus {
  std::vector<Document> docs;

  int total_sentences() const {
    int n = 0;
    for (const auto& d : docs) n += static_cast<int>(d.sentences.size());
    return n;
  }

  // One window per sentence. Pointers reference this corpus; keep it alive.
  std::vector<DocumentWindow> windows() const {
    std::vector<DocumentWindow> out;
    out.reserve(total_sentences());
    for (const auto& d : docs) {
      const int n = static_cast<int>(d.sentences.size());
      for (int i = 0; i < n; ++i) {
        DocumentWindow w;
        w.prev = i > 0 ? &d.sentences[i - 1] : nullptr;
        w.cur = &d.sentences[i];
        w.next = i + 1 < n ? &d.sentences[i + 1] : nullptr;
        w.doc_id = d.doc_id;
        w.position = i;
        out.push_back(std::move(w));
      }
    }
    return out;
  }
};

namespace detail {
inline std::string sentence_ref(const std::string& doc_id, int index) {
  return "doc '" + doc_id + "' sentence " + std::to_string(index);
}
}  // namespace detail

inline int corpus_n_speakers(const Corpus& corpus) {
  int n = 0;
  for (const auto& d : corpus.docs)
    for (const auto& s : d.sentences) n = std::max(n, s.speaker_id + 1);
  return n;
}

inline int corpus_d_mel(const Corpus& corpus) {
  for (const auto& d : corpus.docs)
    for (const auto& s : d.sentences)
      if (!s.mel.empty()) return static_cast<int>(s.mel.front().size());
  throw ValidationError("corpus has no mel frames");
}

// highest phoneme id + 1
inline int corpus_n_phonemes(const Corpus& corpus) {
  int n = 0;
  for (const auto& d : corpus.docs)
    for (const auto& s : d.sentences)
      for (const auto& w : s.words)
        for (int p : w.phonemes) n = std::max(n, p + 1);
  return n;
}

// Enforces the per-sentence invariants: head links form a tree with a single
// root, every word has phonemes, and the duration/frame bookkeeping agrees.
inline void validate_sentence(const SentenceRecord& s, const std::string& doc_id, int index) {
  const std::string where = detail::sentence_ref(doc_id, index);
  const int w = s.n_words();
  if (w == 0) throw ValidationError(where + ": empty sentence");

  int roots = 0;
  for (int i = 0; i < w; ++i) {
    const auto& word = s.words[i];
    if (word.head == i + 1)
      throw ValidationError(where + ": word " + std::to_string(i + 1) + " is its own head");
    if (word.head < 0 || word.head > w)
      throw ValidationError(where + ": word " + std::to_string(i + 1) + " head " +
                            std::to_string(word.head) + " out of range");
    if (word.head == 0) ++roots;
    if (word.phonemes.empty())
      throw ValidationError(where + ": word " + std::to_string(i + 1) + " has no phonemes");
    for (int p : word.phonemes)
      if (p < 0) throw ValidationError(where + ": negative phoneme id");
  }
  if (roots == 0) throw ValidationError(where + ": no root word (head=0 missing)");
  if (roots > 1) throw ValidationError(where + ": multiple roots");

  // every word must reach the root without revisiting a node
  for (int i = 0; i < w; ++i) {
    int cur = i + 1, hops = 0;
    while (cur != 0) {
      cur = s.words[cur - 1].head;
      if (++hops > w) throw ValidationError(where + ": head links form a cycle");
    }
  }

  const int phonemes = s.total_phonemes();
  if (static_cast<int>(s.durations.size()) != phonemes)
    throw ValidationError(where + ": " + std::to_string(s.durations.size()) + " durations for " +
                          std::to_string(phonemes) + " phonemes");
  for (int d : s.durations)
    if (d <= 0) throw ValidationError(where + ": nonpositive duration");
  const int frames = s.total_frames();
  if (static_cast<int>(s.f0.size()) != frames)
    throw ValidationError(where + ": " + std::to_string(s.f0.size()) + " f0 frames, expected " +
                          std::to_string(frames));
  if (static_cast<int>(s.mel.size()) != frames)
    throw ValidationError(where + ": " + std::to_string(s.mel.size()) + " mel frames, expected " +
                          std::to_string(frames));
  for (const auto& frame : s.mel)
    if (frame.size() != s.mel.front().size())
      throw ValidationError(where + ": ragged mel frames");
}

inline nlohmann::json sentence_to_json(const SentenceRecord& s) {
  nlohmann::json words = nlohmann::json::array();
  for (const auto& w : s.words)
    words.push_back({{"form", w.form}, {"head", w.head}, {"deprel", w.deprel}, {"phonemes", w.phonemes}});
  nlohmann::json j{{"words", std::move(words)},
                   {"durations", s.durations},
                   {"f0", s.f0},
                   {"mel", s.mel},
                   {"speaker_id", s.speaker_id}};
  if (s.cls_embedding) j["cls_embedding"] = *s.cls_embedding;
  return j;
}

inline SentenceRecord sentence_from_json(const nlohmann::json& j) {
  SentenceRecord s;
  for (const auto& wj : j.at("words")) {
    WordRecord w;
    w.form = wj.at("form").get<std::string>();
    w.head = wj.at("head").get<int>();
    w.deprel = wj.at("deprel").get<std::string>();
    w.phonemes = wj.at("phonemes").get<std::vector<int>>();
    s.words.push_back(std::move(w));
  }
  s.durations = j.at("durations").get<std::vector<int>>();
  s.f0 = j.at("f0").get<std::vector<double>>();
  s.mel = j.at("mel").get<std::vector<std::vector<double>>>();
  s.speaker_id = j.at("speaker_id").get<int>();
  if (j.contains("cls_embedding")) s.cls_embedding = j.at("cls_embedding").get<std::vector<double>>();
  return s;
}

inline nlohmann::json document_to_json(const Document& d) {
  nlohmann::json sentences = nlohmann::json::array();
  for (const auto& s : d.sentences) sentences.push_back(sentence_to_json(s));
  return nlohmann::json{{"doc_id", d.doc_id}, {"sentences", std::move(sentences)}};
}

// JSON-lines, one document per line. Every sentence is validated on load.
inline Corpus load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open corpus file '" + path + "'");
  Corpus corpus;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("corpus line " + std::to_string(line_no) + ": " + e.what());
    }
    Document doc;
    try {
      doc.doc_id = j.at("doc_id").get<std::string>();
      for (const auto& sj : j.at("sentences")) doc.sentences.push_back(sentence_from_json(sj));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("corpus line " + std::to_string(line_no) + ": " + e.what());
    }
    for (size_t i = 0; i < doc.sentences.size(); ++i)
      validate_sentence(doc.sentences[i], doc.doc_id, static_cast<int>(i));
    corpus.docs.push_back(std::move(doc));
  }
  return corpus;
}

inline void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write corpus file '" + path + "'");
  for (const auto& d : corpus.docs) out << document_to_json(d).dump() << '\n';
}

// ---------------------------------------------------------------------------
// Word-embedding table standing in for external contextual embeddings.
// ---------------------------------------------------------------------------

struct EmbeddingTable {
  int dim = 0;
  std::map<std::string, std::vector<double>> entries;
  std::vector<double> fallback;

  static constexpr const char* kUnkToken = "<UNK>";

  const std::vector<double>& lookup(const std::string& token) const {
    auto it = entries.find(token);
    return it == entries.end() ? fallback : it->second;
  }

  static EmbeddingTable load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open embedding table '" + path + "'");
    EmbeddingTable table;
    std::string header_tag;
    if (!(in >> header_tag >> table.dim) || header_tag != "DIM" || table.dim <= 0)
      throw ValidationError("embedding table '" + path + "': header must be 'DIM <d>'");
    std::string token;
    while (in >> token) {
      std::vector<double> vec;
      vec.reserve(table.dim);
      double v;
      while (static_cast<int>(vec.size()) < table.dim && in >> v) vec.push_back(v);
      if (static_cast<int>(vec.size()) != table.dim)
        throw ValidationError("embedding table row for token '" + token + "' has " +
                              std::to_string(vec.size()) + " values, expected " +
                              std::to_string(table.dim));
      // a trailing non-numeric field would surface as the next token; rows are
      // whitespace-separated so over-long rows show up as a malformed next token
      if (!table.entries.emplace(token, std::move(vec)).second)
        throw ValidationError("embedding table: duplicate token '" + token + "'");
    }
    auto unk = table.entries.find(kUnkToken);
    if (unk == table.entries.end())
      throw ValidationError("embedding table '" + path + "' is missing the mandatory " +
                            std::string(kUnkToken) + " fallback row");
    table.fallback = unk->second;
    return table;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write embedding table '" + path + "'");
    out << "DIM " << dim << '\n';
    char buf[32];
    for (const auto& [token, vec] : entries) {
      out << token;
      for (double v : vec) {
        auto res = std::to_chars(buf, buf + sizeof(buf), v);
        out << ' ' << std::string_view(buf, res.ptr - buf);
      }
      out << '\n';
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json rows = nlohmann::json::object();
    for (const auto& [token, vec] : entries) rows[token] = vec;
    return nlohmann::json{{"dim", dim}, {"entries", std::move(rows)}};
  }

  static EmbeddingTable from_json(const nlohmann::json& j) {
    EmbeddingTable table;
    table.dim = j.at("dim").get<int>();
    for (const auto& [token, vec] : j.at("entries").items())
      table.entries[token] = vec.get<std::vector<double>>();
    auto unk = table.entries.find(kUnkToken);
    if (unk == table.entries.end()) throw ValidationError("embedded table missing fallback row");
    table.fallback = unk->second;
    return table;
  }
};

}  // namespace prosograph
