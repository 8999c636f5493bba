#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "prosograph/checkpoint.hpp"
#include "prosograph/corpus.hpp"

using namespace prosograph;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / ("prosograph_test_" + name);
}

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  out << content;
}

SentenceRecord make_sentence(int n_words, int speaker = 0) {
  SentenceRecord s;
  s.speaker_id = speaker;
  for (int i = 0; i < n_words; ++i) {
    WordRecord w;
    w.form = "w" + std::to_string(i);
    w.head = i == 0 ? 0 : 1;  // flat tree rooted at the first word
    w.deprel = i == 0 ? "HED" : "SBV";
    w.phonemes = {i % 5, (i + 1) % 5};
    s.words.push_back(std::move(w));
  }
  const int phonemes = s.total_phonemes();
  for (int p = 0; p < phonemes; ++p) s.durations.push_back(2);
  for (int f = 0; f < s.total_frames(); ++f) {
    s.f0.push_back(180.0 + f);
    s.mel.push_back({0.1 * f, 0.2 * f, 0.25});
  }
  return s;
}

Corpus make_corpus() {
  Corpus c;
  Document d1;
  d1.doc_id = "doc0";
  d1.sentences = {make_sentence(3, 0), make_sentence(2, 0), make_sentence(4, 0)};
  Document d2;
  d2.doc_id = "doc1";
  d2.sentences = {make_sentence(2, 1)};
  c.docs = {d1, d2};
  return c;
}

}  // namespace

TEST_CASE("windows cover each sentence with boundary neighbors absent") {
  Corpus c = make_corpus();
  auto windows = c.windows();
  REQUIRE(windows.size() == 4);
  CHECK(static_cast<int>(windows.size()) == c.total_sentences());

  CHECK(windows[0].prev == nullptr);
  CHECK(windows[0].next != nullptr);
  CHECK(windows[1].prev != nullptr);
  CHECK(windows[1].next != nullptr);
  CHECK(windows[2].prev != nullptr);
  CHECK(windows[2].next == nullptr);

  // single-sentence document: both neighbors absent
  CHECK(windows[3].prev == nullptr);
  CHECK(windows[3].next == nullptr);
  CHECK(windows[3].doc_id == "doc1");
}

TEST_CASE("corpus round trip is the identity") {
  Corpus c = make_corpus();
  auto p1 = temp_file("roundtrip1.jsonl");
  auto p2 = temp_file("roundtrip2.jsonl");
  save_corpus(c, p1.string());
  Corpus loaded = load_corpus(p1.string());
  save_corpus(loaded, p2.string());

  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);

  REQUIRE(loaded.docs.size() == c.docs.size());
  CHECK(loaded.docs[0].sentences[0].words[1].deprel == "SBV");
  CHECK(loaded.docs[0].sentences[0].f0 == c.docs[0].sentences[0].f0);
  CHECK(loaded.docs[0].sentences[0].mel == c.docs[0].sentences[0].mel);
}

TEST_CASE("corpus validation rejects multiple roots") {
  Corpus c = make_corpus();
  c.docs[0].sentences[0].words[1].head = 0;  // second root
  auto p = temp_file("multiroot.jsonl");
  save_corpus(c, p.string());
  try {
    load_corpus(p.string());
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    std::string msg = e.what();
    CHECK(msg.find("multiple roots") != std::string::npos);
    CHECK(msg.find("doc0") != std::string::npos);
  }
}

TEST_CASE("corpus validation rejects duration/frame mismatch and cycles") {
  {
    Corpus c = make_corpus();
    c.docs[0].sentences[1].f0.push_back(200.0);
    auto p = temp_file("badframes.jsonl");
    save_corpus(c, p.string());
    try {
      load_corpus(p.string());
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("sentence 1") != std::string::npos);
    }
  }
  {
    Corpus c = make_corpus();
    auto& words = c.docs[0].sentences[2].words;
    words[1].head = 3;
    words[2].head = 2;  // 2 <-> 3 cycle, disconnected from the root
    auto p = temp_file("cycle.jsonl");
    save_corpus(c, p.string());
    CHECK_THROWS_AS(load_corpus(p.string()), ValidationError);
  }
}

TEST_CASE("malformed json reports the line number") {
  auto p = temp_file("badjson.jsonl");
  write_file(p, document_to_json(make_corpus().docs[1]).dump() + "\n{not json\n");
  try {
    load_corpus(p.string());
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("embedding table load, fallback, and row errors") {
  auto p = temp_file("table.txt");
  write_file(p,
             "DIM 3\n"
             "<UNK> 0.5 -0.5 0.25\n"
             "alpha 1 2 3\n"
             "beta 4 5 6\n");
  EmbeddingTable t = EmbeddingTable::load(p.string());
  CHECK(t.dim == 3);
  CHECK(t.lookup("alpha") == std::vector<double>{1, 2, 3});
  CHECK(t.lookup("nope") == t.fallback);
  CHECK(t.fallback == std::vector<double>{0.5, -0.5, 0.25});

  auto bad = temp_file("table_bad.txt");
  write_file(bad, "DIM 3\n<UNK> 1 2 3\nshort 1 2\n");
  try {
    EmbeddingTable::load(bad.string());
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("short") != std::string::npos);
  }

  auto nounk = temp_file("table_nounk.txt");
  write_file(nounk, "DIM 2\nalpha 1 2\n");
  CHECK_THROWS_AS(EmbeddingTable::load(nounk.string()), ValidationError);
}

TEST_CASE("embedding table text round trip is exact") {
  EmbeddingTable t;
  t.dim = 2;
  t.entries["<UNK>"] = {0.1234567890123456789, -3.14159265358979};
  t.fallback = t.entries["<UNK>"];
  auto p = temp_file("table_rt.txt");
  t.save(p.string());
  EmbeddingTable u = EmbeddingTable::load(p.string());
  CHECK(u.entries == t.entries);
}

TEST_CASE("checkpoint round trip is bit exact") {
  ParamStore store(7);
  Rng rng(7);
  store.create_glorot("enc.w", 4, 3, rng);
  store.create("bias", {3}, {0.25, -1.5, 3.0});
  nlohmann::json meta{{"kind", "test"}, {"n", 3}};
  auto p = temp_file("ckpt.bin");
  save_checkpoint(store, meta, p.string());

  Checkpoint ckpt = load_checkpoint(p.string());
  CHECK(ckpt.meta == meta);
  REQUIRE(ckpt.tensors.count("enc.w") == 1);
  REQUIRE(ckpt.tensors.count("bias") == 1);
  CHECK(ckpt.tensors.at("enc.w").shape() == Shape{4, 3});
  CHECK(ckpt.tensors.at("enc.w").values() == store.get("enc.w").values());
  CHECK(ckpt.tensors.at("bias").values() == store.get("bias").values());
}

TEST_CASE("checkpoint detects corruption") {
  ParamStore store(1);
  store.create("w", {2}, {1.0, 2.0});
  auto p = temp_file("ckpt_corrupt.bin");
  save_checkpoint(store, nlohmann::json::object(), p.string());

  // flip one byte in the tensor payload
  std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
  f.seekg(0, std::ios::end);
  auto size = static_cast<long>(f.tellg());
  f.seekp(size - 12);
  char b;
  f.seekg(size - 12);
  f.read(&b, 1);
  b ^= 0x40;
  f.seekp(size - 12);
  f.write(&b, 1);
  f.close();

  try {
    load_checkpoint(p.string());
    FAIL("expected checksum failure");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("checksum") != std::string::npos);
  }
}

TEST_CASE("loading a checkpoint into a mismatched store names offenders") {
  ParamStore a(1);
  a.create("w", {2, 3}, std::vector<double>(6, 1.0));
  auto p = temp_file("ckpt_shape.bin");
  save_checkpoint(a, nlohmann::json::object(), p.string());

  ParamStore b(1);
  b.create("w", {2, 4}, std::vector<double>(8, 0.0));
  Checkpoint ckpt = load_checkpoint(p.string());
  try {
    load_into_store(ckpt, b);
    FAIL("expected shape mismatch");
  } catch (const ValidationError& e) {
    std::string msg = e.what();
    CHECK(msg.find("w") != std::string::npos);
    CHECK(msg.find("[2x4]") != std::string::npos);
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
}
