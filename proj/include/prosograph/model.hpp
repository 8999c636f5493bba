#pragma once

#include <optional>
#include <string>
#include <vector>

#include "prosograph/backbone.hpp"
#include "prosograph/checkpoint.hpp"
#include "prosograph/conditioning.hpp"
#include "prosograph/config.hpp"
#include "prosograph/context_attention.hpp"
#include "prosograph/corpus.hpp"
#include "prosograph/graph_encoder.hpp"
#include "prosograph/mel_encoder.hpp"
#include "prosograph/syntax_graph.hpp"

namespace prosograph {

// The assembled system: hierarchical graph prosody encoder conditioning a
// reduced acoustic backbone. All learnable state lives in one ParamStore.
struct TtsModel {
  TrainConfig cfg;
  RelationVocab vocab;
  EmbeddingTable table;
  int d_mel = 0;
  int n_phonemes = 0;

  ParamStore store{0};
  DiffTensor input_proj;  // [d_emb x d_node]
  GraphEncoderParams graph_enc;
  ContextAttentionParams ctx_att;
  ConditioningParams cond;
  BackboneParams backbone;
  DiffTensor sup_proj;    // [2*d_node x d_p]

  static TtsModel create(const TrainConfig& cfg, const RelationVocab& vocab,
                         const EmbeddingTable& table, int d_mel, int n_phonemes,
                         double f0_mean = 0.0, double f0_std = 1.0) {
    cfg.validate();
    TtsModel m;
    m.cfg = cfg;
    m.vocab = vocab;
    m.table = table;
    m.d_mel = d_mel;
    m.n_phonemes = n_phonemes;
    m.store = ParamStore(cfg.seed);
    Rng rng = Rng(cfg.seed).split("model-init");
    m.input_proj = m.store.create_glorot("input_proj", table.dim, cfg.d_node, rng);
    m.graph_enc = GraphEncoderParams::create(m.store, "genc", cfg.d_node, cfg.d_edge, cfg.heads,
                                             cfg.layers, cfg.dropout, vocab.n_relations(), rng);
    m.ctx_att = ContextAttentionParams::create(m.store, "ctx", 2 * cfg.d_node, cfg.d_ctx, rng);
    m.cond = ConditioningParams::create(m.store, "cond", 2 * cfg.d_node, cfg.d_ctx, cfg.d_model, rng);
    m.backbone = BackboneParams::create(m.store, "bb", n_phonemes, cfg.d_model, d_mel, rng);
    m.backbone.f0_mean = f0_mean;
    m.backbone.f0_std = f0_std;
    m.sup_proj = m.store.create_glorot("sup_proj", 2 * cfg.d_node, cfg.d_p, rng);
    return m;
  }

  nlohmann::json meta() const {
    return {{"kind", "tts-model"},
            {"config", cfg.to_json()},
            {"relations", vocab.to_json()},
            {"d_mel", d_mel},
            {"n_phonemes", n_phonemes},
            {"f0_mean", backbone.f0_mean},
            {"f0_std", backbone.f0_std},
            {"embedding_table", table.to_json()}};
  }
};

// Pitch statistics of the training-split documents (mean, std).
inline std::pair<double, double> corpus_f0_stats(const Corpus& corpus, double holdout_fraction) {
  const size_t train_docs = detail::train_doc_count(corpus.docs.size(), holdout_fraction);
  double sum = 0.0, sum2 = 0.0;
  size_t n = 0;
  for (size_t di = 0; di < train_docs; ++di)
    for (const auto& s : corpus.docs[di].sentences)
      for (double v : s.f0) {
        sum += v;
        sum2 += v * v;
        ++n;
      }
  if (n == 0) throw ValidationError("corpus_f0_stats: no f0 frames in the training split");
  const double mean = sum / static_cast<double>(n);
  const double var = std::max(1e-12, sum2 / static_cast<double>(n) - mean * mean);
  return {mean, std::sqrt(var)};
}

inline void save_model(const TtsModel& model, const std::string& path) {
  save_checkpoint(model.store, model.meta(), path);
}

// Rebuilds the model from the embedded meta and restores every tensor;
// evaluation never needs the original config or embedding files.
inline TtsModel load_model(const std::string& path) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.meta.value("kind", "") != "tts-model")
    throw ValidationError("checkpoint '" + path + "' is not a TTS model checkpoint");
  TtsModel m = TtsModel::create(TrainConfig::from_json(ckpt.meta.at("config")),
                                RelationVocab::from_json(ckpt.meta.at("relations")),
                                EmbeddingTable::from_json(ckpt.meta.at("embedding_table")),
                                ckpt.meta.at("d_mel").get<int>(),
                                ckpt.meta.at("n_phonemes").get<int>(),
                                ckpt.meta.value("f0_mean", 0.0), ckpt.meta.value("f0_std", 1.0));
  load_into_store(ckpt, m.store);
  return m;
}

// ---------------------------------------------------------------------------
// prepared corpus: static per-sentence state reused across training steps
// ---------------------------------------------------------------------------

struct PreparedSentence {
  const SentenceRecord* rec = nullptr;
  SyntaxGraph graph;                    // structure; features computed per forward
  std::vector<double> raw_features;     // [(n_nodes) x d_emb] row-major
  std::vector<int> phoneme_ids;         // flattened
  std::vector<int> phonemes_per_word;
  std::vector<double> frozen_embedding; // mel-encoder output; empty without supervision
  std::string label;
};

struct PreparedWindow {
  int prev = -1, cur = -1, next = -1;  // indices into PreparedCorpus::sentences
  int doc_index = 0;
  std::string doc_id;
  int position = 0;
};

struct PreparedCorpus {
  std::vector<PreparedSentence> sentences;
  std::vector<PreparedWindow> windows;
  std::vector<int> train_windows;  // window indices, leading document split
  std::vector<int> eval_windows;   // held-out documents
};

inline PreparedCorpus prepare_corpus(const Corpus& corpus, const TtsModel& model,
                                     const MelEncoderBundle* melenc) {
  PreparedCorpus out;
  const bool with_global = !model.cfg.ablation.no_global_node;
  const int d_emb = model.table.dim;
  const size_t train_docs = detail::train_doc_count(corpus.docs.size(), model.cfg.holdout_fraction);
  std::vector<int> train_sentence_ids;

  for (size_t di = 0; di < corpus.docs.size(); ++di) {
    const auto& doc = corpus.docs[di];
    const int first_index = static_cast<int>(out.sentences.size());
    for (size_t si = 0; si < doc.sentences.size(); ++si) {
      const auto& rec = doc.sentences[si];
      PreparedSentence ps;
      ps.rec = &rec;
      ps.label = "doc '" + doc.doc_id + "' sentence " + std::to_string(si);
      ps.graph = build_syntax_graph(rec, model.vocab, with_global);
      ps.raw_features.assign(static_cast<size_t>(ps.graph.n_nodes()) * d_emb, 0.0);
      for (int w = 0; w < rec.n_words(); ++w) {
        const auto& vec = model.table.lookup(rec.words[w].form);
        std::copy(vec.begin(), vec.end(), ps.raw_features.begin() + static_cast<size_t>(w) * d_emb);
      }
      if (ps.graph.has_global) {
        double* global_row = ps.raw_features.data() + static_cast<size_t>(rec.n_words()) * d_emb;
        if (rec.cls_embedding) {
          if (static_cast<int>(rec.cls_embedding->size()) != d_emb)
            throw ValidationError(ps.label + ": cls_embedding length " +
                                  std::to_string(rec.cls_embedding->size()) +
                                  " vs embedding dim " + std::to_string(d_emb));
          std::copy(rec.cls_embedding->begin(), rec.cls_embedding->end(), global_row);
        } else {
          for (int w = 0; w < rec.n_words(); ++w)
            for (int j = 0; j < d_emb; ++j)
              global_row[j] += ps.raw_features[static_cast<size_t>(w) * d_emb + j] / rec.n_words();
        }
      }
      for (const auto& w : rec.words) {
        ps.phonemes_per_word.push_back(static_cast<int>(w.phonemes.size()));
        for (int ph : w.phonemes) ps.phoneme_ids.push_back(ph);
      }
      if (melenc) {
        DiffTensor emb = melenc->encode(rec.mel);
        ps.frozen_embedding = emb.values();
      }
      out.sentences.push_back(std::move(ps));
      if (di < train_docs) train_sentence_ids.push_back(static_cast<int>(out.sentences.size()) - 1);
    }
    const int n = static_cast<int>(doc.sentences.size());
    for (int si = 0; si < n; ++si) {
      PreparedWindow w;
      w.cur = first_index + si;
      w.prev = si > 0 ? first_index + si - 1 : -1;
      w.next = si + 1 < n ? first_index + si + 1 : -1;
      w.doc_index = static_cast<int>(di);
      w.doc_id = doc.doc_id;
      w.position = si;
      const int wi = static_cast<int>(out.windows.size());
      out.windows.push_back(std::move(w));
      (di < train_docs ? out.train_windows : out.eval_windows).push_back(wi);
    }
  }

  // Standardize the frozen supervision targets per dimension with train-split
  // statistics so the supervision MSE sits on the same scale as the backbone
  // losses. An affine map preserves the embedding content.
  if (melenc && !train_sentence_ids.empty()) {
    const int d_p = static_cast<int>(out.sentences[train_sentence_ids[0]].frozen_embedding.size());
    std::vector<double> mean(d_p, 0.0), var(d_p, 0.0);
    for (int si : train_sentence_ids)
      for (int j = 0; j < d_p; ++j) mean[j] += out.sentences[si].frozen_embedding[j];
    for (double& m : mean) m /= static_cast<double>(train_sentence_ids.size());
    for (int si : train_sentence_ids)
      for (int j = 0; j < d_p; ++j) {
        const double d = out.sentences[si].frozen_embedding[j] - mean[j];
        var[j] += d * d;
      }
    for (double& v : var) v = std::max(1e-12, v / static_cast<double>(train_sentence_ids.size()));
    for (auto& ps : out.sentences)
      for (int j = 0; j < d_p; ++j)
        ps.frozen_embedding[j] = (ps.frozen_embedding[j] - mean[j]) / std::sqrt(var[j]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// window forward
// ---------------------------------------------------------------------------

struct WindowLosses {
  DiffTensor mel, f0, dur, supervision, total;
};

struct WindowForward {
  ProsodyHierarchy cur;
  std::optional<ProsodyHierarchy> prev, next;
  DiffTensor conditioned;  // [P x d_model]
  TtsPredictions preds;
};

namespace detail {

inline ProsodyHierarchy encode_sentence(const TtsModel& model, const PreparedSentence& ps,
                                        ForwardCtx& ctx) {
  const int d_emb = model.table.dim;
  DiffTensor raw = DiffTensor::constant({ps.graph.n_nodes(), d_emb}, ps.raw_features);
  DiffTensor x0 = matmul(raw, model.input_proj);
  DiffTensor encoded = encode_graph(model.graph_enc, ps.graph, x0, ctx);
  return fuse_and_extract(ps.graph, x0, encoded);
}

}  // namespace detail

// One window through the hierarchical encoder and the backbone. Neighbor
// sentences are encoded with the same shared weights; with both the context
// and supervision paths ablated they carry no gradient and are skipped.
// Teacher durations come from the corpus; eval paths rerun forward_tts with
// predicted durations instead.
inline WindowForward window_forward(const TtsModel& model, const PreparedCorpus& data,
                                    const PreparedWindow& window, bool training, Rng rng_base,
                                    AttentionTrace* trace = nullptr) {
  const auto& cfg = model.cfg;
  const PreparedSentence& cur = data.sentences[window.cur];
  const bool need_neighbors = !cfg.ablation.no_context_attention || !cfg.ablation.no_supervision;

  WindowForward out;
  // independent dropout streams per slot keep ablations from shifting draws
  Rng rng_cur = rng_base.split("cur");
  Rng rng_prev = rng_base.split("prev");
  Rng rng_next = rng_base.split("next");

  ForwardCtx ctx_cur{training, &rng_cur, trace};
  out.cur = detail::encode_sentence(model, cur, ctx_cur);
  if (need_neighbors && window.prev >= 0) {
    ForwardCtx c{training, &rng_prev, trace};
    out.prev = detail::encode_sentence(model, data.sentences[window.prev], c);
  }
  if (need_neighbors && window.next >= 0) {
    ForwardCtx c{training, &rng_next, trace};
    out.next = detail::encode_sentence(model, data.sentences[window.next], c);
  }

  if (cfg.ablation.no_context_attention) {
    out.cur.context_rep = DiffTensor::zeros({1, cfg.d_ctx});
  } else {
    ForwardCtx c{training, &rng_cur, trace};
    auto caf = build_caf(model.ctx_att, out.prev ? &out.prev->sentence_rep : nullptr,
                         out.cur.sentence_rep, out.next ? &out.next->sentence_rep : nullptr);
    out.cur.context_rep = cross_sentence_attention(model.ctx_att, caf, out.cur.sentence_rep, c);
  }

  auto streams = upsample_hierarchy(model.cond, out.cur, cur.phonemes_per_word, cur.label);
  DiffTensor encoder_out = encode_phonemes(model.backbone, cur.phoneme_ids);
  out.conditioned = inject(encoder_out, streams);
  out.preds = forward_tts(model.backbone, out.conditioned, cur.rec->durations);
  return out;
}

inline WindowLosses window_losses(const TtsModel& model, const PreparedCorpus& data,
                                  const PreparedWindow& window, const WindowForward& fwd) {
  const PreparedSentence& cur = data.sentences[window.cur];
  BackboneLosses bl = backbone_loss(model.backbone, fwd.preds, *cur.rec);
  WindowLosses out;
  out.mel = bl.mel;
  out.f0 = bl.f0;
  out.dur = bl.dur;
  out.total = add(add(out.mel, out.f0), out.dur);

  if (!model.cfg.ablation.no_supervision) {
    std::vector<const DiffTensor*> reps;
    std::vector<const std::vector<double>*> embs;
    auto push = [&](const ProsodyHierarchy& h, int index) {
      const auto& frozen = data.sentences[index].frozen_embedding;
      if (frozen.empty())
        throw ValidationError("supervision requires a pretrained mel encoder (no embedding for " +
                              data.sentences[index].label + ")");
      reps.push_back(&h.sentence_rep);
      embs.push_back(&frozen);
    };
    if (fwd.prev) push(*fwd.prev, window.prev);
    push(fwd.cur, window.cur);
    if (fwd.next) push(*fwd.next, window.next);
    out.supervision = supervision_loss(reps, embs, model.sup_proj);
    out.total = add(out.total, scalar_mul(out.supervision, model.cfg.beta));
  } else {
    out.supervision = DiffTensor::scalar(0.0);
  }
  return out;
}

}  // namespace prosograph
