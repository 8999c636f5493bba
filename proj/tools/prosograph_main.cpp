// Command-line front end: corpus generation, graph inspection, mel-encoder
// pretraining, training, evaluation, and the ablation suite.

#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "prosograph/ablation.hpp"
#include "prosograph/metrics.hpp"
#include "prosograph/model.hpp"
#include "prosograph/synth.hpp"
#include "prosograph/trainer.hpp"

using namespace prosograph;

namespace {

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("'" + path + "': " + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  out << content;
}

TrainConfig load_config(const std::string& path) {
  if (path.empty()) return TrainConfig{};
  return TrainConfig::from_json(read_json_file(path));
}

std::string default_table_path(const std::string& corpus_path) { return corpus_path + ".emb"; }

EmbeddingTable load_table_for(const TrainConfig& cfg, const std::string& corpus_path,
                              const std::string& override_path) {
  std::string path = !override_path.empty() ? override_path
                     : !cfg.embedding_path.empty() ? cfg.embedding_path
                                                   : default_table_path(corpus_path);
  return EmbeddingTable::load(path);
}

int run_gen_corpus(const std::string& spec_path, const std::string& out_path,
                   std::string emb_path) {
  GenSpec spec = spec_path.empty() ? GenSpec{} : GenSpec::from_json(read_json_file(spec_path));
  SynthResult result = generate_corpus(spec);
  save_corpus(result.corpus, out_path);
  if (emb_path.empty()) emb_path = default_table_path(out_path);
  result.table.save(emb_path);
  std::cout << "wrote " << result.corpus.docs.size() << " documents ("
            << result.corpus.total_sentences() << " sentences) to " << out_path << "\n"
            << "wrote embedding table (" << result.table.entries.size() << " tokens, dim "
            << result.table.dim << ") to " << emb_path << "\n";
  return 0;
}

int run_build_graph(const std::string& corpus_path, const std::string& out_path) {
  Corpus corpus = load_corpus(corpus_path);
  RelationVocab vocab = RelationVocab::from_corpus(corpus);
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + out_path + "'");
  int count = 0;
  for (const auto& doc : corpus.docs) {
    for (size_t si = 0; si < doc.sentences.size(); ++si) {
      const auto& s = doc.sentences[si];
      SyntaxGraph g = build_syntax_graph(s, vocab);
      nlohmann::json nodes = nlohmann::json::array();
      for (const auto& w : s.words) nodes.push_back(w.form);
      nodes.push_back("<GLB>");
      nlohmann::json edges = nlohmann::json::array();
      for (const auto& e : g.edges)
        edges.push_back({e.src, e.dst, vocab.labels[e.relation],
                         e.dir == EdgeDir::kFwd ? "fwd" : "rev"});
      out << nlohmann::json{{"doc_id", doc.doc_id},
                            {"position", si},
                            {"nodes", std::move(nodes)},
                            {"edges", std::move(edges)}}
                 .dump()
          << '\n';
      ++count;
    }
  }
  std::cout << "wrote " << count << " graphs to " << out_path << "\n";
  return 0;
}

int run_pretrain_melenc(const std::string& corpus_path, const std::string& out_path,
                        const std::string& config_path) {
  TrainConfig cfg = load_config(config_path);
  Corpus corpus = load_corpus(corpus_path);
  std::cout << "pretraining mel encoder on " << corpus.total_sentences() << " sentences ("
            << cfg.melenc_steps << " steps, lambda " << cfg.melenc_lambda << ")\n";
  MelEncoderBundle bundle = pretrain_mel_encoder(corpus, cfg);
  save_mel_encoder(bundle, cfg, out_path);

  // quality summary on the held-out split
  const size_t train_docs = detail::train_doc_count(corpus.docs.size(), cfg.holdout_fraction);
  std::vector<const SentenceRecord*> held_out;
  for (size_t di = train_docs; di < corpus.docs.size(); ++di)
    for (const auto& s : corpus.docs[di].sentences) held_out.push_back(&s);
  if (!held_out.empty()) {
    RegressionR2 r2 = regression_r2(bundle, held_out);
    std::cout << "held-out prosody regression R^2: mean " << r2.mean << " (f0 mean "
              << r2.per_target[0] << ", f0 std " << r2.per_target[1] << ", log-dur "
              << r2.per_target[2] << ")\n";
  }
  std::cout << "wrote mel encoder to " << out_path << "\n";
  return 0;
}

int run_train(const std::string& config_path, const std::string& corpus_path,
              const std::string& melenc_path, const std::string& out_path,
              const std::string& emb_path, const std::string& resume_path) {
  TrainConfig cfg = load_config(config_path);
  Corpus corpus = load_corpus(corpus_path);
  EmbeddingTable table = load_table_for(cfg, corpus_path, emb_path);

  const auto [f0_mean, f0_std] = corpus_f0_stats(corpus, cfg.holdout_fraction);
  TtsModel model = TtsModel::create(cfg, RelationVocab::from_corpus(corpus), table,
                                    corpus_d_mel(corpus), corpus_n_phonemes(corpus), f0_mean,
                                    f0_std);
  if (!resume_path.empty()) load_into_store(load_checkpoint(resume_path), model.store);

  MelEncoderBundle melenc;
  const MelEncoderBundle* melenc_ptr = nullptr;
  if (!cfg.ablation.no_supervision) {
    std::string path = !melenc_path.empty() ? melenc_path : cfg.melenc_path;
    if (path.empty())
      throw ValidationError("training with supervision needs --melenc (or ablation.no_supervision)");
    melenc = load_mel_encoder(path);
    if (melenc.enc.d_p != cfg.d_p)
      throw ValidationError("mel encoder d_p " + std::to_string(melenc.enc.d_p) +
                            " does not match config d_p " + std::to_string(cfg.d_p));
    melenc_ptr = &melenc;
  }

  PreparedCorpus data = prepare_corpus(corpus, model, melenc_ptr);
  std::cout << "training on " << data.train_windows.size() << " windows ("
            << data.eval_windows.size() << " held out), " << cfg.steps << " steps\n";
  const int report_every = std::max(1, cfg.steps / 10);
  train_model(model, data, [&](int step, const StepLosses& l) {
    if (step % report_every == 0 || step + 1 == cfg.steps)
      std::cout << "step " << step << ": total " << l.total << " (mel " << l.mel << ", f0 " << l.f0
                << ", dur " << l.dur << ", sup " << l.supervision << ")\n";
  });
  save_model(model, out_path);
  std::cout << "wrote model to " << out_path << "\n";
  return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& corpus_path,
             const std::string& report_path) {
  TtsModel model = load_model(ckpt_path);
  Corpus corpus = load_corpus(corpus_path);
  PreparedCorpus data = prepare_corpus(corpus, model, nullptr);
  std::vector<int> all_windows(data.windows.size());
  std::iota(all_windows.begin(), all_windows.end(), 0);
  EvalReport report = evaluate_model(model, data, all_windows);
  write_text_file(report_path, report.to_json().dump(2) + "\n");
  std::cout << "evaluated " << report.sentences.size() << " sentences: f0_rmse " << report.f0_rmse
            << " Hz, duration_mse " << report.duration_mse << " frames^2, mcd_proxy "
            << report.mcd_proxy << "\n"
            << "wrote report to " << report_path << "\n";
  return 0;
}

int run_ablate(const std::string& config_path, int seeds, const std::string& out_path,
               const std::string& corpus_path, const std::string& emb_path, int threads) {
  TrainConfig cfg = load_config(config_path);
  std::string corpus_file = !corpus_path.empty() ? corpus_path : cfg.corpus_path;
  if (corpus_file.empty())
    throw ValidationError("ablate needs --corpus or corpus_path in the config");
  Corpus corpus = load_corpus(corpus_file);
  EmbeddingTable table = load_table_for(cfg, corpus_file, emb_path);
  nlohmann::json result = run_ablation_suite(cfg, corpus, table, seeds, threads,
                                             [](const std::string& m) { std::cout << m << "\n"; });
  write_text_file(out_path, result.dump(2) + "\n");
  std::cout << "wrote ablation table to " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hierarchical graph prosody encoder: synthetic-corpus training and evaluation"};
  app.require_subcommand(1);

  std::string spec_path, out_path, emb_path, corpus_path, config_path, melenc_path, ckpt_path,
      report_path, resume_path;
  int seeds = 3, threads = 2;

  auto* gen = app.add_subcommand("gen-corpus", "generate a seeded synthetic corpus");
  gen->add_option("--spec", spec_path, "generator spec JSON (defaults used when omitted)");
  gen->add_option("--out", out_path, "output corpus JSONL path")->required();
  gen->add_option("--emb-out", emb_path, "embedding table path (default <out>.emb)");

  auto* bg = app.add_subcommand("build-graph", "dump syntax graphs for inspection");
  bg->add_option("--corpus", corpus_path, "corpus JSONL")->required();
  bg->add_option("--out", out_path, "output graphs JSONL")->required();

  auto* pm = app.add_subcommand("pretrain-melenc", "pretrain the adversarial mel encoder");
  pm->add_option("--corpus", corpus_path, "corpus JSONL")->required();
  pm->add_option("--out", out_path, "output checkpoint")->required();
  pm->add_option("--config", config_path, "TrainConfig JSON");

  auto* tr = app.add_subcommand("train", "train the prosody-conditioned acoustic model");
  tr->add_option("--config", config_path, "TrainConfig JSON");
  tr->add_option("--corpus", corpus_path, "corpus JSONL")->required();
  tr->add_option("--melenc", melenc_path, "pretrained mel encoder checkpoint");
  tr->add_option("--out", out_path, "output model checkpoint")->required();
  tr->add_option("--emb", emb_path, "embedding table (default <corpus>.emb)");
  tr->add_option("--resume", resume_path, "checkpoint to resume from");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint with DTW-aligned metrics");
  ev->add_option("--ckpt", ckpt_path, "model checkpoint")->required();
  ev->add_option("--corpus", corpus_path, "corpus JSONL")->required();
  ev->add_option("--report", report_path, "output report JSON")->required();

  auto* ab = app.add_subcommand("ablate", "train and evaluate the cumulative ablation ladder");
  ab->add_option("--config", config_path, "TrainConfig JSON");
  ab->add_option("--seeds", seeds, "number of seeds per variant");
  ab->add_option("--out", out_path, "output table JSON")->required();
  ab->add_option("--corpus", corpus_path, "corpus JSONL (or corpus_path in config)");
  ab->add_option("--emb", emb_path, "embedding table (default <corpus>.emb)");
  ab->add_option("--threads", threads, "worker threads");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return run_gen_corpus(spec_path, out_path, emb_path);
    if (bg->parsed()) return run_build_graph(corpus_path, out_path);
    if (pm->parsed()) return run_pretrain_melenc(corpus_path, out_path, config_path);
    if (tr->parsed())
      return run_train(config_path, corpus_path, melenc_path, out_path, emb_path, resume_path);
    if (ev->parsed()) return run_eval(ckpt_path, corpus_path, report_path);
    if (ab->parsed())
      return run_ablate(config_path, seeds, out_path, corpus_path, emb_path, threads);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
