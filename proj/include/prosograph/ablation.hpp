#pragma once

#include <atomic>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "prosograph/metrics.hpp"
#include "prosograph/trainer.hpp"

namespace prosograph {

struct AblationVariant {
  std::string name;
  AblationSwitches switches;
};

// Cumulative removals, largest-reported-drop first: acoustic prosody
// supervision, then contextual attention, then the global node.
inline std::vector<AblationVariant> ablation_variants() {
  std::vector<AblationVariant> v(4);
  v[0].name = "full";
  v[1].name = "-supervision";
  v[1].switches.no_supervision = true;
  v[2].name = "-supervision-context";
  v[2].switches.no_supervision = true;
  v[2].switches.no_context_attention = true;
  v[3].name = "-supervision-context-global";
  v[3].switches.no_supervision = true;
  v[3].switches.no_context_attention = true;
  v[3].switches.no_global_node = true;
  return v;
}

struct AblationRun {
  std::string variant;
  uint64_t seed = 0;
  EvalReport report;
  std::vector<int> first_batch;
};

// Trains the full model plus each cumulative ablation under identical seeds
// and step budgets, evaluating every run on the held-out document split.
// Runs are independent; (variant, seed) pairs execute on a small thread pool.
inline nlohmann::json run_ablation_suite(const TrainConfig& base_cfg, const Corpus& corpus,
                                         const EmbeddingTable& table, int n_seeds,
                                         int n_threads = 2,
                                         const std::function<void(const std::string&)>& log = {}) {
  if (n_seeds < 1) throw ValidationError("run_ablation_suite: need at least one seed");
  const RelationVocab vocab = RelationVocab::from_corpus(corpus);
  const int d_mel = corpus_d_mel(corpus);
  const int n_phonemes = corpus_n_phonemes(corpus);
  const auto [f0_mean, f0_std] = corpus_f0_stats(corpus, base_cfg.holdout_fraction);
  const auto variants = ablation_variants();

  std::mutex log_mutex;
  auto say = [&](const std::string& msg) {
    if (!log) return;
    std::lock_guard<std::mutex> lock(log_mutex);
    log(msg);
  };

  // one frozen mel encoder per seed, shared read-only by that seed's variants
  std::vector<MelEncoderBundle> melencs;
  melencs.reserve(n_seeds);
  for (int s = 0; s < n_seeds; ++s) {
    TrainConfig cfg = base_cfg;
    cfg.seed = base_cfg.seed + static_cast<uint64_t>(s);
    say("pretraining mel encoder for seed " + std::to_string(cfg.seed));
    melencs.push_back(pretrain_mel_encoder(corpus, cfg));
  }

  struct Task {
    int variant_index;
    int seed_index;
  };
  std::vector<Task> tasks;
  for (int v = 0; v < static_cast<int>(variants.size()); ++v)
    for (int s = 0; s < n_seeds; ++s) tasks.push_back({v, s});
  std::vector<AblationRun> results(tasks.size());

  std::atomic<size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const size_t t = next.fetch_add(1);
      if (t >= tasks.size()) return;
      const auto& task = tasks[t];
      TrainConfig cfg = base_cfg;
      cfg.seed = base_cfg.seed + static_cast<uint64_t>(task.seed_index);
      cfg.ablation = variants[task.variant_index].switches;

      TtsModel model = TtsModel::create(cfg, vocab, table, d_mel, n_phonemes, f0_mean, f0_std);
      const MelEncoderBundle* melenc =
          cfg.ablation.no_supervision ? nullptr : &melencs[task.seed_index];
      PreparedCorpus data = prepare_corpus(corpus, model, melenc);
      TrainStats stats = train_model(model, data);
      AblationRun run;
      run.variant = variants[task.variant_index].name;
      run.seed = cfg.seed;
      run.first_batch = stats.first_batch;
      run.report = evaluate_model(model, data, data.eval_windows);
      say(run.variant + " seed " + std::to_string(run.seed) +
          ": f0_rmse=" + std::to_string(run.report.f0_rmse) +
          " dur_mse=" + std::to_string(run.report.duration_mse) +
          " mcd=" + std::to_string(run.report.mcd_proxy));
      results[t] = std::move(run);
    }
  };
  std::vector<std::thread> pool;
  const int workers = std::max(1, n_threads);
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();

  nlohmann::json out;
  out["config"] = base_cfg.to_json();
  out["config_hash"] = base_cfg.hash();
  out["n_seeds"] = n_seeds;
  nlohmann::json jv = nlohmann::json::array();
  for (int v = 0; v < static_cast<int>(variants.size()); ++v) {
    nlohmann::json runs = nlohmann::json::array();
    double f0 = 0.0, dur = 0.0, mcd = 0.0;
    for (size_t t = 0; t < tasks.size(); ++t) {
      if (tasks[t].variant_index != v) continue;
      const auto& r = results[t];
      runs.push_back({{"seed", r.seed},
                      {"f0_rmse", r.report.f0_rmse},
                      {"duration_mse", r.report.duration_mse},
                      {"mcd_proxy", r.report.mcd_proxy},
                      {"first_batch", r.first_batch}});
      f0 += r.report.f0_rmse;
      dur += r.report.duration_mse;
      mcd += r.report.mcd_proxy;
    }
    jv.push_back({{"name", variants[v].name},
                  {"ablation", variants[v].switches.to_json()},
                  {"runs", std::move(runs)},
                  {"mean_f0_rmse", f0 / n_seeds},
                  {"mean_duration_mse", dur / n_seeds},
                  {"mean_mcd_proxy", mcd / n_seeds}});
  }
  out["variants"] = std::move(jv);
  return out;
}

}  // namespace prosograph
