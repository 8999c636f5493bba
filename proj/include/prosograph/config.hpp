#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "prosograph/errors.hpp"

namespace prosograph {

// Each switch removes one mechanism while keeping every tensor shape valid.
struct AblationSwitches {
  bool no_supervision = false;
  bool no_context_attention = false;  // context_rep := zeros
  bool no_global_node = false;        // sentence_rep := mean of word reps

  nlohmann::json to_json() const {
    return {{"no_supervision", no_supervision},
            {"no_context_attention", no_context_attention},
            {"no_global_node", no_global_node}};
  }
  static AblationSwitches from_json(const nlohmann::json& j) {
    AblationSwitches a;
    a.no_supervision = j.value("no_supervision", false);
    a.no_context_attention = j.value("no_context_attention", false);
    a.no_global_node = j.value("no_global_node", false);
    return a;
  }
};

struct TrainConfig {
  // model dimensions (full profile: 4 graph-transformer layers, 4 heads,
  // node and edge embeddings at 256, attention dropout 0.1)
  int d_node = 256;
  int d_edge = 256;
  int d_ctx = 256;
  int d_p = 128;    // acoustic prosody embedding width
  int d_model = 256;
  int heads = 4;
  int layers = 4;
  int melenc_hidden = 128;
  double dropout = 0.1;

  // training
  double beta = 1.0;  // supervision loss weight
  double lr = 1e-3;
  double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
  int steps = 5000;
  int batch_size = 8;
  uint64_t seed = 1;
  double holdout_fraction = 0.1;  // trailing fraction of documents held out
  AblationSwitches ablation;

  // mel-encoder pretraining
  int melenc_steps = 1500;
  int melenc_batch = 16;
  double melenc_lr = 1e-3;
  double melenc_lambda = 1.0;      // gradient-reversal strength
  bool melenc_lambda_ramp = false; // 0 -> lambda over the first 20% of steps
  int melenc_adv_updates = 4;      // classifier-only refresh steps per joint step
  double melenc_adv_lr = 5e-3;     // classifier refresh learning rate

  // paths
  std::string corpus_path;
  std::string embedding_path;
  std::string melenc_path;

  // desk-scale profile used by tests and the ablation suite
  static TrainConfig test_profile() {
    TrainConfig c;
    c.d_node = 16;
    c.d_edge = 16;
    c.d_ctx = 16;
    c.d_p = 16;
    c.d_model = 16;
    c.heads = 2;
    c.layers = 2;
    c.melenc_hidden = 32;
    c.batch_size = 4;
    return c;
  }

  void validate() const {
    if (d_node < 1 || d_edge < 1 || d_ctx < 1 || d_p < 1 || d_model < 1 || melenc_hidden < 1)
      throw ValidationError("config: dimensions must be positive");
    if (heads < 1 || d_node % heads != 0)
      throw ValidationError("config: d_node must be divisible by heads");
    if (layers < 0) throw ValidationError("config: layers must be >= 0");
    if (dropout < 0.0 || dropout >= 1.0) throw ValidationError("config: dropout must be in [0,1)");
    if (beta < 0.0) throw ValidationError("config: beta must be >= 0");
    if (steps < 0 || batch_size < 1) throw ValidationError("config: bad step/batch settings");
    if (holdout_fraction < 0.0 || holdout_fraction >= 1.0)
      throw ValidationError("config: holdout_fraction must be in [0,1)");
  }

  nlohmann::json to_json() const {
    return {{"d_node", d_node},
            {"d_edge", d_edge},
            {"d_ctx", d_ctx},
            {"d_p", d_p},
            {"d_model", d_model},
            {"heads", heads},
            {"layers", layers},
            {"melenc_hidden", melenc_hidden},
            {"dropout", dropout},
            {"beta", beta},
            {"lr", lr},
            {"adam_beta1", adam_beta1},
            {"adam_beta2", adam_beta2},
            {"adam_eps", adam_eps},
            {"steps", steps},
            {"batch_size", batch_size},
            {"seed", seed},
            {"holdout_fraction", holdout_fraction},
            {"ablation", ablation.to_json()},
            {"melenc_steps", melenc_steps},
            {"melenc_batch", melenc_batch},
            {"melenc_lr", melenc_lr},
            {"melenc_lambda", melenc_lambda},
            {"melenc_lambda_ramp", melenc_lambda_ramp},
            {"melenc_adv_updates", melenc_adv_updates},
            {"melenc_adv_lr", melenc_adv_lr},
            {"corpus_path", corpus_path},
            {"embedding_path", embedding_path},
            {"melenc_path", melenc_path}};
  }

  // An optional "profile": "test" key selects the desk-scale baseline before
  // field overrides are applied.
  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c = j.value("profile", std::string("full")) == "test" ? test_profile() : TrainConfig{};
    c.d_node = j.value("d_node", c.d_node);
    c.d_edge = j.value("d_edge", c.d_edge);
    c.d_ctx = j.value("d_ctx", c.d_ctx);
    c.d_p = j.value("d_p", c.d_p);
    c.d_model = j.value("d_model", c.d_model);
    c.heads = j.value("heads", c.heads);
    c.layers = j.value("layers", c.layers);
    c.melenc_hidden = j.value("melenc_hidden", c.melenc_hidden);
    c.dropout = j.value("dropout", c.dropout);
    c.beta = j.value("beta", c.beta);
    c.lr = j.value("lr", c.lr);
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.steps = j.value("steps", c.steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.holdout_fraction = j.value("holdout_fraction", c.holdout_fraction);
    if (j.contains("ablation")) c.ablation = AblationSwitches::from_json(j["ablation"]);
    c.melenc_steps = j.value("melenc_steps", c.melenc_steps);
    c.melenc_batch = j.value("melenc_batch", c.melenc_batch);
    c.melenc_lr = j.value("melenc_lr", c.melenc_lr);
    c.melenc_lambda = j.value("melenc_lambda", c.melenc_lambda);
    c.melenc_lambda_ramp = j.value("melenc_lambda_ramp", c.melenc_lambda_ramp);
    c.melenc_adv_updates = j.value("melenc_adv_updates", c.melenc_adv_updates);
    c.melenc_adv_lr = j.value("melenc_adv_lr", c.melenc_adv_lr);
    c.corpus_path = j.value("corpus_path", c.corpus_path);
    c.embedding_path = j.value("embedding_path", c.embedding_path);
    c.melenc_path = j.value("melenc_path", c.melenc_path);
    c.validate();
    return c;
  }

  // FNV-1a over the canonical serialization; stable across runs.
  std::string hash() const {
    const std::string dump = to_json().dump();
    uint64_t h = 0xcbf29ce484222325ull;
    for (char ch : dump) {
      h ^= static_cast<unsigned char>(ch);
      h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }
};

}  // namespace prosograph
