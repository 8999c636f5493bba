#pragma once

#include <array>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "prosograph/checkpoint.hpp"
#include "prosograph/config.hpp"
#include "prosograph/corpus.hpp"
#include "prosograph/param_store.hpp"
#include "prosograph/tensor.hpp"

namespace prosograph {

// Reference encoder: two-layer frame MLP, temporal mean+max pooling, and a
// tanh-hidden head. Pooling makes the embedding invariant to frame order and
// frame repetition; the nonlinear head lets the embedding carry statistics of
// the pooled features (spreads, not just levels).
struct MelEncoderParams {
  int d_mel = 0, d_h = 0, d_p = 0;
  DiffTensor frame_w1, frame_b1;  // [d_mel x d_h], [d_h]
  DiffTensor frame_w2, frame_b2;  // [d_h x d_h], [d_h]
  DiffTensor head_w1, head_b1;    // [2*d_h x d_h], [d_h]
  DiffTensor head_w2, head_b2;    // [d_h x d_p], [d_p]

  static MelEncoderParams create(ParamStore& store, const std::string& prefix, int d_mel, int d_h,
                                 int d_p, Rng& rng) {
    MelEncoderParams p;
    p.d_mel = d_mel;
    p.d_h = d_h;
    p.d_p = d_p;
    p.frame_w1 = store.create_glorot(prefix + ".frame_w1", d_mel, d_h, rng);
    p.frame_b1 = store.create_zeros(prefix + ".frame_b1", {d_h});
    p.frame_w2 = store.create_glorot(prefix + ".frame_w2", d_h, d_h, rng);
    p.frame_b2 = store.create_zeros(prefix + ".frame_b2", {d_h});
    p.head_w1 = store.create_glorot(prefix + ".head_w1", 2 * d_h, d_h, rng);
    p.head_b1 = store.create_zeros(prefix + ".head_b1", {d_h});
    p.head_w2 = store.create_glorot(prefix + ".head_w2", d_h, d_p, rng);
    p.head_b2 = store.create_zeros(prefix + ".head_b2", {d_p});
    return p;
  }
};

inline DiffTensor mel_encode(const MelEncoderParams& params,
                             const std::vector<std::vector<double>>& mel) {
  const int frames = static_cast<int>(mel.size());
  if (frames == 0) throw ValidationError("mel_encode: empty mel input");
  std::vector<double> flat;
  flat.reserve(static_cast<size_t>(frames) * params.d_mel);
  for (const auto& frame : mel) {
    if (static_cast<int>(frame.size()) != params.d_mel)
      throw ValidationError("mel_encode: frame width " + std::to_string(frame.size()) +
                            " vs configured d_mel " + std::to_string(params.d_mel));
    flat.insert(flat.end(), frame.begin(), frame.end());
  }
  DiffTensor x = DiffTensor::constant({frames, params.d_mel}, std::move(flat));
  DiffTensor h = tanh_act(add_rowvec(matmul(x, params.frame_w1), params.frame_b1));
  h = tanh_act(add_rowvec(matmul(h, params.frame_w2), params.frame_b2));
  // order-invariant pooling keeps the embedding bitwise stable under frame permutation
  DiffTensor pooled = concat_cols({mean_over_rows_orderfree(h), max_over_rows(h)});  // [1 x 2*d_h]
  DiffTensor hidden = tanh_act(add_rowvec(matmul(pooled, params.head_w1), params.head_b1));
  return add_rowvec(matmul(hidden, params.head_w2), params.head_b2);  // [1 x d_p]
}

struct SpeakerAdversaryParams {
  DiffTensor cls_w, cls_b;  // [d_p x n_speakers], [n_speakers]

  static SpeakerAdversaryParams create(ParamStore& store, const std::string& prefix, int d_p,
                                       int n_speakers, Rng& rng) {
    SpeakerAdversaryParams p;
    p.cls_w = store.create_glorot(prefix + ".cls_w", d_p, n_speakers, rng);
    p.cls_b = store.create_zeros(prefix + ".cls_b", {n_speakers});
    return p;
  }

  DiffTensor logits(const DiffTensor& embedding) const {
    return reshape(add_rowvec(matmul(embedding, cls_w), cls_b), {cls_w.dim(1)});
  }
};

// Regression targets: raw sentence mean f0, std f0, and mean log-duration.
inline std::array<double, 3> sentence_prosody_stats(const SentenceRecord& s) {
  double mean = 0.0;
  for (double v : s.f0) mean += v;
  mean /= static_cast<double>(s.f0.size());
  double var = 0.0;
  for (double v : s.f0) var += (v - mean) * (v - mean);
  var /= static_cast<double>(s.f0.size());
  double logdur = 0.0;
  for (int d : s.durations) logdur += std::log(static_cast<double>(d));
  logdur /= static_cast<double>(s.durations.size());
  return {mean, std::sqrt(var), logdur};
}

struct MelPretrainLosses {
  DiffTensor regression;  // scalar
  DiffTensor speaker;     // scalar
  DiffTensor total;       // regression + speaker (after gradient reversal)
};

// One training item: the prosody regression constrains the embedding content;
// the speaker cross-entropy reaches the encoder only through gradient
// reversal, pushing the embedding toward speaker indistinguishability.
inline MelPretrainLosses mel_pretrain_losses(const MelEncoderParams& enc, const DiffTensor& reg_w,
                                             const DiffTensor& reg_b,
                                             const SpeakerAdversaryParams& adversary,
                                             const std::vector<const SentenceRecord*>& batch,
                                             const std::array<double, 3>& target_mean,
                                             const std::array<double, 3>& target_std,
                                             double lambda) {
  std::vector<DiffTensor> reg_terms, spk_terms;
  reg_terms.reserve(batch.size());
  spk_terms.reserve(batch.size());
  for (const SentenceRecord* s : batch) {
    DiffTensor emb = mel_encode(enc, s->mel);
    const auto stats = sentence_prosody_stats(*s);
    std::vector<double> normed(3);
    for (int t = 0; t < 3; ++t) normed[t] = (stats[t] - target_mean[t]) / target_std[t];
    DiffTensor pred = reshape(add_rowvec(matmul(emb, reg_w), reg_b), {3});
    reg_terms.push_back(mse_loss(pred, DiffTensor::constant({3}, normed)));
    DiffTensor reversed = gradient_reverse(emb, lambda);
    spk_terms.push_back(cross_entropy_loss(adversary.logits(reversed), s->speaker_id));
  }
  auto mean_of = [](std::vector<DiffTensor>& terms) {
    DiffTensor acc = terms[0];
    for (size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
    return scalar_mul(acc, 1.0 / static_cast<double>(terms.size()));
  };
  MelPretrainLosses out;
  out.regression = mean_of(reg_terms);
  out.speaker = mean_of(spk_terms);
  out.total = add(out.regression, out.speaker);
  return out;
}

// Mean over the present sentences of MSE(proj(sentence_rep), frozen embedding).
inline DiffTensor supervision_loss(const std::vector<const DiffTensor*>& sentence_reps,
                                   const std::vector<const std::vector<double>*>& frozen_embeddings,
                                   const DiffTensor& proj) {
  if (sentence_reps.empty())
    throw std::invalid_argument("supervision_loss: no sentences to supervise");
  if (sentence_reps.size() != frozen_embeddings.size())
    throw std::invalid_argument("supervision_loss: rep/embedding count mismatch");
  DiffTensor acc;
  for (size_t i = 0; i < sentence_reps.size(); ++i) {
    const auto& emb = *frozen_embeddings[i];
    DiffTensor pred = reshape(matmul(*sentence_reps[i], proj), {static_cast<int>(emb.size())});
    DiffTensor term = mse_loss(pred, DiffTensor::constant({static_cast<int>(emb.size())}, emb));
    acc = i == 0 ? term : add(acc, term);
  }
  return scalar_mul(acc, 1.0 / static_cast<double>(sentence_reps.size()));
}

// ---------------------------------------------------------------------------
// pretraining driver
// ---------------------------------------------------------------------------

struct MelEncoderBundle {
  ParamStore store{0};
  MelEncoderParams enc;
  DiffTensor reg_w, reg_b;
  SpeakerAdversaryParams adversary;
  int d_mel = 0, n_speakers = 0;
  std::array<double, 3> target_mean{}, target_std{};

  DiffTensor encode(const std::vector<std::vector<double>>& mel) const {
    return mel_encode(enc, mel);
  }
};

namespace detail {
// leading fraction trains, trailing fraction is held out
inline size_t train_doc_count(size_t n_docs, double holdout_fraction) {
  auto train = static_cast<size_t>(std::ceil(n_docs * (1.0 - holdout_fraction)));
  return std::max<size_t>(1, std::min(train, n_docs));
}
}  // namespace detail

inline MelEncoderBundle create_mel_encoder(const TrainConfig& cfg, int d_mel, int n_speakers,
                                           Rng& rng) {
  MelEncoderBundle b;
  b.store = ParamStore(cfg.seed);
  b.d_mel = d_mel;
  b.n_speakers = n_speakers;
  b.enc = MelEncoderParams::create(b.store, "melenc", d_mel, cfg.melenc_hidden, cfg.d_p, rng);
  b.reg_w = b.store.create_glorot("melenc_head.reg_w", cfg.d_p, 3, rng);
  b.reg_b = b.store.create_zeros("melenc_head.reg_b", {3});
  b.adversary = SpeakerAdversaryParams::create(b.store, "melenc_head", cfg.d_p, n_speakers, rng);
  b.target_std = {1.0, 1.0, 1.0};
  return b;
}

// Adversarial pretraining on the train split of the corpus. Deterministic in
// cfg.seed. lambda_override >= 0 replaces cfg.melenc_lambda (ablation probes).
inline MelEncoderBundle pretrain_mel_encoder(const Corpus& corpus, const TrainConfig& cfg,
                                             double lambda_override = -1.0) {
  const double lambda_max = lambda_override >= 0.0 ? lambda_override : cfg.melenc_lambda;
  Rng root(cfg.seed);
  Rng init_rng = root.split("melenc-init");
  MelEncoderBundle bundle =
      create_mel_encoder(cfg, corpus_d_mel(corpus), corpus_n_speakers(corpus), init_rng);

  std::vector<const SentenceRecord*> train;
  const size_t train_docs = detail::train_doc_count(corpus.docs.size(), cfg.holdout_fraction);
  for (size_t di = 0; di < train_docs; ++di)
    for (const auto& s : corpus.docs[di].sentences) train.push_back(&s);
  if (train.empty()) throw ValidationError("pretrain_mel_encoder: empty training split");

  // standardize regression targets with train-split statistics
  std::array<double, 3> mean{}, var{};
  for (const auto* s : train) {
    const auto stats = sentence_prosody_stats(*s);
    for (int t = 0; t < 3; ++t) mean[t] += stats[t];
  }
  for (int t = 0; t < 3; ++t) mean[t] /= static_cast<double>(train.size());
  for (const auto* s : train) {
    const auto stats = sentence_prosody_stats(*s);
    for (int t = 0; t < 3; ++t) var[t] += (stats[t] - mean[t]) * (stats[t] - mean[t]);
  }
  for (int t = 0; t < 3; ++t)
    bundle.target_std[t] = std::max(1e-6, std::sqrt(var[t] / static_cast<double>(train.size())));
  bundle.target_mean = mean;

  const auto is_classifier = [](const std::string& name) {
    return name.rfind("melenc_head.cls", 0) == 0;
  };
  const auto is_main = [&](const std::string& name) { return !is_classifier(name); };
  AdamOptimizer opt_main(cfg.melenc_lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  // The reversal only disentangles while the classifier tracks the moving
  // embedding, so the adversary trains faster and gets refresh-only steps.
  AdamOptimizer opt_adv(cfg.melenc_adv_lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);

  Rng shuffle_rng = root.split("melenc-shuffle");
  std::vector<int> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  size_t cursor = order.size();  // trigger shuffle on first use

  for (int step = 0; step < cfg.melenc_steps; ++step) {
    std::vector<const SentenceRecord*> batch;
    for (int b = 0; b < cfg.melenc_batch; ++b) {
      if (cursor == order.size()) {
        for (size_t i = order.size(); i > 1; --i)
          std::swap(order[i - 1], order[shuffle_rng.uniform_int(0, static_cast<int>(i) - 1)]);
        cursor = 0;
      }
      batch.push_back(train[order[cursor++]]);
    }
    const double ramp_steps = 0.2 * cfg.melenc_steps;
    const double lambda = cfg.melenc_lambda_ramp && ramp_steps > 0
                              ? lambda_max * std::min(1.0, step / ramp_steps)
                              : lambda_max;
    auto losses = mel_pretrain_losses(bundle.enc, bundle.reg_w, bundle.reg_b, bundle.adversary,
                                      batch, bundle.target_mean, bundle.target_std, lambda);
    if (!losses.total.all_finite())
      throw NumericError("pretrain_mel_encoder: non-finite loss at step " + std::to_string(step));
    bundle.store.zero_grad();
    backprop(losses.total);
    opt_main.step(bundle.store, is_main);
    opt_adv.step(bundle.store, is_classifier);

    if (cfg.melenc_adv_updates > 1) {
      // classifier-only refreshes against the frozen batch embeddings
      std::vector<std::vector<double>> frozen;
      frozen.reserve(batch.size());
      for (const SentenceRecord* s : batch) frozen.push_back(mel_encode(bundle.enc, s->mel).values());
      for (int k = 1; k < cfg.melenc_adv_updates; ++k) {
        DiffTensor ce_sum;
        for (size_t b = 0; b < batch.size(); ++b) {
          DiffTensor emb = DiffTensor::constant({1, bundle.enc.d_p}, frozen[b]);
          DiffTensor term = cross_entropy_loss(bundle.adversary.logits(emb), batch[b]->speaker_id);
          ce_sum = b == 0 ? term : add(ce_sum, term);
        }
        bundle.store.zero_grad();
        backprop(scalar_mul(ce_sum, 1.0 / static_cast<double>(batch.size())));
        opt_adv.step(bundle.store, is_classifier);
      }
    }
  }
  return bundle;
}

// ---------------------------------------------------------------------------
// checkpointing
// ---------------------------------------------------------------------------

inline void save_mel_encoder(const MelEncoderBundle& bundle, const TrainConfig& cfg,
                             const std::string& path) {
  nlohmann::json meta{{"kind", "melenc"},
                      {"config", cfg.to_json()},
                      {"d_mel", bundle.d_mel},
                      {"n_speakers", bundle.n_speakers},
                      {"target_mean", bundle.target_mean},
                      {"target_std", bundle.target_std}};
  save_checkpoint(bundle.store, meta, path);
}

inline MelEncoderBundle load_mel_encoder(const std::string& path) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.meta.value("kind", "") != "melenc")
    throw ValidationError("checkpoint '" + path + "' is not a mel-encoder checkpoint");
  TrainConfig cfg = TrainConfig::from_json(ckpt.meta.at("config"));
  Rng rng = Rng(cfg.seed).split("melenc-init");
  MelEncoderBundle bundle = create_mel_encoder(cfg, ckpt.meta.at("d_mel").get<int>(),
                                               ckpt.meta.at("n_speakers").get<int>(), rng);
  bundle.target_mean = ckpt.meta.at("target_mean").get<std::array<double, 3>>();
  bundle.target_std = ckpt.meta.at("target_std").get<std::array<double, 3>>();
  load_into_store(ckpt, bundle.store);
  return bundle;
}

// ---------------------------------------------------------------------------
// probes (fresh classifiers/regressors on frozen embeddings)
// ---------------------------------------------------------------------------

struct SpeakerProbeResult {
  double accuracy = 0.0;
  double chance = 0.0;
};

// Multinomial logistic probe trained full-batch with Adam on raw arrays;
// independent of the DiffTensor pipeline it evaluates.
inline SpeakerProbeResult speaker_probe(const std::vector<std::vector<double>>& train_x,
                                        const std::vector<int>& train_y,
                                        const std::vector<std::vector<double>>& test_x,
                                        const std::vector<int>& test_y, int n_classes,
                                        uint64_t seed, int iters = 400, double lr = 0.05) {
  const int d = static_cast<int>(train_x.front().size());
  const int n = static_cast<int>(train_x.size());
  std::vector<double> w(static_cast<size_t>(d) * n_classes, 0.0), b(n_classes, 0.0);
  std::vector<double> mw(w.size(), 0.0), vw(w.size(), 0.0), mb(b.size(), 0.0), vb(b.size(), 0.0);
  Rng rng(seed);
  for (double& x : w) x = rng.normal(0.0, 0.01);

  std::vector<double> logits(n_classes), probs(n_classes);
  std::vector<double> gw(w.size()), gb(b.size());
  for (int it = 1; it <= iters; ++it) {
    std::fill(gw.begin(), gw.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    for (int i = 0; i < n; ++i) {
      const auto& x = train_x[i];
      double mx = -1e300;
      for (int c = 0; c < n_classes; ++c) {
        logits[c] = b[c];
        for (int j = 0; j < d; ++j) logits[c] += x[j] * w[static_cast<size_t>(j) * n_classes + c];
        mx = std::max(mx, logits[c]);
      }
      double z = 0.0;
      for (int c = 0; c < n_classes; ++c) {
        probs[c] = std::exp(logits[c] - mx);
        z += probs[c];
      }
      for (int c = 0; c < n_classes; ++c) {
        const double delta = probs[c] / z - (c == train_y[i] ? 1.0 : 0.0);
        gb[c] += delta / n;
        for (int j = 0; j < d; ++j) gw[static_cast<size_t>(j) * n_classes + c] += x[j] * delta / n;
      }
    }
    const double bc1 = 1.0 - std::pow(0.9, it), bc2 = 1.0 - std::pow(0.999, it);
    for (size_t k = 0; k < w.size(); ++k) {
      mw[k] = 0.9 * mw[k] + 0.1 * gw[k];
      vw[k] = 0.999 * vw[k] + 0.001 * gw[k] * gw[k];
      w[k] -= lr * (mw[k] / bc1) / (std::sqrt(vw[k] / bc2) + 1e-8);
    }
    for (size_t k = 0; k < b.size(); ++k) {
      mb[k] = 0.9 * mb[k] + 0.1 * gb[k];
      vb[k] = 0.999 * vb[k] + 0.001 * gb[k] * gb[k];
      b[k] -= lr * (mb[k] / bc1) / (std::sqrt(vb[k] / bc2) + 1e-8);
    }
  }

  int correct = 0;
  for (size_t i = 0; i < test_x.size(); ++i) {
    int best = 0;
    double best_score = -1e300;
    for (int c = 0; c < n_classes; ++c) {
      double score = b[c];
      for (int j = 0; j < d; ++j) score += test_x[i][j] * w[static_cast<size_t>(j) * n_classes + c];
      if (score > best_score) {
        best_score = score;
        best = c;
      }
    }
    correct += best == test_y[i] ? 1 : 0;
  }
  SpeakerProbeResult out;
  out.accuracy = test_x.empty() ? 0.0 : static_cast<double>(correct) / test_x.size();
  out.chance = 1.0 / n_classes;
  return out;
}

struct RegressionR2 {
  std::array<double, 3> per_target{};
  double mean = 0.0;
};

// R^2 of the pretrained regression head on held-out sentences.
inline RegressionR2 regression_r2(const MelEncoderBundle& bundle,
                                  const std::vector<const SentenceRecord*>& sentences) {
  std::array<double, 3> sse{}, sst{}, target_mean{};
  std::vector<std::array<double, 3>> targets;
  targets.reserve(sentences.size());
  for (const auto* s : sentences) {
    targets.push_back(sentence_prosody_stats(*s));
    for (int t = 0; t < 3; ++t) target_mean[t] += targets.back()[t];
  }
  for (int t = 0; t < 3; ++t) target_mean[t] /= static_cast<double>(sentences.size());

  for (size_t i = 0; i < sentences.size(); ++i) {
    DiffTensor emb = bundle.encode(sentences[i]->mel);
    DiffTensor pred = add_rowvec(matmul(emb, bundle.reg_w), bundle.reg_b);
    for (int t = 0; t < 3; ++t) {
      const double raw = pred.at(0, t) * bundle.target_std[t] + bundle.target_mean[t];
      sse[t] += (raw - targets[i][t]) * (raw - targets[i][t]);
      sst[t] += (targets[i][t] - target_mean[t]) * (targets[i][t] - target_mean[t]);
    }
  }
  RegressionR2 out;
  for (int t = 0; t < 3; ++t) {
    out.per_target[t] = sst[t] > 0.0 ? 1.0 - sse[t] / sst[t] : 0.0;
    out.mean += out.per_target[t] / 3.0;
  }
  return out;
}

}  // namespace prosograph
