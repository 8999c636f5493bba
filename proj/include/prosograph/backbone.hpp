#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "prosograph/corpus.hpp"
#include "prosograph/param_store.hpp"
#include "prosograph/tensor.hpp"

namespace prosograph {

// Reduced non-autoregressive acoustic model: phoneme embedding, two
// feed-forward blocks with pre-norm residuals, a per-phoneme duration head, a
// per-frame pitch head after length regulation, and a two-block mel decoder.
// Positional structure comes from the prosody streams and duration targets.
struct BackboneParams {
  struct FFBlock {
    DiffTensor ln_gain, ln_bias;  // [d_model]
    DiffTensor w1, b1;            // [d_model x d_model], [d_model]
    DiffTensor w2, b2;            // [d_model x d_model], [d_model]
  };
  struct ScalarHead {
    DiffTensor w1, b1;  // [d_model x d_model], [d_model]
    DiffTensor w2, b2;  // [d_model x 1], [1]
  };

  int n_phonemes = 0, d_model = 0, d_mel = 0;
  // pitch is predicted on a standardized scale and mapped back to Hz; the
  // constants come from the training split and ride along in checkpoints
  double f0_mean = 0.0, f0_std = 1.0;
  DiffTensor phoneme_emb;  // [n_phonemes x d_model]
  std::array<FFBlock, 2> encoder;
  ScalarHead duration_head;  // phoneme rail, log-frames
  ScalarHead pitch_head;     // frame rail, Hz
  std::array<FFBlock, 2> decoder;
  DiffTensor mel_w, mel_b;  // [d_model x d_mel], [d_mel]

  static BackboneParams create(ParamStore& store, const std::string& prefix, int n_phonemes,
                               int d_model, int d_mel, Rng& rng) {
    auto make_block = [&](const std::string& bp) {
      FFBlock blk;
      blk.ln_gain = store.create(bp + ".ln_gain", {d_model}, std::vector<double>(d_model, 1.0));
      blk.ln_bias = store.create_zeros(bp + ".ln_bias", {d_model});
      blk.w1 = store.create_glorot(bp + ".w1", d_model, d_model, rng);
      blk.b1 = store.create_zeros(bp + ".b1", {d_model});
      blk.w2 = store.create_glorot(bp + ".w2", d_model, d_model, rng);
      blk.b2 = store.create_zeros(bp + ".b2", {d_model});
      return blk;
    };
    auto make_head = [&](const std::string& hp) {
      ScalarHead head;
      head.w1 = store.create_glorot(hp + ".w1", d_model, d_model, rng);
      head.b1 = store.create_zeros(hp + ".b1", {d_model});
      head.w2 = store.create_glorot(hp + ".w2", d_model, 1, rng);
      head.b2 = store.create_zeros(hp + ".b2", {1});
      return head;
    };
    BackboneParams p;
    p.n_phonemes = n_phonemes;
    p.d_model = d_model;
    p.d_mel = d_mel;
    p.phoneme_emb = store.create_glorot(prefix + ".phoneme_emb", n_phonemes, d_model, rng);
    p.encoder = {make_block(prefix + ".enc0"), make_block(prefix + ".enc1")};
    p.duration_head = make_head(prefix + ".dur");
    p.pitch_head = make_head(prefix + ".pitch");
    p.decoder = {make_block(prefix + ".dec0"), make_block(prefix + ".dec1")};
    p.mel_w = store.create_glorot(prefix + ".mel_w", d_model, d_mel, rng);
    p.mel_b = store.create_zeros(prefix + ".mel_b", {d_mel});
    return p;
  }
};

namespace detail {
inline DiffTensor ff_block(const BackboneParams::FFBlock& blk, const DiffTensor& x) {
  DiffTensor normed = layer_norm(x, blk.ln_gain, blk.ln_bias);
  DiffTensor hidden = tanh_act(add_rowvec(matmul(normed, blk.w1), blk.b1));
  return add(x, add_rowvec(matmul(hidden, blk.w2), blk.b2));
}
inline DiffTensor scalar_head(const BackboneParams::ScalarHead& head, const DiffTensor& x) {
  DiffTensor hidden = tanh_act(add_rowvec(matmul(x, head.w1), head.b1));
  return reshape(add_rowvec(matmul(hidden, head.w2), head.b2), {x.dim(0)});
}
}  // namespace detail

inline DiffTensor encode_phonemes(const BackboneParams& params, const std::vector<int>& ids) {
  for (size_t i = 0; i < ids.size(); ++i)
    if (ids[i] < 0 || ids[i] >= params.n_phonemes)
      throw ValidationError("encode_phonemes: phoneme id " + std::to_string(ids[i]) +
                            " at index " + std::to_string(i) + " out of range [0," +
                            std::to_string(params.n_phonemes) + ")");
  DiffTensor x = gather_rows(params.phoneme_emb, ids);
  for (const auto& blk : params.encoder) x = detail::ff_block(blk, x);
  return x;
}

// Row p repeats durations[p] times, order preserved.
inline DiffTensor length_regulate(const DiffTensor& hidden, const std::vector<int>& durations) {
  if (hidden.dim(0) != static_cast<int>(durations.size()))
    throw ValidationError("length_regulate: " + std::to_string(durations.size()) +
                          " durations for " + std::to_string(hidden.dim(0)) + " rows");
  for (int d : durations)
    if (d < 1) throw ValidationError("length_regulate: nonpositive duration");
  return row_repeat(hidden, durations);
}

struct TtsPredictions {
  DiffTensor mel;     // [T x d_mel]
  DiffTensor f0;      // [T]
  DiffTensor logdur;  // [P]
};

// Duration head runs on the phoneme rail; pitch and mel heads run on the
// frame rail produced by the (teacher-forced) length regulator.
inline TtsPredictions forward_tts(const BackboneParams& params, const DiffTensor& conditioned,
                                  const std::vector<int>& durations) {
  TtsPredictions out;
  out.logdur = detail::scalar_head(params.duration_head, conditioned);
  DiffTensor frames = length_regulate(conditioned, durations);
  out.f0 = scalar_affine(detail::scalar_head(params.pitch_head, frames), params.f0_std,
                         params.f0_mean);
  DiffTensor d = frames;
  for (const auto& blk : params.decoder) d = detail::ff_block(blk, d);
  out.mel = add_rowvec(matmul(d, params.mel_w), params.mel_b);
  return out;
}

struct BackboneLosses {
  DiffTensor mel, f0, dur;  // scalars
};

inline BackboneLosses backbone_loss(const BackboneParams& params, const TtsPredictions& preds,
                                    const SentenceRecord& target) {
  const int frames = target.total_frames();
  if (preds.mel.dim(0) != frames || preds.f0.numel() != frames)
    throw ValidationError("backbone_loss: prediction frames " + std::to_string(preds.mel.dim(0)) +
                          " vs target frames " + std::to_string(frames));
  if (preds.logdur.numel() != static_cast<int>(target.durations.size()))
    throw ValidationError("backbone_loss: duration count mismatch");

  std::vector<double> mel_flat;
  mel_flat.reserve(static_cast<size_t>(frames) * target.mel.front().size());
  for (const auto& frame : target.mel) mel_flat.insert(mel_flat.end(), frame.begin(), frame.end());
  std::vector<double> logdur(target.durations.size());
  for (size_t i = 0; i < target.durations.size(); ++i)
    logdur[i] = std::log(static_cast<double>(target.durations[i]));

  const int mel_count = static_cast<int>(mel_flat.size());
  const int dur_count = static_cast<int>(logdur.size());
  BackboneLosses out;
  out.mel = mse_loss(reshape(preds.mel, {mel_count}),
                     DiffTensor::constant({mel_count}, std::move(mel_flat)));
  // f0 MSE on the standardized scale keeps the three terms comparable
  std::vector<double> f0_normed(target.f0.size());
  for (size_t i = 0; i < target.f0.size(); ++i)
    f0_normed[i] = (target.f0[i] - params.f0_mean) / params.f0_std;
  out.f0 = mse_loss(scalar_affine(preds.f0, 1.0 / params.f0_std, -params.f0_mean / params.f0_std),
                    DiffTensor::constant({frames}, std::move(f0_normed)));
  out.dur = mse_loss(preds.logdur, DiffTensor::constant({dur_count}, std::move(logdur)));
  return out;
}

// Inference-mode durations: round(exp(logdur)), clamped to >= 1.
inline std::vector<int> predicted_durations(const DiffTensor& logdur) {
  std::vector<int> out(logdur.numel());
  for (int i = 0; i < logdur.numel(); ++i)
    out[i] = std::max(1, static_cast<int>(std::llround(std::exp(logdur.at(i)))));
  return out;
}

}  // namespace prosograph
