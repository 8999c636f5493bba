#pragma once

#include <string>
#include <vector>

#include "prosograph/errors.hpp"
#include "prosograph/graph_encoder.hpp"
#include "prosograph/param_store.hpp"
#include "prosograph/tensor.hpp"

namespace prosograph {

struct ConditioningParams {
  DiffTensor word_proj;      // [2*d_node x d_model]
  DiffTensor sentence_proj;  // [2*d_node x d_model]
  DiffTensor context_proj;   // [d_ctx x d_model]

  static ConditioningParams create(ParamStore& store, const std::string& prefix, int d_rep,
                                   int d_ctx, int d_model, Rng& rng) {
    ConditioningParams p;
    p.word_proj = store.create_glorot(prefix + ".word_proj", d_rep, d_model, rng);
    p.sentence_proj = store.create_glorot(prefix + ".sentence_proj", d_rep, d_model, rng);
    p.context_proj = store.create_glorot(prefix + ".context_proj", d_ctx, d_model, rng);
    return p;
  }
};

struct ConditioningStreams {
  DiffTensor word;      // [P x d_model]
  DiffTensor sentence;  // [P x d_model]
  DiffTensor context;   // [P x d_model]
};

// Word representations repeat over their own phoneme spans; sentence and
// context representations repeat across the whole phoneme timeline.
inline ConditioningStreams upsample_hierarchy(const ConditioningParams& params,
                                              const ProsodyHierarchy& hierarchy,
                                              const std::vector<int>& phonemes_per_word,
                                              const std::string& label = "") {
  const int w = static_cast<int>(phonemes_per_word.size());
  if (hierarchy.word_reps.dim(0) != w)
    throw ValidationError("upsample_hierarchy: " + std::to_string(hierarchy.word_reps.dim(0)) +
                          " word representations for " + std::to_string(w) + " words" +
                          (label.empty() ? "" : " in " + label));
  int total = 0;
  for (int c : phonemes_per_word) {
    if (c < 1)
      throw ValidationError("upsample_hierarchy: word with no phoneme slots" +
                            (label.empty() ? "" : " in " + label));
    total += c;
  }
  ConditioningStreams s;
  s.word = row_repeat(matmul(hierarchy.word_reps, params.word_proj), phonemes_per_word);
  s.sentence = row_repeat(matmul(hierarchy.sentence_rep, params.sentence_proj), {total});
  s.context = row_repeat(matmul(hierarchy.context_rep, params.context_proj), {total});
  return s;
}

// Additive injection keeps the backbone width fixed and makes ablations exact
// zero-substitutions.
inline DiffTensor inject(const DiffTensor& encoder_out, const ConditioningStreams& streams) {
  detail::check_same_shape("inject", encoder_out, streams.word);
  detail::check_same_shape("inject", encoder_out, streams.sentence);
  detail::check_same_shape("inject", encoder_out, streams.context);
  return add(add(encoder_out, streams.word), add(streams.sentence, streams.context));
}

}  // namespace prosograph
