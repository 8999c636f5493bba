#pragma once

#include <array>
#include <cmath>
#include <string>

#include "prosograph/graph_encoder.hpp"
#include "prosograph/param_store.hpp"
#include "prosograph/tensor.hpp"

namespace prosograph {

// Single-head attention over the (prev, cur, next) sentence representations.
// The aggregated slots are the key/value set; the current sentence queries.
struct ContextAttentionParams {
  int d_in = 0;   // 2 * d_node
  int d_ctx = 0;
  DiffTensor w_query, w_key, w_value;  // [d_in x d_ctx]
  DiffTensor w_out;                    // [d_ctx x d_ctx]
  DiffTensor absent;                   // [1 x d_in], learned stand-in for missing neighbors

  static ContextAttentionParams create(ParamStore& store, const std::string& prefix, int d_in,
                                       int d_ctx, Rng& rng) {
    ContextAttentionParams p;
    p.d_in = d_in;
    p.d_ctx = d_ctx;
    p.w_query = store.create_glorot(prefix + ".w_query", d_in, d_ctx, rng);
    p.w_key = store.create_glorot(prefix + ".w_key", d_in, d_ctx, rng);
    p.w_value = store.create_glorot(prefix + ".w_value", d_in, d_ctx, rng);
    p.w_out = store.create_glorot(prefix + ".w_out", d_ctx, d_ctx, rng);
    p.absent = store.create_glorot(prefix + ".absent", 1, d_in, rng);
    return p;
  }
};

struct ContextAggregationFeatures {
  DiffTensor slots;              // [3 x d_in], ordered (prev, cur, next)
  std::array<bool, 3> mask{};    // cur always true
};

// Missing neighbors take the learned absent-embedding with their mask false,
// so the model can tell a document boundary from silent prosody.
inline ContextAggregationFeatures build_caf(const ContextAttentionParams& params,
                                            const DiffTensor* prev_rep, const DiffTensor& cur_rep,
                                            const DiffTensor* next_rep) {
  ContextAggregationFeatures caf;
  caf.slots = concat_rows({prev_rep ? *prev_rep : params.absent, cur_rep,
                           next_rep ? *next_rep : params.absent});
  caf.mask = {prev_rep != nullptr, true, next_rep != nullptr};
  return caf;
}

// context_rep = W_o (sum_s alpha_s V slot_s), alpha = softmax over unmasked
// slots of <Q cur, K slot>/sqrt(d_ctx). Masked slots contribute exactly zero.
inline DiffTensor cross_sentence_attention(const ContextAttentionParams& params,
                                           const ContextAggregationFeatures& caf,
                                           const DiffTensor& cur_rep, ForwardCtx& ctx) {
  DiffTensor q = matmul(cur_rep, params.w_query);        // [1 x d_ctx]
  DiffTensor k = matmul(caf.slots, params.w_key);        // [3 x d_ctx]
  DiffTensor v = matmul(caf.slots, params.w_value);
  DiffTensor scores = scalar_mul(rowwise_dot(row_repeat(q, {3}), k),
                                 1.0 / std::sqrt(static_cast<double>(params.d_ctx)));
  DiffTensor alpha = masked_softmax(scores, {caf.mask[0], caf.mask[1], caf.mask[2]});
  if (ctx.trace) {
    double total = 0.0;
    for (double a : alpha.values()) total += a;
    ctx.trace->row_sums.push_back(total);
  }
  DiffTensor pooled = matmul(reshape(alpha, {1, 3}), v);  // [1 x d_ctx]
  return matmul(pooled, params.w_out);
}

}  // namespace prosograph
