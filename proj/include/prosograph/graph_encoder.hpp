#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "prosograph/param_store.hpp"
#include "prosograph/rng.hpp"
#include "prosograph/syntax_graph.hpp"
#include "prosograph/tensor.hpp"

namespace prosograph {

// Collects attention rows during a forward pass (normalization checks).
struct AttentionTrace {
  std::vector<double> row_sums;
};

struct ForwardCtx {
  bool training = false;
  Rng* rng = nullptr;  // required when training with dropout > 0
  AttentionTrace* trace = nullptr;
};

// One attention layer: per-head maps for self, neighbor value, edge, query,
// key, plus a scalar gate over [x'; x; x' - x] for the residual.
struct GraphEncoderParams {
  struct Head {
    DiffTensor w_self, w_value, w_edge, w_query, w_key;  // each [d_node x d_head]
  };
  struct Layer {
    std::vector<Head> heads;
    DiffTensor gate_w;  // [3*d_node x 1]
    DiffTensor gate_b;  // [1]
  };

  int d_node = 0, d_edge = 0, n_heads = 0;
  double attn_dropout = 0.0;
  DiffTensor edge_emb;  // [n_relations*2 x d_edge], (relation, direction)-indexed
  std::vector<Layer> layers;

  int d_head() const { return d_node / n_heads; }

  static GraphEncoderParams create(ParamStore& store, const std::string& prefix, int d_node,
                                   int d_edge, int n_heads, int n_layers, double attn_dropout,
                                   int n_relations, Rng& rng) {
    if (d_node % n_heads != 0)
      throw std::invalid_argument("graph encoder: d_node " + std::to_string(d_node) +
                                  " not divisible by heads " + std::to_string(n_heads));
    GraphEncoderParams p;
    p.d_node = d_node;
    p.d_edge = d_edge;
    p.n_heads = n_heads;
    p.attn_dropout = attn_dropout;
    p.edge_emb = store.create_glorot(prefix + ".edge_emb", n_relations * 2, d_edge, rng);
    const int dh = d_node / n_heads;
    for (int l = 0; l < n_layers; ++l) {
      Layer layer;
      const std::string lp = prefix + ".l" + std::to_string(l);
      for (int h = 0; h < n_heads; ++h) {
        const std::string hp = lp + ".h" + std::to_string(h);
        Head head;
        head.w_self = store.create_glorot(hp + ".w_self", d_node, dh, rng);
        head.w_value = store.create_glorot(hp + ".w_value", d_node, dh, rng);
        head.w_edge = store.create_glorot(hp + ".w_edge", d_edge, dh, rng);
        head.w_query = store.create_glorot(hp + ".w_query", d_node, dh, rng);
        head.w_key = store.create_glorot(hp + ".w_key", d_node, dh, rng);
        layer.heads.push_back(std::move(head));
      }
      layer.gate_w = store.create_zeros(lp + ".gate_w", {3 * d_node, 1});
      layer.gate_b = store.create_zeros(lp + ".gate_b", {1});
      p.layers.push_back(std::move(layer));
    }
    return p;
  }
};

// Eq.-style node update: per head, scores <W_q x_i, W_k x_j + W_e e_ij>/sqrt(dh)
// over in-neighbors j, softmax-normalized; x'_i = W_s x_i + sum_j a_ij (W_v x_j
// + W_e e_ij). Heads are concatenated. Attention dropout in train mode only.
inline DiffTensor layer_forward(const GraphEncoderParams& params,
                                const GraphEncoderParams::Layer& layer, const SyntaxGraph& graph,
                                const DiffTensor& x, ForwardCtx& ctx) {
  const int n = graph.n_nodes();
  if (x.ndim() != 2 || x.dim(0) != n || x.dim(1) != params.d_node)
    throw std::invalid_argument("layer_forward: features " + shape_str(x.shape()) + " for " +
                                std::to_string(n) + " nodes, d_node " + std::to_string(params.d_node));
  const int m = static_cast<int>(graph.edges.size());
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(params.d_head()));

  std::vector<int> edge_rows(m), src_idx(m);
  for (int e = 0; e < m; ++e) {
    edge_rows[e] = graph.edges[e].embedding_row();
    src_idx[e] = graph.edges[e].src;
  }
  std::vector<int> dst_idx(m);
  for (int e = 0; e < m; ++e) dst_idx[e] = graph.edges[e].dst;
  DiffTensor eemb = gather_rows(params.edge_emb, edge_rows);  // [m x d_edge]

  std::vector<DiffTensor> head_outputs;
  for (const auto& head : layer.heads) {
    DiffTensor q = matmul(x, head.w_query);
    DiffTensor k = matmul(x, head.w_key);
    DiffTensor v = matmul(x, head.w_value);
    DiffTensor self_term = matmul(x, head.w_self);
    DiffTensor eproj = matmul(eemb, head.w_edge);              // [m x dh]
    DiffTensor keys = add(gather_rows(k, src_idx), eproj);
    DiffTensor vals = add(gather_rows(v, src_idx), eproj);
    DiffTensor queries = gather_rows(q, dst_idx);
    DiffTensor scores = scalar_mul(rowwise_dot(queries, keys), inv_sqrt_dh);  // [m]

    std::vector<DiffTensor> rows;
    rows.reserve(n);
    for (int i = 0; i < n; ++i) {
      const auto& in = graph.in_edges[i];
      if (in.empty())
        throw std::invalid_argument("layer_forward: node " + std::to_string(i) +
                                    " has no in-neighbors (invalid attention mask)");
      DiffTensor alpha = masked_softmax(gather_elems(scores, in),
                                        std::vector<bool>(in.size(), true));
      if (ctx.trace) {
        double total = 0.0;
        for (double a : alpha.values()) total += a;
        ctx.trace->row_sums.push_back(total);
      }
      if (ctx.training && params.attn_dropout > 0.0) {
        if (!ctx.rng) throw std::invalid_argument("layer_forward: training mode needs an RNG");
        alpha = dropout(alpha, params.attn_dropout, *ctx.rng);
      }
      DiffTensor message = matmul(reshape(alpha, {1, static_cast<int>(in.size())}),
                                  gather_rows(vals, in));      // [1 x dh]
      rows.push_back(add(gather_rows(self_term, {i}), message));
    }
    head_outputs.push_back(concat_rows(rows));                 // [n x dh]
  }
  return params.n_heads == 1 ? head_outputs[0] : concat_cols(head_outputs);
}

// g = sigmoid(w^T [x'; x; x' - x] + b) per node; out = g x' + (1 - g) x.
inline DiffTensor gated_residual(const GraphEncoderParams::Layer& layer, const DiffTensor& x,
                                 const DiffTensor& x_new) {
  detail::check_same_shape("gated_residual", x, x_new);
  const int n = x.dim(0);
  DiffTensor cat = concat_cols({x_new, x, sub(x_new, x)});
  DiffTensor gate = sigmoid_act(add_broadcast_scalar(matmul(cat, layer.gate_w), layer.gate_b));
  DiffTensor keep_new = reshape(gate, {n});
  DiffTensor keep_old = reshape(scalar_affine(gate, -1.0, 1.0), {n});
  return add(mul_colvec(x_new, keep_new), mul_colvec(x, keep_old));
}

inline DiffTensor encode_graph(const GraphEncoderParams& params, const SyntaxGraph& graph,
                               const DiffTensor& features, ForwardCtx& ctx) {
  DiffTensor x = features;
  for (const auto& layer : params.layers)
    x = gated_residual(layer, x, layer_forward(params, layer, graph, x, ctx));
  return x;
}

// Word-level, sentence-level, and (filled in later) cross-sentence prosody
// representations for one sentence.
struct ProsodyHierarchy {
  DiffTensor word_reps;     // [W x 2*d_node]
  DiffTensor sentence_rep;  // [1 x 2*d_node]
  DiffTensor context_rep;   // [1 x d_ctx], set by the context-attention stage
};

// fused = tanh(concat(X, X')); the global row is the sentence representation.
// Without a global node (ablation) the sentence rep is the word-row mean.
inline ProsodyHierarchy fuse_and_extract(const SyntaxGraph& graph, const DiffTensor& initial,
                                         const DiffTensor& encoded) {
  detail::check_same_shape("fuse_and_extract", initial, encoded);
  if (initial.dim(0) != graph.n_nodes())
    throw std::invalid_argument("fuse_and_extract: feature rows " + shape_str(initial.shape()) +
                                " vs " + std::to_string(graph.n_nodes()) + " nodes");
  DiffTensor fused = tanh_act(concat_cols({initial, encoded}));
  ProsodyHierarchy h;
  std::vector<int> word_rows(graph.n_words);
  for (int i = 0; i < graph.n_words; ++i) word_rows[i] = i;
  h.word_reps = gather_rows(fused, word_rows);
  h.sentence_rep = graph.has_global ? gather_rows(fused, {graph.global_index()})
                                    : mean_over_rows(h.word_reps);
  return h;
}

}  // namespace prosograph
