#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tempgnn/buckets.hpp"
#include "tempgnn/data.hpp"
#include "tempgnn/error.hpp"
#include "tempgnn/graph.hpp"
#include "tempgnn/tape.hpp"
#include "tempgnn/tensor.hpp"

namespace tempgnn {

struct ModelConfig {
  std::size_t dim = 256;
  std::size_t layers = 6;
  double tau = 12.0;
  std::size_t item_count = 0;
  std::size_t max_len = 10;
  EncoderSpec tn;                 // node-side temporal encoder
  EncoderSpec te;                 // edge-side temporal encoder
  std::size_t tn_buckets = 40;
  std::size_t te_buckets = 50;
  bool tie_direction_gates = false;
  double leaky_slope = 0.01;

  void validate() const {
    if (dim < 1) throw ValidationError("model: dim must be >= 1");
    if (tau <= 0.0) throw ValidationError("model: tau must be positive");
    if (item_count < 1) throw ValidationError("model: item_count must be >= 1");
    if (max_len < 1) throw ValidationError("model: max_len must be >= 1");
    if (te.kind == EncoderKind::kPosition) {
      throw ValidationError(
          "model: the position encoder has no meaning on edges; choose "
          "none/constant/bucket/q for te");
    }
    if (tn.uses_bucket_table() && tn_buckets < 1) {
      throw ValidationError("model: tn_buckets must be >= 1");
    }
    if (te.uses_bucket_table() && te_buckets < 1) {
      throw ValidationError("model: te_buckets must be >= 1");
    }
    if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) {
      throw ValidationError("model: leaky_slope must be in (0,1)");
    }
  }
};

// One shared parameter set reused by every layer. Tensor membership depends
// on the encoder variants; visit() enumerates the active tensors in a fixed
// order that init, Adam, checkpointing, and gradient reduction all share.
struct ModelParams {
  ModelConfig config;

  Tensor item_table;

  Tensor tn_table, tn_proj_w, tn_proj_b;     // bucket/quantile TN
  Tensor tn_pos_table;                       // position TN
  Tensor tn_const_vec;                       // constant TN
  Tensor node_gate_w, node_gate_b;           // gated item/time aggregation

  Tensor te_table, te_proj_w, te_proj_b;     // bucket/quantile TE
  Tensor te_const_vec;                       // constant TE

  Tensor msg_in_w, msg_in_b, msg_out_w, msg_out_b;
  Tensor gate_in_w, gate_in_b;               // edge gates (shared if tied)
  Tensor gate_out_w, gate_out_b;

  Tensor ggnn_wz, ggnn_uz, ggnn_bz;
  Tensor ggnn_wr, ggnn_ur, ggnn_br;
  Tensor ggnn_wh, ggnn_uh, ggnn_bh;

  Tensor highway_w, highway_b;
  Tensor readout_w0, readout_w1, readout_w2, readout_w3, readout_b;
  Tensor pref_w, pref_b;

  // Fitted on training data; not trainable.
  Bucketizer<> tn_bucketizer;
  Bucketizer<> te_bucketizer;
  DiffRange tn_range;
  DiffRange te_range;

  template <class F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <class F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  std::size_t tensor_count() const {
    std::size_t n = 0;
    visit([&](const char*, const Tensor&) { ++n; });
    return n;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    visit([&](const char*, const Tensor& t) { n += t.size(); });
    return n;
  }

 private:
  template <class Self, class F>
  static void visit_impl(Self& self, F& f) {
    const ModelConfig& c = self.config;
    f("item_table", self.item_table);
    if (c.tn.uses_bucket_table()) {
      f("tn_table", self.tn_table);
      f("tn_proj_w", self.tn_proj_w);
      f("tn_proj_b", self.tn_proj_b);
    }
    if (c.tn.kind == EncoderKind::kPosition) f("tn_pos_table", self.tn_pos_table);
    if (c.tn.kind == EncoderKind::kConstant) f("tn_const_vec", self.tn_const_vec);
    if (c.tn.enabled() && c.tn.gate) {
      f("node_gate_w", self.node_gate_w);
      f("node_gate_b", self.node_gate_b);
    }
    if (c.te.uses_bucket_table()) {
      f("te_table", self.te_table);
      f("te_proj_w", self.te_proj_w);
      f("te_proj_b", self.te_proj_b);
    }
    if (c.te.kind == EncoderKind::kConstant) f("te_const_vec", self.te_const_vec);
    f("msg_in_w", self.msg_in_w);
    f("msg_in_b", self.msg_in_b);
    f("msg_out_w", self.msg_out_w);
    f("msg_out_b", self.msg_out_b);
    if (c.te.enabled() && c.te.gate) {
      f("gate_in_w", self.gate_in_w);
      f("gate_in_b", self.gate_in_b);
      if (!c.tie_direction_gates) {
        f("gate_out_w", self.gate_out_w);
        f("gate_out_b", self.gate_out_b);
      }
    }
    f("ggnn_wz", self.ggnn_wz);
    f("ggnn_uz", self.ggnn_uz);
    f("ggnn_bz", self.ggnn_bz);
    f("ggnn_wr", self.ggnn_wr);
    f("ggnn_ur", self.ggnn_ur);
    f("ggnn_br", self.ggnn_br);
    f("ggnn_wh", self.ggnn_wh);
    f("ggnn_uh", self.ggnn_uh);
    f("ggnn_bh", self.ggnn_bh);
    f("highway_w", self.highway_w);
    f("highway_b", self.highway_b);
    f("readout_w0", self.readout_w0);
    f("readout_w1", self.readout_w1);
    f("readout_w2", self.readout_w2);
    f("readout_w3", self.readout_w3);
    f("readout_b", self.readout_b);
    f("pref_w", self.pref_w);
    f("pref_b", self.pref_b);
  }
};

// Shapes for every active tensor; inactive ones stay empty.
inline ModelParams make_params(const ModelConfig& config) {
  config.validate();
  ModelParams p;
  p.config = config;
  std::size_t d = config.dim;
  p.item_table = Tensor::zeros({config.item_count, d});
  if (config.tn.uses_bucket_table()) {
    p.tn_table = Tensor::zeros({config.tn_buckets, d});
    p.tn_proj_w = Tensor::zeros({d, d});
    p.tn_proj_b = Tensor::zeros({d});
  }
  if (config.tn.kind == EncoderKind::kPosition) {
    p.tn_pos_table = Tensor::zeros({config.max_len, d});
  }
  if (config.tn.kind == EncoderKind::kConstant) {
    p.tn_const_vec = Tensor::zeros({d});
  }
  if (config.tn.enabled() && config.tn.gate) {
    p.node_gate_w = Tensor::zeros({d, 2 * d});
    p.node_gate_b = Tensor::zeros({d});
  }
  if (config.te.uses_bucket_table()) {
    p.te_table = Tensor::zeros({config.te_buckets, d});
    p.te_proj_w = Tensor::zeros({d, d});
    p.te_proj_b = Tensor::zeros({d});
  }
  if (config.te.kind == EncoderKind::kConstant) {
    p.te_const_vec = Tensor::zeros({d});
  }
  p.msg_in_w = Tensor::zeros({d, d});
  p.msg_in_b = Tensor::zeros({d});
  p.msg_out_w = Tensor::zeros({d, d});
  p.msg_out_b = Tensor::zeros({d});
  if (config.te.enabled() && config.te.gate) {
    p.gate_in_w = Tensor::zeros({d, 3 * d});
    p.gate_in_b = Tensor::zeros({d});
    if (!config.tie_direction_gates) {
      p.gate_out_w = Tensor::zeros({d, 3 * d});
      p.gate_out_b = Tensor::zeros({d});
    }
  }
  p.ggnn_wz = Tensor::zeros({d, 2 * d});
  p.ggnn_uz = Tensor::zeros({d, d});
  p.ggnn_bz = Tensor::zeros({d});
  p.ggnn_wr = Tensor::zeros({d, 2 * d});
  p.ggnn_ur = Tensor::zeros({d, d});
  p.ggnn_br = Tensor::zeros({d});
  p.ggnn_wh = Tensor::zeros({d, 2 * d});
  p.ggnn_uh = Tensor::zeros({d, d});
  p.ggnn_bh = Tensor::zeros({d});
  p.highway_w = Tensor::zeros({d, 2 * d});
  p.highway_b = Tensor::zeros({d});
  p.readout_w0 = Tensor::zeros({d});
  p.readout_w1 = Tensor::zeros({d, d});
  p.readout_w2 = Tensor::zeros({d, d});
  p.readout_w3 = Tensor::zeros({d, d});
  p.readout_b = Tensor::zeros({d});
  p.pref_w = Tensor::zeros({d, 2 * d});
  p.pref_b = Tensor::zeros({d});
  p.tn_bucketizer.bucket_count =
      config.tn.uses_bucket_table() ? config.tn_buckets : 1;
  p.te_bucketizer.bucket_count =
      config.te.uses_bucket_table() ? config.te_buckets : 1;
  return p;
}

// Every trainable value, biases included, drawn uniformly from
// [-1/sqrt(d), 1/sqrt(d)], filled in visit order from one seeded generator.
inline ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p = make_params(config);
  std::mt19937_64 rng(seed);
  double bound = 1.0 / std::sqrt(static_cast<double>(config.dim));
  std::uniform_real_distribution<double> dist(-bound, bound);
  p.visit([&](const char*, Tensor& t) {
    for (double& v : t.data) v = dist(rng);
  });
  return p;
}

// Leaf Vars for the active tensors of one forward pass, in visit order.
struct BoundParams {
  std::vector<Var> vars;
  std::vector<std::string> names;
  std::unordered_map<std::string, std::size_t> index;

  Var get(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) {
      throw ValidationError("parameter tensor '" + name +
                            "' is not active under this configuration");
    }
    return vars[it->second];
  }
};

inline BoundParams bind_params(Tape& tape, const ModelParams& params) {
  BoundParams bp;
  params.visit([&](const char* name, const Tensor& t) {
    bp.vars.push_back(tape.leaf(t));
    bp.names.emplace_back(name);
    bp.index.emplace(name, bp.vars.size() - 1);
  });
  return bp;
}

struct Forward {
  Tape tape;
  SessionGraph graph;
  BoundParams params;
  GraphBuildStats stats;
  std::vector<Var> node_init;    // v0 per graph node
  std::vector<Var> node_final;   // v^f per graph node
  std::vector<Var> star;         // star per layer, index 0 = init
  Var preference{};
  Var scores{};
  Var probs{};
  Var loss{};
};

namespace detail {

struct ForwardCtx {
  Tape& tape;
  const ModelConfig& cfg;
  const BoundParams& bp;
  const ModelParams& mp;
};

// lookup -> L2 normalize -> optional leaky ReLU -> linear, the shared
// pipeline for bucketized time embeddings.
inline Var encode_bucket_vec(ForwardCtx& ctx, const EncoderSpec& spec,
                             const char* table, const char* proj_w,
                             const char* proj_b, std::size_t bucket) {
  Var raw = ctx.tape.lookup_row(ctx.bp.get(table), bucket);
  Var normed = ctx.tape.l2_normalize(raw);
  Var activated = spec.activation
                      ? ctx.tape.leaky_relu(normed, ctx.cfg.leaky_slope)
                      : normed;
  return ctx.tape.affine(ctx.bp.get(proj_w), activated, ctx.bp.get(proj_b));
}

// Temporal node vector for one graph node, or nullopt under variant none.
inline std::optional<Var> encode_tn_node(ForwardCtx& ctx,
                                         const SessionGraph& g,
                                         std::size_t node) {
  const EncoderSpec& spec = ctx.cfg.tn;
  switch (spec.kind) {
    case EncoderKind::kNone:
      return std::nullopt;
    case EncoderKind::kBucket:
    case EncoderKind::kQuantile:
      return encode_bucket_vec(ctx, spec, "tn_table", "tn_proj_w", "tn_proj_b",
                               g.nodes[node].tn_bucket);
    case EncoderKind::kPosition: {
      // a node deduplicates sequence positions; average their encodings
      std::vector<Var> rows;
      for (std::size_t j = 0; j < g.seq_to_node.size(); ++j) {
        if (g.seq_to_node[j] == node) {
          rows.push_back(ctx.tape.lookup_row(ctx.bp.get("tn_pos_table"), j));
        }
      }
      Var sum = rows.size() == 1 ? rows[0] : ctx.tape.add_n(rows);
      return rows.size() == 1
                 ? sum
                 : ctx.tape.scale(sum, 1.0 / static_cast<double>(rows.size()));
    }
    case EncoderKind::kConstant: {
      double c = 0.0;
      std::size_t count = 0;
      for (std::size_t j = 0; j < g.seq_to_node.size(); ++j) {
        if (g.seq_to_node[j] == node) {
          c += ctx.mp.tn_range.normalize(g.seq_tn_diff[j]);
          ++count;
        }
      }
      c /= static_cast<double>(count);
      return ctx.tape.scale(ctx.bp.get("tn_const_vec"), c);
    }
  }
  return std::nullopt;
}

// Temporal edge vector, or nullopt under variant none.
inline std::optional<Var> encode_te_edge(ForwardCtx& ctx,
                                         const GraphEdge& edge) {
  const EncoderSpec& spec = ctx.cfg.te;
  switch (spec.kind) {
    case EncoderKind::kNone:
      return std::nullopt;
    case EncoderKind::kBucket:
    case EncoderKind::kQuantile:
      return encode_bucket_vec(ctx, spec, "te_table", "te_proj_w", "te_proj_b",
                               edge.te_bucket);
    case EncoderKind::kConstant:
      return ctx.tape.scale(ctx.bp.get("te_const_vec"),
                            ctx.mp.te_range.normalize(edge.interval_ms));
    case EncoderKind::kPosition:
      throw ValidationError("position encoder is invalid on edges");
  }
  return std::nullopt;
}

// Average of the gated neighbor/edge blends feeding node j from one
// direction, mapped through that direction's affine layer. An empty
// neighborhood averages to the zero vector, leaving just the bias path.
inline Var direction_message(ForwardCtx& ctx, const SessionGraph& g,
                             const std::vector<Var>& node_vecs,
                             std::size_t node, Direction dir) {
  const bool incoming = dir == Direction::kIncoming;
  const auto& edge_ids = incoming ? g.in_edges[node] : g.out_edges[node];
  const char* w_name = incoming ? "msg_in_w" : "msg_out_w";
  const char* b_name = incoming ? "msg_in_b" : "msg_out_b";
  const bool tied = ctx.cfg.tie_direction_gates;
  const char* gw_name = incoming || tied ? "gate_in_w" : "gate_out_w";
  const char* gb_name = incoming || tied ? "gate_in_b" : "gate_out_b";

  Var avg{};
  if (edge_ids.empty()) {
    avg = ctx.tape.leaf(Tensor::zeros({ctx.cfg.dim}));
  } else {
    std::vector<Var> contributions;
    contributions.reserve(edge_ids.size());
    for (std::size_t e : edge_ids) {
      const GraphEdge& edge = g.edges[e];
      std::size_t neighbor = incoming ? edge.src : edge.dst;
      Var neighbor_vec = node_vecs[neighbor];
      std::optional<Var> te_vec = encode_te_edge(ctx, edge);
      if (!te_vec) {
        contributions.push_back(neighbor_vec);
        continue;
      }
      if (ctx.cfg.te.gate) {
        // gate input order is [source; dest; te] for both directions
        Var src_vec = node_vecs[edge.src];
        Var dst_vec = node_vecs[edge.dst];
        Var gate = ctx.tape.sigmoid(ctx.tape.affine(
            ctx.bp.get(gw_name),
            ctx.tape.concat({src_vec, dst_vec, *te_vec}),
            ctx.bp.get(gb_name)));
        contributions.push_back(
            ctx.tape.gate_blend(gate, neighbor_vec, *te_vec));
      } else {
        contributions.push_back(ctx.tape.add(neighbor_vec, *te_vec));
      }
    }
    Var sum = contributions.size() == 1 ? contributions[0]
                                        : ctx.tape.add_n(contributions);
    avg = contributions.size() == 1
              ? sum
              : ctx.tape.scale(
                    sum, 1.0 / static_cast<double>(contributions.size()));
  }
  return ctx.tape.affine(ctx.bp.get(w_name), avg, ctx.bp.get(b_name));
}

}  // namespace detail

// Forward pass over a pre-built graph. Exposed separately so tests can
// permute node ids; normal callers use forward() below.
inline Forward forward_on_graph(const LabeledInstance& instance,
                                SessionGraph graph, const ModelParams& params) {
  const ModelConfig& cfg = params.config;
  cfg.validate();
  if (instance.target_item >= cfg.item_count) {
    throw ValidationError("forward: target item " +
                          std::to_string(instance.target_item) +
                          " outside vocabulary of size " +
                          std::to_string(cfg.item_count));
  }
  for (const IndexedEvent& e : instance.prefix) {
    if (e.item >= cfg.item_count) {
      throw ValidationError("forward: prefix item " + std::to_string(e.item) +
                            " outside vocabulary of size " +
                            std::to_string(cfg.item_count));
    }
  }
  if (instance.prefix.size() > cfg.max_len) {
    throw ValidationError("forward: prefix longer than max_len");
  }

  Forward fwd;
  fwd.graph = std::move(graph);
  const SessionGraph& g = fwd.graph;
  fwd.params = bind_params(fwd.tape, params);
  Tape& tape = fwd.tape;
  detail::ForwardCtx ctx{tape, cfg, fwd.params, params};

  std::size_t n_nodes = g.nodes.size();
  double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg.dim));

  // node init: unit item vector, optionally fused with the time vector
  std::vector<Var> nodes(n_nodes);
  for (std::size_t k = 0; k < n_nodes; ++k) {
    Var item_vec = tape.l2_normalize(
        tape.lookup_row(fwd.params.get("item_table"), g.nodes[k].item));
    std::optional<Var> tn_vec = detail::encode_tn_node(ctx, g, k);
    if (!tn_vec) {
      nodes[k] = item_vec;
    } else if (cfg.tn.gate) {
      Var gate = tape.sigmoid(
          tape.affine(fwd.params.get("node_gate_w"),
                      tape.concat({item_vec, *tn_vec}),
                      fwd.params.get("node_gate_b")));
      nodes[k] = tape.gate_blend(gate, item_vec, *tn_vec);
    } else {
      nodes[k] = tape.add(item_vec, *tn_vec);
    }
  }
  fwd.node_init = nodes;

  // star init: mean of all nodes
  Var star = n_nodes == 1
                 ? nodes[0]
                 : tape.scale(tape.add_n(nodes),
                              1.0 / static_cast<double>(n_nodes));
  fwd.star.push_back(star);

  for (std::size_t layer = 0; layer < cfg.layers; ++layer) {
    std::vector<Var> updated(n_nodes);
    for (std::size_t k = 0; k < n_nodes; ++k) {
      Var m_in =
          detail::direction_message(ctx, g, nodes, k, Direction::kIncoming);
      Var m_out =
          detail::direction_message(ctx, g, nodes, k, Direction::kOutgoing);
      Var m = tape.concat({m_in, m_out});
      Var v = nodes[k];
      Var z = tape.sigmoid(tape.add(
          tape.matvec(fwd.params.get("ggnn_wz"), m),
          tape.affine(fwd.params.get("ggnn_uz"), v, fwd.params.get("ggnn_bz"))));
      Var r = tape.sigmoid(tape.add(
          tape.matvec(fwd.params.get("ggnn_wr"), m),
          tape.affine(fwd.params.get("ggnn_ur"), v, fwd.params.get("ggnn_br"))));
      Var h = tape.tanh(tape.add(
          tape.matvec(fwd.params.get("ggnn_wh"), m),
          tape.affine(fwd.params.get("ggnn_uh"), tape.mul(r, v),
                      fwd.params.get("ggnn_bh"))));
      Var v_hat = tape.gate_blend(z, v, h);
      // non-parametric star mix against the previous layer's star
      Var alpha =
          tape.sigmoid(tape.scale(tape.dot(v_hat, star), inv_sqrt_d));
      updated[k] = tape.gate_blend_scalar(alpha, v_hat, star);
    }
    // star update attends over the freshly updated nodes
    std::vector<Var> dots(n_nodes);
    for (std::size_t k = 0; k < n_nodes; ++k) {
      dots[k] = tape.dot(updated[k], star);
    }
    Var beta =
        tape.softmax_scaled(tape.scale(tape.stack(dots), inv_sqrt_d), 1.0);
    star = tape.weighted_sum(beta, updated);
    fwd.star.push_back(star);
    nodes = std::move(updated);
  }

  // highway gate between the final and initial node vectors
  fwd.node_final.resize(n_nodes);
  for (std::size_t k = 0; k < n_nodes; ++k) {
    Var gate = tape.sigmoid(
        tape.affine(fwd.params.get("highway_w"),
                    tape.concat({nodes[k], fwd.node_init[k]}),
                    fwd.params.get("highway_b")));
    fwd.node_final[k] = tape.gate_blend(gate, nodes[k], fwd.node_init[k]);
  }

  // readout over the sequence view: repeated positions reuse their node
  std::size_t seq_len = g.seq_to_node.size();
  std::vector<Var> u(seq_len);
  for (std::size_t j = 0; j < seq_len; ++j) {
    u[j] = fwd.node_final[g.seq_to_node[j]];
  }
  Var u_last = u[seq_len - 1];
  Var last_term = tape.matvec(fwd.params.get("readout_w2"), u_last);
  Var star_term = tape.matvec(fwd.params.get("readout_w3"), star);
  Var bias_term = fwd.params.get("readout_b");
  std::vector<Var> gammas(seq_len);
  for (std::size_t j = 0; j < seq_len; ++j) {
    Var inner = tape.add(
        tape.matvec(fwd.params.get("readout_w1"), u[j]),
        tape.add(last_term, tape.add(star_term, bias_term)));
    gammas[j] = tape.dot(fwd.params.get("readout_w0"), tape.sigmoid(inner));
  }
  Var r = tape.weighted_sum(tape.stack(gammas), u);
  fwd.preference = tape.affine(fwd.params.get("pref_w"),
                               tape.concat({r, u_last}),
                               fwd.params.get("pref_b"));

  fwd.scores = tape.cosine_scores(fwd.preference, fwd.params.get("item_table"));
  fwd.probs = tape.softmax_scaled(fwd.scores, cfg.tau);
  fwd.loss = tape.pick_neg_log(fwd.probs, instance.target_item);
  return fwd;
}

inline Forward forward(const LabeledInstance& instance,
                       const ModelParams& params) {
  GraphBuildStats stats;
  const Bucketizer<>* tn = params.config.tn.uses_bucket_table()
                               ? &params.tn_bucketizer
                               : nullptr;
  const Bucketizer<>* te = params.config.te.uses_bucket_table()
                               ? &params.te_bucketizer
                               : nullptr;
  SessionGraph g = build_graph(instance, tn, te, &stats);
  Forward fwd = forward_on_graph(instance, std::move(g), params);
  fwd.stats = stats;
  return fwd;
}

// Mean loss over a batch plus its gradient for every active tensor, the
// analytic side of the end-to-end gradient check.
inline std::pair<double, std::vector<Tensor>> batch_loss_and_grads(
    const std::vector<LabeledInstance>& batch, const ModelParams& params) {
  if (batch.empty()) throw ValidationError("batch_loss_and_grads: empty batch");
  double inv = 1.0 / static_cast<double>(batch.size());
  std::vector<Tensor> grads;
  params.visit([&](const char*, const Tensor& t) {
    grads.push_back(Tensor::zeros(t.shape));
  });
  double total = 0.0;
  for (const LabeledInstance& inst : batch) {
    Forward fwd = forward(inst, params);
    total += fwd.tape.value(fwd.loss)[0];
    fwd.tape.backward(fwd.loss);
    for (std::size_t i = 0; i < fwd.params.vars.size(); ++i) {
      const Tensor& g = fwd.tape.grad(fwd.params.vars[i]);
      for (std::size_t k = 0; k < g.size(); ++k) grads[i][k] += g[k] * inv;
    }
  }
  return {total * inv, std::move(grads)};
}

struct ModelGradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_tensor;
  std::size_t worst_coord = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Central-difference check of the batch-mean loss against the tape
// gradients, coordinate by coordinate over every active tensor.
//
// Uses the fourth-order five-point stencil rather than the plain two-point
// quotient: coordinates whose gradient sits below the 1e-8 denominator floor
// are effectively compared in absolute terms, and for this loss the two-point
// error (rounding eps/h against truncation h^2) bottoms out above the 1e-4
// gate no matter the step.
inline ModelGradCheckReport grad_check_model(
    const std::vector<LabeledInstance>& batch, ModelParams params,
    double h = 4e-3) {
  if (!(h >= 1e-7 && h <= 1e-2)) {
    throw ValidationError("grad_check_model: step must be in [1e-7, 1e-2]");
  }
  auto [base_loss, analytic] = batch_loss_and_grads(batch, params);
  if (!std::isfinite(base_loss)) {
    throw NumericalError("grad_check_model: loss is not finite");
  }
  auto mean_loss = [&]() {
    double total = 0.0;
    for (const LabeledInstance& inst : batch) {
      Forward fwd = forward(inst, params);
      total += fwd.tape.value(fwd.loss)[0];
    }
    return total / static_cast<double>(batch.size());
  };
  ModelGradCheckReport report;
  std::size_t tensor_idx = 0;
  params.visit([&](const char* name, Tensor& t) {
    for (std::size_t k = 0; k < t.size(); ++k) {
      double saved = t[k];
      auto numeric_at = [&](double step) {
        t[k] = saved + step;
        double up1 = mean_loss();
        t[k] = saved - step;
        double down1 = mean_loss();
        t[k] = saved + 2.0 * step;
        double up2 = mean_loss();
        t[k] = saved - 2.0 * step;
        double down2 = mean_loss();
        t[k] = saved;
        return (8.0 * (up1 - down1) - (up2 - down2)) / (12.0 * step);
      };
      double a = analytic[tensor_idx][k];
      // Retry with smaller steps when the estimate looks off: a leaky-ReLU
      // kink inside the stencil vanishes once 2*step < |coordinate|, while a
      // wrong analytic gradient keeps its error at every step.
      double rel = std::numeric_limits<double>::infinity();
      double numeric = 0.0;
      for (double step : {h, h / 4.0, h / 16.0, h / 64.0}) {
        double n = numeric_at(step);
        double r = std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
        if (r < rel) {
          rel = r;
          numeric = n;
        }
        if (rel <= 5e-5) break;
      }
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_tensor = name;
        report.worst_coord = k;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
    ++tensor_idx;
  });
  return report;
}

}  // namespace tempgnn
