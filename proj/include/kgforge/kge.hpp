#pragma once

#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "kgforge/features.hpp"
#include "kgforge/kg.hpp"
#include "kgforge/optim.hpp"
#include "kgforge/sparse.hpp"
#include "kgforge/tape.hpp"

namespace kgforge {

// Inter-type link prediction: two-layer RGCN over the heterogeneous graph,
// DistMult scoring, BCE + weighted L2 objective, GraphSAINT random-walk
// batches.

struct KgeSpec {
  std::size_t in_dim = 768;   // feature dim entering the encoder
  std::size_t dim = 128;      // RGCN widths and DistMult dim
  std::size_t num_relations = 0;
  double dropout = 0.2;
};

// Parameter names follow the checkpoint layout:
//   rgcn/layer{0,1}/rel{r}, rgcn/layer{0,1}/self, rgcn/layer{0,1}/bias,
//   distmult/Z
inline void init_kge_params(ParamStore& store, const KgeSpec& spec, u64 seed) {
  if (spec.num_relations == 0) throw ContractViolation("init_kge_params: no relations");
  auto weight = [&](const std::string& name, std::size_t r, std::size_t c) {
    SplitMix64 rng(mix_key_str(seed, name));
    store.add(name, Tensor::randn({r, c}, rng, 1.0 / std::sqrt(static_cast<double>(r))));
  };
  for (int layer = 0; layer < 2; ++layer) {
    const std::size_t in = layer == 0 ? spec.in_dim : spec.dim;
    const std::string base = "rgcn/layer" + std::to_string(layer) + "/";
    for (std::size_t r = 0; r < spec.num_relations; ++r)
      weight(base + "rel" + std::to_string(r), in, spec.dim);
    weight(base + "self", in, spec.dim);
    store.add(base + "bias", Tensor::zeros({spec.dim}));
  }
  weight("distmult/Z", spec.num_relations, spec.dim);
}

// ---------------------------------------------------------------------------
// RGCN message passing over a local node set
// ---------------------------------------------------------------------------

// Per-relation mean-normalized adjacencies in local indexing: row v gathers
// incoming r-neighbors u with weight 1/|N_r(v)|.
struct RgcnContext {
  std::size_t n_nodes = 0;
  std::vector<SparseMatrix> adj;    // one per relation (possibly empty)
  std::vector<SparseMatrix> adj_t;  // transposes for backward
  std::vector<bool> has_edges;
};

inline RgcnContext build_rgcn_context(std::size_t n_local,
                                      std::span<const Triple> local_triples,
                                      std::size_t num_relations) {
  RgcnContext ctx;
  ctx.n_nodes = n_local;
  std::vector<std::vector<std::tuple<std::size_t, std::size_t, double>>> coo(num_relations);
  std::vector<std::unordered_map<u32, double>> indeg(num_relations);
  for (const auto& t : local_triples) {
    if (t.relation >= num_relations)
      throw ContractViolation("rgcn: relation " + std::to_string(t.relation) +
                              " absent from parameters");
    indeg[t.relation][t.tail] += 1.0;
  }
  for (const auto& t : local_triples)
    coo[t.relation].emplace_back(t.tail, t.head, 1.0 / indeg[t.relation][t.tail]);
  for (std::size_t r = 0; r < num_relations; ++r) {
    ctx.has_edges.push_back(!coo[r].empty());
    ctx.adj.push_back(SparseMatrix::from_coo(n_local, n_local, std::move(coo[r])));
    ctx.adj_t.push_back(ctx.adj.back().transposed());
  }
  return ctx;
}

// h'_v = ReLU(W_self h_v + sum_r mean_{u in N_r(v)} W_r h_u + bias), twice,
// with dropout between layers in training mode.
inline Var rgcn_forward(Tape& tape, const RgcnContext& ctx, Var features,
                        ParamStore& store, const KgeSpec& spec, bool training,
                        SplitMix64& dropout_rng) {
  if (features.value().shape[0] != ctx.n_nodes)
    throw ContractViolation("rgcn_forward: feature rows do not cover the node set");
  Var h = features;
  for (int layer = 0; layer < 2; ++layer) {
    const std::string base = "rgcn/layer" + std::to_string(layer) + "/";
    Var acc = matmul(h, tape.param(store, base + "self"));
    for (std::size_t r = 0; r < spec.num_relations; ++r) {
      if (!ctx.has_edges[r]) continue;
      acc = add(acc, matmul(spmm(ctx.adj[r], ctx.adj_t[r], h),
                            tape.param(store, base + "rel" + std::to_string(r))));
    }
    h = relu(add_rowvec(acc, tape.param(store, base + "bias")));
    if (layer == 0) h = dropout(h, spec.dropout, training, dropout_rng);
  }
  return h;
}

// ---------------------------------------------------------------------------
// DistMult
// ---------------------------------------------------------------------------

// sum_d h_d * r_d * t_d for each (local) triple against local embeddings X.
inline Var distmult_scores(Var x_local, Var z, std::span<const Triple> local_triples) {
  std::vector<std::size_t> heads, rels, tails;
  heads.reserve(local_triples.size());
  rels.reserve(local_triples.size());
  tails.reserve(local_triples.size());
  for (const auto& t : local_triples) {
    heads.push_back(t.head);
    rels.push_back(t.relation);
    tails.push_back(t.tail);
  }
  Var h = gather_rows(x_local, heads);
  Var r = gather_rows(z, rels);
  Var t = gather_rows(x_local, tails);
  return row_sum(mul(mul(h, r), t));
}

// Value-level single score, for tests and inference paths.
inline double distmult_score(std::span<const double> h, std::span<const double> r,
                             std::span<const double> t) {
  if (h.size() != r.size() || r.size() != t.size())
    throw ContractViolation("distmult_score: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) s += h[i] * r[i] * t[i];
  return s;
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

// BCE-with-logits averaged over positive and negative scores, plus
// alpha * lambda * (||X||_F^2 + ||Z||_F^2). lambda and alpha are redundant
// multipliers; only their product matters.
inline Var kge_loss(Var pos_scores, Var neg_scores, Var x, Var z, double lambda,
                    double alpha) {
  const std::size_t np = pos_scores.value().size();
  const std::size_t nn = neg_scores.valid() ? neg_scores.value().size() : 0;
  if (np == 0) throw ContractViolation("kge_loss: empty positive scores");
  Var total = sum_all(softplus(neg(pos_scores)));
  if (nn > 0) total = add(total, sum_all(softplus(neg_scores)));
  Var bce = scale(total, 1.0 / static_cast<double>(np + nn));
  if (alpha == 0.0 || lambda == 0.0) return bce;
  Var reg = add(sum_all(mul(x, x)), sum_all(mul(z, z)));
  return add(bce, scale(reg, alpha * lambda));
}

// ---------------------------------------------------------------------------
// GraphSAINT random-walk batches
// ---------------------------------------------------------------------------

struct SubgraphBatch {
  std::vector<u32> nodes;      // global ids, ascending
  std::vector<Triple> triples; // induced triples, global ids
  std::vector<u32> roots;
  int walk_length = 0;
  u64 seed = 0;

  std::vector<Triple> localized(const std::unordered_map<u32, u32>& local) const {
    std::vector<Triple> out;
    out.reserve(triples.size());
    for (const auto& t : triples)
      out.push_back(Triple{local.at(t.head), t.relation, local.at(t.tail)});
    return out;
  }
};

// Roots are drawn uniformly over all nodes; each walk follows uniform
// out-edges and restarts at its root on dead ends. The batch is the induced
// subgraph on every visited node.
inline SubgraphBatch graphsaint_sample(const KnowledgeGraph& g, std::size_t num_roots,
                                       int walk_length, u64 seed) {
  if (num_roots < 1) throw ContractViolation("graphsaint_sample: num_roots must be >= 1");
  if (walk_length < 1) throw ContractViolation("graphsaint_sample: walk_length must be >= 1");
  if (g.num_triples() == 0) throw DataError("graphsaint_sample: graph has no edges");
  SubgraphBatch batch;
  batch.walk_length = walk_length;
  batch.seed = seed;
  SplitMix64 rng(mix_key(seed, fnv1a64(std::string("graphsaint"))));
  std::unordered_set<u32> visited;
  for (std::size_t w = 0; w < num_roots; ++w) {
    const u32 root = static_cast<u32>(rng.next_below(g.num_nodes()));
    batch.roots.push_back(root);
    visited.insert(root);
    u32 current = root;
    for (int step = 0; step < walk_length; ++step) {
      const auto& outs = g.out_edges[current];
      if (outs.empty()) {
        current = root;
        continue;
      }
      current = outs[rng.next_below(outs.size())].second;
      visited.insert(current);
    }
  }
  batch.nodes.assign(visited.begin(), visited.end());
  std::sort(batch.nodes.begin(), batch.nodes.end());
  for (u32 node : batch.nodes)
    for (const auto& [rel, tail] : g.out_edges[node])
      if (visited.count(tail)) batch.triples.push_back(Triple{node, rel, tail});
  return batch;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct KgeTrainConfig {
  KgeSpec spec;
  OptimConfig optim;
  int neg_ratio = 1;
  int walk_length = 10;
  double reg_lambda = 0.01;
  double reg_alpha = 1.0;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double valid_loss = 0.0;
  double lr = 0.0;
  bool best = false;
};

struct KgeTrainResult {
  ParamStore best_params;  // parameters at the lowest validation loss
  ParamStore last_state;   // full optimizer state, for resuming
  std::vector<EpochLog> log;
  int best_epoch = 0;
  int last_epoch = 0;
  double best_valid_loss = std::numeric_limits<double>::infinity();
};

// Graph restricted to the training split; message passing and batch sampling
// never see validation or test edges.
inline KnowledgeGraph train_view(const KnowledgeGraph& g, const EdgeSplit& split) {
  KnowledgeGraph view = g;
  view.triples.clear();
  for (u32 idx : split.train) view.triples.push_back(g.triples[idx]);
  view.build_indices();
  return view;
}

// Entity embeddings from a full-graph eval-mode forward over the train edges.
inline Tensor entity_embeddings(const KnowledgeGraph& train_graph,
                                FeatureProvider& features, ParamStore& store,
                                const KgeSpec& spec) {
  std::vector<u32> all(train_graph.num_nodes());
  for (u32 i = 0; i < all.size(); ++i) all[i] = i;
  RgcnContext ctx = build_rgcn_context(train_graph.num_nodes(), train_graph.triples,
                                       spec.num_relations);
  Tape tape;
  SplitMix64 rng(0);  // eval mode: dropout unused
  Var x = features.rows(tape, all);
  Var h = rgcn_forward(tape, ctx, x, store, spec, /*training=*/false, rng);
  return h.value();
}

// Sigmoid link probabilities for triples against precomputed embeddings.
inline std::vector<double> predict_links(const Tensor& entity_emb, const Tensor& z,
                                         std::span<const Triple> triples) {
  std::vector<double> out;
  out.reserve(triples.size());
  const std::size_t dim = entity_emb.shape[1];
  for (const auto& t : triples) {
    if (t.relation >= z.shape[0])
      throw DataError("predict_links: unknown relation id " + std::to_string(t.relation));
    if (t.head >= entity_emb.shape[0] || t.tail >= entity_emb.shape[0])
      throw DataError("predict_links: node id out of range");
    const double* h = entity_emb.data.data() + t.head * dim;
    const double* r = z.data.data() + t.relation * dim;
    const double* tl = entity_emb.data.data() + t.tail * dim;
    double s = 0.0;
    for (std::size_t d = 0; d < dim; ++d) s += h[d] * r[d] * tl[d];
    if (!std::isfinite(s)) throw NumericFault("predict_links: non-finite score");
    out.push_back(detail::stable_sigmoid(s));
  }
  return out;
}

namespace detail {

// Validation BCE over fixed positives and negatives, eval-mode full forward.
inline double validation_loss(const KnowledgeGraph& train_graph,
                              const std::vector<Triple>& valid_pos,
                              const std::vector<Triple>& valid_neg,
                              FeatureProvider& features, ParamStore& store,
                              const KgeSpec& spec) {
  Tensor x = entity_embeddings(train_graph, features, store, spec);
  const Tensor& z = store.get("distmult/Z");
  auto pos_scores = predict_links(x, z, valid_pos);
  auto neg_scores = predict_links(x, z, valid_neg);
  double loss = 0.0;
  for (double p : pos_scores) loss += -std::log(std::max(p, 1e-300));
  for (double p : neg_scores) loss += -std::log(std::max(1.0 - p, 1e-300));
  return loss / static_cast<double>(pos_scores.size() + neg_scores.size());
}

}  // namespace detail

// Full training loop: GraphSAINT batches over training triples, fresh
// negatives per batch, Adam under the cosine schedule with clipping,
// per-epoch validation on fixed negatives, best-checkpoint retention, early
// stopping. Resuming from (state, epoch) replays the identical schedule
// because all randomness is keyed by (seed, epoch, batch).
// `stop_after` (when >= 0) caps the epochs run in this session without
// changing the schedule's horizon, emulating an interrupted run.
inline KgeTrainResult train_kge(const KnowledgeGraph& g, const EdgeSplit& split,
                                FeatureProvider& features, ParamStore& store,
                                const KgeTrainConfig& cfg, u64 seed,
                                int start_epoch = 0, int stop_after = -1) {
  cfg.optim.validate();
  if (split.valid.empty()) throw ConfigError("train_kge: validation set is empty");
  if (split.train.empty()) throw ConfigError("train_kge: training set is empty");
  if (cfg.neg_ratio < 1) throw ConfigError("train_kge: neg_ratio must be >= 1");

  KnowledgeGraph tg = train_view(g, split);
  std::vector<Triple> valid_pos;
  valid_pos.reserve(split.valid.size());
  for (u32 idx : split.valid) valid_pos.push_back(g.triples[idx]);
  // fixed per seed, so epoch-to-epoch losses are comparable
  std::vector<Triple> valid_neg =
      sample_negatives(valid_pos, g, cfg.neg_ratio, mix_key_str(seed, "valid-negs"));

  const std::size_t batches_per_epoch =
      (split.train.size() + cfg.optim.batch_size - 1) / cfg.optim.batch_size;
  const i64 total_steps =
      static_cast<i64>(cfg.optim.epochs) * static_cast<i64>(batches_per_epoch);
  if (total_steps <= cfg.optim.warmup_steps)
    throw ConfigError("train_kge: total steps (" + std::to_string(total_steps) +
                      ") must exceed warmup (" + std::to_string(cfg.optim.warmup_steps) + ")");

  KgeTrainResult result;
  int stall = 0;
  i64 global_step = static_cast<i64>(start_epoch) * static_cast<i64>(batches_per_epoch);
  int end_epoch = cfg.optim.epochs;
  if (stop_after >= 0) end_epoch = std::min(end_epoch, start_epoch + stop_after);

  for (int epoch = start_epoch + 1; epoch <= end_epoch; ++epoch) {
    double epoch_loss = 0.0;
    std::size_t counted = 0;
    double lr = cfg.optim.learning_rate;
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      SubgraphBatch batch =
          graphsaint_sample(tg, cfg.optim.batch_size, cfg.walk_length,
                            mix_key(seed, static_cast<u64>(epoch), b, 1));
      if (batch.triples.empty()) continue;
      std::vector<Triple> negs = sample_negatives(
          batch.triples, g, cfg.neg_ratio, mix_key(seed, static_cast<u64>(epoch), b, 2));

      // local node set: batch nodes plus corrupted endpoints
      std::vector<u32> nodes = batch.nodes;
      for (const auto& t : negs) {
        nodes.push_back(t.head);
        nodes.push_back(t.tail);
      }
      std::sort(nodes.begin(), nodes.end());
      nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
      std::unordered_map<u32, u32> local;
      local.reserve(nodes.size());
      for (u32 i = 0; i < nodes.size(); ++i) local[nodes[i]] = i;

      auto localize = [&local](const std::vector<Triple>& ts) {
        std::vector<Triple> out;
        out.reserve(ts.size());
        for (const auto& t : ts)
          out.push_back(Triple{local.at(t.head), t.relation, local.at(t.tail)});
        return out;
      };
      std::vector<Triple> pos_local = localize(batch.triples);
      std::vector<Triple> neg_local = localize(negs);

      RgcnContext ctx = build_rgcn_context(nodes.size(), pos_local, cfg.spec.num_relations);
      store.zero_grads();
      Tape tape;
      SplitMix64 dropout_rng(mix_key(seed, static_cast<u64>(epoch), b, 3));
      Var x = features.rows(tape, nodes);
      Var h = rgcn_forward(tape, ctx, x, store, cfg.spec, /*training=*/true, dropout_rng);
      Var z = tape.param(store, "distmult/Z");
      Var pos_scores = distmult_scores(h, z, pos_local);
      Var neg_scores = distmult_scores(h, z, neg_local);
      Var loss = kge_loss(pos_scores, neg_scores, h, z, cfg.reg_lambda, cfg.reg_alpha);
      tape.backward(loss);
      clip_gradients(store, cfg.optim.clip_norm);
      lr = schedule_lr(global_step, cfg.optim, total_steps);
      adam_step(store, cfg.optim, lr);
      ++global_step;
      epoch_loss += loss.item();
      ++counted;
    }

    EpochLog log_entry;
    log_entry.epoch = epoch;
    log_entry.train_loss = counted ? epoch_loss / static_cast<double>(counted) : 0.0;
    log_entry.lr = lr;
    log_entry.valid_loss =
        detail::validation_loss(tg, valid_pos, valid_neg, features, store, cfg.spec);

    if (log_entry.valid_loss < result.best_valid_loss) {
      result.best_valid_loss = log_entry.valid_loss;
      result.best_epoch = epoch;
      result.best_params.params = store.params;
      log_entry.best = true;
      stall = 0;
    } else {
      ++stall;
    }
    result.log.push_back(log_entry);
    result.last_epoch = epoch;
    if (stall > cfg.optim.patience) break;
  }

  result.last_state = store;
  return result;
}

}  // namespace kgforge
