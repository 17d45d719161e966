#pragma once

#include <atomic>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

#include "kgforge/features.hpp"
#include "kgforge/kg.hpp"
#include "kgforge/optim.hpp"
#include "kgforge/sparse.hpp"
#include "kgforge/tape.hpp"

namespace kgforge {

// Self-supervised pretraining of per-node-type GCN encoders on homogeneous
// subgraphs. Three objectives: DGI (summary contrast), GGD as described here
// (edge-reconstruction BCE, hence the "ggd-paper" name), and GRACE (two-view
// InfoNCE). Exports contrastively refined embeddings z per node type.

enum class GclMethod { None, Dgi, GgdPaper, Grace };

inline GclMethod gcl_method_from_string(const std::string& s) {
  if (s == "none") return GclMethod::None;
  if (s == "dgi") return GclMethod::Dgi;
  if (s == "ggd-paper") return GclMethod::GgdPaper;
  if (s == "grace") return GclMethod::Grace;
  throw ConfigError("unknown gcl method '" + s + "' (none|dgi|ggd-paper|grace)");
}

inline std::string to_string(GclMethod m) {
  switch (m) {
    case GclMethod::None: return "none";
    case GclMethod::Dgi: return "dgi";
    case GclMethod::GgdPaper: return "ggd-paper";
    case GclMethod::Grace: return "grace";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Augmentation: independent feature masking and edge dropping.
// ---------------------------------------------------------------------------

struct GraphView {
  std::vector<std::pair<u32, u32>> edges;  // surviving edges
  std::vector<u32> masked_nodes;           // rows zeroed in the feature matrix
  Tensor features;                         // masked copy (when features given)
  double p_mask = 0.0;
  double p_drop = 0.0;
  u64 seed = 0;
};

// Nodes are visited in id order, then edges in input order, so a seed fully
// determines the view.
inline GraphView augment(std::size_t n_nodes, const std::vector<std::pair<u32, u32>>& edges,
                         const Tensor* features, double p_mask, double p_drop, u64 seed) {
  if (p_mask < 0.0 || p_mask > 1.0 || p_drop < 0.0 || p_drop > 1.0)
    throw ContractViolation("augment: probabilities must lie in [0, 1]");
  GraphView view;
  view.p_mask = p_mask;
  view.p_drop = p_drop;
  view.seed = seed;
  SplitMix64 rng(mix_key(seed, fnv1a64(std::string("augment"))));
  for (u32 i = 0; i < n_nodes; ++i)
    if (rng.next_coin(p_mask)) view.masked_nodes.push_back(i);
  for (const auto& e : edges)
    if (!rng.next_coin(p_drop)) view.edges.push_back(e);
  if (features) {
    view.features = *features;
    const std::size_t d = features->shape[1];
    for (u32 i : view.masked_nodes)
      std::fill(view.features.data.begin() + i * d,
                view.features.data.begin() + (i + 1) * d, 0.0);
  }
  return view;
}

inline GraphView augment(const KnowledgeGraph& g, const Tensor& features, double p_mask,
                         double p_drop, u64 seed) {
  std::vector<std::pair<u32, u32>> edges;
  edges.reserve(g.num_triples());
  for (const auto& t : g.triples) edges.emplace_back(t.head, t.tail);
  return augment(g.num_nodes(), edges, &features, p_mask, p_drop, seed);
}

// 0/1 row mask as a dense matrix, for applying a view's feature mask on-tape.
inline Tensor row_mask_matrix(std::size_t n, std::size_t d, const std::vector<u32>& masked) {
  Tensor m = Tensor::full({n, d}, 1.0);
  for (u32 i : masked)
    std::fill(m.data.begin() + i * d, m.data.begin() + (i + 1) * d, 0.0);
  return m;
}

// ---------------------------------------------------------------------------
// GCN encoder: H = ReLU(A ReLU(A X W1 + b1) W2 + b2) with
// A = D^-1/2 (A_sym + I) D^-1/2 over symmetrized edges. An empty edge set
// degenerates to A = I (self-loop-only propagation).
// ---------------------------------------------------------------------------

inline SparseMatrix normalized_adjacency(std::size_t n,
                                         const std::vector<std::pair<u32, u32>>& edges) {
  std::vector<std::pair<u32, u32>> sym;
  sym.reserve(edges.size() * 2 + n);
  for (const auto& [a, b] : edges) {
    if (a >= n || b >= n) throw ContractViolation("normalized_adjacency: node out of range");
    sym.emplace_back(a, b);
    sym.emplace_back(b, a);
  }
  for (u32 i = 0; i < n; ++i) sym.emplace_back(i, i);  // self loops
  std::sort(sym.begin(), sym.end());
  sym.erase(std::unique(sym.begin(), sym.end()), sym.end());

  std::vector<double> degree(n, 0.0);
  for (const auto& [a, b] : sym) degree[a] += 1.0;

  std::vector<std::tuple<std::size_t, std::size_t, double>> coo;
  coo.reserve(sym.size());
  for (const auto& [a, b] : sym)
    coo.emplace_back(a, b, 1.0 / std::sqrt(degree[a] * degree[b]));
  return SparseMatrix::from_coo(n, n, std::move(coo));
}

struct GclEncoderSpec {
  std::size_t in_dim = 768;
  std::size_t hidden_dim = 128;
  std::size_t out_dim = 128;
};

inline void init_gcl_encoder(ParamStore& store, const std::string& prefix,
                             const GclEncoderSpec& spec, u64 seed) {
  auto weight = [&](const std::string& name, std::size_t r, std::size_t c) {
    SplitMix64 rng(mix_key_str(seed, prefix + name));
    store.add(prefix + name,
              Tensor::randn({r, c}, rng, 1.0 / std::sqrt(static_cast<double>(r))));
  };
  weight("enc/W1", spec.in_dim, spec.hidden_dim);
  store.add(prefix + "enc/b1", Tensor::zeros({spec.hidden_dim}));
  weight("enc/W2", spec.hidden_dim, spec.out_dim);
  store.add(prefix + "enc/b2", Tensor::zeros({spec.out_dim}));
}

// `a` is symmetric, so it serves as its own transpose in spmm.
inline Var gcn_encode(Tape& tape, const SparseMatrix& a, Var x, ParamStore& store,
                      const std::string& prefix) {
  Var h1 = relu(add_rowvec(matmul(spmm(a, a, x), tape.param(store, prefix + "enc/W1")),
                           tape.param(store, prefix + "enc/b1")));
  return relu(add_rowvec(matmul(spmm(a, a, h1), tape.param(store, prefix + "enc/W2")),
                         tape.param(store, prefix + "enc/b2")));
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// DGI: sigmoid(mean readout) as the summary, dot-product discriminator,
// noise-contrastive BCE. Uninformative scores give ln 2.
inline Var dgi_loss(Tape& tape, Var h_real, Var h_corrupt) {
  (void)tape;
  Var s = sigmoid(col_mean(h_real));
  Var real_scores = matmul(h_real, s);
  Var corrupt_scores = matmul(h_corrupt, s);
  return scale(add(mean_all(softplus(neg(real_scores))),
                   mean_all(softplus(corrupt_scores))),
               0.5);
}

// GGD as the paper describes it: edge-reconstruction BCE over dot-product
// logits, averaged over all scored pairs (so the uninformative point is ln 2).
inline Var ggd_loss(Tape& tape, Var h, const std::vector<std::pair<u32, u32>>& pos_edges,
                    const std::vector<std::pair<u32, u32>>& neg_edges) {
  (void)tape;
  if (pos_edges.empty()) throw ContractViolation("ggd_loss: empty positive edge set");
  auto pair_scores = [&](const std::vector<std::pair<u32, u32>>& pairs) {
    std::vector<std::size_t> lhs, rhs;
    lhs.reserve(pairs.size());
    rhs.reserve(pairs.size());
    for (const auto& [i, j] : pairs) {
      lhs.push_back(i);
      rhs.push_back(j);
    }
    return row_sum(mul(gather_rows(h, lhs), gather_rows(h, rhs)));
  };
  Var total = sum_all(softplus(neg(pair_scores(pos_edges))));
  std::size_t count = pos_edges.size();
  if (!neg_edges.empty()) {
    total = add(total, sum_all(softplus(pair_scores(neg_edges))));
    count += neg_edges.size();
  }
  return scale(total, 1.0 / static_cast<double>(count));
}

// Uniform non-edges (directed, no self pairs), rejection-sampled against the
// given edge set.
inline std::vector<std::pair<u32, u32>> sample_non_edges(
    std::size_t n_nodes, const std::vector<std::pair<u32, u32>>& edges,
    std::size_t count, SplitMix64& rng) {
  if (n_nodes < 2) throw DataError("sample_non_edges: need at least two nodes");
  std::unordered_set<u64> edge_set;
  edge_set.reserve(edges.size() * 2);
  for (const auto& [a, b] : edges) edge_set.insert((static_cast<u64>(a) << 32) | b);
  std::vector<std::pair<u32, u32>> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    bool emitted = false;
    for (int attempt = 0; attempt < 1000; ++attempt) {
      const u32 i = static_cast<u32>(rng.next_below(n_nodes));
      const u32 j = static_cast<u32>(rng.next_below(n_nodes));
      if (i == j) continue;
      if (edge_set.count((static_cast<u64>(i) << 32) | j)) continue;
      out.emplace_back(i, j);
      emitted = true;
      break;
    }
    if (!emitted) throw DataError("sample_non_edges: graph too dense to sample non-edges");
  }
  return out;
}

struct GraceHead {
  double tau = 0.5;
  bool intra_view_negatives = false;
};

inline void init_grace_head(ParamStore& store, const std::string& prefix, std::size_t k,
                            u64 seed) {
  auto weight = [&](const std::string& name, std::size_t r, std::size_t c) {
    SplitMix64 rng(mix_key_str(seed, prefix + name));
    store.add(prefix + name,
              Tensor::randn({r, c}, rng, 1.0 / std::sqrt(static_cast<double>(r))));
  };
  weight("proj/W1", k, k);
  store.add(prefix + "proj/b1", Tensor::zeros({k}));
  weight("proj/W2", k, k);
  store.add(prefix + "proj/b2", Tensor::zeros({k}));
}

namespace detail {

inline Var grace_project(Tape& tape, Var h, ParamStore& store, const std::string& prefix) {
  Var p = relu(add_rowvec(matmul(h, tape.param(store, prefix + "proj/W1")),
                          tape.param(store, prefix + "proj/b1")));
  return add_rowvec(matmul(p, tape.param(store, prefix + "proj/W2")),
                    tape.param(store, prefix + "proj/b2"));
}

// per-anchor InfoNCE terms: -sim(i,i) + logsumexp_j denominator(i, j)
inline Var grace_direction(Tape& tape, Var pn_anchor, Var pn_other, double tau,
                           bool intra_view) {
  Var cross = scale(matmul_nt(pn_anchor, pn_other), 1.0 / tau);
  Var denom_input = cross;
  if (intra_view) {
    const std::size_t n = pn_anchor.value().shape[0];
    Var self_sim = scale(matmul_nt(pn_anchor, pn_anchor), 1.0 / tau);
    // mask the i==i self term out of the denominator
    Tensor mask = Tensor::zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) mask.at(i, i) = -1e9;
    denom_input = hconcat(cross, add(self_sim, tape.constant(std::move(mask), "diag_mask")));
  }
  return sub(row_logsumexp(denom_input), diag(cross));
}

}  // namespace detail

// GRACE: project both views, L2-normalize (cosine similarity), InfoNCE with
// cross-view negatives (intra-view negatives opt-in), symmetrized.
inline Var grace_loss(Tape& tape, Var h1, Var h2, ParamStore& store,
                      const std::string& prefix, const GraceHead& head) {
  if (head.tau <= 0.0) throw ConfigError("grace temperature must be positive");
  if (h1.value().shape != h2.value().shape)
    throw ContractViolation("grace_loss: views must cover the same node set");
  const std::size_t n = h1.value().shape[0];
  Var p1 = row_l2_normalize(detail::grace_project(tape, h1, store, prefix));
  Var p2 = row_l2_normalize(detail::grace_project(tape, h2, store, prefix));
  Var l12 = detail::grace_direction(tape, p1, p2, head.tau, head.intra_view_negatives);
  Var l21 = detail::grace_direction(tape, p2, p1, head.tau, head.intra_view_negatives);
  return scale(add(sum_all(l12), sum_all(l21)), 1.0 / (2.0 * static_cast<double>(n)));
}

// Jensen-Shannon divergence between two normalized histograms over a shared
// support. Bounded in [0, ln 2]; differentiable at strictly positive inputs.
inline Var jsd_loss(Tape& tape, Var p, Var q) {
  (void)tape;
  if (p.value().shape != q.value().shape)
    throw ContractViolation("jsd_loss: distributions must share support");
  auto check_normalized = [](const Tensor& t, const char* which) {
    double sum = 0.0;
    for (double v : t.data) {
      if (v < 0.0)
        throw ContractViolation(std::string("jsd_loss: ") + which + " has negative mass");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw ContractViolation(std::string("jsd_loss: ") + which + " is not normalized");
  };
  check_normalized(p.value(), "P");
  check_normalized(q.value(), "Q");
  Var m = scale(add(p, q), 0.5);
  return scale(add(kl_div(p, m), kl_div(q, m)), 0.5);
}

// ---------------------------------------------------------------------------
// Pretraining driver
// ---------------------------------------------------------------------------

struct GclConfig {
  GclMethod method = GclMethod::Grace;
  std::size_t hidden_dim = 128;
  std::size_t out_dim = 128;  // k
  double p_mask = 0.2;
  double p_drop = 0.2;
  GraceHead grace;
  OptimConfig optim;  // constant base LR; one full-batch step per epoch
};

struct PretrainTypeResult {
  std::string node_type;
  EmbeddingTable z;  // rows keyed by global node id, tag "gcl:<type>"
  std::vector<std::pair<i64, double>> curve;  // (step, loss)
  bool identity_fallback = false;             // no same-type edges
  bool trained = true;                        // false when the objective had nothing to fit
  std::vector<std::string> warnings;
};

struct PretrainResult {
  ParamStore store;  // all per-type parameter bundles, prefix "gcl/<type>/"
  std::vector<PretrainTypeResult> types;
};

// Builds a FeatureProvider bound to a job-private store; `prefix` namespaces
// any parameters the provider registers (trainable fusion).
using FeatureProviderFactory =
    std::function<std::unique_ptr<FeatureProvider>(ParamStore&, const std::string& prefix)>;

namespace detail {

inline PretrainTypeResult pretrain_one_type(const KnowledgeGraph& g,
                                            const std::string& type_name,
                                            const FeatureProviderFactory& make_features,
                                            const GclConfig& cfg, u64 seed,
                                            ParamStore& store) {
  PretrainTypeResult result;
  result.node_type = type_name;
  const std::string prefix = "gcl/" + type_name + "/";
  const u64 job_key = mix_key(seed, fnv1a64(type_name));

  HomogeneousSubgraph sub = homogeneous_subgraph(g, type_name);
  const std::size_t n = sub.graph.num_nodes();
  if (n == 0) {
    result.trained = false;
    result.warnings.push_back("node type '" + type_name + "' has no nodes; skipped");
    return result;
  }

  std::vector<std::pair<u32, u32>> edges;
  edges.reserve(sub.graph.num_triples());
  for (const auto& t : sub.graph.triples) edges.emplace_back(t.head, t.tail);
  if (edges.empty()) {
    result.identity_fallback = true;
    result.warnings.push_back("node type '" + type_name +
                              "' has no same-type edges; using identity propagation");
  }

  auto provider = make_features(store, prefix);
  GclEncoderSpec enc_spec{provider->dim(), cfg.hidden_dim, cfg.out_dim};
  init_gcl_encoder(store, prefix, enc_spec, job_key);
  if (cfg.method == GclMethod::Grace)
    init_grace_head(store, prefix, cfg.out_dim, job_key);

  const SparseMatrix a_full = normalized_adjacency(n, edges);
  const bool can_train = !(cfg.method == GclMethod::GgdPaper && edges.empty());
  if (!can_train) {
    result.trained = false;
    result.warnings.push_back("ggd-paper needs edges; encoder left at initialization for '" +
                              type_name + "'");
  }

  double best_loss = std::numeric_limits<double>::infinity();
  int stall = 0;
  for (int epoch = 1; can_train && epoch <= cfg.optim.epochs; ++epoch) {
    store.zero_grads();
    // views and adjacencies must outlive the tape (spmm keeps pointers)
    SparseMatrix a1, a2;
    Tape tape;
    Var x = provider->rows(tape, sub.parent_ids);
    Var loss;
    switch (cfg.method) {
      case GclMethod::Grace: {
        GraphView v1 = augment(n, edges, nullptr, cfg.p_mask, cfg.p_drop,
                               mix_key(job_key, static_cast<u64>(epoch), 1));
        GraphView v2 = augment(n, edges, nullptr, cfg.p_mask, cfg.p_drop,
                               mix_key(job_key, static_cast<u64>(epoch), 2));
        a1 = normalized_adjacency(n, v1.edges);
        a2 = normalized_adjacency(n, v2.edges);
        Var x1 = mul(x, tape.constant(row_mask_matrix(n, provider->dim(), v1.masked_nodes)));
        Var x2 = mul(x, tape.constant(row_mask_matrix(n, provider->dim(), v2.masked_nodes)));
        Var h1 = gcn_encode(tape, a1, x1, store, prefix);
        Var h2 = gcn_encode(tape, a2, x2, store, prefix);
        loss = grace_loss(tape, h1, h2, store, prefix, cfg.grace);
        break;
      }
      case GclMethod::Dgi: {
        Var h_real = gcn_encode(tape, a_full, x, store, prefix);
        SplitMix64 rng(mix_key(job_key, static_cast<u64>(epoch), 3));
        auto perm = random_permutation(n, rng);
        Var x_corrupt = gather_rows(x, perm);
        Var h_corrupt = gcn_encode(tape, a_full, x_corrupt, store, prefix);
        loss = dgi_loss(tape, h_real, h_corrupt);
        break;
      }
      case GclMethod::GgdPaper: {
        Var h = gcn_encode(tape, a_full, x, store, prefix);
        SplitMix64 rng(mix_key(job_key, static_cast<u64>(epoch), 4));
        auto negs = sample_non_edges(n, edges, edges.size(), rng);
        loss = ggd_loss(tape, h, edges, negs);
        break;
      }
      case GclMethod::None:
        throw ContractViolation("pretrain: method 'none' is a pass-through, not a trainer");
    }
    tape.backward(loss);
    clip_gradients(store, cfg.optim.clip_norm);
    adam_step(store, cfg.optim);
    result.curve.emplace_back(epoch, loss.item());

    if (loss.item() < best_loss) {
      best_loss = loss.item();
      stall = 0;
    } else if (++stall > cfg.optim.patience) {
      break;
    }
  }

  // export z on the un-augmented graph
  Tape tape;
  Var x = provider->rows(tape, sub.parent_ids);
  Var h = gcn_encode(tape, a_full, x, store, prefix);
  result.z.modality = "gcl:" + type_name;
  result.z.dim = cfg.out_dim;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> zrow(cfg.out_dim);
    for (std::size_t j = 0; j < cfg.out_dim; ++j) zrow[j] = h.value().at(i, j);
    result.z.rows[sub.parent_ids[i]] = std::move(zrow);
  }
  return result;
}

}  // namespace detail

// One encoder per node type, trained on that type's homogeneous subgraph.
// Jobs are independent (private parameter bundles and seeded streams) and fan
// out across up to `max_threads` workers; results and the merged store do not
// depend on the thread schedule.
inline PretrainResult pretrain(const KnowledgeGraph& g,
                               const FeatureProviderFactory& make_features,
                               const GclConfig& cfg, u64 seed, int max_threads = 1) {
  cfg.optim.validate();
  if (cfg.method == GclMethod::None)
    throw ContractViolation("pretrain: method 'none' is handled by the caller");

  const std::size_t n_types = g.node_types.size();
  std::vector<ParamStore> stores(n_types);
  std::vector<PretrainTypeResult> results(n_types);

  std::vector<std::size_t> jobs(n_types);
  for (std::size_t i = 0; i < n_types; ++i) jobs[i] = i;

  const int workers = std::max(1, std::min<int>(max_threads, static_cast<int>(n_types)));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t j = next.fetch_add(1);
      if (j >= jobs.size()) return;
      const std::size_t type_id = jobs[j];
      results[type_id] = detail::pretrain_one_type(g, g.node_types[type_id], make_features,
                                                   cfg, seed, stores[type_id]);
    }
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  PretrainResult out;
  for (std::size_t i = 0; i < n_types; ++i) {
    for (auto& [name, t] : stores[i].params) out.store.params.emplace(name, std::move(t));
    for (auto& [name, t] : stores[i].opt_m) out.store.opt_m.emplace(name, std::move(t));
    for (auto& [name, t] : stores[i].opt_v) out.store.opt_v.emplace(name, std::move(t));
    out.types.push_back(std::move(results[i]));
  }
  return out;
}

}  // namespace kgforge
