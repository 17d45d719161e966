#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kgforge/modality.hpp"
#include "kgforge/tape.hpp"

namespace kgforge {

// Fusion of per-node modality embeddings into one unified vector. Three
// methods: plain mean ("none"), attention over learned projections, and
// ReDAF temperature-gated softmax weighting. Whichever method runs, the
// weighted combination is averaged with the unweighted member mean at the
// end; for the mean method that final step is the identity.

enum class FusionMethod { None, Attention, Redaf };

inline FusionMethod fusion_method_from_string(const std::string& s) {
  if (s == "none") return FusionMethod::None;
  if (s == "attention") return FusionMethod::Attention;
  if (s == "redaf") return FusionMethod::Redaf;
  throw ConfigError("unknown fusion method '" + s + "' (none|attention|redaf)");
}

inline std::string to_string(FusionMethod m) {
  switch (m) {
    case FusionMethod::None: return "none";
    case FusionMethod::Attention: return "attention";
    case FusionMethod::Redaf: return "redaf";
  }
  return "?";
}

struct FusionSpec {
  FusionMethod method = FusionMethod::None;
  std::size_t out_dim = 768;             // D, the common space
  std::vector<std::size_t> in_dims;      // d_i per modality, table order
  std::size_t num_contexts = 1;          // ReDAF temperature slots (node types)
  bool structural_slot = false;          // ReDAF {S} member
  std::size_t num_nodes = 0;             // structural table rows
  std::string param_prefix;              // "" for a shared bundle, "gcl/<type>/" per job

  std::string pname(const std::string& suffix) const { return param_prefix + "fusion/" + suffix; }

  void validate() const {
    if (in_dims.empty()) throw ContractViolation("FusionSpec: no modalities");
    if (method == FusionMethod::Redaf) {
      for (auto d : in_dims)
        if (d != out_dim)
          throw ConfigError("redaf fusion requires all modality dims equal to the "
                            "common dim " + std::to_string(out_dim));
      if (num_contexts == 0) throw ContractViolation("FusionSpec: no contexts");
    }
    if (method == FusionMethod::None) {
      for (auto d : in_dims)
        if (d != in_dims[0])
          throw ConfigError("mean fusion requires equal modality dims");
    }
  }
};

// Registers fusion parameters under "fusion/...". Weight draws are keyed by
// parameter name so layouts are reproducible per (spec, seed).
inline void init_fusion_params(ParamStore& store, const FusionSpec& spec, u64 seed) {
  spec.validate();
  switch (spec.method) {
    case FusionMethod::None:
      break;
    case FusionMethod::Attention: {
      for (std::size_t m = 0; m < spec.in_dims.size(); ++m) {
        const std::string name = spec.pname("attention/W" + std::to_string(m));
        SplitMix64 rng(mix_key_str(seed, name));
        store.add(name, Tensor::randn({spec.out_dim, spec.in_dims[m]}, rng,
                                      1.0 / std::sqrt(static_cast<double>(spec.in_dims[m]))));
      }
      const std::string qname = spec.pname("attention/q");
      SplitMix64 rng(mix_key_str(seed, qname));
      store.add(qname, Tensor::randn({spec.out_dim}, rng, 0.1));
      break;
    }
    case FusionMethod::Redaf: {
      const std::string vname = spec.pname("redaf/V");
      SplitMix64 rng_v(mix_key_str(seed, vname));
      store.add(vname, Tensor::randn({spec.out_dim}, rng_v, 0.1));
      store.add(spec.pname("redaf/zeta"), Tensor::zeros({spec.num_contexts}));
      if (spec.structural_slot) {
        const std::string sname = spec.pname("redaf/S");
        SplitMix64 rng_s(mix_key_str(seed, sname));
        store.add(sname,
                  Tensor::randn({spec.num_nodes, spec.out_dim}, rng_s,
                                1.0 / std::sqrt(static_cast<double>(spec.out_dim))));
      }
      break;
    }
  }
}

struct FusedVar {
  Var u;                     // weighted combination, dim D
  Var weights;               // per-member weights on the simplex
  std::vector<Var> members;  // what the weights multiplied (projections for attention)
};

namespace detail {

inline Var weighted_sum(const std::vector<Var>& members, Var weights) {
  Var acc = scale_by(members[0], element(weights, 0));
  for (std::size_t m = 1; m < members.size(); ++m)
    acc = add(acc, scale_by(members[m], element(weights, m)));
  return acc;
}

inline Var member_mean(const std::vector<Var>& members) {
  Var acc = members[0];
  for (std::size_t m = 1; m < members.size(); ++m) acc = add(acc, members[m]);
  return scale(acc, 1.0 / static_cast<double>(members.size()));
}

}  // namespace detail

// Mean fusion: the "none" baseline. Weights are reported as 1/M.
inline FusedVar fuse_mean(Tape& tape, const std::vector<Var>& xs) {
  if (xs.empty()) throw ContractViolation("fuse_mean: empty view");
  FusedVar out;
  out.members = xs;
  out.u = detail::member_mean(xs);
  out.weights = tape.constant(
      Tensor::full({xs.size()}, 1.0 / static_cast<double>(xs.size())), "mean_weights");
  return out;
}

// Attention fusion: project each modality into the common space, softmax the
// query scores, and take the weighted sum of projections.
inline FusedVar fuse_attention(Tape& tape, const std::vector<Var>& xs,
                               ParamStore& store, const FusionSpec& spec) {
  if (xs.empty()) throw ContractViolation("fuse_attention: empty view");
  Var q = tape.param(store, spec.pname("attention/q"));
  FusedVar out;
  std::vector<Var> logits;
  out.members.reserve(xs.size());
  for (std::size_t m = 0; m < xs.size(); ++m) {
    Var h = matmul(tape.param(store, spec.pname("attention/W" + std::to_string(m))), xs[m]);
    logits.push_back(dot(q, h));
    out.members.push_back(std::move(h));
  }
  out.weights = softmax(concat(logits));
  out.u = detail::weighted_sum(out.members, out.weights);
  return out;
}

// ReDAF: score each member by <V, tanh(v_m)> / sigma(zeta_ctx), softmax into
// weights, and combine the members themselves. The optional structural member
// is a learnable per-node vector appended to the modality list.
inline FusedVar fuse_redaf(Tape& tape, const std::vector<Var>& xs, u32 context,
                           ParamStore& store, const FusionSpec& spec, u32 node) {
  if (xs.empty()) throw ContractViolation("fuse_redaf: empty view");
  Var V = tape.param(store, spec.pname("redaf/V"));
  Var zeta = tape.param(store, spec.pname("redaf/zeta"));
  if (context >= zeta.value().size())
    throw ContractViolation("fuse_redaf: context id out of range");
  Var temperature = sigmoid(element(zeta, context));

  FusedVar out;
  out.members = xs;
  if (spec.structural_slot)
    out.members.push_back(row(tape.param(store, spec.pname("redaf/S")), node));

  std::vector<Var> scores;
  scores.reserve(out.members.size());
  for (const Var& v : out.members)
    scores.push_back(div_by(dot(V, tanh_op(v)), temperature));

  out.weights = softmax(concat(scores));
  out.u = detail::weighted_sum(out.members, out.weights);
  return out;
}

// Final balancing step: average the weighted combination with the unweighted
// member mean. Identity for the mean method.
inline Var finalize_unified(const FusedVar& fused, FusionMethod method) {
  if (method == FusionMethod::None) return fused.u;
  return scale(add(fused.u, detail::member_mean(fused.members)), 0.5);
}

struct FusionResult {
  Var u;
  Var weights;
};

// One node through the configured fusion path, on the caller's tape. xs are
// the node's modality vectors (constants or differentiable leaves).
inline FusionResult fuse_node(Tape& tape, const std::vector<Var>& xs, u32 context,
                              u32 node, ParamStore& store, const FusionSpec& spec) {
  spec.validate();
  FusedVar f;
  switch (spec.method) {
    case FusionMethod::None:
      f = fuse_mean(tape, xs);
      break;
    case FusionMethod::Attention:
      f = fuse_attention(tape, xs, store, spec);
      break;
    case FusionMethod::Redaf:
      f = fuse_redaf(tape, xs, context, store, spec, node);
      break;
  }
  return {finalize_unified(f, spec.method), f.weights};
}

// Value-level record for inspection and reports.
struct FusedEmbedding {
  Tensor u;
  std::vector<double> weights;
  FusionMethod method = FusionMethod::None;
};

// Convenience wrapper: runs one node's view through fusion on a scratch tape.
inline FusedEmbedding fuse_view(const ModalityView& view, u32 context,
                                ParamStore& store, const FusionSpec& spec) {
  Tape tape;
  std::vector<Var> xs;
  xs.reserve(view.entries.size());
  for (const auto& e : view.entries)
    xs.push_back(tape.constant(Tensor::vector(e.vec), "modality"));
  FusionResult r = fuse_node(tape, xs, context, view.node, store, spec);
  FusedEmbedding out;
  out.u = r.u.value();
  out.weights = r.weights.value().data;
  out.method = spec.method;
  return out;
}

}  // namespace kgforge
