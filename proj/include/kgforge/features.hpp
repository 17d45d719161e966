#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "kgforge/fusion.hpp"
#include "kgforge/kg.hpp"
#include "kgforge/modality.hpp"
#include "kgforge/tape.hpp"

namespace kgforge {

// Node features come either from a fixed table (frozen fused output, GCL z
// export, random surrogate) or via the differentiable fusion path, in which
// case gradients reach the fusion parameters. Training code only sees this
// interface.

class FeatureProvider {
 public:
  virtual ~FeatureProvider() = default;
  virtual std::size_t dim() const = 0;
  virtual bool trainable() const = 0;
  // (|nodes| x dim) feature rows on the given tape, by global node id.
  virtual Var rows(Tape& tape, std::span<const u32> nodes) = 0;
};

class ConstantFeatureProvider final : public FeatureProvider {
 public:
  explicit ConstantFeatureProvider(Tensor table) : table_(std::move(table)) {
    if (table_.rank() != 2) throw ContractViolation("feature table must be rank 2");
  }

  std::size_t dim() const override { return table_.shape[1]; }
  bool trainable() const override { return false; }

  Var rows(Tape& tape, std::span<const u32> nodes) override {
    Tensor out = Tensor::zeros({nodes.size(), table_.shape[1]});
    const std::size_t d = table_.shape[1];
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (nodes[i] >= table_.shape[0])
        throw ContractViolation("feature row out of range: node " + std::to_string(nodes[i]));
      std::copy(table_.data.begin() + nodes[i] * d,
                table_.data.begin() + (nodes[i] + 1) * d, out.data.begin() + i * d);
    }
    return tape.constant(std::move(out), "features");
  }

  const Tensor& table() const { return table_; }

 private:
  Tensor table_;
};

// A feature table registered as a parameter: rows are trainable (the
// fine-tune path for GCL-pretrained embeddings).
class ParamTableFeatureProvider final : public FeatureProvider {
 public:
  ParamTableFeatureProvider(ParamStore& store, std::string param_name)
      : store_(&store), name_(std::move(param_name)) {
    const Tensor& t = store_->get(name_);
    if (t.rank() != 2) throw ContractViolation("feature table must be rank 2");
    dim_ = t.shape[1];
  }

  std::size_t dim() const override { return dim_; }
  bool trainable() const override { return true; }

  Var rows(Tape& tape, std::span<const u32> nodes) override {
    std::vector<std::size_t> idx(nodes.begin(), nodes.end());
    return gather_rows(tape.param(*store_, name_), std::move(idx));
  }

 private:
  ParamStore* store_;
  std::string name_;
  std::size_t dim_ = 0;
};

// Recomputes fusion per node on the caller's tape so gradients flow into the
// fusion parameters in `store` (registered under spec-prefixed names).
class FusedFeatureProvider final : public FeatureProvider {
 public:
  FusedFeatureProvider(const KnowledgeGraph& graph,
                       std::vector<const EmbeddingTable*> tables, ParamStore& store,
                       FusionSpec spec, u64 seed)
      : graph_(&graph),
        tables_(std::move(tables)),
        store_(&store),
        spec_(std::move(spec)),
        seed_(seed) {
    spec_.validate();
    views_.resize(graph.num_nodes());
  }

  std::size_t dim() const override { return spec_.out_dim; }
  bool trainable() const override { return spec_.method != FusionMethod::None; }

  Var rows(Tape& tape, std::span<const u32> nodes) override {
    std::vector<Var> fused;
    fused.reserve(nodes.size());
    for (u32 node : nodes) {
      const ModalityView& view = cached_view(node);
      std::vector<Var> xs;
      xs.reserve(view.entries.size());
      for (const auto& e : view.entries)
        xs.push_back(tape.constant(Tensor::vector(e.vec), "modality"));
      FusionResult r = fuse_node(tape, xs, graph_->nodes[node].type_id, node, *store_, spec_);
      fused.push_back(r.u);
    }
    return stack_rows(fused);
  }

  const ModalityView& cached_view(u32 node) {
    if (node >= views_.size()) throw ContractViolation("node id out of range");
    if (views_[node].entries.empty()) views_[node] = get_modalities(node, tables_, seed_);
    return views_[node];
  }

 private:
  const KnowledgeGraph* graph_;
  std::vector<const EmbeddingTable*> tables_;
  ParamStore* store_;
  FusionSpec spec_;
  u64 seed_;
  std::vector<ModalityView> views_;
};

// Materializes the fused table once (scratch tapes, no gradients): the frozen
// feature path.
inline Tensor materialize_fused_table(const KnowledgeGraph& graph,
                                      const std::vector<const EmbeddingTable*>& tables,
                                      ParamStore& store, const FusionSpec& spec,
                                      u64 seed) {
  Tensor out = Tensor::zeros({graph.num_nodes(), spec.out_dim});
  for (const auto& n : graph.nodes) {
    ModalityView view = get_modalities(n.id, tables, seed);
    Tape tape;
    std::vector<Var> xs;
    for (const auto& e : view.entries)
      xs.push_back(tape.constant(Tensor::vector(e.vec), "modality"));
    FusionResult r = fuse_node(tape, xs, n.type_id, n.id, store, spec);
    std::copy(r.u.value().data.begin(), r.u.value().data.end(),
              out.data.begin() + n.id * spec.out_dim);
  }
  return out;
}

}  // namespace kgforge
