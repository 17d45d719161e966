#pragma once

#include <filesystem>
#include <iostream>
#include <memory>
#include <sstream>

#include "kgforge/checkpoint.hpp"
#include "kgforge/config.hpp"
#include "kgforge/features.hpp"
#include "kgforge/gcl.hpp"
#include "kgforge/kge.hpp"
#include "kgforge/manifest.hpp"
#include "kgforge/metrics.hpp"

namespace kgforge {

// The five pipeline commands. Each is a pure function of (config, input
// artifacts, seeds): re-running one reproduces its artifact hashes.

namespace detail {

inline std::string sanitize_type_name(const std::string& name) {
  std::string out = name;
  for (char& c : out)
    if (c == '/' || c == ' ' || c == '\\') c = '-';
  return out;
}

inline bool is_binary_table(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  char magic[4] = {};
  is.read(magic, 4);
  return is && std::string(magic, 4) == "KGE1";
}

}  // namespace detail

inline KnowledgeGraph load_graph_from_config(const RunConfig& cfg, std::ostream& log) {
  if (cfg.nodes_path.empty() || cfg.triples_path.empty())
    throw ConfigError("graph.nodes and graph.triples must be set");
  KnowledgeGraph g = load_graph(cfg.nodes_path, cfg.triples_path);
  log << "[kgforge] graph: " << g.num_nodes() << " nodes, " << g.num_relations()
      << " relations, " << g.num_triples() << " triples";
  if (g.duplicates_dropped)
    log << " (" << g.duplicates_dropped << " duplicate triples dropped)";
  log << "\n";
  return g;
}

// Modality tables per config: the mock provider or real dumps. Canonical
// modality order is (sequence, description).
inline std::vector<EmbeddingTable> load_modality_tables(const RunConfig& cfg,
                                                        const KnowledgeGraph& g,
                                                        std::ostream& log) {
  std::vector<EmbeddingTable> tables;
  if (cfg.embeddings_source == "mock") {
    tables = mock_provider(g, cfg.seed, cfg.embeddings_dim);
  } else {
    const std::pair<const char*, const std::string*> wanted[] = {
        {modality::kSequence, &cfg.embeddings_sequence},
        {modality::kDescription, &cfg.embeddings_description}};
    for (const auto& [name, path] : wanted) {
      if (path->empty())
        throw ConfigError(std::string("embeddings.") + name +
                          " must be set when embeddings.source = files");
      TableLoad loaded = detail::is_binary_table(*path) ? load_table_binary(*path, &g)
                                                        : load_table_tsv(*path, &g);
      if (loaded.skipped_unknown)
        log << "[kgforge] warning: " << *path << ": skipped " << loaded.skipped_unknown
            << " rows for unknown node ids\n";
      loaded.table.modality = name;
      tables.push_back(std::move(loaded.table));
    }
  }
  for (const auto& t : tables) {
    const std::size_t loaded_rows = t.rows.size();
    log << "[kgforge] modality '" << t.modality << "': dim " << t.dim << ", " << loaded_rows
        << " loaded, " << (g.num_nodes() - loaded_rows) << " random-init\n";
  }
  return tables;
}

inline FusionSpec fusion_spec_from(const RunConfig& cfg, const KnowledgeGraph& g,
                                   const std::vector<EmbeddingTable>& tables,
                                   std::string param_prefix) {
  FusionSpec spec;
  spec.method = cfg.fusion;
  for (const auto& t : tables) spec.in_dims.push_back(t.dim);
  spec.out_dim =
      cfg.fusion == FusionMethod::None ? tables.front().dim : cfg.embeddings_dim;
  spec.num_contexts = g.node_types.size();
  spec.structural_slot = cfg.fusion_structural;
  spec.num_nodes = g.num_nodes();
  spec.param_prefix = std::move(param_prefix);
  spec.validate();
  return spec;
}

// Combined z table (n x k) assembled from the per-type exports of a pretrain
// run; every node must appear in its type's table.
inline Tensor load_gcl_feature_table(const RunConfig& cfg, const KnowledgeGraph& g) {
  const std::string dir = cfg.gcl_dir_or_default();
  std::vector<EmbeddingTable> per_type;
  std::size_t k = 0;
  for (const auto& type_name : g.node_types) {
    const std::string path = dir + "/z_" + detail::sanitize_type_name(type_name) + ".bin";
    if (!std::filesystem::exists(path))
      throw DataError("missing gcl table for node type '" + type_name + "': " + path);
    TableLoad loaded = load_table_binary(path, &g);
    if (k == 0) k = loaded.table.dim;
    if (loaded.table.dim != k)
      throw DataError("gcl tables disagree on dimension in " + dir);
    per_type.push_back(std::move(loaded.table));
  }
  Tensor table = Tensor::zeros({g.num_nodes(), k});
  for (const auto& n : g.nodes) {
    const auto& t = per_type[n.type_id];
    auto it = t.rows.find(n.id);
    if (it == t.rows.end())
      throw DataError("node " + std::to_string(n.id) + " missing from gcl table for type '" +
                      g.node_types[n.type_id] + "'");
    std::copy(it->second.begin(), it->second.end(), table.data.begin() + n.id * k);
  }
  return table;
}

struct FeatureBundle {
  std::vector<EmbeddingTable> tables;  // owned storage for fused providers
  std::unique_ptr<FeatureProvider> provider;
};

// Feature source for KGE training/inference. Frozen paths materialize
// constants; unfrozen paths register trainable parameters in `store` (skipped
// when already present, e.g. after loading a checkpoint).
inline FeatureBundle build_features(const RunConfig& cfg, const KnowledgeGraph& g,
                                    ParamStore& store, std::ostream& log) {
  FeatureBundle bundle;
  if (cfg.feature_source == "fused") {
    bundle.tables = load_modality_tables(cfg, g, log);
    FusionSpec spec = fusion_spec_from(cfg, g, bundle.tables, "");
    std::vector<const EmbeddingTable*> ptrs;
    for (const auto& t : bundle.tables) ptrs.push_back(&t);
    if (cfg.freeze_features || cfg.fusion == FusionMethod::None) {
      ParamStore scratch;
      init_fusion_params(scratch, spec, cfg.seed);
      bundle.provider = std::make_unique<ConstantFeatureProvider>(
          materialize_fused_table(g, ptrs, scratch, spec, cfg.seed));
    } else {
      if (spec.method == FusionMethod::Attention
              ? !store.has(spec.pname("attention/q"))
              : !store.has(spec.pname("redaf/V")))
        init_fusion_params(store, spec, cfg.seed);
      bundle.provider =
          std::make_unique<FusedFeatureProvider>(g, std::move(ptrs), store, spec, cfg.seed);
    }
  } else {  // gcl
    Tensor table = load_gcl_feature_table(cfg, g);
    if (cfg.freeze_features) {
      bundle.provider = std::make_unique<ConstantFeatureProvider>(std::move(table));
    } else {
      if (!store.has("features/table")) store.add("features/table", std::move(table));
      bundle.provider = std::make_unique<ParamTableFeatureProvider>(store, "features/table");
    }
  }
  return bundle;
}

// ---------------------------------------------------------------------------
// split
// ---------------------------------------------------------------------------

inline int cmd_split(const RunConfig& cfg, std::ostream& log = std::cerr) {
  cfg.validate();
  ManifestWriter mf("split", cfg);
  KnowledgeGraph g = load_graph_from_config(cfg, log);
  EdgeSplit split = split_edges(g, cfg.split_ratios, cfg.seed);
  std::filesystem::create_directories(cfg.out_dir);
  const std::string path = cfg.split_path_or_default();
  save_split(split, path);
  log << "[kgforge] split: " << split.train.size() << " train / " << split.valid.size()
      << " valid / " << split.test.size() << " test -> " << path << "\n";
  mf.add_artifact("split", path);
  mf.add_input("nodes", cfg.nodes_path);
  mf.add_input("triples", cfg.triples_path);
  mf.write(cfg.out_dir + "/split.manifest.json");
  return 0;
}

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

inline int cmd_pretrain(const RunConfig& cfg, std::ostream& log = std::cerr,
                        int max_threads = 1) {
  cfg.validate();
  ManifestWriter mf("pretrain", cfg);
  KnowledgeGraph g = load_graph_from_config(cfg, log);
  std::vector<EmbeddingTable> tables = load_modality_tables(cfg, g, log);
  std::vector<const EmbeddingTable*> ptrs;
  for (const auto& t : tables) ptrs.push_back(&t);
  const std::string dir = cfg.out_dir + "/pretrain";
  std::filesystem::create_directories(dir);

  auto write_table = [&](const EmbeddingTable& t, const std::string& stem) {
    save_table_binary(t, dir + "/" + stem + ".bin");
    save_table_tsv(t, dir + "/" + stem + ".tsv");
    mf.add_artifact(stem + ".bin", dir + "/" + stem + ".bin");
    mf.add_artifact(stem + ".tsv", dir + "/" + stem + ".tsv");
  };

  if (cfg.gcl == GclMethod::None) {
    // pass-through: fused u tables exported as z
    FusionSpec spec = fusion_spec_from(cfg, g, tables, "");
    ParamStore store;
    init_fusion_params(store, spec, cfg.seed);
    Tensor u = materialize_fused_table(g, ptrs, store, spec, cfg.seed);
    for (std::size_t type_id = 0; type_id < g.node_types.size(); ++type_id) {
      EmbeddingTable zt;
      zt.modality = "gcl:" + g.node_types[type_id];
      zt.dim = spec.out_dim;
      for (u32 node : g.nodes_by_type[type_id]) {
        std::vector<double> row(spec.out_dim);
        std::copy(u.data.begin() + node * spec.out_dim,
                  u.data.begin() + (node + 1) * spec.out_dim, row.begin());
        zt.rows[node] = std::move(row);
      }
      write_table(zt, "z_" + detail::sanitize_type_name(g.node_types[type_id]));
    }
    save_checkpoint(store, dir + "/encoder.ckpt");
    mf.add_artifact("encoder.ckpt", dir + "/encoder.ckpt");
    log << "[kgforge] gcl=none: fused tables passed through as z\n";
  } else {
    GclConfig gcfg;
    gcfg.method = cfg.gcl;
    gcfg.hidden_dim = cfg.hidden_dim;
    gcfg.out_dim = cfg.dim;
    gcfg.p_mask = cfg.gcl_p_mask;
    gcfg.p_drop = cfg.gcl_p_drop;
    gcfg.grace.tau = cfg.gcl_tau;
    gcfg.grace.intra_view_negatives = cfg.gcl_intra_view;
    gcfg.optim = cfg.optim;
    gcfg.optim.epochs = cfg.gcl_epochs_or_default();

    FeatureProviderFactory factory;
    std::shared_ptr<Tensor> mean_table;
    if (cfg.fusion == FusionMethod::None) {
      FusionSpec spec = fusion_spec_from(cfg, g, tables, "");
      ParamStore scratch;
      mean_table =
          std::make_shared<Tensor>(materialize_fused_table(g, ptrs, scratch, spec, cfg.seed));
      factory = [mean_table](ParamStore&, const std::string&) {
        return std::make_unique<ConstantFeatureProvider>(*mean_table);
      };
    } else {
      factory = [&cfg, &g, &tables, &ptrs](ParamStore& job_store, const std::string& prefix)
          -> std::unique_ptr<FeatureProvider> {
        FusionSpec spec = fusion_spec_from(cfg, g, tables, prefix);
        init_fusion_params(job_store, spec, cfg.seed);
        return std::make_unique<FusedFeatureProvider>(g, ptrs, job_store, spec, cfg.seed);
      };
    }

    PretrainResult result = pretrain(g, factory, gcfg, cfg.seed, max_threads);
    for (const auto& t : result.types) {
      for (const auto& w : t.warnings) log << "[kgforge] warning: " << w << "\n";
      if (t.z.rows.empty()) continue;
      const std::string stem = "z_" + detail::sanitize_type_name(t.node_type);
      write_table(t.z, stem);
      std::ofstream curve(dir + "/curve_" + detail::sanitize_type_name(t.node_type) + ".csv",
                          std::ios::trunc);
      curve << "step,loss\n";
      for (const auto& [step, loss] : t.curve)
        curve << step << "," << format_double(loss) << "\n";
      mf.add_artifact("curve_" + detail::sanitize_type_name(t.node_type) + ".csv",
                      dir + "/curve_" + detail::sanitize_type_name(t.node_type) + ".csv");
      if (!t.curve.empty())
        log << "[kgforge] pretrain '" << t.node_type << "': " << t.curve.size()
            << " steps, loss " << format_double(t.curve.front().second) << " -> "
            << format_double(t.curve.back().second) << "\n";
    }
    save_checkpoint(result.store, dir + "/encoder.ckpt");
    mf.add_artifact("encoder.ckpt", dir + "/encoder.ckpt");
    log << "[kgforge] parameters: gcl " << result.store.total_parameters_with_prefix("gcl/")
        << "\n";
  }
  mf.add_input("nodes", cfg.nodes_path);
  mf.add_input("triples", cfg.triples_path);
  mf.write(dir + "/pretrain.manifest.json");
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

inline int cmd_train(const RunConfig& cfg, std::ostream& log = std::cerr) {
  cfg.validate();
  ManifestWriter mf("train", cfg);
  KnowledgeGraph g = load_graph_from_config(cfg, log);
  const std::string split_path = cfg.split_path_or_default();
  if (!std::filesystem::exists(split_path))
    throw DataError("split file not found: " + split_path + " (run 'kgforge split' first)");
  EdgeSplit split = load_split(split_path, g.num_triples());

  ParamStore store;
  int start_epoch = 0;
  if (!cfg.resume.empty()) {
    Checkpoint ckpt = load_checkpoint_full(cfg.resume);
    store = std::move(ckpt.store);
    if (ckpt.meta.count("epoch")) start_epoch = static_cast<int>(ckpt.meta.at("epoch").item());
    log << "[kgforge] resuming from " << cfg.resume << " at epoch " << start_epoch << "\n";
    mf.add_input("resume", cfg.resume);
  }

  FeatureBundle features = build_features(cfg, g, store, log);

  KgeTrainConfig kcfg;
  kcfg.spec.in_dim = features.provider->dim();
  kcfg.spec.dim = cfg.dim;
  kcfg.spec.num_relations = g.num_relations();
  kcfg.spec.dropout = cfg.optim.dropout;
  kcfg.optim = cfg.optim;
  kcfg.neg_ratio = cfg.neg_ratio;
  kcfg.walk_length = cfg.walk_length;
  kcfg.reg_lambda = cfg.optim.reg_lambda;
  kcfg.reg_alpha = cfg.reg_alpha;

  if (!store.has("distmult/Z")) init_kge_params(store, kcfg.spec, cfg.seed);
  log << "[kgforge] parameters: rgcn " << store.total_parameters_with_prefix("rgcn/")
      << ", distmult " << store.total_parameters_with_prefix("distmult/") << ", fusion "
      << store.total_parameters_with_prefix("fusion/") << ", features "
      << store.total_parameters_with_prefix("features/") << "\n";

  KgeTrainResult result = train_kge(g, split, *features.provider, store, kcfg, cfg.seed,
                                    start_epoch);

  const std::string dir = cfg.out_dir + "/train";
  std::filesystem::create_directories(dir);
  // best checkpoint: parameters only; last checkpoint: full optimizer state
  ParamStore best;
  best.params = result.best_params.params;
  save_checkpoint(best, dir + "/best.ckpt");
  save_checkpoint(result.last_state, dir + "/last.ckpt",
                  {{"epoch", Tensor::scalar(static_cast<double>(result.last_epoch))}});
  {
    std::ofstream os(dir + "/log.csv", std::ios::trunc);
    os << "epoch,train_loss,valid_loss,lr,best_flag\n";
    for (const auto& e : result.log)
      os << e.epoch << "," << format_double(e.train_loss) << ","
         << format_double(e.valid_loss) << "," << format_double(e.lr) << ","
         << (e.best ? 1 : 0) << "\n";
  }
  log << "[kgforge] best validation loss " << format_double(result.best_valid_loss)
      << " at epoch " << result.best_epoch << " (" << result.last_epoch << " epochs run)\n";
  mf.add_artifact("best.ckpt", dir + "/best.ckpt");
  mf.add_artifact("last.ckpt", dir + "/last.ckpt");
  mf.add_artifact("log.csv", dir + "/log.csv");
  mf.add_input("split", split_path);
  mf.add_input("nodes", cfg.nodes_path);
  mf.add_input("triples", cfg.triples_path);
  mf.note("best_epoch", std::to_string(result.best_epoch));
  mf.write(dir + "/train.manifest.json");
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

namespace detail {

// Rebuilds the inference-time model around a checkpoint: feature provider,
// spec inferred from stored shapes, entity embeddings over train edges.
struct InferenceModel {
  ParamStore store;
  FeatureBundle features;
  KgeSpec spec;
  Tensor entity_emb;
};

inline InferenceModel load_inference_model(const RunConfig& cfg, const KnowledgeGraph& g,
                                           const EdgeSplit& split, std::ostream& log) {
  InferenceModel m;
  const std::string path = cfg.checkpoint_or_default();
  m.store = load_checkpoint(path);
  m.features = build_features(cfg, g, m.store, log);
  m.spec.in_dim = m.features.provider->dim();
  m.spec.dim = cfg.dim;
  m.spec.num_relations = g.num_relations();
  m.spec.dropout = 0.0;
  if (!m.store.has("distmult/Z"))
    throw DataError("checkpoint " + path + " lacks distmult/Z; not a trained model");
  const Tensor& z = m.store.get("distmult/Z");
  if (z.shape[0] != g.num_relations() || z.shape[1] != cfg.dim)
    throw ConfigError("checkpoint " + path + " was trained with dim " +
                      std::to_string(z.shape[1]) + " and " + std::to_string(z.shape[0]) +
                      " relations; config says dim " + std::to_string(cfg.dim) + " and " +
                      std::to_string(g.num_relations()) + " relations");
  KnowledgeGraph tg = train_view(g, split);
  m.entity_emb = entity_embeddings(tg, *m.features.provider, m.store, m.spec);
  return m;
}

}  // namespace detail

inline int cmd_eval(const RunConfig& cfg, std::ostream& log = std::cerr) {
  cfg.validate();
  ManifestWriter mf("eval", cfg);
  KnowledgeGraph g = load_graph_from_config(cfg, log);
  const std::string split_path = cfg.split_path_or_default();
  if (!std::filesystem::exists(split_path))
    throw DataError("split file not found: " + split_path);
  EdgeSplit split = load_split(split_path, g.num_triples());

  detail::InferenceModel model = detail::load_inference_model(cfg, g, split, log);

  const std::vector<u32>& part = cfg.eval_split == "train" ? split.train
                                 : cfg.eval_split == "valid" ? split.valid
                                                             : split.test;
  if (part.empty()) throw DataError("eval split '" + cfg.eval_split + "' is empty");
  std::vector<Triple> positives;
  positives.reserve(part.size());
  for (u32 idx : part) positives.push_back(g.triples[idx]);

  const std::string dir = cfg.out_dir + "/eval";
  std::filesystem::create_directories(dir);
  for (int ratio : cfg.eval_ratios) {
    EvalReport report =
        evaluate(g, positives, model.entity_emb, model.store.get("distmult/Z"), ratio,
                 mix_key(cfg.seed, fnv1a64(std::string("eval")), static_cast<u64>(ratio)),
                 cfg.eval_threshold);
    const std::string report_path = dir + "/report_r" + std::to_string(ratio) + ".txt";
    const std::string csv_path = dir + "/per_relation_r" + std::to_string(ratio) + ".csv";
    save_report(report, report_path);
    save_per_relation_csv(report, g, csv_path);
    mf.add_artifact("report_r" + std::to_string(ratio), report_path);
    mf.add_artifact("per_relation_r" + std::to_string(ratio), csv_path);
    log << "[kgforge] eval 1:" << ratio << " on " << cfg.eval_split
        << ": AP " << format_double(report.ap) << ", F1 " << format_double(report.f1)
        << " (" << report.n_pos << " pos, " << report.n_neg << " neg)\n";
  }
  mf.add_input("checkpoint", cfg.checkpoint_or_default());
  mf.add_input("split", split_path);
  mf.write(dir + "/eval.manifest.json");
  return 0;
}

// ---------------------------------------------------------------------------
// export
// ---------------------------------------------------------------------------

inline int cmd_export(const RunConfig& cfg, std::ostream& log = std::cerr) {
  cfg.validate();
  ManifestWriter mf("export", cfg);
  KnowledgeGraph g = load_graph_from_config(cfg, log);
  const std::string split_path = cfg.split_path_or_default();
  if (!std::filesystem::exists(split_path))
    throw DataError("split file not found: " + split_path);
  EdgeSplit split = load_split(split_path, g.num_triples());

  detail::InferenceModel model = detail::load_inference_model(cfg, g, split, log);

  std::vector<u32> nodes;
  if (cfg.export_nodes == "all") {
    nodes.resize(g.num_nodes());
    for (u32 i = 0; i < nodes.size(); ++i) nodes[i] = i;
  } else {
    std::ifstream is(cfg.export_nodes);
    if (!is) throw DataError("cannot open node list: " + cfg.export_nodes);
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string> offenders;
    while (std::getline(is, line)) {
      ++line_no;
      auto t = trim(line);
      if (t.empty() || t.front() == '#') continue;
      const u64 id = parse_u64(t, cfg.export_nodes + " line " + std::to_string(line_no));
      if (id >= g.num_nodes())
        offenders.push_back(std::string(t));
      else
        nodes.push_back(static_cast<u32>(id));
    }
    if (!offenders.empty()) {
      std::string joined;
      for (const auto& o : offenders) joined += (joined.empty() ? "" : ", ") + o;
      throw DataError("unknown node ids in " + cfg.export_nodes + ": " + joined);
    }
  }

  EmbeddingTable out;
  out.modality = "kge:entity";
  out.dim = model.spec.dim;
  for (u32 node : nodes) {
    std::vector<double> row(out.dim);
    std::copy(model.entity_emb.data.begin() + node * out.dim,
              model.entity_emb.data.begin() + (node + 1) * out.dim, row.begin());
    out.rows[node] = std::move(row);
  }

  const std::string dir = cfg.out_dir + "/export";
  std::filesystem::create_directories(dir);
  const std::string path =
      dir + "/embeddings." + (cfg.export_format == "binary" ? "bin" : "tsv");
  if (cfg.export_format == "binary")
    save_table_binary(out, path);
  else
    save_table_tsv(out, path);
  log << "[kgforge] exported " << out.rows.size() << " embeddings -> " << path << "\n";
  mf.add_artifact("embeddings", path);
  mf.add_input("checkpoint", cfg.checkpoint_or_default());
  mf.write(dir + "/export.manifest.json");
  return 0;
}

}  // namespace kgforge
