#pragma once

#include <array>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "kgforge/fusion.hpp"
#include "kgforge/gcl.hpp"
#include "kgforge/optim.hpp"
#include "kgforge/text.hpp"

namespace kgforge {

inline constexpr const char* kVersion = "0.1.0";

// Run configuration: a flat "key = value" file with '#' comments. Unknown
// keys are errors. Every key is listed in the README; CLI flags override a
// loaded file.
struct RunConfig {
  // inputs and artifact locations
  std::string nodes_path;
  std::string triples_path;
  std::string out_dir = "runs/out";
  std::string split_path;  // default: <out>/split.tsv
  std::string embeddings_source = "mock";  // mock | files
  std::string embeddings_sequence;         // table paths when source = files
  std::string embeddings_description;
  std::size_t embeddings_dim = 768;  // D: mock dim and the fusion common dim
  std::string gcl_dir;               // z tables for feature_source = gcl; default <out>/pretrain
  std::string resume;                // checkpoint to continue training from
  std::string checkpoint;            // model for eval/export; default <out>/train/best.ckpt
  std::string export_nodes = "all";  // all | path to a node-id list
  std::string export_format = "tsv"; // tsv | binary

  // pipeline composition
  FusionMethod fusion = FusionMethod::None;
  bool fusion_structural = false;
  GclMethod gcl = GclMethod::Grace;
  double gcl_tau = 0.5;
  double gcl_p_mask = 0.2;
  double gcl_p_drop = 0.2;
  bool gcl_intra_view = false;
  int gcl_epochs = -1;               // -1: use `epochs`
  std::string feature_source = "fused";  // fused | gcl
  bool freeze_features = true;

  // training and evaluation
  int neg_ratio = 1;
  std::vector<int> eval_ratios = {1};
  std::string eval_split = "test";   // train | valid | test
  double eval_threshold = 0.5;
  std::size_t dim = 128;             // k: GCL output, RGCN widths, DistMult dim
  std::size_t hidden_dim = 128;      // GCL hidden layer
  double reg_alpha = 1.0;
  int walk_length = 10;
  std::array<double, 3> split_ratios{0.6, 0.2, 0.2};
  u64 seed = 42;
  OptimConfig optim;

  std::string split_path_or_default() const {
    return split_path.empty() ? out_dir + "/split.tsv" : split_path;
  }
  std::string gcl_dir_or_default() const {
    return gcl_dir.empty() ? out_dir + "/pretrain" : gcl_dir;
  }
  std::string checkpoint_or_default() const {
    return checkpoint.empty() ? out_dir + "/train/best.ckpt" : checkpoint;
  }
  int gcl_epochs_or_default() const { return gcl_epochs < 0 ? optim.epochs : gcl_epochs; }

  void validate() const {
    optim.validate();
    if (embeddings_source != "mock" && embeddings_source != "files")
      throw ConfigError("embeddings.source must be 'mock' or 'files'");
    if (feature_source != "fused" && feature_source != "gcl")
      throw ConfigError("feature_source must be 'fused' or 'gcl'");
    if (eval_split != "train" && eval_split != "valid" && eval_split != "test")
      throw ConfigError("eval.split must be train|valid|test");
    if (eval_threshold <= 0.0 || eval_threshold >= 1.0)
      throw ConfigError("eval.threshold must lie in (0, 1)");
    if (neg_ratio < 1) throw ConfigError("neg_ratio must be >= 1");
    for (int r : eval_ratios)
      if (r < 1) throw ConfigError("eval.ratios entries must be >= 1");
    if (eval_ratios.empty()) throw ConfigError("eval.ratios must not be empty");
    if (dim == 0 || hidden_dim == 0 || embeddings_dim == 0)
      throw ConfigError("dimensions must be positive");
    if (walk_length < 1) throw ConfigError("walk_length must be >= 1");
    if (export_format != "tsv" && export_format != "binary")
      throw ConfigError("export.format must be 'tsv' or 'binary'");
    if (gcl_tau <= 0.0) throw ConfigError("gcl.tau must be positive");
    if (gcl_p_mask < 0.0 || gcl_p_mask > 1.0 || gcl_p_drop < 0.0 || gcl_p_drop > 1.0)
      throw ConfigError("gcl.p_mask and gcl.p_drop must lie in [0, 1]");
    const double rsum = split_ratios[0] + split_ratios[1] + split_ratios[2];
    if (std::abs(rsum - 1.0) > 1e-9)
      throw ConfigError("split.ratios must sum to 1, got " + format_double(rsum));
  }

  // effective configuration, for manifests
  std::map<std::string, std::string> to_map() const;
  void set(const std::string& key, const std::string& value);
};

namespace detail {

inline bool parse_bool(std::string_view v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key '" + key + "' expects true|false, got '" + std::string(v) + "'");
}

}  // namespace detail

inline void RunConfig::set(const std::string& key, const std::string& raw) {
  const std::string value(trim(raw));
  const std::string ctx = "config key '" + key + "'";
  if (key == "graph.nodes") nodes_path = value;
  else if (key == "graph.triples") triples_path = value;
  else if (key == "out") out_dir = value;
  else if (key == "split.path") split_path = value;
  else if (key == "split.ratios") {
    auto parts = split(value, ',');
    if (parts.size() != 3) throw ConfigError("split.ratios expects three comma-separated values");
    for (int i = 0; i < 3; ++i) split_ratios[i] = parse_double(trim(parts[i]), ctx);
  } else if (key == "embeddings.source") embeddings_source = value;
  else if (key == "embeddings.sequence") embeddings_sequence = value;
  else if (key == "embeddings.description") embeddings_description = value;
  else if (key == "embeddings.dim") embeddings_dim = parse_u64(value, ctx);
  else if (key == "features.gcl_dir") gcl_dir = value;
  else if (key == "features.freeze") freeze_features = detail::parse_bool(value, key);
  else if (key == "feature_source") feature_source = value;
  else if (key == "resume") resume = value;
  else if (key == "checkpoint") checkpoint = value;
  else if (key == "export.nodes") export_nodes = value;
  else if (key == "export.format") export_format = value;
  else if (key == "fusion") fusion = fusion_method_from_string(value);
  else if (key == "fusion.structural") fusion_structural = detail::parse_bool(value, key);
  else if (key == "gcl") gcl = gcl_method_from_string(value);
  else if (key == "gcl.tau") gcl_tau = parse_double(value, ctx);
  else if (key == "gcl.p_mask") gcl_p_mask = parse_double(value, ctx);
  else if (key == "gcl.p_drop") gcl_p_drop = parse_double(value, ctx);
  else if (key == "gcl.intra_view_negatives") gcl_intra_view = detail::parse_bool(value, key);
  else if (key == "gcl.epochs") gcl_epochs = static_cast<int>(parse_u64(value, ctx));
  else if (key == "neg_ratio") neg_ratio = static_cast<int>(parse_u64(value, ctx));
  else if (key == "eval.ratios") {
    eval_ratios.clear();
    for (auto part : split(value, ','))
      eval_ratios.push_back(static_cast<int>(parse_u64(trim(part), ctx)));
  } else if (key == "eval.split") eval_split = value;
  else if (key == "eval.threshold") eval_threshold = parse_double(value, ctx);
  else if (key == "dim") dim = parse_u64(value, ctx);
  else if (key == "hidden_dim") hidden_dim = parse_u64(value, ctx);
  else if (key == "reg_alpha") reg_alpha = parse_double(value, ctx);
  else if (key == "walk_length") walk_length = static_cast<int>(parse_u64(value, ctx));
  else if (key == "seed") seed = parse_u64(value, ctx);
  else if (key == "lr") optim.learning_rate = parse_double(value, ctx);
  else if (key == "batch_size") optim.batch_size = static_cast<int>(parse_u64(value, ctx));
  else if (key == "epochs") optim.epochs = static_cast<int>(parse_u64(value, ctx));
  else if (key == "dropout") optim.dropout = parse_double(value, ctx);
  else if (key == "reg_lambda") optim.reg_lambda = parse_double(value, ctx);
  else if (key == "clip_norm") optim.clip_norm = parse_double(value, ctx);
  else if (key == "warmup_steps") optim.warmup_steps = static_cast<int>(parse_u64(value, ctx));
  else if (key == "patience") optim.patience = static_cast<int>(parse_u64(value, ctx));
  else if (key == "schedule") {
    if (value != "cosine")
      throw ConfigError("schedule: only 'cosine' is available, got '" + value + "'");
    optim.schedule = LrSchedule::CosineAnnealing;
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

inline std::map<std::string, std::string> RunConfig::to_map() const {
  std::map<std::string, std::string> m;
  m["graph.nodes"] = nodes_path;
  m["graph.triples"] = triples_path;
  m["out"] = out_dir;
  m["split.path"] = split_path_or_default();
  m["split.ratios"] = format_double(split_ratios[0]) + "," + format_double(split_ratios[1]) +
                      "," + format_double(split_ratios[2]);
  m["embeddings.source"] = embeddings_source;
  m["embeddings.sequence"] = embeddings_sequence;
  m["embeddings.description"] = embeddings_description;
  m["embeddings.dim"] = std::to_string(embeddings_dim);
  m["features.gcl_dir"] = gcl_dir_or_default();
  m["features.freeze"] = freeze_features ? "true" : "false";
  m["feature_source"] = feature_source;
  m["resume"] = resume;
  m["checkpoint"] = checkpoint_or_default();
  m["export.nodes"] = export_nodes;
  m["export.format"] = export_format;
  m["fusion"] = to_string(fusion);
  m["fusion.structural"] = fusion_structural ? "true" : "false";
  m["gcl"] = to_string(gcl);
  m["gcl.tau"] = format_double(gcl_tau);
  m["gcl.p_mask"] = format_double(gcl_p_mask);
  m["gcl.p_drop"] = format_double(gcl_p_drop);
  m["gcl.intra_view_negatives"] = gcl_intra_view ? "true" : "false";
  m["gcl.epochs"] = std::to_string(gcl_epochs_or_default());
  m["neg_ratio"] = std::to_string(neg_ratio);
  {
    std::string rs;
    for (std::size_t i = 0; i < eval_ratios.size(); ++i) {
      if (i) rs += ",";
      rs += std::to_string(eval_ratios[i]);
    }
    m["eval.ratios"] = rs;
  }
  m["eval.split"] = eval_split;
  m["eval.threshold"] = format_double(eval_threshold);
  m["dim"] = std::to_string(dim);
  m["hidden_dim"] = std::to_string(hidden_dim);
  m["reg_alpha"] = format_double(reg_alpha);
  m["walk_length"] = std::to_string(walk_length);
  m["seed"] = std::to_string(seed);
  m["lr"] = format_double(optim.learning_rate);
  m["batch_size"] = std::to_string(optim.batch_size);
  m["epochs"] = std::to_string(optim.epochs);
  m["dropout"] = format_double(optim.dropout);
  m["reg_lambda"] = format_double(optim.reg_lambda);
  m["clip_norm"] = format_double(optim.clip_norm);
  m["warmup_steps"] = std::to_string(optim.warmup_steps);
  m["patience"] = std::to_string(optim.patience);
  m["schedule"] = "cosine";
  return m;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  RunConfig cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    auto eq = t.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError(path + " line " + std::to_string(line_no) +
                        ": expected 'key = value'");
    try {
      cfg.set(std::string(trim(t.substr(0, eq))), std::string(trim(t.substr(eq + 1))));
    } catch (const ConfigError& e) {
      throw ConfigError(path + " line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw ConfigError(path + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cfg;
}

}  // namespace kgforge
