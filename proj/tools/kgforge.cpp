// kgforge: config-driven training pipeline for heterogeneous knowledge-graph
// link prediction. Subcommands compose the stages:
//   split -> pretrain -> train -> eval / export
// Exit codes: 0 success, 2 config error, 3 data error, 4 numeric fault.

#include <cstdlib>
#include <iostream>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "kgforge/kgforge.hpp"

namespace {

struct Overrides {
  std::string config_path;
  long long seed = -1;
  int neg_ratio = -1;
  std::string fusion;
  std::string gcl;
  bool freeze_features = false;
  int dim = -1;
  std::string out;
};

kgforge::RunConfig effective_config(const Overrides& ov) {
  kgforge::RunConfig cfg = kgforge::load_config(ov.config_path);
  if (ov.seed >= 0) cfg.seed = static_cast<kgforge::u64>(ov.seed);
  if (ov.neg_ratio >= 1) {
    cfg.neg_ratio = ov.neg_ratio;
    cfg.eval_ratios = {ov.neg_ratio};
  }
  if (!ov.fusion.empty()) cfg.fusion = kgforge::fusion_method_from_string(ov.fusion);
  if (!ov.gcl.empty()) cfg.gcl = kgforge::gcl_method_from_string(ov.gcl);
  if (ov.freeze_features) cfg.freeze_features = true;
  if (ov.dim >= 1) cfg.dim = static_cast<std::size_t>(ov.dim);
  if (!ov.out.empty()) cfg.out_dir = ov.out;
  return cfg;
}

int pretrain_threads() {
  if (const char* env = std::getenv("KGFORGE_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void add_common_flags(CLI::App* cmd, Overrides& ov) {
  cmd->add_option("--config", ov.config_path, "run configuration file")->required();
  cmd->add_option("--seed", ov.seed, "override the config seed");
  cmd->add_option("--neg-ratio", ov.neg_ratio, "override the negative sampling ratio");
  cmd->add_option("--fusion", ov.fusion, "override fusion method (none|attention|redaf)");
  cmd->add_option("--gcl", ov.gcl, "override gcl method (none|dgi|ggd-paper|grace)");
  cmd->add_flag("--freeze-features", ov.freeze_features,
                "freeze the feature source during KGE training");
  cmd->add_option("--dim", ov.dim, "override the embedding dimension");
  cmd->add_option("--out", ov.out, "override the output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kgforge: multimodal knowledge-graph embedding pipeline"};
  app.require_subcommand(1);

  Overrides ov;
  CLI::App* split = app.add_subcommand("split", "split graph edges into train/valid/test");
  CLI::App* pretrain = app.add_subcommand("pretrain", "contrastive pretraining per node type");
  CLI::App* train = app.add_subcommand("train", "train the link-prediction model");
  CLI::App* eval = app.add_subcommand("eval", "evaluate a trained checkpoint");
  CLI::App* exp = app.add_subcommand("export", "export entity embeddings");
  for (CLI::App* cmd : {split, pretrain, train, eval, exp}) add_common_flags(cmd, ov);

  CLI11_PARSE(app, argc, argv);

  try {
    kgforge::RunConfig cfg = effective_config(ov);
    if (split->parsed()) return kgforge::cmd_split(cfg);
    if (pretrain->parsed()) return kgforge::cmd_pretrain(cfg, std::cerr, pretrain_threads());
    if (train->parsed()) return kgforge::cmd_train(cfg);
    if (eval->parsed()) return kgforge::cmd_eval(cfg);
    if (exp->parsed()) return kgforge::cmd_export(cfg);
  } catch (const kgforge::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const kgforge::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const kgforge::NumericFault& e) {
    std::cerr << "numeric fault: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
