#pragma once

// Shared test fixtures: temp dirs, TSV writers, and synthetic graphs.

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "kgforge/kg.hpp"
#include "kgforge/rng.hpp"

namespace kgtest {

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    auto base = std::filesystem::temp_directory_path();
    for (int i = 0;; ++i) {
      auto p = base / ("kgforge_" + tag + "_" + std::to_string(::getpid()) + "_" +
                       std::to_string(i));
      std::error_code ec;
      if (std::filesystem::create_directory(p, ec)) {
        path_ = p;
        break;
      }
    }
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::trunc);
  os << content;
}

struct NodeSpec {
  std::string type;
  std::string subtype = "";
};

struct TripleSpec {
  kgforge::u32 head;
  std::string relation;
  kgforge::u32 tail;
};

// Writes nodes/triples TSVs into dir and loads them, so every fixture graph
// goes through the production loader.
inline kgforge::KnowledgeGraph make_graph(const TempDir& dir,
                                          const std::vector<NodeSpec>& nodes,
                                          const std::vector<TripleSpec>& triples,
                                          const std::string& prefix = "g") {
  std::string ntsv = "node_id\texternal_id\tnode_type\tsubtype\tname\n";
  for (std::size_t i = 0; i < nodes.size(); ++i)
    ntsv += std::to_string(i) + "\tX" + std::to_string(i) + "\t" + nodes[i].type + "\t" +
            nodes[i].subtype + "\tnode " + std::to_string(i) + "\n";
  std::string ttsv = "head_id\trelation_name\ttail_id\n";
  for (const auto& t : triples)
    ttsv += std::to_string(t.head) + "\t" + t.relation + "\t" + std::to_string(t.tail) + "\n";
  write_file(dir.file(prefix + "_nodes.tsv"), ntsv);
  write_file(dir.file(prefix + "_triples.tsv"), ttsv);
  return kgforge::load_graph(dir.file(prefix + "_nodes.tsv"), dir.file(prefix + "_triples.tsv"));
}

// Random heterogeneous graph: three node types, same-type and cross-type
// relations, no structure. Used where only shapes and determinism matter.
inline kgforge::KnowledgeGraph make_random_graph(const TempDir& dir, std::size_t per_type,
                                                 std::size_t n_edges, kgforge::u64 seed,
                                                 const std::string& prefix = "rand") {
  using namespace kgforge;
  SplitMix64 rng(seed);
  std::vector<NodeSpec> nodes;
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t i = 0; i < per_type; ++i)
      nodes.push_back({t == 0 ? "gene/protein" : t == 1 ? "drug" : "disease"});
  const std::vector<std::array<std::size_t, 2>> rel_endpoints = {
      {0, 0}, {1, 1}, {1, 0}, {1, 2}, {2, 0}};
  const std::vector<std::string> rel_names = {"protein_protein", "drug_drug",
                                              "drug_protein", "indication", "disease_protein"};
  std::vector<TripleSpec> triples;
  std::unordered_set<std::string> seen;
  while (triples.size() < n_edges) {
    std::size_t r = rng.next_below(rel_names.size());
    u32 h = static_cast<u32>(rel_endpoints[r][0] * per_type + rng.next_below(per_type));
    u32 t = static_cast<u32>(rel_endpoints[r][1] * per_type + rng.next_below(per_type));
    if (h == t) continue;
    std::string key = std::to_string(h) + "|" + rel_names[r] + "|" + std::to_string(t);
    if (!seen.insert(key).second) continue;
    triples.push_back({h, rel_names[r], t});
  }
  return make_graph(dir, nodes, triples, prefix);
}

}  // namespace kgtest
