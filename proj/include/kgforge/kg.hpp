#pragma once

#include <array>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "kgforge/rng.hpp"
#include "kgforge/text.hpp"

namespace kgforge {

// Heterogeneous knowledge-graph store. Node types and relations are interned
// strings; the three canonical biomedical types get named constants but any
// type label is accepted.

namespace node_type {
inline constexpr const char* kGeneProtein = "gene/protein";
inline constexpr const char* kDrug = "drug";
inline constexpr const char* kDisease = "disease";
}  // namespace node_type

struct NodeRecord {
  u32 id = 0;
  std::string external_id;
  u32 type_id = 0;
  std::string subtype;
  std::string display_name;
};

struct Triple {
  u32 head = 0;
  u32 relation = 0;
  u32 tail = 0;

  bool operator==(const Triple&) const = default;
};

struct TripleHash {
  std::size_t operator()(const Triple& t) const {
    u64 h = 0xcbf29ce484222325ull;
    auto mix = [&h](u64 v) {
      h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    };
    mix(t.head);
    mix(t.relation);
    mix(t.tail);
    return static_cast<std::size_t>(h);
  }
};

struct KnowledgeGraph {
  std::vector<NodeRecord> nodes;
  std::vector<std::string> node_types;                 // interned type names
  std::vector<std::string> relations;                  // interned relation names
  std::vector<std::pair<u32, u32>> relation_types;     // relation -> (head type, tail type)
  std::vector<Triple> triples;

  // Indices, rebuilt by build_indices().
  std::vector<std::vector<std::pair<u32, u32>>> out_edges;  // node -> (relation, tail)
  std::vector<std::vector<std::pair<u32, u32>>> in_edges;   // node -> (relation, head)
  std::vector<std::vector<u32>> nodes_by_type;
  std::unordered_set<Triple, TripleHash> triple_set;

  u64 duplicates_dropped = 0;

  std::size_t num_nodes() const { return nodes.size(); }
  std::size_t num_relations() const { return relations.size(); }
  std::size_t num_triples() const { return triples.size(); }

  u32 intern_type(const std::string& name) {
    for (u32 i = 0; i < node_types.size(); ++i)
      if (node_types[i] == name) return i;
    node_types.push_back(name);
    return static_cast<u32>(node_types.size() - 1);
  }

  std::optional<u32> find_type(const std::string& name) const {
    for (u32 i = 0; i < node_types.size(); ++i)
      if (node_types[i] == name) return i;
    return std::nullopt;
  }

  std::optional<u32> find_relation(const std::string& name) const {
    for (u32 i = 0; i < relations.size(); ++i)
      if (relations[i] == name) return i;
    return std::nullopt;
  }

  bool contains(const Triple& t) const { return triple_set.count(t) != 0; }

  void build_indices() {
    out_edges.assign(nodes.size(), {});
    in_edges.assign(nodes.size(), {});
    nodes_by_type.assign(node_types.size(), {});
    triple_set.clear();
    triple_set.reserve(triples.size() * 2);
    for (const auto& n : nodes) nodes_by_type[n.type_id].push_back(n.id);
    for (const auto& t : triples) {
      out_edges[t.head].emplace_back(t.relation, t.tail);
      in_edges[t.tail].emplace_back(t.relation, t.head);
      triple_set.insert(t);
    }
  }
};

// ---------------------------------------------------------------------------
// TSV load / save
//
// nodes.tsv:   node_id <TAB> external_id <TAB> node_type <TAB> subtype <TAB> name
// triples.tsv: head_id <TAB> relation_name <TAB> tail_id
// Both carry one header row.
// ---------------------------------------------------------------------------

inline KnowledgeGraph load_graph(const std::string& nodes_path,
                                 const std::string& triples_path) {
  KnowledgeGraph g;

  std::ifstream nf(nodes_path);
  if (!nf) throw DataError("cannot open node file: " + nodes_path);
  std::string line;
  std::size_t line_no = 0;
  bool header = true;
  std::vector<bool> seen;
  while (std::getline(nf, line)) {
    ++line_no;
    if (header) {
      header = false;
      continue;
    }
    if (trim(line).empty()) continue;
    auto cols = split(line, '\t');
    const std::string where = nodes_path + " line " + std::to_string(line_no);
    if (cols.size() != 5)
      throw DataError(where + ": expected 5 tab-separated columns, got " +
                      std::to_string(cols.size()));
    NodeRecord rec;
    rec.id = static_cast<u32>(parse_u64(trim(cols[0]), where));
    rec.external_id = std::string(trim(cols[1]));
    rec.type_id = g.intern_type(std::string(trim(cols[2])));
    rec.subtype = std::string(trim(cols[3]));
    rec.display_name = std::string(trim(cols[4]));
    if (rec.id >= seen.size()) seen.resize(rec.id + 1, false);
    if (seen[rec.id]) throw DataError(where + ": duplicate node id " + std::to_string(rec.id));
    seen[rec.id] = true;
    if (rec.id >= g.nodes.size()) g.nodes.resize(rec.id + 1);
    g.nodes[rec.id] = std::move(rec);
  }
  for (std::size_t i = 0; i < seen.size(); ++i)
    if (!seen[i])
      throw DataError(nodes_path + ": node ids must be dense 0..n-1; id " +
                      std::to_string(i) + " is missing");
  // (type, external id) uniqueness
  {
    std::unordered_set<std::string> keys;
    for (const auto& n : g.nodes) {
      std::string key = std::to_string(n.type_id) + "\x1f" + n.external_id;
      if (!keys.insert(key).second)
        throw DataError(nodes_path + ": duplicate (node_type, external_id) pair: (" +
                        g.node_types[n.type_id] + ", " + n.external_id + ")");
    }
  }

  std::ifstream tf(triples_path);
  if (!tf) throw DataError("cannot open triple file: " + triples_path);
  line_no = 0;
  header = true;
  std::unordered_set<Triple, TripleHash> dedup;
  while (std::getline(tf, line)) {
    ++line_no;
    if (header) {
      header = false;
      continue;
    }
    if (trim(line).empty()) continue;
    auto cols = split(line, '\t');
    const std::string where = triples_path + " line " + std::to_string(line_no);
    if (cols.size() != 3)
      throw DataError(where + ": expected 3 tab-separated columns, got " +
                      std::to_string(cols.size()));
    Triple t;
    t.head = static_cast<u32>(parse_u64(trim(cols[0]), where));
    t.tail = static_cast<u32>(parse_u64(trim(cols[2]), where));
    if (t.head >= g.nodes.size())
      throw DataError(where + ": unknown head node id " + std::to_string(t.head));
    if (t.tail >= g.nodes.size())
      throw DataError(where + ": unknown tail node id " + std::to_string(t.tail));
    const std::string rel_name(trim(cols[1]));
    if (auto rid = g.find_relation(rel_name)) {
      t.relation = *rid;
    } else {
      t.relation = static_cast<u32>(g.relations.size());
      g.relations.push_back(rel_name);
      g.relation_types.emplace_back(g.nodes[t.head].type_id, g.nodes[t.tail].type_id);
    }
    const auto expected = g.relation_types[t.relation];
    const auto got = std::make_pair(g.nodes[t.head].type_id, g.nodes[t.tail].type_id);
    if (got != expected)
      throw DataError(where + ": relation '" + rel_name + "' connects (" +
                      g.node_types[got.first] + " -> " + g.node_types[got.second] +
                      ") but was previously seen as (" + g.node_types[expected.first] +
                      " -> " + g.node_types[expected.second] + ")");
    if (!dedup.insert(t).second) {
      ++g.duplicates_dropped;
      continue;
    }
    g.triples.push_back(t);
  }
  g.build_indices();
  return g;
}

inline void save_graph(const KnowledgeGraph& g, const std::string& nodes_path,
                       const std::string& triples_path) {
  std::ofstream nf(nodes_path, std::ios::trunc);
  if (!nf) throw DataError("cannot write node file: " + nodes_path);
  nf << "node_id\texternal_id\tnode_type\tsubtype\tname\n";
  for (const auto& n : g.nodes)
    nf << n.id << '\t' << n.external_id << '\t' << g.node_types[n.type_id] << '\t'
       << n.subtype << '\t' << n.display_name << '\n';

  std::ofstream tf(triples_path, std::ios::trunc);
  if (!tf) throw DataError("cannot write triple file: " + triples_path);
  tf << "head_id\trelation_name\ttail_id\n";
  for (const auto& t : g.triples)
    tf << t.head << '\t' << g.relations[t.relation] << '\t' << t.tail << '\n';
}

// ---------------------------------------------------------------------------
// Edge splits
// ---------------------------------------------------------------------------

struct EdgeSplit {
  std::vector<u32> train, valid, test;  // triple indices into graph.triples
  u64 seed = 0;
  std::array<double, 3> ratios{0.6, 0.2, 0.2};
};

// Rounded partition sizes for (train, valid); test takes the remainder.
inline std::pair<std::size_t, std::size_t> split_sizes(std::size_t n,
                                                       const std::array<double, 3>& ratios) {
  double sum = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(sum - 1.0) > 1e-9)
    throw ConfigError("split ratios must sum to 1, got " + format_double(sum));
  for (double r : ratios)
    if (r <= 0.0) throw ConfigError("split ratios must be positive");
  std::size_t n_train = static_cast<std::size_t>(std::llround(ratios[0] * static_cast<double>(n)));
  std::size_t n_valid = static_cast<std::size_t>(std::llround(ratios[1] * static_cast<double>(n)));
  n_train = std::min(n_train, n);
  n_valid = std::min(n_valid, n - n_train);
  return {n_train, n_valid};
}

inline EdgeSplit split_edges(const KnowledgeGraph& g, std::array<double, 3> ratios,
                             u64 seed) {
  const std::size_t n = g.num_triples();
  const auto [n_train, n_valid] = split_sizes(n, ratios);
  SplitMix64 rng(mix_key(seed, fnv1a64(std::string("edge-split"))));
  std::vector<std::size_t> perm = random_permutation(n, rng);

  EdgeSplit s;
  s.seed = seed;
  s.ratios = ratios;
  for (std::size_t i = 0; i < n; ++i) {
    const u32 idx = static_cast<u32>(perm[i]);
    if (i < n_train)
      s.train.push_back(idx);
    else if (i < n_train + n_valid)
      s.valid.push_back(idx);
    else
      s.test.push_back(idx);
  }
  return s;
}

inline void save_split(const EdgeSplit& s, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write split file: " + path);
  os << "# seed = " << s.seed << "\n";
  os << "# ratios = " << format_double(s.ratios[0]) << "," << format_double(s.ratios[1])
     << "," << format_double(s.ratios[2]) << "\n";
  // One line per triple index, ascending, so the file is a deterministic
  // function of the partition.
  std::vector<std::pair<u32, const char*>> rows;
  rows.reserve(s.train.size() + s.valid.size() + s.test.size());
  for (u32 i : s.train) rows.emplace_back(i, "train");
  for (u32 i : s.valid) rows.emplace_back(i, "valid");
  for (u32 i : s.test) rows.emplace_back(i, "test");
  std::sort(rows.begin(), rows.end());
  for (const auto& [idx, part] : rows) os << idx << '\t' << part << '\n';
}

inline EdgeSplit load_split(const std::string& path, std::size_t expected_triples) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open split file: " + path);
  EdgeSplit s;
  std::string line;
  std::size_t line_no = 0;
  std::vector<bool> seen(expected_triples, false);
  while (std::getline(is, line)) {
    ++line_no;
    auto t = trim(line);
    if (t.empty()) continue;
    const std::string where = path + " line " + std::to_string(line_no);
    if (t.front() == '#') {
      auto body = trim(t.substr(1));
      if (body.rfind("seed", 0) == 0) {
        auto eq = body.find('=');
        if (eq != std::string_view::npos) s.seed = parse_u64(trim(body.substr(eq + 1)), where);
      } else if (body.rfind("ratios", 0) == 0) {
        auto eq = body.find('=');
        if (eq != std::string_view::npos) {
          auto parts = split(trim(body.substr(eq + 1)), ',');
          if (parts.size() == 3)
            for (int i = 0; i < 3; ++i) s.ratios[i] = parse_double(trim(parts[i]), where);
        }
      }
      continue;
    }
    auto cols = split(t, '\t');
    if (cols.size() != 2) throw DataError(where + ": expected 'index<TAB>part'");
    const u32 idx = static_cast<u32>(parse_u64(trim(cols[0]), where));
    if (idx >= expected_triples)
      throw DataError(where + ": triple index " + std::to_string(idx) + " out of range");
    if (seen[idx]) throw DataError(where + ": duplicate triple index " + std::to_string(idx));
    seen[idx] = true;
    auto part = trim(cols[1]);
    if (part == "train")
      s.train.push_back(idx);
    else if (part == "valid")
      s.valid.push_back(idx);
    else if (part == "test")
      s.test.push_back(idx);
    else
      throw DataError(where + ": unknown split part '" + std::string(part) + "'");
  }
  for (std::size_t i = 0; i < expected_triples; ++i)
    if (!seen[i])
      throw DataError(path + ": triple index " + std::to_string(i) + " missing from split");
  return s;
}

// ---------------------------------------------------------------------------
// Homogeneous subgraph extraction
// ---------------------------------------------------------------------------

struct HomogeneousSubgraph {
  KnowledgeGraph graph;
  std::vector<u32> parent_ids;  // new node id -> parent node id
};

inline HomogeneousSubgraph homogeneous_subgraph(const KnowledgeGraph& g,
                                                const std::string& type_name) {
  auto tid = g.find_type(type_name);
  if (!tid) throw DataError("unknown node type: " + type_name);

  HomogeneousSubgraph out;
  out.graph.node_types = g.node_types;
  out.graph.relations = g.relations;
  out.graph.relation_types = g.relation_types;

  std::vector<u32> new_id(g.num_nodes(), static_cast<u32>(-1));
  for (const auto& n : g.nodes) {
    if (n.type_id != *tid) continue;
    NodeRecord rec = n;
    rec.id = static_cast<u32>(out.graph.nodes.size());
    new_id[n.id] = rec.id;
    out.parent_ids.push_back(n.id);
    out.graph.nodes.push_back(std::move(rec));
  }
  for (const auto& t : g.triples) {
    if (g.nodes[t.head].type_id != *tid || g.nodes[t.tail].type_id != *tid) continue;
    out.graph.triples.push_back(Triple{new_id[t.head], t.relation, new_id[t.tail]});
  }
  out.graph.build_indices();
  return out;
}

// ---------------------------------------------------------------------------
// Negative sampling (filtered, type-compatible)
// ---------------------------------------------------------------------------

inline constexpr int kNegativeSampleRetries = 100;

// For each positive, `ratio` corrupted triples: heads or tails replaced (p=1/2
// each) by a uniform draw over nodes whose type matches the relation's
// endpoint type. Corruptions present anywhere in the full graph are rejected
// and resampled; kNegativeSampleRetries failures abort.
inline std::vector<Triple> sample_negatives(std::span<const Triple> positives,
                                            const KnowledgeGraph& g, int ratio,
                                            u64 seed) {
  if (ratio < 1) throw ContractViolation("sample_negatives: ratio must be >= 1");
  if (g.nodes_by_type.empty())
    throw ContractViolation("sample_negatives: graph indices not built");
  std::vector<Triple> out;
  out.reserve(positives.size() * static_cast<std::size_t>(ratio));
  for (std::size_t i = 0; i < positives.size(); ++i) {
    const Triple& pos = positives[i];
    for (int j = 0; j < ratio; ++j) {
      SplitMix64 rng(mix_key(seed, i, static_cast<u64>(j)));
      bool emitted = false;
      for (int attempt = 0; attempt < kNegativeSampleRetries; ++attempt) {
        Triple cand = pos;
        const bool corrupt_head = rng.next_coin(0.5);
        const auto [head_type, tail_type] = g.relation_types[pos.relation];
        const auto& pool = g.nodes_by_type[corrupt_head ? head_type : tail_type];
        if (pool.empty())
          throw DataError("negative sampling: no candidate nodes for relation '" +
                          g.relations[pos.relation] + "'");
        const u32 pick = pool[rng.next_below(pool.size())];
        if (corrupt_head)
          cand.head = pick;
        else
          cand.tail = pick;
        if (g.contains(cand)) continue;
        out.push_back(cand);
        emitted = true;
        break;
      }
      if (!emitted)
        throw DataError("negative sampling exhausted after " +
                        std::to_string(kNegativeSampleRetries) +
                        " retries for relation '" + g.relations[pos.relation] + "'");
    }
  }
  return out;
}

}  // namespace kgforge
