#pragma once

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "kgforge/kg.hpp"
#include "kgforge/rng.hpp"
#include "kgforge/tensor.hpp"
#include "kgforge/text.hpp"

namespace kgforge {

// Per-modality embedding tables keyed by dense node id. These carry the
// precomputed LM outputs (or their mock surrogate); nothing here runs a
// language model.

namespace modality {
inline constexpr const char* kSequence = "sequence";
inline constexpr const char* kDescription = "description";
inline constexpr const char* kStructural = "structural";
}  // namespace modality

struct EmbeddingTable {
  std::string modality;
  std::size_t dim = 768;
  std::map<u32, std::vector<double>> rows;  // ordered: deterministic serialization

  bool has(u32 node) const { return rows.count(node) != 0; }
};

enum class Provenance { Loaded, RandomInit };

struct ModalityEntry {
  std::string modality;
  std::vector<double> vec;
  Provenance provenance = Provenance::Loaded;
};

struct ModalityView {
  u32 node = 0;
  std::vector<ModalityEntry> entries;  // fixed order: the order tables were given

  std::size_t count() const { return entries.size(); }
};

// Deterministic fill for a missing attribute: N(0, 1/sqrt(dim)) keyed on
// (seed, node, modality), so every call returns the same vector and distinct
// (node, modality) pairs get independent streams.
inline std::vector<double> random_fill(u64 seed, u32 node, const std::string& modality,
                                       std::size_t dim) {
  SplitMix64 rng(mix_key(seed, fnv1a64(modality), node));
  const double stddev = 1.0 / std::sqrt(static_cast<double>(dim));
  std::vector<double> v(dim);
  for (auto& x : v) x = stddev * rng.next_gaussian();
  return v;
}

// One vector per table, in table order; missing rows are filled from the
// keyed generator and tagged RandomInit.
inline ModalityView get_modalities(u32 node,
                                   const std::vector<const EmbeddingTable*>& tables,
                                   u64 seed) {
  ModalityView view;
  view.node = node;
  if (tables.empty()) throw ContractViolation("get_modalities: no tables given");
  for (const EmbeddingTable* t : tables) {
    ModalityEntry e;
    e.modality = t->modality;
    auto it = t->rows.find(node);
    if (it != t->rows.end()) {
      e.vec = it->second;
      e.provenance = Provenance::Loaded;
    } else {
      e.vec = random_fill(seed, node, t->modality, t->dim);
      e.provenance = Provenance::RandomInit;
    }
    view.entries.push_back(std::move(e));
  }
  return view;
}

// ---------------------------------------------------------------------------
// TSV format:
//   header: node_id <TAB> dim=<D> <TAB> modality=<name>
//   rows:   node_id <TAB> v0,v1,...,v{D-1}
// Binary format ("KGE1"): magic, u32 tag length, tag bytes, u32 dim,
//   u64 row count, then (u64 node id, f64 * dim) records.
// ---------------------------------------------------------------------------

struct TableLoad {
  EmbeddingTable table;
  u64 skipped_unknown = 0;  // rows referencing nodes absent from the graph
};

inline TableLoad load_table_tsv(const std::string& path,
                                const KnowledgeGraph* graph = nullptr) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open embedding table: " + path);
  TableLoad out;
  std::string line;
  if (!std::getline(is, line)) throw DataError(path + ": empty embedding table");
  {
    auto cols = split(trim(line), '\t');
    if (cols.size() != 3 || trim(cols[1]).rfind("dim=", 0) != 0 ||
        trim(cols[2]).rfind("modality=", 0) != 0)
      throw DataError(path + ": bad header; expected 'node_id<TAB>dim=<D><TAB>modality=<name>'");
    out.table.dim = parse_u64(trim(cols[1]).substr(4), path + " header");
    out.table.modality = std::string(trim(cols[2]).substr(9));
  }
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = path + " line " + std::to_string(line_no);
    auto cols = split(line, '\t');
    if (cols.size() != 2) throw DataError(where + ": expected 'node_id<TAB>values'");
    const u32 node = static_cast<u32>(parse_u64(trim(cols[0]), where));
    auto vals = split(cols[1], ',');
    if (vals.size() != out.table.dim)
      throw DataError(where + ": node " + std::to_string(node) + " has dimension " +
                      std::to_string(vals.size()) + ", expected " +
                      std::to_string(out.table.dim));
    if (graph && node >= graph->num_nodes()) {
      ++out.skipped_unknown;
      continue;
    }
    std::vector<double> v(out.table.dim);
    for (std::size_t i = 0; i < vals.size(); ++i)
      v[i] = parse_double(trim(vals[i]), where);
    for (double x : v)
      if (!std::isfinite(x))
        throw DataError(where + ": non-finite value for node " + std::to_string(node));
    out.table.rows[node] = std::move(v);
  }
  return out;
}

inline void save_table_tsv(const EmbeddingTable& t, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write embedding table: " + path);
  os << "node_id\tdim=" << t.dim << "\tmodality=" << t.modality << "\n";
  for (const auto& [node, v] : t.rows) {
    os << node << '\t';
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) os << ',';
      os << format_double(v[i]);
    }
    os << '\n';
  }
}

inline TableLoad load_table_binary(const std::string& path,
                                   const KnowledgeGraph* graph = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open embedding table: " + path);
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "KGE1")
    throw DataError(path + ": bad embedding table magic");
  auto read_u32 = [&is, &path] {
    u32 v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is) throw DataError(path + ": truncated embedding table");
    return v;
  };
  auto read_u64 = [&is, &path] {
    u64 v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is) throw DataError(path + ": truncated embedding table");
    return v;
  };
  TableLoad out;
  const u32 tag_len = read_u32();
  out.table.modality.resize(tag_len);
  is.read(out.table.modality.data(), tag_len);
  out.table.dim = read_u32();
  const u64 count = read_u64();
  for (u64 i = 0; i < count; ++i) {
    const u64 node = read_u64();
    std::vector<double> v(out.table.dim);
    is.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!is) throw DataError(path + ": truncated embedding table");
    if (graph && node >= graph->num_nodes()) {
      ++out.skipped_unknown;
      continue;
    }
    out.table.rows[static_cast<u32>(node)] = std::move(v);
  }
  return out;
}

inline void save_table_binary(const EmbeddingTable& t, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write embedding table: " + path);
  os.write("KGE1", 4);
  const u32 tag_len = static_cast<u32>(t.modality.size());
  os.write(reinterpret_cast<const char*>(&tag_len), sizeof(tag_len));
  os.write(t.modality.data(), tag_len);
  const u32 dim = static_cast<u32>(t.dim);
  os.write(reinterpret_cast<const char*>(&dim), sizeof(dim));
  const u64 count = t.rows.size();
  os.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (const auto& [node, v] : t.rows) {
    const u64 nid = node;
    os.write(reinterpret_cast<const char*>(&nid), sizeof(nid));
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  if (!os) throw DataError("embedding table write failed: " + path);
}

// Fully populated unit-norm tables for the default modalities; the test
// surrogate for real LM dumps.
inline std::vector<EmbeddingTable> mock_provider(const KnowledgeGraph& g, u64 seed,
                                                 std::size_t dim) {
  if (dim == 0) throw ContractViolation("mock_provider: dim must be positive");
  std::vector<EmbeddingTable> tables;
  for (const char* name : {modality::kSequence, modality::kDescription}) {
    EmbeddingTable t;
    t.modality = name;
    t.dim = dim;
    for (const auto& n : g.nodes) {
      auto v = random_fill(seed, n.id, name, dim);
      double norm = 0.0;
      for (double x : v) norm += x * x;
      norm = std::sqrt(norm);
      if (norm == 0.0) norm = 1.0;
      for (auto& x : v) x /= norm;
      t.rows[n.id] = std::move(v);
    }
    tables.push_back(std::move(t));
  }
  return tables;
}

}  // namespace kgforge
