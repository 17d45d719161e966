#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "kgforge/modality.hpp"
#include "support/fixtures.hpp"

using namespace kgforge;
using kgtest::TempDir;

namespace {

EmbeddingTable small_table(std::size_t dim, std::vector<u32> nodes, u64 seed) {
  EmbeddingTable t;
  t.modality = modality::kSequence;
  t.dim = dim;
  for (u32 n : nodes) t.rows[n] = random_fill(seed, n, t.modality, dim);
  return t;
}

}  // namespace

TEST_CASE("tsv table round trip", "[modality]") {
  TempDir dir("mod_tsv");
  auto t = small_table(16, {0, 1, 5}, 3);
  save_table_tsv(t, dir.file("seq.tsv"));
  auto loaded = load_table_tsv(dir.file("seq.tsv"));
  CHECK(loaded.table.modality == t.modality);
  CHECK(loaded.table.dim == 16);
  CHECK(loaded.table.rows == t.rows);
  CHECK(loaded.skipped_unknown == 0);

  // reloading is identical
  auto loaded2 = load_table_tsv(dir.file("seq.tsv"));
  CHECK(loaded2.table.rows == loaded.table.rows);
}

TEST_CASE("binary table round trip", "[modality]") {
  TempDir dir("mod_bin");
  auto t = small_table(768, {2, 9}, 8);
  t.modality = "gcl:drug";
  save_table_binary(t, dir.file("z.bin"));
  auto loaded = load_table_binary(dir.file("z.bin"));
  CHECK(loaded.table.modality == "gcl:drug");
  CHECK(loaded.table.dim == 768);
  CHECK(loaded.table.rows == t.rows);
}

TEST_CASE("dimension mismatch names the node", "[modality]") {
  TempDir dir("mod_dim");
  kgtest::write_file(dir.file("bad.tsv"),
                     "node_id\tdim=3\tmodality=sequence\n"
                     "0\t1.0,2.0,3.0\n"
                     "4\t1.0,2.0\n");
  try {
    load_table_tsv(dir.file("bad.tsv"));
    FAIL("expected DataError");
  } catch (const DataError& e) {
    std::string msg = e.what();
    CHECK(msg.find("node 4") != std::string::npos);
  }
}

TEST_CASE("rows for unknown graph nodes are skipped and counted", "[modality]") {
  TempDir dir("mod_skip");
  auto g = kgtest::make_graph(dir, {{"drug"}, {"drug"}}, {{0, "drug_drug", 1}});
  kgtest::write_file(dir.file("t.tsv"),
                     "node_id\tdim=2\tmodality=description\n"
                     "0\t1.0,0.0\n"
                     "9\t0.5,0.5\n");
  auto loaded = load_table_tsv(dir.file("t.tsv"), &g);
  CHECK(loaded.table.rows.size() == 1);
  CHECK(loaded.skipped_unknown == 1);
}

TEST_CASE("get_modalities fills missing rows deterministically", "[modality]") {
  auto seq = small_table(8, {0, 1}, 1);
  EmbeddingTable desc;
  desc.modality = modality::kDescription;
  desc.dim = 8;
  desc.rows[0] = std::vector<double>(8, 0.25);

  SECTION("node present in both tables") {
    auto view = get_modalities(0, {&seq, &desc}, 7);
    REQUIRE(view.count() == 2);
    CHECK(view.entries[0].modality == modality::kSequence);
    CHECK(view.entries[0].provenance == Provenance::Loaded);
    CHECK(view.entries[1].provenance == Provenance::Loaded);
  }
  SECTION("missing modality slot is random-init and stable") {
    auto v1 = get_modalities(1, {&seq, &desc}, 7);
    auto v2 = get_modalities(1, {&seq, &desc}, 7);
    REQUIRE(v1.count() == 2);
    CHECK(v1.entries[1].provenance == Provenance::RandomInit);
    CHECK(v1.entries[1].vec == v2.entries[1].vec);
    // a different seed changes the fill
    auto v3 = get_modalities(1, {&seq, &desc}, 8);
    CHECK(v1.entries[1].vec != v3.entries[1].vec);
  }
}

TEST_CASE("random fills do not collide across nodes", "[modality]") {
  // 1000 nodes missing the same modality: all fills distinct
  std::set<std::vector<double>> fills;
  for (u32 n = 0; n < 1000; ++n)
    fills.insert(random_fill(42, n, modality::kSequence, 4));
  CHECK(fills.size() == 1000);
}

TEST_CASE("mock provider emits unit-norm deterministic tables", "[modality]") {
  TempDir dir("mod_mock");
  auto g = kgtest::make_random_graph(dir, 4, 20, 13);
  auto tables = mock_provider(g, 5, 768);
  REQUIRE(tables.size() == 2);
  CHECK(tables[0].modality == modality::kSequence);
  CHECK(tables[1].modality == modality::kDescription);
  for (const auto& t : tables) {
    CHECK(t.rows.size() == g.num_nodes());
    for (const auto& [node, v] : t.rows) {
      double norm = 0.0;
      for (double x : v) norm += x * x;
      CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-9);
    }
  }
  auto tables2 = mock_provider(g, 5, 768);
  CHECK(tables2[0].rows == tables[0].rows);
  CHECK(tables2[1].rows == tables[1].rows);

  auto small = mock_provider(g, 5, 10);
  CHECK(small[0].rows.begin()->second.size() == 10);
}
