#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <memory>

#include "kgforge/gcl.hpp"
#include "support/finite_diff.hpp"
#include "support/fixtures.hpp"

using namespace kgforge;
using kgtest::TempDir;

namespace {

std::vector<std::pair<u32, u32>> ring_edges(u32 n) {
  std::vector<std::pair<u32, u32>> e;
  for (u32 i = 0; i < n; ++i) e.emplace_back(i, (i + 1) % n);
  return e;
}

}  // namespace

TEST_CASE("augment identity and extremes", "[gcl]") {
  auto edges = ring_edges(10);
  Tensor x = Tensor::full({10, 4}, 1.0);
  SECTION("p=0 is the identity") {
    auto v = augment(10, edges, &x, 0.0, 0.0, 1);
    CHECK(v.edges == edges);
    CHECK(v.masked_nodes.empty());
    CHECK(v.features == x);
  }
  SECTION("p_drop=1 empties the edge set") {
    auto v = augment(10, edges, &x, 0.0, 1.0, 1);
    CHECK(v.edges.empty());
  }
  SECTION("masked rows are exactly the recorded set") {
    auto v = augment(10, edges, &x, 0.5, 0.0, 7);
    for (u32 i = 0; i < 10; ++i) {
      const bool masked =
          std::find(v.masked_nodes.begin(), v.masked_nodes.end(), i) != v.masked_nodes.end();
      for (std::size_t j = 0; j < 4; ++j)
        CHECK(v.features.at(i, j) == (masked ? 0.0 : 1.0));
    }
  }
  SECTION("deterministic per seed, distinct across seeds") {
    auto a = augment(10, edges, &x, 0.3, 0.3, 5);
    auto b = augment(10, edges, &x, 0.3, 0.3, 5);
    auto c = augment(10, edges, &x, 0.3, 0.3, 6);
    CHECK(a.edges == b.edges);
    CHECK(a.masked_nodes == b.masked_nodes);
    CHECK((a.edges != c.edges || a.masked_nodes != c.masked_nodes));
  }
  SECTION("surviving edge fraction within 3 sigma") {
    auto edges1k = ring_edges(1000);
    const double p_drop = 0.3;
    auto v = augment(1000, edges1k, nullptr, 0.0, p_drop, 11);
    const double expected = 1000.0 * (1.0 - p_drop);
    const double sigma = std::sqrt(1000.0 * p_drop * (1.0 - p_drop));
    CHECK(std::abs(static_cast<double>(v.edges.size()) - expected) < 3.0 * sigma);
  }
}

TEST_CASE("gcn encoder basics", "[gcl]") {
  SECTION("single node with identity weights reduces to relu(x)") {
    ParamStore store;
    const std::size_t d = 3;
    Tensor eye = Tensor::zeros({d, d});
    for (std::size_t i = 0; i < d; ++i) eye.at(i, i) = 1.0;
    store.add("g/enc/W1", eye);
    store.add("g/enc/b1", Tensor::zeros({d}));
    store.add("g/enc/W2", eye);
    store.add("g/enc/b2", Tensor::zeros({d}));
    auto a = normalized_adjacency(1, {});
    Tape tape;
    Var x = tape.constant(Tensor::matrix(1, d, {-2.0, 0.5, 3.0}));
    Var h = gcn_encode(tape, a, x, store, "g/");
    CHECK(h.value().data == std::vector<double>{0.0, 0.5, 3.0});
  }
  SECTION("zero features give zero output") {
    ParamStore store;
    init_gcl_encoder(store, "g/", {4, 3, 2}, 1);
    auto a = normalized_adjacency(5, ring_edges(5));
    Tape tape;
    Var h = gcn_encode(tape, a, tape.constant(Tensor::zeros({5, 4})), store, "g/");
    for (double v : h.value().data) CHECK(v == 0.0);
  }
  SECTION("gradient w.r.t. W1 matches finite differences") {
    ParamStore store;
    init_gcl_encoder(store, "g/", {4, 3, 2}, 2);
    store.zero_grads();
    auto a = normalized_adjacency(5, ring_edges(5));
    SplitMix64 rng(3);
    Tensor x = Tensor::randn({5, 4}, rng);
    Tensor probe = Tensor::randn({5, 2}, rng);
    auto forward = [&] {
      Tape t;
      Var h = gcn_encode(t, a, t.constant(x), store, "g/");
      return sum_all(mul(h, t.constant(probe))).item();
    };
    Tape t;
    Var h = gcn_encode(t, a, t.constant(x), store, "g/");
    t.backward(sum_all(mul(h, t.constant(probe))));
    auto rep = kgtest::check_gradients(
        forward,
        {{"g/enc/W1", &store.get("g/enc/W1")}, {"g/enc/b1", &store.get("g/enc/b1")}},
        kgtest::grads_of(store));
    INFO(rep.worst);
    CHECK(rep.max_rel_err < 1e-4);
  }
}

TEST_CASE("dgi loss closed forms", "[gcl]") {
  SECTION("all-zero scores give ln 2") {
    Tape tape;
    Var hr = tape.constant(Tensor::zeros({6, 4}));
    Var hc = tape.constant(Tensor::zeros({6, 4}));
    CHECK(dgi_loss(tape, hr, hc).item() == Catch::Approx(std::log(2.0)).margin(1e-12));
  }
  SECTION("perfect separation drives the loss to zero") {
    Tape tape;
    Var hr = tape.constant(Tensor::full({4, 3}, 50.0));
    Var hc = tape.constant(Tensor::full({4, 3}, -50.0));
    CHECK(dgi_loss(tape, hr, hc).item() < 1e-9);
  }
  SECTION("non-negative on random inputs") {
    SplitMix64 rng(4);
    for (int i = 0; i < 20; ++i) {
      Tape tape;
      Var hr = tape.constant(Tensor::randn({5, 3}, rng));
      Var hc = tape.constant(Tensor::randn({5, 3}, rng));
      CHECK(dgi_loss(tape, hr, hc).item() >= 0.0);
    }
  }
}

TEST_CASE("ggd loss closed forms and oracle", "[gcl]") {
  SECTION("one positive pair with zero score contributes ln 2") {
    Tape tape;
    Var h = tape.constant(Tensor::zeros({3, 4}));
    Var loss = ggd_loss(tape, h, {{0, 1}}, {});
    CHECK(loss.item() == Catch::Approx(std::log(2.0)).margin(1e-12));
  }
  SECTION("saturated scores drive the loss to zero") {
    Tensor h = Tensor::zeros({2, 2});
    h.at(0, 0) = 10.0;
    h.at(1, 0) = 10.0;  // pos pair (0,1): score 100
    Tape tape;
    Var loss = ggd_loss(tape, tape.constant(h), {{0, 1}}, {});
    CHECK(loss.item() < 1e-9);
  }
  SECTION("empty positive set rejected") {
    Tape tape;
    Var h = tape.constant(Tensor::zeros({2, 2}));
    CHECK_THROWS_AS(ggd_loss(tape, h, {}, {{0, 1}}), ContractViolation);
  }
  SECTION("matches a direct BCE-over-pairs summation") {
    SplitMix64 rng(9);
    Tensor h = Tensor::randn({5, 3}, rng);
    std::vector<std::pair<u32, u32>> pos = {{0, 1}, {1, 2}, {3, 4}};
    std::vector<std::pair<u32, u32>> neg = {{0, 4}, {2, 0}};
    Tape tape;
    const double got = ggd_loss(tape, tape.constant(h), pos, neg).item();
    auto dot_rows = [&](u32 i, u32 j) {
      double s = 0.0;
      for (std::size_t d = 0; d < 3; ++d) s += h.at(i, d) * h.at(j, d);
      return s;
    };
    double expect = 0.0;
    for (auto [i, j] : pos) expect += -std::log(1.0 / (1.0 + std::exp(-dot_rows(i, j))));
    for (auto [i, j] : neg) expect += -std::log(1.0 - 1.0 / (1.0 + std::exp(-dot_rows(i, j))));
    expect /= static_cast<double>(pos.size() + neg.size());
    CHECK(got == Catch::Approx(expect).margin(1e-12));
  }
}

TEST_CASE("grace loss closed form and invariances", "[gcl]") {
  const std::size_t k = 2;
  ParamStore store;
  // identity projection head: P(z) = relu(z)
  Tensor eye = Tensor::zeros({k, k});
  for (std::size_t i = 0; i < k; ++i) eye.at(i, i) = 1.0;
  store.add("g/proj/W1", eye);
  store.add("g/proj/b1", Tensor::zeros({k}));
  store.add("g/proj/W2", eye);
  store.add("g/proj/b2", Tensor::zeros({k}));
  GraceHead head;
  head.tau = 1.0;

  SECTION("two orthogonal nodes with identical views") {
    Tensor h = Tensor::matrix(2, 2, {1, 0, 0, 1});
    Tape tape;
    Var loss = grace_loss(tape, tape.constant(h), tape.constant(h), store, "g/", head);
    const double expected = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
    CHECK(loss.item() == Catch::Approx(expected).epsilon(1e-12));
    CHECK(loss.item() == Catch::Approx(0.3133).margin(1e-4));
  }
  SECTION("permuting node order leaves the loss unchanged") {
    SplitMix64 rng(12);
    Tensor h1 = Tensor::randn({4, 2}, rng);
    Tensor h2 = Tensor::randn({4, 2}, rng);
    Tape t1;
    const double base =
        grace_loss(t1, t1.constant(h1), t1.constant(h2), store, "g/", head).item();
    std::vector<std::size_t> perm = {2, 0, 3, 1};
    Tensor p1 = Tensor::zeros({4, 2}), p2 = Tensor::zeros({4, 2});
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 2; ++j) {
        p1.at(i, j) = h1.at(perm[i], j);
        p2.at(i, j) = h2.at(perm[i], j);
      }
    Tape t2;
    const double permuted =
        grace_loss(t2, t2.constant(p1), t2.constant(p2), store, "g/", head).item();
    CHECK(permuted == Catch::Approx(base).epsilon(1e-12));
  }
  SECTION("positive scaling before normalization leaves the loss unchanged") {
    SplitMix64 rng(13);
    Tensor h1 = Tensor::randn({3, 2}, rng);
    Tensor h2 = Tensor::randn({3, 2}, rng);
    Tape t1;
    const double base =
        grace_loss(t1, t1.constant(h1), t1.constant(h2), store, "g/", head).item();
    Tensor s1 = h1, s2 = h2;
    s1 *= 3.7;
    s2 *= 3.7;
    Tape t2;
    const double scaled =
        grace_loss(t2, t2.constant(s1), t2.constant(s2), store, "g/", head).item();
    CHECK(scaled == Catch::Approx(base).epsilon(1e-10));
  }
  SECTION("non-positive temperature rejected") {
    GraceHead bad;
    bad.tau = 0.0;
    Tape tape;
    Var h = tape.constant(Tensor::zeros({2, 2}));
    CHECK_THROWS_AS(grace_loss(tape, h, h, store, "g/", bad), ConfigError);
  }
  SECTION("intra-view negatives increase the denominator") {
    SplitMix64 rng(14);
    Tensor h1 = Tensor::randn({4, 2}, rng);
    Tensor h2 = Tensor::randn({4, 2}, rng);
    Tape t1;
    const double cross =
        grace_loss(t1, t1.constant(h1), t1.constant(h2), store, "g/", head).item();
    GraceHead intra = head;
    intra.intra_view_negatives = true;
    Tape t2;
    const double with_intra =
        grace_loss(t2, t2.constant(h1), t2.constant(h2), store, "g/", intra).item();
    CHECK(with_intra > cross);
  }
}

TEST_CASE("jsd loss", "[gcl]") {
  SECTION("identical distributions give zero") {
    Tape tape;
    Var p = tape.constant(Tensor::vector({0.2, 0.3, 0.5}));
    CHECK(jsd_loss(tape, p, p).item() == Catch::Approx(0.0).margin(1e-15));
  }
  SECTION("disjoint support gives ln 2") {
    Tape tape;
    Var p = tape.constant(Tensor::vector({0.5, 0.5, 0.0, 0.0}));
    Var q = tape.constant(Tensor::vector({0.0, 0.0, 0.25, 0.75}));
    CHECK(jsd_loss(tape, p, q).item() == Catch::Approx(std::log(2.0)).margin(1e-12));
  }
  SECTION("symmetric and bounded") {
    SplitMix64 rng(6);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> a(5), b(5);
      double sa = 0, sb = 0;
      for (auto& v : a) {
        v = rng.next_double_pos();
        sa += v;
      }
      for (auto& v : b) {
        v = rng.next_double_pos();
        sb += v;
      }
      for (auto& v : a) v /= sa;
      for (auto& v : b) v /= sb;
      Tape tape;
      Var p = tape.constant(Tensor::vector(a));
      Var q = tape.constant(Tensor::vector(b));
      const double pq = jsd_loss(tape, p, q).item();
      const double qp = jsd_loss(tape, q, p).item();
      CHECK(pq == Catch::Approx(qp).margin(1e-12));
      CHECK(pq >= 0.0);
      CHECK(pq <= std::log(2.0) + 1e-12);
    }
  }
  SECTION("non-normalized input rejected") {
    Tape tape;
    Var p = tape.constant(Tensor::vector({0.9, 0.3}));
    Var q = tape.constant(Tensor::vector({0.5, 0.5}));
    CHECK_THROWS_AS(jsd_loss(tape, p, q), ContractViolation);
  }
}

namespace {

GclConfig quick_config(GclMethod method, int epochs) {
  GclConfig cfg;
  cfg.method = method;
  cfg.hidden_dim = 16;
  cfg.out_dim = 8;
  cfg.optim.epochs = epochs;
  cfg.optim.learning_rate = 0.01;
  cfg.optim.patience = 1000;  // no early stop in the descent checks
  return cfg;
}

FeatureProviderFactory constant_features(const Tensor& table) {
  return [&table](ParamStore&, const std::string&) {
    return std::make_unique<ConstantFeatureProvider>(table);
  };
}

}  // namespace

TEST_CASE("pretrain descends and exports deterministic z tables", "[gcl]") {
  TempDir dir("gcl_pre");
  auto g = kgtest::make_random_graph(dir, 10, 80, 31);
  SplitMix64 rng(1);
  Tensor features = Tensor::randn({g.num_nodes(), 12}, rng);

  for (GclMethod method : {GclMethod::Grace, GclMethod::Dgi, GclMethod::GgdPaper}) {
    INFO(to_string(method));
    auto cfg = quick_config(method, 50);
    auto r1 = pretrain(g, constant_features(features), cfg, 42);
    REQUIRE(r1.types.size() == g.node_types.size());
    for (const auto& t : r1.types) {
      if (!t.curve.empty()) CHECK(t.curve.back().second < t.curve.front().second);
      // z row count equals the subgraph node count
      auto sub = homogeneous_subgraph(g, t.node_type);
      CHECK(t.z.rows.size() == sub.graph.num_nodes());
      CHECK(t.z.modality == "gcl:" + t.node_type);
    }
    auto r2 = pretrain(g, constant_features(features), cfg, 42);
    for (std::size_t i = 0; i < r1.types.size(); ++i)
      CHECK(r1.types[i].z.rows == r2.types[i].z.rows);  // bit-identical
  }
}

TEST_CASE("pretrain is thread-schedule independent", "[gcl]") {
  TempDir dir("gcl_threads");
  auto g = kgtest::make_random_graph(dir, 8, 50, 17);
  SplitMix64 rng(2);
  Tensor features = Tensor::randn({g.num_nodes(), 10}, rng);
  auto cfg = quick_config(GclMethod::Grace, 20);
  auto serial = pretrain(g, constant_features(features), cfg, 7, 1);
  auto parallel = pretrain(g, constant_features(features), cfg, 7, 3);
  REQUIRE(serial.types.size() == parallel.types.size());
  for (std::size_t i = 0; i < serial.types.size(); ++i)
    CHECK(serial.types[i].z.rows == parallel.types[i].z.rows);
  CHECK(serial.store.params == parallel.store.params);
}

TEST_CASE("pretrain falls back to identity propagation without same-type edges", "[gcl]") {
  TempDir dir("gcl_fallback");
  // disease nodes have no disease-disease edges in this fixture
  auto g = kgtest::make_graph(dir,
                              {{"drug"}, {"drug"}, {"disease"}, {"disease"}},
                              {{0, "drug_drug", 1}, {0, "indication", 2}});
  SplitMix64 rng(3);
  Tensor features = Tensor::randn({g.num_nodes(), 6}, rng);
  auto cfg = quick_config(GclMethod::Grace, 10);
  auto result = pretrain(g, constant_features(features), cfg, 5);
  bool found = false;
  for (const auto& t : result.types) {
    if (t.node_type == "disease") {
      found = true;
      CHECK(t.identity_fallback);
      CHECK_FALSE(t.warnings.empty());
      CHECK(t.z.rows.size() == 2);
    }
  }
  CHECK(found);
}

TEST_CASE("gradient flows through every gcl loss", "[gcl]") {
  SplitMix64 rng(21);
  const std::size_t n = 4, k = 3;
  ParamStore store;
  store.add("h1", Tensor::randn({n, k}, rng));
  store.add("h2", Tensor::randn({n, k}, rng));
  init_grace_head(store, "g/", k, 1);
  store.zero_grads();
  GraceHead head;

  SECTION("grace") {
    auto forward = [&] {
      Tape t;
      return grace_loss(t, t.param(store, "h1"), t.param(store, "h2"), store, "g/", head)
          .item();
    };
    Tape t;
    t.backward(grace_loss(t, t.param(store, "h1"), t.param(store, "h2"), store, "g/", head));
    auto rep = kgtest::check_gradients(
        forward,
        {{"h1", &store.get("h1")},
         {"h2", &store.get("h2")},
         {"g/proj/W1", &store.get("g/proj/W1")}},
        kgtest::grads_of(store));
    INFO(rep.worst);
    CHECK(rep.max_rel_err < 1e-4);
  }
  SECTION("dgi") {
    auto forward = [&] {
      Tape t;
      return dgi_loss(t, t.param(store, "h1"), t.param(store, "h2")).item();
    };
    Tape t;
    t.backward(dgi_loss(t, t.param(store, "h1"), t.param(store, "h2")));
    auto rep = kgtest::check_gradients(
        forward, {{"h1", &store.get("h1")}, {"h2", &store.get("h2")}},
        kgtest::grads_of(store));
    INFO(rep.worst);
    CHECK(rep.max_rel_err < 1e-4);
  }
  SECTION("ggd") {
    std::vector<std::pair<u32, u32>> pos = {{0, 1}, {2, 3}};
    std::vector<std::pair<u32, u32>> negp = {{1, 3}};
    auto forward = [&] {
      Tape t;
      return ggd_loss(t, t.param(store, "h1"), pos, negp).item();
    };
    Tape t;
    t.backward(ggd_loss(t, t.param(store, "h1"), pos, negp));
    auto rep = kgtest::check_gradients(forward, {{"h1", &store.get("h1")}},
                                       kgtest::grads_of(store));
    INFO(rep.worst);
    CHECK(rep.max_rel_err < 1e-4);
  }
}
