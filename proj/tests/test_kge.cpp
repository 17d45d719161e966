#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "kgforge/checkpoint.hpp"
#include "kgforge/kge.hpp"
#include "support/finite_diff.hpp"
#include "support/fixtures.hpp"

using namespace kgforge;
using kgtest::TempDir;

TEST_CASE("rgcn self-loop reduction and zero propagation", "[kge]") {
  KgeSpec spec;
  spec.in_dim = 3;
  spec.dim = 2;
  spec.num_relations = 1;
  spec.dropout = 0.0;
  ParamStore store;
  init_kge_params(store, spec, 1);

  // edge 0 -> 1; node 0 has no in-edges
  std::vector<Triple> triples = {{0, 0, 1}};
  auto ctx = build_rgcn_context(2, triples, 1);

  SECTION("node without in-edges sees only the self path") {
    SplitMix64 rng(2), drop(0);
    Tensor x = Tensor::randn({2, 3}, rng);
    Tape tape;
    Var h = rgcn_forward(tape, ctx, tape.constant(x), store, spec, false, drop);

    // manual layer-by-layer for row 0
    const Tensor& w0self = store.get("rgcn/layer0/self");
    const Tensor& w1self = store.get("rgcn/layer1/self");
    std::vector<double> h0(2, 0.0);
    for (std::size_t j = 0; j < 2; ++j) {
      for (std::size_t i = 0; i < 3; ++i) h0[j] += x.at(0, i) * w0self.at(i, j);
      h0[j] = std::max(h0[j], 0.0);
    }
    std::vector<double> h1(2, 0.0);
    for (std::size_t j = 0; j < 2; ++j) {
      for (std::size_t i = 0; i < 2; ++i) h1[j] += h0[i] * w1self.at(i, j);
      h1[j] = std::max(h1[j], 0.0);
    }
    for (std::size_t j = 0; j < 2; ++j) CHECK(h.value().at(0, j) == Catch::Approx(h1[j]));
  }
  SECTION("all-zero input gives all-zero output") {
    SplitMix64 drop(0);
    Tape tape;
    Var h = rgcn_forward(tape, ctx, tape.constant(Tensor::zeros({2, 3})), store, spec,
                         false, drop);
    for (double v : h.value().data) CHECK(v == 0.0);
  }
  SECTION("unknown relation in the context is rejected") {
    std::vector<Triple> bad = {{0, 7, 1}};
    CHECK_THROWS_AS(build_rgcn_context(2, bad, 1), ContractViolation);
  }
  SECTION("gradient w.r.t. relation weights matches finite differences") {
    store.zero_grads();
    SplitMix64 rng(5);
    Tensor x = Tensor::randn({2, 3}, rng);
    Tensor probe = Tensor::randn({2, 2}, rng);
    auto forward = [&] {
      Tape t;
      SplitMix64 drop(0);
      Var h = rgcn_forward(t, ctx, t.constant(x), store, spec, false, drop);
      return sum_all(mul(h, t.constant(probe))).item();
    };
    Tape t;
    SplitMix64 drop(0);
    Var h = rgcn_forward(t, ctx, t.constant(x), store, spec, false, drop);
    t.backward(sum_all(mul(h, t.constant(probe))));
    auto rep = kgtest::check_gradients(
        forward,
        {{"rgcn/layer0/rel0", &store.get("rgcn/layer0/rel0")},
         {"rgcn/layer1/rel0", &store.get("rgcn/layer1/rel0")},
         {"rgcn/layer0/self", &store.get("rgcn/layer0/self")}},
        kgtest::grads_of(store));
    INFO(rep.worst);
    CHECK(rep.max_rel_err < 1e-4);
  }
}

TEST_CASE("distmult scoring", "[kge]") {
  SECTION("direct evaluation") {
    std::vector<double> h = {1, 0}, r = {2, 3}, t = {1, 1};
    CHECK(distmult_score(h, r, t) == 2.0);
  }
  SECTION("head/tail symmetry") {
    SplitMix64 rng(3);
    for (int i = 0; i < 50; ++i) {
      Tensor h = Tensor::randn({4}, rng), r = Tensor::randn({4}, rng),
             t = Tensor::randn({4}, rng);
      CHECK(distmult_score(h.data, r.data, t.data) ==
            Catch::Approx(distmult_score(t.data, r.data, h.data)).epsilon(1e-12));
    }
  }
  SECTION("unit relation reduces to a dot product") {
    std::vector<double> h = {0.5, -2, 3}, r = {1, 1, 1}, t = {4, 0.25, 1};
    CHECK(distmult_score(h, r, t) == Catch::Approx(0.5 * 4 - 2 * 0.25 + 3));
  }
  SECTION("batched scores match the scalar path") {
    SplitMix64 rng(8);
    Tensor x = Tensor::randn({5, 3}, rng);
    Tensor z = Tensor::randn({2, 3}, rng);
    std::vector<Triple> ts = {{0, 1, 3}, {4, 0, 4}, {2, 1, 0}};
    Tape tape;
    Var scores = distmult_scores(tape.constant(x), tape.constant(z), ts);
    for (std::size_t i = 0; i < ts.size(); ++i) {
      std::span<const double> h(x.data.data() + ts[i].head * 3, 3);
      std::span<const double> r(z.data.data() + ts[i].relation * 3, 3);
      std::span<const double> t(x.data.data() + ts[i].tail * 3, 3);
      CHECK(scores.value()[i] == Catch::Approx(distmult_score(h, r, t)).epsilon(1e-12));
    }
  }
}

TEST_CASE("kge loss closed forms and oracle", "[kge]") {
  SECTION("uninformative scores, no regularization, give ln 2") {
    Tape tape;
    Var pos = tape.constant(Tensor::zeros({4}));
    Var negs = tape.constant(Tensor::zeros({4}));
    Var x = tape.constant(Tensor::zeros({2, 2}));
    Var z = tape.constant(Tensor::zeros({1, 2}));
    CHECK(kge_loss(pos, negs, x, z, 0.01, 0.0).item() ==
          Catch::Approx(std::log(2.0)).margin(1e-12));
  }
  SECTION("lambda=0 and alpha=0 reduce to pure BCE") {
    SplitMix64 rng(2);
    Tape tape;
    Var pos = tape.constant(Tensor::randn({3}, rng));
    Var negs = tape.constant(Tensor::randn({3}, rng));
    Var x = tape.constant(Tensor::randn({2, 2}, rng));
    Var z = tape.constant(Tensor::randn({1, 2}, rng));
    const double with_alpha0 = kge_loss(pos, negs, x, z, 0.5, 0.0).item();
    const double with_lambda0 = kge_loss(pos, negs, x, z, 0.0, 2.0).item();
    CHECK(with_alpha0 == Catch::Approx(with_lambda0).epsilon(1e-12));
  }
  SECTION("matches a hand-summed oracle on 3 positives + 3 negatives") {
    SplitMix64 rng(7);
    Tensor ps = Tensor::randn({3}, rng), ns = Tensor::randn({3}, rng);
    Tensor x = Tensor::randn({4, 2}, rng), z = Tensor::randn({2, 2}, rng);
    const double lambda = 0.01, alpha = 1.5;
    Tape tape;
    const double got = kge_loss(tape.constant(ps), tape.constant(ns), tape.constant(x),
                                tape.constant(z), lambda, alpha)
                           .item();
    double bce = 0.0;
    for (double s : ps.data) bce += -std::log(1.0 / (1.0 + std::exp(-s)));
    for (double s : ns.data) bce += -std::log(1.0 - 1.0 / (1.0 + std::exp(-s)));
    bce /= 6.0;
    double reg = 0.0;
    for (double v : x.data) reg += v * v;
    for (double v : z.data) reg += v * v;
    CHECK(got == Catch::Approx(bce + alpha * lambda * reg).margin(1e-12));
  }
  SECTION("empty positive list rejected") {
    Tape tape;
    Var pos = tape.constant(Tensor({0}, {}));
    Var x = tape.constant(Tensor::zeros({1, 1}));
    Var z = tape.constant(Tensor::zeros({1, 1}));
    CHECK_THROWS_AS(kge_loss(pos, pos, x, z, 0.0, 0.0), ContractViolation);
  }
}

TEST_CASE("graphsaint batches are induced subgraphs", "[kge]") {
  TempDir dir("saint");
  auto g = kgtest::make_random_graph(dir, 10, 90, 4);

  SECTION("membership oracle and determinism") {
    auto b1 = graphsaint_sample(g, 8, 10, 99);
    auto b2 = graphsaint_sample(g, 8, 10, 99);
    CHECK(b1.nodes == b2.nodes);
    CHECK(std::equal(b1.triples.begin(), b1.triples.end(), b2.triples.begin()));
    for (const auto& t : b1.triples) {
      bool in_graph = false;
      for (const auto& gt : g.triples)
        if (gt == t) in_graph = true;
      CHECK(in_graph);
      CHECK(std::binary_search(b1.nodes.begin(), b1.nodes.end(), t.head));
      CHECK(std::binary_search(b1.nodes.begin(), b1.nodes.end(), t.tail));
    }
    // induced means *every* graph triple with both endpoints inside is present
    std::size_t expect = 0;
    for (const auto& gt : g.triples)
      if (std::binary_search(b1.nodes.begin(), b1.nodes.end(), gt.head) &&
          std::binary_search(b1.nodes.begin(), b1.nodes.end(), gt.tail))
        ++expect;
    CHECK(b1.triples.size() == expect);
  }
  SECTION("isolated root yields a singleton batch") {
    TempDir d2("saint_iso");
    // node 0 isolated; edge between 1 and 2
    auto gi = kgtest::make_graph(d2, {{"drug"}, {"drug"}, {"drug"}},
                                 {{1, "drug_drug", 2}});
    bool exercised = false;
    for (u64 seed = 0; seed < 64 && !exercised; ++seed) {
      auto b = graphsaint_sample(gi, 1, 1, seed);
      if (b.roots[0] == 0) {
        CHECK(b.nodes == std::vector<u32>{0});
        CHECK(b.triples.empty());
        exercised = true;
      }
    }
    CHECK(exercised);
  }
  SECTION("zero-edge graph is a sampling error") {
    TempDir d3("saint_empty");
    auto ge = kgtest::make_graph(d3, {{"drug"}, {"drug"}}, {});
    CHECK_THROWS_AS(graphsaint_sample(ge, 1, 1, 0), DataError);
  }
}

namespace {

struct TrainFixture {
  kgforge::KnowledgeGraph graph;
  kgforge::EdgeSplit split;
  kgforge::Tensor features;
  kgforge::KgeTrainConfig cfg;
};

TrainFixture make_train_fixture(const TempDir& dir, u64 seed) {
  TrainFixture f;
  f.graph = kgtest::make_random_graph(dir, 10, 120, seed);
  f.split = split_edges(f.graph, {0.6, 0.2, 0.2}, seed);
  SplitMix64 rng(seed);
  f.features = Tensor::randn({f.graph.num_nodes(), 8}, rng);
  f.cfg.spec.in_dim = 8;
  f.cfg.spec.dim = 8;
  f.cfg.spec.num_relations = f.graph.num_relations();
  f.cfg.spec.dropout = 0.1;
  f.cfg.optim.epochs = 8;
  f.cfg.optim.batch_size = 16;
  f.cfg.optim.warmup_steps = 5;
  f.cfg.optim.patience = 100;
  f.cfg.optim.learning_rate = 0.01;
  f.cfg.walk_length = 5;
  return f;
}

}  // namespace

TEST_CASE("train_kge descends deterministically and supports resume", "[kge]") {
  TempDir dir("kge_train");
  auto f = make_train_fixture(dir, 6);

  auto run = [&](int start_epoch, int stop_after, ParamStore* state) {
    ParamStore store;
    if (state) {
      store = *state;
    } else {
      init_kge_params(store, f.cfg.spec, 11);
    }
    ConstantFeatureProvider features(f.features);
    auto result =
        train_kge(f.graph, f.split, features, store, f.cfg, 21, start_epoch, stop_after);
    return std::pair<KgeTrainResult, ParamStore>(std::move(result), std::move(store));
  };

  auto [full, full_store] = run(0, -1, nullptr);
  REQUIRE(full.log.size() == 8);

  SECTION("training loss trends down") {
    CHECK(full.log.back().train_loss < full.log.front().train_loss);
  }
  SECTION("same seed reproduces the loss sequence exactly") {
    auto [again, again_store] = run(0, -1, nullptr);
    REQUIRE(again.log.size() == full.log.size());
    for (std::size_t i = 0; i < full.log.size(); ++i) {
      CHECK(full.log[i].train_loss == again.log[i].train_loss);
      CHECK(full.log[i].valid_loss == again.log[i].valid_loss);
    }
    CHECK(full_store.params == again_store.params);
  }
  SECTION("resume reproduces the same best epoch") {
    auto [half, half_store] = run(0, 4, nullptr);
    auto [resumed, resumed_store] = run(4, -1, &half_store);
    REQUIRE(half.log.size() + resumed.log.size() == full.log.size());
    for (std::size_t i = 0; i < resumed.log.size(); ++i) {
      const auto& a = resumed.log[i];
      const auto& b = full.log[half.log.size() + i];
      CHECK(a.epoch == b.epoch);
      CHECK(a.train_loss == b.train_loss);
      CHECK(a.valid_loss == b.valid_loss);
    }
    const int full_best = full.best_epoch;
    const int stitched_best =
        resumed.best_valid_loss < half.best_valid_loss ? resumed.best_epoch : half.best_epoch;
    CHECK(stitched_best == full_best);
    CHECK(resumed_store.params == full_store.params);
  }
  SECTION("empty validation set is a configuration error") {
    EdgeSplit bad = f.split;
    bad.valid.clear();
    ParamStore store;
    init_kge_params(store, f.cfg.spec, 11);
    ConstantFeatureProvider features(f.features);
    CHECK_THROWS_AS(train_kge(f.graph, bad, features, store, f.cfg, 21), ConfigError);
  }
}

TEST_CASE("predict_links is pure, bounded, and inductive", "[kge]") {
  TempDir dir("kge_predict");
  auto f = make_train_fixture(dir, 9);
  ParamStore store;
  init_kge_params(store, f.cfg.spec, 3);
  ConstantFeatureProvider features(f.features);
  auto tg = train_view(f.graph, f.split);
  Tensor x = entity_embeddings(tg, features, store, f.cfg.spec);
  const Tensor& z = store.get("distmult/Z");

  SECTION("duplicated triples score identically, strictly inside (0,1)") {
    std::vector<Triple> ts = {f.graph.triples[0], f.graph.triples[0], f.graph.triples[1]};
    auto scores = predict_links(x, z, ts);
    CHECK(scores[0] == scores[1]);
    for (double s : scores) {
      CHECK(s > 0.0);
      CHECK(s < 1.0);
    }
  }
  SECTION("unknown relation is an error") {
    std::vector<Triple> ts = {Triple{0, static_cast<u32>(f.graph.num_relations() + 3), 1}};
    CHECK_THROWS_AS(predict_links(x, z, ts), DataError);
  }
  SECTION("a node absent from training triples still scores finitely and stably") {
    // remove every triple touching node 0 from the training split
    EdgeSplit holdout = f.split;
    holdout.train.clear();
    for (u32 idx : f.split.train) {
      const auto& t = f.graph.triples[idx];
      if (t.head != 0 && t.tail != 0) holdout.train.push_back(idx);
    }
    auto tg2 = train_view(f.graph, holdout);
    Tensor x2 = entity_embeddings(tg2, features, store, f.cfg.spec);
    std::vector<Triple> probe = {Triple{0, 0, 5}, Triple{5, 1, 0}};
    auto s1 = predict_links(x2, z, probe);
    auto s2 = predict_links(entity_embeddings(tg2, features, store, f.cfg.spec), z, probe);
    for (std::size_t i = 0; i < s1.size(); ++i) {
      CHECK(std::isfinite(s1[i]));
      CHECK(s1[i] == s2[i]);
    }
  }
}

TEST_CASE("kge checkpoint round trip preserves predictions bit-exactly", "[kge]") {
  TempDir dir("kge_ckpt");
  auto f = make_train_fixture(dir, 14);
  ParamStore store;
  init_kge_params(store, f.cfg.spec, 5);
  ConstantFeatureProvider features(f.features);
  auto cfg = f.cfg;
  cfg.optim.epochs = 3;
  auto result = train_kge(f.graph, f.split, features, store, cfg, 8);

  const std::string path = dir.file("model.ckpt");
  save_checkpoint(result.last_state, path,
                  {{"epoch", Tensor::scalar(result.last_epoch)}});
  auto ckpt = load_checkpoint_full(path);
  CHECK(static_cast<int>(ckpt.meta.at("epoch").item()) == result.last_epoch);

  auto tg = train_view(f.graph, f.split);
  Tensor x1 = entity_embeddings(tg, features, store, f.cfg.spec);
  Tensor x2 = entity_embeddings(tg, features, ckpt.store, f.cfg.spec);
  std::vector<Triple> probe(f.graph.triples.begin(), f.graph.triples.begin() + 10);
  auto s1 = predict_links(x1, store.get("distmult/Z"), probe);
  auto s2 = predict_links(x2, ckpt.store.get("distmult/Z"), probe);
  CHECK(s1 == s2);
}
