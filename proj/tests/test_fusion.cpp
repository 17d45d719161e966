#include <catch2/catch_amalgamated.hpp>

#include <algorithm>

#include "kgforge/fusion.hpp"
#include "support/finite_diff.hpp"

using namespace kgforge;

namespace {

ModalityView view_of(std::vector<std::vector<double>> vecs) {
  ModalityView v;
  v.node = 0;
  for (std::size_t i = 0; i < vecs.size(); ++i) {
    ModalityEntry e;
    e.modality = i == 0 ? modality::kSequence : modality::kDescription;
    e.vec = std::move(vecs[i]);
    v.entries.push_back(std::move(e));
  }
  return v;
}

FusionSpec mean_spec(std::size_t dim, std::size_t m) {
  FusionSpec s;
  s.method = FusionMethod::None;
  s.out_dim = dim;
  s.in_dims.assign(m, dim);
  return s;
}

}  // namespace

TEST_CASE("mean fusion", "[fusion]") {
  ParamStore store;
  SECTION("two modalities average") {
    auto spec = mean_spec(2, 2);
    auto fused = fuse_view(view_of({{1, 3}, {3, 1}}), 0, store, spec);
    CHECK(fused.u.data == std::vector<double>{2, 2});
    CHECK(fused.weights == std::vector<double>{0.5, 0.5});
  }
  SECTION("single modality is identity") {
    auto spec = mean_spec(3, 1);
    auto fused = fuse_view(view_of({{4, 5, 6}}), 0, store, spec);
    CHECK(fused.u.data == std::vector<double>{4, 5, 6});
  }
  SECTION("M copies of v give v") {
    auto spec = mean_spec(2, 4);
    ModalityView v;
    v.node = 0;
    for (int i = 0; i < 4; ++i)
      v.entries.push_back({modality::kSequence, {7.0, -1.0}, Provenance::Loaded});
    auto fused = fuse_view(v, 0, store, spec);
    CHECK(fused.u.data[0] == Catch::Approx(7.0));
    CHECK(fused.u.data[1] == Catch::Approx(-1.0));
  }
  SECTION("empty view rejected") {
    Tape tape;
    CHECK_THROWS_AS(fuse_mean(tape, {}), ContractViolation);
  }
  SECTION("permutation invariance") {
    auto spec = mean_spec(2, 2);
    auto a = fuse_view(view_of({{1, 3}, {5, -2}}), 0, store, spec);
    auto b = fuse_view(view_of({{5, -2}, {1, 3}}), 0, store, spec);
    CHECK(a.u.data == b.u.data);
  }
}

TEST_CASE("attention fusion weights", "[fusion]") {
  FusionSpec spec;
  spec.method = FusionMethod::Attention;
  spec.out_dim = 3;
  spec.in_dims = {3, 3};

  SECTION("identical projections give uniform weights") {
    ParamStore store;
    init_fusion_params(store, spec, 1);
    store.get("fusion/attention/W1") = store.get("fusion/attention/W0");
    auto fused = fuse_view(view_of({{1, 2, 3}, {1, 2, 3}}), 0, store, spec);
    CHECK(fused.weights[0] == Catch::Approx(0.5));
    CHECK(fused.weights[1] == Catch::Approx(0.5));
  }
  SECTION("zero query gives uniform weights regardless of inputs") {
    ParamStore store;
    init_fusion_params(store, spec, 2);
    store.get("fusion/attention/q") = Tensor::zeros({3});
    auto fused = fuse_view(view_of({{9, 0, 1}, {-3, 2, 4}}), 0, store, spec);
    CHECK(fused.weights[0] == Catch::Approx(0.5));
    CHECK(fused.weights[1] == Catch::Approx(0.5));
  }
  SECTION("weights live on the open simplex") {
    ParamStore store;
    init_fusion_params(store, spec, 3);
    SplitMix64 rng(11);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<double> a(3), b(3);
      for (auto& v : a) v = rng.next_gaussian();
      for (auto& v : b) v = rng.next_gaussian();
      auto fused = fuse_view(view_of({a, b}), 0, store, spec);
      double sum = 0.0;
      for (double w : fused.weights) {
        CHECK(w > 0.0);
        sum += w;
      }
      CHECK(std::abs(sum - 1.0) <= 1e-9);
    }
  }
  SECTION("gradient through q and W matches finite differences") {
    ParamStore store;
    init_fusion_params(store, spec, 4);
    store.zero_grads();
    Tensor xa = Tensor::vector({0.3, -0.8, 0.5});
    Tensor xb = Tensor::vector({1.1, 0.2, -0.4});
    auto forward = [&]() {
      Tape t;
      std::vector<Var> xs = {t.constant(xa), t.constant(xb)};
      FusionResult r = fuse_node(t, xs, 0, 0, store, spec);
      return sum_all(mul(r.u, r.u)).item();
    };
    Tape t;
    std::vector<Var> xs = {t.constant(xa), t.constant(xb)};
    FusionResult r = fuse_node(t, xs, 0, 0, store, spec);
    t.backward(sum_all(mul(r.u, r.u)));
    auto rep = kgtest::check_gradients(
        forward,
        {{"fusion/attention/q", &store.get("fusion/attention/q")},
         {"fusion/attention/W0", &store.get("fusion/attention/W0")},
         {"fusion/attention/W1", &store.get("fusion/attention/W1")}},
        kgtest::grads_of(store));
    INFO(rep.worst);
    CHECK(rep.max_rel_err < 1e-4);
  }
}

TEST_CASE("redaf fusion weights", "[fusion]") {
  FusionSpec spec;
  spec.method = FusionMethod::Redaf;
  spec.out_dim = 3;
  spec.in_dims = {3, 3};
  spec.num_contexts = 2;

  SECTION("zero gate vector gives uniform weights") {
    ParamStore store;
    init_fusion_params(store, spec, 1);
    store.get("fusion/redaf/V") = Tensor::zeros({3});
    auto fused = fuse_view(view_of({{2, 0, 1}, {-1, 3, 0}}), 1, store, spec);
    CHECK(fused.weights[0] == Catch::Approx(0.5));
    CHECK(fused.weights[1] == Catch::Approx(0.5));
  }
  SECTION("lower temperature logits sharpen the argmax weight") {
    ParamStore store;
    init_fusion_params(store, spec, 2);
    auto view = view_of({{2, 0, 1}, {-1, 3, 0}});
    double prev_max = 0.0;
    bool first = true;
    // zeta from +6 down to -6: sigma(zeta) shrinks, weights sharpen
    for (double z = 6.0; z >= -6.0; z -= 1.0) {
      store.get("fusion/redaf/zeta").data[0] = z;
      auto fused = fuse_view(view, 0, store, spec);
      const double mx = *std::max_element(fused.weights.begin(), fused.weights.end());
      if (!first) CHECK(mx >= prev_max - 1e-12);
      prev_max = mx;
      first = false;
    }
    CHECK(prev_max > 0.99);  // near-argmax at sigma(zeta) -> 0
  }
  SECTION("weights sum to one across random trials") {
    ParamStore store;
    init_fusion_params(store, spec, 3);
    SplitMix64 rng(5);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<double> a(3), b(3);
      for (auto& v : a) v = rng.next_gaussian();
      for (auto& v : b) v = rng.next_gaussian();
      auto fused = fuse_view(view_of({a, b}), trial % 2, store, spec);
      double sum = 0.0;
      for (double w : fused.weights) {
        CHECK(w > 0.0);
        sum += w;
      }
      CHECK(std::abs(sum - 1.0) <= 1e-9);
    }
  }
  SECTION("gradients through V, zeta, and structural table") {
    FusionSpec sspec = spec;
    sspec.structural_slot = true;
    sspec.num_nodes = 2;
    ParamStore store;
    init_fusion_params(store, sspec, 4);
    store.zero_grads();
    Tensor xa = Tensor::vector({0.3, -0.8, 0.5});
    Tensor xb = Tensor::vector({1.1, 0.2, -0.4});
    auto forward = [&]() {
      Tape t;
      std::vector<Var> xs = {t.constant(xa), t.constant(xb)};
      FusionResult r = fuse_node(t, xs, 1, 1, store, sspec);
      return sum_all(mul(r.u, r.u)).item();
    };
    Tape t;
    std::vector<Var> xs = {t.constant(xa), t.constant(xb)};
    FusionResult r = fuse_node(t, xs, 1, 1, store, sspec);
    t.backward(sum_all(mul(r.u, r.u)));
    auto rep = kgtest::check_gradients(
        forward,
        {{"fusion/redaf/V", &store.get("fusion/redaf/V")},
         {"fusion/redaf/zeta", &store.get("fusion/redaf/zeta")},
         {"fusion/redaf/S", &store.get("fusion/redaf/S")}},
        kgtest::grads_of(store));
    INFO(rep.worst);
    CHECK(rep.max_rel_err < 1e-4);
  }
  SECTION("dim mismatch rejected") {
    FusionSpec bad = spec;
    bad.in_dims = {3, 4};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }
}

TEST_CASE("finalize averages weighted output with member mean", "[fusion]") {
  Tape tape;
  Var w = tape.input(Tensor::vector({2, 4}));
  Var m1 = tape.input(Tensor::vector({1, 1}));
  Var m2 = tape.input(Tensor::vector({3, 1}));
  FusedVar f;
  f.u = w;
  f.members = {m1, m2};
  Var u = finalize_unified(f, FusionMethod::Attention);
  // mean of members = (2,1); (w + mean)/2 = (2, 2.5)
  CHECK(u.value().data == std::vector<double>{2.0, 2.5});

  Var id = finalize_unified(f, FusionMethod::None);
  CHECK(id.value().data == w.value().data);
}

TEST_CASE("attention weights permute with the modality order", "[fusion]") {
  FusionSpec spec;
  spec.method = FusionMethod::Attention;
  spec.out_dim = 3;
  spec.in_dims = {3, 3};
  ParamStore store;
  init_fusion_params(store, spec, 9);
  // same W for both slots so swapping inputs swaps weights exactly
  store.get("fusion/attention/W1") = store.get("fusion/attention/W0");
  auto a = fuse_view(view_of({{1, 2, 3}, {-2, 0, 5}}), 0, store, spec);
  auto b = fuse_view(view_of({{-2, 0, 5}, {1, 2, 3}}), 0, store, spec);
  CHECK(a.weights[0] == Catch::Approx(b.weights[1]));
  CHECK(a.weights[1] == Catch::Approx(b.weights[0]));
  for (std::size_t i = 0; i < a.u.size(); ++i)
    CHECK(a.u.data[i] == Catch::Approx(b.u.data[i]));
}
