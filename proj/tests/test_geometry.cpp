#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "affseq/data.hpp"
#include "affseq/pyramid.hpp"
#include "oracles.hpp"

using namespace affseq;
using ad::Array;
using ad::Var;

TEST_CASE("fps on the unit square corners") {
  Array corners({4, 3}, {0, 0, 0, 1, 0, 0, 0, 1, 0, 1, 1, 0});
  CHECK(geom::fps(corners, 2, 0) == std::vector<int64_t>{0, 3});
  // indices 1 and 2 tie at distance 1 from both chosen corners
  CHECK(geom::fps(corners, 3, 0) == std::vector<int64_t>{0, 3, 1});
}

TEST_CASE("fps argument validation") {
  Array pts({2, 3}, {0, 0, 0, 1, 1, 1});
  CHECK_THROWS_AS(geom::fps(pts, 3, 0), std::invalid_argument);
  CHECK_THROWS_AS(geom::fps(pts, 1, 5), std::invalid_argument);
  CHECK_THROWS_AS(geom::fps(pts, 0, 0), std::invalid_argument);
}

TEST_CASE("fps greedy argmax matches brute force on random clouds") {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const int64_t n = 16 + rng.below(49);
    const Array cloud = oracles::random_cloud(n, rng);
    const auto picked = geom::fps(cloud, std::min<int64_t>(16, n), rng.below(n));
    CHECK(oracles::fps_greedy_property(cloud, picked));
  }
}

TEST_CASE("fps with m = N returns a permutation") {
  Rng rng(22);
  const Array cloud = oracles::random_cloud(40, rng);
  auto picked = geom::fps(cloud, 40, 7);
  std::sort(picked.begin(), picked.end());
  for (int64_t i = 0; i < 40; ++i) CHECK(picked[static_cast<size_t>(i)] == i);
}

TEST_CASE("fps is invariant under rigid rotation") {
  Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    const int64_t n = 32 + rng.below(64);
    const Array cloud = oracles::random_cloud(n, rng);
    const Array rot = oracles::random_rotation(rng);
    const Array rotated = oracles::apply_rotation(cloud, rot);
    const int64_t start = rng.below(n);
    CHECK(geom::fps(cloud, 12, start) == geom::fps(rotated, 12, start));
  }
}

TEST_CASE("knn basics") {
  SUBCASE("coincident query returns that ref first at distance zero") {
    Array refs({3, 3}, {0, 0, 0, 1, 0, 0, 0, 2, 0});
    Array q({1, 3}, {1, 0, 0});
    auto nn = geom::knn(q, refs, 2);
    CHECK(nn.at(0, 0) == 1);
    CHECK(nn.d2(0, 0) == 0.0);
  }

  SUBCASE("line of refs, query at 1.4") {
    Array refs({4, 3}, {0, 0, 0, 1, 0, 0, 2, 0, 0, 3, 0, 0});
    Array q({1, 3}, {1.4, 0, 0});
    auto nn = geom::knn(q, refs, 2);
    CHECK(nn.at(0, 0) == 1);
    CHECK(nn.at(0, 1) == 2);
  }

  SUBCASE("k > refs raises") {
    Array refs({2, 3}, {0, 0, 0, 1, 0, 0});
    CHECK_THROWS_AS(geom::knn(refs, refs, 3), std::invalid_argument);
  }

  SUBCASE("32 queries vs 128 refs match the exhaustive sort oracle") {
    Rng rng(31);
    const Array queries = oracles::random_cloud(32, rng);
    const Array refs = oracles::random_cloud(128, rng);
    auto nn = geom::knn(queries, refs, 3);
    for (int64_t q = 0; q < 32; ++q) {
      std::vector<std::pair<double, int64_t>> all;
      for (int64_t r = 0; r < 128; ++r) {
        double d = 0;
        for (int c = 0; c < 3; ++c) {
          const double diff = queries.at(q, c) - refs.at(r, c);
          d += diff * diff;
        }
        all.emplace_back(d, r);
      }
      std::sort(all.begin(), all.end());
      for (int64_t j = 0; j < 3; ++j) CHECK(nn.at(q, j) == all[static_cast<size_t>(j)].second);
    }
  }
}

TEST_CASE("propagate") {
  SUBCASE("destination at the centroid of an equilateral triangle") {
    const double s3 = std::sqrt(3.0);
    Array src({3, 3}, {1, 0, 0, -0.5, s3 / 2, 0, -0.5, -s3 / 2, 0});
    Array dst({1, 3}, {0, 0, 0});
    Var feats = ad::constant(Array({3, 1}, {1.0, 2.0, 3.0}));
    CHECK(geom::propagate(dst, src, feats)->value[0] == doctest::Approx(2.0).epsilon(1e-9));
  }

  SUBCASE("destination equal to a source copies the feature exactly") {
    Array src({3, 3}, {0, 0, 0, 1, 0, 0, 0, 1, 0});
    Array dst({1, 3}, {1, 0, 0});
    Var feats = ad::constant(Array({3, 1}, {1.0, 7.5, -3.0}));
    CHECK(geom::propagate(dst, src, feats)->value[0] == 7.5);
  }

  SUBCASE("random case matches the stated weight formula") {
    Rng rng(41);
    const Array src = oracles::random_cloud(3, rng);
    const Array dst = oracles::random_cloud(5, rng);
    Array feats({3, 2});
    for (int64_t i = 0; i < 6; ++i) feats[i] = rng.uniform(-2, 2);
    Var out = geom::propagate(dst, src, ad::constant(feats));
    for (int64_t i = 0; i < 5; ++i) {
      double w[3], wsum = 0;
      for (int64_t j = 0; j < 3; ++j) {
        double d2 = 0;
        for (int c = 0; c < 3; ++c) {
          const double diff = dst.at(i, c) - src.at(j, c);
          d2 += diff * diff;
        }
        w[j] = 1.0 / (d2 + 1e-8);
        wsum += w[j];
      }
      for (int64_t ch = 0; ch < 2; ++ch) {
        double expect = 0;
        for (int64_t j = 0; j < 3; ++j) expect += w[j] / wsum * feats.at(j, ch);
        CHECK(out->value.at(i, ch) == doctest::Approx(expect).epsilon(1e-12));
      }
    }
  }

  SUBCASE("fewer than 3 sources raises") {
    Array src({2, 3}, {0, 0, 0, 1, 0, 0});
    Array dst({1, 3}, {0.5, 0, 0});
    CHECK_THROWS_AS(geom::propagate(dst, src, ad::constant(Array({2, 1}, {1, 2}))),
                    std::invalid_argument);
  }

  SUBCASE("constant fields are reproduced exactly") {
    Rng rng(42);
    const Array src = oracles::random_cloud(20, rng);
    const Array dst = oracles::random_cloud(35, rng);
    Var out = geom::propagate(dst, src, ad::constant(Array::full({20, 4}, 3.25)));
    for (int64_t i = 0; i < out->value.size(); ++i)
      CHECK(out->value[i] == doctest::Approx(3.25).epsilon(1e-12));
  }

  SUBCASE("output is a convex combination of its three neighbours") {
    Rng rng(43);
    const Array src = oracles::random_cloud(12, rng);
    const Array dst = oracles::random_cloud(30, rng);
    Array feats({12, 3});
    for (int64_t i = 0; i < feats.size(); ++i) feats[i] = rng.uniform(-5, 5);
    const auto nn = geom::knn(dst, src, 3);
    Var out = geom::propagate(dst, src, ad::constant(feats));
    for (int64_t i = 0; i < 30; ++i)
      for (int64_t ch = 0; ch < 3; ++ch) {
        double lo = 1e300, hi = -1e300;
        for (int64_t j = 0; j < 3; ++j) {
          lo = std::min(lo, feats.at(nn.at(i, j), ch));
          hi = std::max(hi, feats.at(nn.at(i, j), ch));
        }
        CHECK(out->value.at(i, ch) >= lo - 1e-12);
        CHECK(out->value.at(i, ch) <= hi + 1e-12);
      }
  }
}

namespace {
geom::UpsampleParams identity_upsample(ad::ParamStore& store, int64_t c) {
  // square identity projections so edge features are directly inspectable
  Array eye({c, c});
  for (int64_t i = 0; i < c; ++i) eye.at(i, i) = 1.0;
  geom::UpsampleParams p;
  p.src_proj = store.create("t.src_proj", eye);
  p.dst_proj = store.create("t.dst_proj", eye);
  Array w({2 * c, c});
  for (int64_t i = 0; i < c; ++i) w.at(i, i) = 1.0;
  p.edge_weight = store.create("t.edge.w", w);
  p.edge_bias = store.create("t.edge.b", Array::zeros({1, c}));
  return p;
}
}  // namespace

TEST_CASE("upsample") {
  SUBCASE("identical src/dst with identity projections: finite, right shape") {
    Rng rng(51);
    ad::ParamStore store;
    auto p = identity_upsample(store, 4);
    const Array coords = oracles::random_cloud(9, rng);
    Array feats({9, 4});
    for (int64_t i = 0; i < feats.size(); ++i) feats[i] = rng.uniform(-1, 1);
    Var out = geom::upsample(coords, ad::constant(feats), coords, ad::constant(feats), p, 8);
    CHECK(out->value.shape() == std::vector<int64_t>{9, 4});
    CHECK(out->value.all_finite());
  }

  SUBCASE("single source point degenerates to the single edge value") {
    Rng rng(52);
    ad::ParamStore store;
    auto p = identity_upsample(store, 3);
    Array sc({1, 3}, {0, 0, 0});
    Array scf({1, 3}, {0.3, -0.2, 0.9});
    const Array dc = oracles::random_cloud(5, rng);
    Array dcf({5, 3});
    for (int64_t i = 0; i < dcf.size(); ++i) dcf[i] = rng.uniform(-1, 1);
    Var out = geom::upsample(sc, ad::constant(scf), dc, ad::constant(dcf), p, 8);
    // identity wiring: edge value = gelu(src - dst) in the first c slots
    for (int64_t i = 0; i < 5; ++i)
      for (int64_t ch = 0; ch < 3; ++ch) {
        const double e = scf[ch] - dcf.at(i, ch);
        const double g = e * 0.5 * (1.0 + std::erf(e / std::sqrt(2.0)));
        CHECK(out->value.at(i, ch) == doctest::Approx(g).epsilon(1e-12));
      }
  }

  SUBCASE("gradient w.r.t. every parameter passes finite differences") {
    Rng rng(53);
    ad::ParamStore store;
    auto p = geom::make_upsample(store, "up", 3, 4, 4, 3, rng);
    const Array sc = oracles::random_cloud(7, rng);
    const Array dc = oracles::random_cloud(5, rng);
    Var sf = ad::leaf(Array({7, 3}));
    Var df = ad::leaf(Array({5, 4}));
    for (int64_t i = 0; i < sf->value.size(); ++i) sf->value[i] = rng.uniform(-1, 1);
    for (int64_t i = 0; i < df->value.size(); ++i) df->value[i] = rng.uniform(-1, 1);
    auto fn = [&]() { return ad::sum(geom::upsample(sc, sf, dc, df, p, 3)); };
    for (const auto& [name, var] : store.all()) {
      std::vector<int64_t> all(static_cast<size_t>(var->value.size()));
      std::iota(all.begin(), all.end(), 0);
      auto rep = ad::grad_check_param(fn, var, all, 1e-5, 1e-4);
      CAPTURE(name);
      CHECK(rep.passed);
    }
  }
}

namespace {
enc::EncoderOutput synthetic_encoder_output(const geom::PointCloud& cloud, int64_t centers,
                                            int64_t width, int64_t sparse_width, Rng& rng) {
  enc::EncoderOutput out;
  out.p1_indices = geom::fps(cloud.coords, centers, 0);
  auto fill = [&](std::vector<int64_t> shape) {
    Array a(std::move(shape));
    for (int64_t i = 0; i < a.size(); ++i) a[i] = rng.uniform(-1, 1);
    return a;
  };
  out.tokens = ad::leaf(fill({centers, width}));
  out.tap_shallow = ad::leaf(fill({centers, width}));
  out.tap_deep = ad::leaf(fill({centers, width}));
  out.global_feat = ad::leaf(fill({1, sparse_width}));
  return out;
}
}  // namespace

TEST_CASE("build_dense") {
  SUBCASE("shape contract at full scale") {
    Rng rng(61);
    geom::PointCloud cloud;
    cloud.coords = oracles::random_cloud(2048, rng);
    cloud = data::normalize(cloud);
    auto enc_out = synthetic_encoder_output(cloud, 128, 64, 96, rng);
    ad::ParamStore store;
    enc::EncoderConfig ecfg;
    ecfg.width = 64;
    geom::PyramidConfig pcfg;
    pcfg.n2 = 512;
    pcfg.n3 = 1024;
    pcfg.dense_width = 128;
    geom::init_pyramid_params(ecfg, pcfg, 99, store);
    auto pyr = geom::build_dense(cloud, enc_out, pcfg, store);
    CHECK(pyr.dense_feats->value.shape() == std::vector<int64_t>{2048, 128});
    CHECK(pyr.feats_l2->value.shape() == std::vector<int64_t>{512, 64});
    CHECK(pyr.feats_l3->value.shape() == std::vector<int64_t>{1024, 64});
    CHECK(static_cast<int64_t>(pyr.p2_indices.size()) == 512);
    CHECK(static_cast<int64_t>(pyr.p3_indices.size()) == 1024);
    CHECK(pyr.dense_feats->value.all_finite());

    // index sets are duplicate-free and |P2| < |P3| < N
    auto unique_count = [](std::vector<int64_t> v) {
      std::sort(v.begin(), v.end());
      return std::unique(v.begin(), v.end()) - v.begin();
    };
    CHECK(unique_count(pyr.p2_indices) == 512);
    CHECK(unique_count(pyr.p3_indices) == 1024);
  }

  SUBCASE("bad level sizes are rejected") {
    Rng rng(62);
    geom::PointCloud cloud;
    cloud.coords = oracles::random_cloud(64, rng);
    auto enc_out = synthetic_encoder_output(cloud, 8, 8, 8, rng);
    ad::ParamStore store;
    enc::EncoderConfig ecfg;
    ecfg.width = 8;
    geom::PyramidConfig pcfg;
    pcfg.n2 = 32;
    pcfg.n3 = 32;  // n2 >= n3
    pcfg.dense_width = 8;
    geom::init_pyramid_params(ecfg, pcfg, 1, store);
    CHECK_THROWS_AS(geom::build_dense(cloud, enc_out, pcfg, store), std::invalid_argument);
    pcfg.n2 = 16;
    pcfg.n3 = 64;  // n3 >= N
    CHECK_THROWS_AS(geom::build_dense(cloud, enc_out, pcfg, store), std::invalid_argument);
  }

  SUBCASE("deterministic: identical inputs give bit-identical features") {
    Rng rng(63);
    geom::PointCloud cloud;
    cloud.coords = oracles::random_cloud(160, rng);
    cloud = data::normalize(cloud);
    auto enc_out = synthetic_encoder_output(cloud, 16, 8, 8, rng);
    ad::ParamStore store;
    enc::EncoderConfig ecfg;
    ecfg.width = 8;
    geom::PyramidConfig pcfg;
    pcfg.n2 = 40;
    pcfg.n3 = 80;
    pcfg.dense_width = 8;
    geom::init_pyramid_params(ecfg, pcfg, 7, store);
    auto a = geom::build_dense(cloud, enc_out, pcfg, store);
    auto b = geom::build_dense(cloud, enc_out, pcfg, store);
    for (int64_t i = 0; i < a.dense_feats->value.size(); ++i)
      CHECK(a.dense_feats->value[i] == b.dense_feats->value[i]);
  }

  SUBCASE("sensitivity and full-chain gradients") {
    Rng rng(64);
    geom::PointCloud cloud;
    cloud.coords = oracles::random_cloud(60, rng);
    cloud = data::normalize(cloud);
    auto enc_out = synthetic_encoder_output(cloud, 10, 6, 6, rng);
    ad::ParamStore store;
    enc::EncoderConfig ecfg;
    ecfg.width = 6;
    geom::PyramidConfig pcfg;
    pcfg.n2 = 20;
    pcfg.n3 = 40;
    pcfg.dense_width = 6;
    pcfg.up_k = 4;
    geom::init_pyramid_params(ecfg, pcfg, 13, store);

    const Array before = geom::build_dense(cloud, enc_out, pcfg, store).dense_feats->value;
    Var w = store.get("pyramid/up1.edge.w");
    const double saved = w->value[0];
    w->value[0] += 0.05;
    const Array after = geom::build_dense(cloud, enc_out, pcfg, store).dense_feats->value;
    w->value[0] = saved;
    double diff = 0;
    for (int64_t i = 0; i < before.size(); ++i) diff += std::abs(after[i] - before[i]);
    CHECK(diff > 1e-9);  // perturbing a weight changes the dense features

    auto fn = [&]() { return ad::sum(geom::build_dense(cloud, enc_out, pcfg, store).dense_feats); };
    for (const char* name : {"pyramid/up1.edge.w", "pyramid/up2.src_proj", "pyramid/up2.edge.b"}) {
      Var target = store.get(name);
      std::vector<int64_t> elems;
      for (int64_t i = 0; i < std::min<int64_t>(12, target->value.size()); ++i) elems.push_back(i);
      auto rep = ad::grad_check_param(fn, target, elems, 1e-5, 1e-4);
      CAPTURE(name);
      CHECK(rep.passed);
    }
    // gradients also reach the encoder taps through the propagate chain
    auto rep = ad::grad_check_param(fn, enc_out.tap_deep, {0, 1, 2, 3}, 1e-5, 1e-4);
    CHECK(rep.passed);
  }
}

TEST_CASE("PointCloud validation") {
  geom::PointCloud empty;
  empty.coords = Array({0, 3});
  CHECK_THROWS_AS(empty.validate(), std::invalid_argument);

  geom::PointCloud bad;
  bad.coords = Array({2, 3}, {0, 0, 0, std::numeric_limits<double>::quiet_NaN(), 0, 0});
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
