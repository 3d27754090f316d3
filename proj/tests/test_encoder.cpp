#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "affseq/data.hpp"
#include "affseq/encoder.hpp"
#include "oracles.hpp"

using namespace affseq;
using ad::Array;
using ad::Var;

namespace {
enc::EncoderConfig tiny_cfg() {
  enc::EncoderConfig cfg;
  cfg.centers = 8;
  cfg.k = 6;
  cfg.width = 16;
  cfg.depth = 2;
  cfg.heads = 2;
  cfg.tap_shallow = 1;
  cfg.tap_deep = 2;
  cfg.sparse_width = 16;
  return cfg;
}

geom::PointCloud random_normalized_cloud(int64_t n, Rng& rng) {
  geom::PointCloud cloud;
  cloud.coords = oracles::random_cloud(n, rng);
  return data::normalize(cloud);
}
}  // namespace

TEST_CASE("group shapes and invariances") {
  Rng rng(71);
  geom::PointCloud cloud = random_normalized_cloud(2048, rng);
  enc::EncoderConfig cfg;  // defaults: 128 centers, k=32

  auto g = enc::group(cloud, cfg);
  CHECK(static_cast<int64_t>(g.center_indices.size()) == 128);
  CHECK(g.rel_coords.shape() == std::vector<int64_t>{128 * 32, 3});

  SUBCASE("relative coordinate sums are bounded by k times the max pairwise distance") {
    double max_pairwise = 0;  // diameter bound via 2 * max norm
    for (int64_t i = 0; i < cloud.size(); ++i) {
      double norm = 0;
      for (int c = 0; c < 3; ++c) norm += cloud.coords.at(i, c) * cloud.coords.at(i, c);
      max_pairwise = std::max(max_pairwise, 2.0 * std::sqrt(norm));
    }
    for (int64_t c = 0; c < cfg.centers; ++c) {
      double sx = 0, sy = 0, sz = 0;
      for (int64_t j = 0; j < cfg.k; ++j) {
        sx += g.rel_coords.at(c * cfg.k + j, 0);
        sy += g.rel_coords.at(c * cfg.k + j, 1);
        sz += g.rel_coords.at(c * cfg.k + j, 2);
      }
      CHECK(std::sqrt(sx * sx + sy * sy + sz * sz) <=
            static_cast<double>(cfg.k) * max_pairwise + 1e-9);
    }
  }

  SUBCASE("translation leaves relative neighbourhood coordinates unchanged") {
    geom::PointCloud shifted;
    shifted.coords = Array(cloud.coords.shape());
    for (int64_t i = 0; i < cloud.size(); ++i) {
      shifted.coords.at(i, 0) = cloud.coords.at(i, 0) + 2.5;
      shifted.coords.at(i, 1) = cloud.coords.at(i, 1) - 1.0;
      shifted.coords.at(i, 2) = cloud.coords.at(i, 2) + 0.25;
    }
    auto g2 = enc::group(shifted, cfg);
    CHECK(g2.center_indices == g.center_indices);
    for (int64_t i = 0; i < g.rel_coords.size(); ++i)
      CHECK(g2.rel_coords[i] == doctest::Approx(g.rel_coords[i]).epsilon(1e-9));
  }
}

TEST_CASE("encode shape contract at the default configuration") {
  Rng rng(72);
  geom::PointCloud cloud = random_normalized_cloud(2048, rng);
  enc::EncoderConfig cfg;  // centers=128, k=32, width=128, depth=4, heads=4, taps {2,4}
  cfg.sparse_width = 256;
  ad::ParamStore store;
  enc::init_params(cfg, 5, store);
  auto out = enc::encode(cloud, cfg, store);
  CHECK(out.tokens->value.shape() == std::vector<int64_t>{128, 128});
  CHECK(out.tap_shallow->value.shape() == std::vector<int64_t>{128, 128});
  CHECK(out.tap_deep->value.shape() == std::vector<int64_t>{128, 128});
  CHECK(out.global_feat->value.shape() == std::vector<int64_t>{1, 256});
  CHECK(out.global_feat->value.all_finite());
}

TEST_CASE("encode determinism and gradients") {
  Rng rng(73);
  geom::PointCloud cloud = random_normalized_cloud(64, rng);
  const auto cfg = tiny_cfg();
  ad::ParamStore store;
  enc::init_params(cfg, 17, store);

  SUBCASE("identical clouds produce identical outputs") {
    auto a = enc::encode(cloud, cfg, store);
    auto b = enc::encode(cloud, cfg, store);
    for (int64_t i = 0; i < a.global_feat->value.size(); ++i)
      CHECK(a.global_feat->value[i] == b.global_feat->value[i]);
    for (int64_t i = 0; i < a.tokens->value.size(); ++i)
      CHECK(a.tokens->value[i] == b.tokens->value[i]);
  }

  SUBCASE("sum(global) gradient w.r.t. a sample of every parameter") {
    auto fn = [&]() { return ad::sum(enc::encode(cloud, cfg, store).global_feat); };
    Rng pick(99);
    for (const auto& [name, var] : store.all()) {
      // roughly 1% of elements, at least 2 per tensor
      const int64_t want = std::max<int64_t>(2, var->value.size() / 100);
      std::vector<int64_t> elems;
      for (int64_t i = 0; i < want; ++i) elems.push_back(pick.below(var->value.size()));
      std::sort(elems.begin(), elems.end());
      elems.erase(std::unique(elems.begin(), elems.end()), elems.end());
      auto rep = ad::grad_check_param(fn, var, elems, 1e-5, 1e-4);
      CAPTURE(name);
      CAPTURE(rep.worst_rel_err);
      CHECK(rep.passed);
    }
  }
}

TEST_CASE("encode is invariant to point order given a fixed start point") {
  Rng rng(74);
  geom::PointCloud cloud = random_normalized_cloud(96, rng);
  const auto cfg = tiny_cfg();
  ad::ParamStore store;
  enc::init_params(cfg, 19, store);
  auto base = enc::encode(cloud, cfg, store, 0);

  // permute the points; the old point 0 moves to position `where`
  std::vector<int64_t> perm(96);
  std::iota(perm.begin(), perm.end(), 0);
  Rng shuffler(7);
  shuffler.shuffle(perm);
  geom::PointCloud permuted;
  permuted.coords = Array(cloud.coords.shape());
  int64_t where = -1;
  for (int64_t i = 0; i < 96; ++i) {
    for (int c = 0; c < 3; ++c) permuted.coords.at(i, c) = cloud.coords.at(perm[i], c);
    if (perm[static_cast<size_t>(i)] == 0) where = i;
  }
  auto moved = enc::encode(permuted, cfg, store, where);

  // identical center geometry
  for (size_t i = 0; i < base.p1_indices.size(); ++i) {
    const int64_t orig = base.p1_indices[i];
    const int64_t via_perm = perm[static_cast<size_t>(moved.p1_indices[i])];
    CHECK(orig == via_perm);
  }
  for (int64_t i = 0; i < base.global_feat->value.size(); ++i)
    CHECK(moved.global_feat->value[i] == doctest::Approx(base.global_feat->value[i]).epsilon(1e-6));
}

TEST_CASE("init_params") {
  const auto cfg = tiny_cfg();

  SUBCASE("same seed is bit-identical, different seed differs") {
    ad::ParamStore a, b, c;
    enc::init_params(cfg, 123, a);
    enc::init_params(cfg, 123, b);
    enc::init_params(cfg, 124, c);
    bool any_diff = false;
    for (const auto& [name, va] : a.all()) {
      const auto vb = b.get(name);
      const auto vc = c.get(name);
      for (int64_t i = 0; i < va->value.size(); ++i) {
        CHECK(va->value[i] == vb->value[i]);
        if (va->value[i] != vc->value[i]) any_diff = true;
      }
    }
    CHECK(any_diff);
  }

  SUBCASE("weight variance tracks the scaled-uniform formula within 20%") {
    // U(-a, a) has variance a^2/3; sample 10k values through the initializer
    Rng rng(55);
    const int64_t fan_in = 64, fan_out = 32;
    Array w = ad::uniform_init({10000}, fan_in, fan_out, rng);
    double mean = 0;
    for (int64_t i = 0; i < w.size(); ++i) mean += w[i];
    mean /= static_cast<double>(w.size());
    double var = 0;
    for (int64_t i = 0; i < w.size(); ++i) var += (w[i] - mean) * (w[i] - mean);
    var /= static_cast<double>(w.size());
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    const double expect = a * a / 3.0;
    CHECK(var > 0.8 * expect);
    CHECK(var < 1.2 * expect);
  }
}

TEST_CASE("tap configuration is validated") {
  auto cfg = tiny_cfg();
  cfg.tap_deep = 3;  // depth is 2
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_cfg();
  cfg.width = 15;  // not divisible by heads
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
