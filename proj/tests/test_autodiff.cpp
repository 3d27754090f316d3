#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "affseq/autodiff.hpp"
#include "affseq/common.hpp"

using namespace affseq;
using ad::Array;
using ad::Var;

namespace {
Array rand_array(std::vector<int64_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Array a(std::move(shape));
  for (int64_t i = 0; i < a.size(); ++i) a[i] = rng.uniform(lo, hi);
  return a;
}

// doubles the input but reports a gradient for 3x: a broken backward rule
Var corrupted_double(const Var& x) {
  auto n = std::make_shared<ad::Node>();
  n->value = Array(x->value.shape());
  for (int64_t i = 0; i < n->value.size(); ++i) n->value[i] = 2.0 * x->value[i];
  n->requires_grad = x->requires_grad;
  if (n->requires_grad) {
    n->parents = {x};
    n->backward_fn = [x](const Array& g, ad::GradSink& sink) {
      Array bad(g.shape());
      for (int64_t i = 0; i < g.size(); ++i) bad[i] = 3.0 * g[i];
      sink.add(x, bad);
    };
  }
  return n;
}
}  // namespace

TEST_CASE("pointwise op values") {
  Var x = ad::leaf(Array({1}, {0.0}));
  CHECK(ad::sigmoid(x)->value[0] == doctest::Approx(0.5).epsilon(1e-12));

  Var logits = ad::constant(Array({1, 4}, {3.0, 3.0, 3.0, 3.0}));
  Var sm = ad::softmax_rows(logits);
  for (int64_t i = 0; i < 4; ++i) CHECK(sm->value[i] == doctest::Approx(0.25).epsilon(1e-12));

  // layer-normalization of [1,2,3]: mu = 2, biased var = 2/3
  Var v = ad::constant(Array({1, 3}, {1.0, 2.0, 3.0}));
  Var gain = ad::constant(Array::full({3}, 1.0));
  Var bias = ad::constant(Array::zeros({3}));
  Var ln = ad::layer_norm_rows(v, gain, bias, 1e-5);
  const double expected = 1.0 / std::sqrt(2.0 / 3.0 + 1e-5);
  CHECK(ln->value[0] == doctest::Approx(-expected).epsilon(1e-12));
  CHECK(ln->value[1] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(ln->value[2] == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("backward basics") {
  SUBCASE("y = x*x at x=3 gives dy/dx = 6") {
    Var x = ad::leaf(Array({1}, {3.0}));
    Var y = ad::mul(x, x);
    ad::backward(y);
    CHECK(x->grad_or_zeros()[0] == doctest::Approx(6.0).epsilon(1e-12));
  }

  SUBCASE("y = sum(A*B) matches finite differences") {
    Rng rng(11);
    const Array a0 = rand_array({3, 4}, rng);
    const Array b0 = rand_array({4, 2}, rng);
    Var b = ad::constant(b0);
    auto fn = [&](const Var& a) { return ad::sum(ad::matmul(a, b)); };
    CHECK(ad::grad_check(fn, a0, 1e-5, 1e-6).passed);
    Var a = ad::constant(a0);
    auto fnb = [&](const Var& bb) { return ad::sum(ad::matmul(a, bb)); };
    CHECK(ad::grad_check(fnb, b0, 1e-5, 1e-6).passed);
  }

  SUBCASE("disconnected leaf gets exactly zero") {
    Var x = ad::leaf(Array({1}, {2.0}));
    Var unused = ad::leaf(Array({2, 2}, {1, 2, 3, 4}));
    Var y = ad::mul(x, x);
    ad::backward(y);
    const Array g = unused->grad_or_zeros();
    for (int64_t i = 0; i < g.size(); ++i) CHECK(g[i] == 0.0);
  }

  SUBCASE("non-scalar root is rejected") {
    Var x = ad::leaf(Array({2}, {1.0, 2.0}));
    CHECK_THROWS_AS(ad::backward(ad::scale(x, 2.0)), std::invalid_argument);
  }

  SUBCASE("backward twice without reset accumulates to exactly double") {
    Rng rng(5);
    Var x = ad::leaf(rand_array({3, 3}, rng));
    Var w = ad::leaf(rand_array({3, 2}, rng));
    Var y = ad::sum(ad::gelu(ad::matmul(x, w)));
    ad::backward(y);
    const Array g1 = x->grad_or_zeros();
    const Array gw1 = w->grad_or_zeros();
    ad::backward(y);
    const Array g2 = x->grad_or_zeros();
    const Array gw2 = w->grad_or_zeros();
    for (int64_t i = 0; i < g1.size(); ++i) CHECK(g2[i] == 2.0 * g1[i]);
    for (int64_t i = 0; i < gw1.size(); ++i) CHECK(gw2[i] == 2.0 * gw1[i]);
    x->zero_grad();
    ad::backward(y);
    const Array g3 = x->grad_or_zeros();
    for (int64_t i = 0; i < g1.size(); ++i) CHECK(g3[i] == g1[i]);
  }
}

TEST_CASE("shape errors name both shapes") {
  Var a = ad::leaf(Array({2, 3}));
  Var b = ad::leaf(Array({4, 5}));
  try {
    ad::add(a, b);
    FAIL("expected a shape error");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x5]") != std::string::npos);
  }
  CHECK_THROWS_AS(ad::matmul(a, b), std::invalid_argument);
}

TEST_CASE("grad_check utility") {
  SUBCASE("sum of squares passes at 1e-6") {
    Rng rng(3);
    auto fn = [](const Var& x) { return ad::sum(ad::mul(x, x)); };
    CHECK(ad::grad_check(fn, rand_array({7}, rng), 1e-5, 1e-6).passed);
  }

  SUBCASE("softmax cross-entropy passes at 1e-4") {
    Rng rng(4);
    auto fn = [](const Var& x) {
      Var probs = ad::softmax_rows(x);
      return ad::neg(ad::sum(ad::log(ad::slice_cols(probs, 2, 1))));
    };
    CHECK(ad::grad_check(fn, rand_array({1, 6}, rng, -2.0, 2.0), 1e-5, 1e-4).passed);
  }

  SUBCASE("corrupted backward rule fails and reports the worst index") {
    auto fn = [](const Var& x) { return ad::sum(corrupted_double(x)); };
    Array pt({3}, {0.5, -0.25, 1.5});
    auto rep = ad::grad_check(fn, pt, 1e-5, 1e-4);
    CHECK_FALSE(rep.passed);
    CHECK(rep.worst_index >= 0);
    CHECK(rep.worst_index < 3);
    CHECK(rep.worst_rel_err > 0.1);
  }

  SUBCASE("non-finite fn output raises an evaluation error") {
    auto fn = [](const Var& x) { return ad::sum(ad::log(x)); };
    Array pt({2}, {1e-9, 0.5});  // perturbing below zero makes log NaN
    CHECK_THROWS_AS(ad::grad_check(fn, pt, 1e-5, 1e-4), NumericError);
  }
}

TEST_CASE("every primitive passes grad_check on 10 random small inputs") {
  Rng seeds(12345);

  auto far_from_zero = [](std::vector<int64_t> shape, Rng& r) {
    Array a(std::move(shape));
    for (int64_t i = 0; i < a.size(); ++i) {
      const double v = r.uniform(0.05, 1.0);
      a[i] = r.uniform() < 0.5 ? -v : v;
    }
    return a;
  };

  struct Case {
    const char* name;
    std::function<Array(Rng&)> point;
    std::function<Var(const Var&, Rng&)> build;
  };

  const std::vector<Case> cases = {
      {"add", [](Rng& r) { return rand_array({4, 3}, r); },
       [](const Var& x, Rng& r) { return ad::sum(ad::add(x, ad::constant(rand_array({4, 3}, r)))); }},
      {"add row broadcast", [](Rng& r) { return rand_array({1, 3}, r); },
       [](const Var& x, Rng& r) { return ad::sum(ad::add(ad::constant(rand_array({4, 3}, r)), x)); }},
      {"sub", [](Rng& r) { return rand_array({4, 3}, r); },
       [](const Var& x, Rng& r) { return ad::sum(ad::sub(x, ad::constant(rand_array({4, 3}, r)))); }},
      {"mul", [](Rng& r) { return rand_array({4, 3}, r); },
       [](const Var& x, Rng& r) { return ad::sum(ad::mul(x, ad::constant(rand_array({4, 3}, r)))); }},
      {"div", [far_from_zero](Rng& r) { return far_from_zero({5}, r); },
       [](const Var& x, Rng& r) { return ad::sum(ad::div(ad::constant(rand_array({5}, r)), x)); }},
      {"scale", [](Rng& r) { return rand_array({6}, r); },
       [](const Var& x, Rng&) { return ad::sum(ad::scale(x, -1.7)); }},
      {"matmul", [](Rng& r) { return rand_array({4, 3}, r); },
       [](const Var& x, Rng& r) { return ad::sum(ad::matmul(x, ad::constant(rand_array({3, 5}, r)))); }},
      {"transpose", [](Rng& r) { return rand_array({3, 4}, r); },
       [](const Var& x, Rng&) {
         Var t = ad::transpose(x);
         return ad::sum(ad::mul(t, t));
       }},
      {"concat", [](Rng& r) { return rand_array({3, 4}, r); },
       [](const Var& x, Rng& r) {
         Var c = ad::concat_cols(x, ad::constant(rand_array({3, 2}, r)));
         Var d = ad::concat_rows(c, ad::constant(rand_array({2, 6}, r)));
         return ad::sum(ad::mul(d, d));
       }},
      {"slice_cols", [](Rng& r) { return rand_array({3, 5}, r); },
       [](const Var& x, Rng&) { return ad::sum(ad::slice_cols(x, 1, 2)); }},
      {"gather_rows", [](Rng& r) { return rand_array({4, 3}, r); },
       [](const Var& x, Rng&) {
         Var g = ad::gather_rows(x, {0, 2, 2, 1});
         return ad::sum(ad::mul(g, g));
       }},
      {"interp_rows", [](Rng& r) { return rand_array({4, 3}, r); },
       [](const Var& x, Rng&) {
         return ad::sum(
             ad::interp_rows(x, {0, 1, 2, 2, 3, 0}, {0.2, 0.3, 0.5, 0.9, 0.05, 0.05}, 3));
       }},
      {"broadcast", [](Rng& r) { return rand_array({1, 4}, r); },
       [](const Var& x, Rng&) {
         Var b = ad::broadcast_rows(x, 5);
         return ad::sum(ad::mul(b, b));
       }},
      {"sum", [](Rng& r) { return rand_array({7}, r); },
       [](const Var& x, Rng&) { return ad::sum(x); }},
      {"mean", [](Rng& r) { return rand_array({7}, r); },
       [](const Var& x, Rng&) { return ad::mean(x); }},
      {"max", [](Rng& r) { return rand_array({9}, r); },
       [](const Var& x, Rng&) { return ad::max(x); }},
      {"mean_rows", [](Rng& r) { return rand_array({4, 3}, r); },
       [](const Var& x, Rng&) {
         Var m = ad::mean_rows(x);
         return ad::sum(ad::mul(m, m));
       }},
      {"group_max_rows", [](Rng& r) { return rand_array({6, 4}, r); },
       [](const Var& x, Rng&) { return ad::sum(ad::group_max_rows(x, 3)); }},
      {"relu", [far_from_zero](Rng& r) { return far_from_zero({8}, r); },
       [](const Var& x, Rng&) { return ad::sum(ad::relu(x)); }},
      {"gelu", [](Rng& r) { return rand_array({8}, r, -2.0, 2.0); },
       [](const Var& x, Rng&) { return ad::sum(ad::gelu(x)); }},
      {"sigmoid", [](Rng& r) { return rand_array({8}, r, -3.0, 3.0); },
       [](const Var& x, Rng&) { return ad::sum(ad::sigmoid(x)); }},
      {"log", [](Rng& r) { return rand_array({8}, r, 0.2, 2.0); },
       [](const Var& x, Rng&) { return ad::sum(ad::log(x)); }},
      {"clamp", [](Rng& r) { return rand_array({8}, r, -0.7, 0.7); },
       [](const Var& x, Rng&) { return ad::sum(ad::clamp(x, -0.8, 0.8)); }},
      {"softmax", [](Rng& r) { return rand_array({2, 5}, r, -2.0, 2.0); },
       [](const Var& x, Rng&) {
         Var s = ad::softmax_rows(x);
         return ad::sum(ad::mul(s, s));
       }},
      {"layer_norm", [](Rng& r) { return rand_array({3, 4}, r); },
       [](const Var& x, Rng& r) {
         Var g = ad::constant(rand_array({4}, r, 0.5, 1.5));
         Var b = ad::constant(rand_array({4}, r));
         Var y = ad::layer_norm_rows(x, g, b);
         return ad::sum(ad::mul(y, y));
       }},
      {"attention", [](Rng& r) { return rand_array({2, 4}, r); },
       [](const Var& x, Rng& r) {
         Var k = ad::constant(rand_array({5, 4}, r));
         Var v = ad::constant(rand_array({5, 3}, r));
         return ad::sum(ad::attention(x, k, v));
       }},
  };

  for (const auto& c : cases) {
    CAPTURE(c.name);
    for (int inst = 0; inst < 10; ++inst) {
      const uint64_t point_seed = seeds.next_u64();
      const uint64_t build_seed = seeds.next_u64();
      Rng pr(point_seed);
      const Array pt = c.point(pr);
      auto fn = [&](const Var& x) {
        Rng br(build_seed);  // identical constants across every evaluation
        return c.build(x, br);
      };
      auto rep = ad::grad_check(fn, pt, 1e-5, 1e-4);
      CAPTURE(inst);
      CAPTURE(rep.worst_rel_err);
      CHECK(rep.passed);
    }
  }
}

TEST_CASE("op_set lists the contract minimum") {
  const auto ops = ad::op_set();
  for (const char* required : {"add", "mul", "matmul", "transpose", "concat", "gather_rows", "sum",
                               "mean", "max", "broadcast", "relu", "gelu", "sigmoid", "softmax",
                               "layer_norm", "attention"})
    CHECK(std::find(ops.begin(), ops.end(), required) != ops.end());
}
