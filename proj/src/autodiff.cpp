#include "affseq/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>
#include <utility>

#include "affseq/common.hpp"

namespace affseq::ad {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

Var make_node(Array value, std::vector<Var> parents,
              std::function<void(const Array&, GradSink&)> back) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool req = false;
  for (const auto& p : parents)
    if (p && p->requires_grad) {
      req = true;
      break;
    }
  if (req) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(back);
  }
  return n;
}

enum class BKind { Same, Row, Scalar, None };

// how b broadcasts against a
BKind bcast_of(const Array& a, const Array& b) {
  if (a.same_shape(b)) return BKind::Same;
  if (b.size() == 1) return BKind::Scalar;
  if (a.rank() == 2 && b.rank() <= 2 && (b.rank() == 1 || b.shape()[0] == 1) &&
      b.size() == a.shape()[1])
    return BKind::Row;
  return BKind::None;
}

template <typename F>
Array ew_bcast(const char* op, const Array& a, const Array& b, BKind kind, F f) {
  Array out(a.shape());
  const int64_t n = a.size();
  switch (kind) {
    case BKind::Same:
      for (int64_t i = 0; i < n; ++i) out[i] = f(a[i], b[i]);
      break;
    case BKind::Scalar: {
      const double s = b[0];
      for (int64_t i = 0; i < n; ++i) out[i] = f(a[i], s);
      break;
    }
    case BKind::Row: {
      const int64_t c = a.cols();
      for (int64_t i = 0; i < n; ++i) out[i] = f(a[i], b[i % c]);
      break;
    }
    default:
      throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                                  b.shape_str());
  }
  return out;
}

// sums g down to `shape` (used for broadcast backward)
Array reduce_to(const Array& g, const std::vector<int64_t>& shape, BKind kind) {
  if (kind == BKind::Same) return g;
  Array out = Array::zeros(shape);
  if (kind == BKind::Scalar) {
    double s = 0.0;
    for (int64_t i = 0; i < g.size(); ++i) s += g[i];
    out[0] = s;
    return out;
  }
  const int64_t c = g.cols();
  for (int64_t i = 0; i < g.size(); ++i) out[i % c] += g[i];
  return out;
}

Array transpose_val(const Array& a) {
  const int64_t r = a.rows(), c = a.cols();
  Array out({c, r});
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) out.at(j, i) = a.at(i, j);
  return out;
}

// out = A * B^T
void matmul_nt_into(Array& out, const Array& a, const Array& b) {
  const int64_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k)
    throw std::invalid_argument("matmul_nt: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  out = Array({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = out.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (m * n * k > 65536)
#endif
  for (int64_t i = 0; i < m; ++i) {
    const double* ai = pa + i * k;
    double* ci = pc + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const double* bj = pb + j * k;
      double s = 0.0;
      for (int64_t l = 0; l < k; ++l) s += ai[l] * bj[l];
      ci[j] = s;
    }
  }
}

// out = A^T * B
void matmul_tn_into(Array& out, const Array& a, const Array& b) {
  const int64_t m = a.cols(), k = a.rows(), n = b.cols();
  if (b.rows() != k)
    throw std::invalid_argument("matmul_tn: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  out = Array({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = out.data();
  for (int64_t l = 0; l < k; ++l) {
    const double* al = pa + l * m;
    const double* bl = pb + l * n;
    for (int64_t i = 0; i < m; ++i) {
      const double av = al[i];
      if (av == 0.0) continue;
      double* ci = pc + i * n;
      for (int64_t j = 0; j < n; ++j) ci[j] += av * bl[j];
    }
  }
}

}  // namespace

Var leaf(Array value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

Var constant(Array value) { return leaf(std::move(value), false); }

void GradSink::add(const Var& v, const Array& g) {
  if (!v || !v->requires_grad) return;
  auto it = slots_.find(v.get());
  if (it == slots_.end()) {
    slots_.emplace(v.get(), g);
  } else {
    it->second.add_inplace(g);
  }
}

Array* GradSink::find(Node* n) {
  auto it = slots_.find(n);
  return it == slots_.end() ? nullptr : &it->second;
}

namespace {

std::vector<Node*> topo_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> visited{root};
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root, 0);
  while (!stack.empty()) {
    auto& top = stack.back();
    if (top.second < top.first->parents.size()) {
      Node* p = top.first->parents[top.second++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(top.first);
      stack.pop_back();
    }
  }
  std::reverse(order.begin(), order.end());
  return order;
}

}  // namespace

void backward(const Var& root) {
  if (!root) throw std::invalid_argument("backward: null root");
  if (root->value.size() != 1)
    throw std::invalid_argument("backward: root must be scalar, got shape " + root->value.shape_str());
  if (!root->requires_grad) return;

  GradSink sink;
  sink.slots_.emplace(root.get(), Array::full(root->value.shape(), 1.0));
  for (Node* n : topo_order(root.get())) {
    Array* g = sink.find(n);
    if (!g) continue;
    if (n->backward_fn) n->backward_fn(*g, sink);
  }
  for (auto& [n, g] : sink.slots_) {
    if (!n->is_leaf()) continue;
    if (!n->grad_valid) {
      n->grad = g;
      n->grad_valid = true;
    } else {
      n->grad.add_inplace(g);
    }
  }
}

// ---- binary elementwise ----------------------------------------------------

Var add(const Var& a, const Var& b) {
  const Array *pa = &a->value, *pb = &b->value;
  Var va = a, vb = b;
  BKind kind = bcast_of(*pa, *pb);
  if (kind == BKind::None && bcast_of(*pb, *pa) != BKind::None) {
    std::swap(pa, pb);
    std::swap(va, vb);
    kind = bcast_of(*pa, *pb);
  }
  Array out = ew_bcast("add", *pa, *pb, kind, [](double x, double y) { return x + y; });
  auto bshape = pb->shape();
  return make_node(std::move(out), {va, vb},
                   [va, vb, bshape, kind](const Array& g, GradSink& sink) {
                     sink.add(va, g);
                     sink.add(vb, reduce_to(g, bshape, kind));
                   });
}

Var sub(const Var& a, const Var& b) {
  const BKind kind = bcast_of(a->value, b->value);
  Array out = ew_bcast("sub", a->value, b->value, kind, [](double x, double y) { return x - y; });
  auto bshape = b->value.shape();
  return make_node(std::move(out), {a, b}, [a, b, bshape, kind](const Array& g, GradSink& sink) {
    sink.add(a, g);
    Array gb = reduce_to(g, bshape, kind);
    for (int64_t i = 0; i < gb.size(); ++i) gb[i] = -gb[i];
    sink.add(b, gb);
  });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var mul(const Var& a, const Var& b) {
  const Array *pa = &a->value, *pb = &b->value;
  Var va = a, vb = b;
  BKind kind = bcast_of(*pa, *pb);
  if (kind == BKind::None && bcast_of(*pb, *pa) != BKind::None) {
    std::swap(pa, pb);
    std::swap(va, vb);
    kind = bcast_of(*pa, *pb);
  }
  Array out = ew_bcast("mul", *pa, *pb, kind, [](double x, double y) { return x * y; });
  auto bshape = pb->shape();
  return make_node(std::move(out), {va, vb}, [va, vb, bshape, kind](const Array& g, GradSink& sink) {
    // d/da = g .* b (broadcast), d/db = reduce(g .* a)
    sink.add(va, ew_bcast("mul", g, vb->value, kind, [](double x, double y) { return x * y; }));
    Array ga(g.shape());
    for (int64_t i = 0; i < g.size(); ++i) ga[i] = g[i] * va->value[i];
    sink.add(vb, reduce_to(ga, bshape, kind));
  });
}

Var div(const Var& a, const Var& b) {
  const BKind kind = bcast_of(a->value, b->value);
  if (kind != BKind::Same && kind != BKind::Scalar)
    throw std::invalid_argument("div: shape mismatch " + a->value.shape_str() + " vs " +
                                b->value.shape_str());
  Array out = ew_bcast("div", a->value, b->value, kind, [](double x, double y) { return x / y; });
  auto bshape = b->value.shape();
  return make_node(std::move(out), {a, b}, [a, b, bshape, kind](const Array& g, GradSink& sink) {
    sink.add(a, ew_bcast("div", g, b->value, kind, [](double x, double y) { return x / y; }));
    Array gb(g.shape());
    for (int64_t i = 0; i < g.size(); ++i) {
      const double bv = kind == BKind::Scalar ? b->value[0] : b->value[i];
      gb[i] = -g[i] * a->value[i] / (bv * bv);
    }
    sink.add(b, reduce_to(gb, bshape, kind));
  });
}

Var scale(const Var& a, double s) {
  Array out(a->value.shape());
  for (int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * s;
  return make_node(std::move(out), {a}, [a, s](const Array& g, GradSink& sink) {
    Array ga(g.shape());
    for (int64_t i = 0; i < g.size(); ++i) ga[i] = g[i] * s;
    sink.add(a, ga);
  });
}

Var add_const(const Var& a, double c) {
  Array out(a->value.shape());
  for (int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + c;
  return make_node(std::move(out), {a}, [a](const Array& g, GradSink& sink) { sink.add(a, g); });
}

// ---- linear algebra --------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  Array out;
  matmul_into(out, a->value, b->value);
  return make_node(std::move(out), {a, b}, [a, b](const Array& g, GradSink& sink) {
    if (a->requires_grad) {
      Array ga;
      matmul_nt_into(ga, g, b->value);
      if (a->value.rank() == 1) ga = Array(a->value.shape(), ga.vec());
      sink.add(a, ga);
    }
    if (b->requires_grad) {
      Array gb;
      matmul_tn_into(gb, a->value, g);
      if (b->value.rank() == 1) gb = Array(b->value.shape(), gb.vec());
      sink.add(b, gb);
    }
  });
}

Var transpose(const Var& a) {
  return make_node(transpose_val(a->value), {a},
                   [a](const Array& g, GradSink& sink) { sink.add(a, transpose_val(g)); });
}

Var concat_cols(const Var& a, const Var& b) {
  const int64_t r = a->value.rows(), ca = a->value.cols(), cb = b->value.cols();
  if (b->value.rows() != r)
    throw std::invalid_argument("concat_cols: shape mismatch " + a->value.shape_str() + " vs " +
                                b->value.shape_str());
  Array out({r, ca + cb});
  for (int64_t i = 0; i < r; ++i) {
    for (int64_t j = 0; j < ca; ++j) out.at(i, j) = a->value.at(i, j);
    for (int64_t j = 0; j < cb; ++j) out.at(i, ca + j) = b->value.at(i, j);
  }
  return make_node(std::move(out), {a, b}, [a, b, r, ca, cb](const Array& g, GradSink& sink) {
    Array ga(a->value.shape()), gb(b->value.shape());
    for (int64_t i = 0; i < r; ++i) {
      for (int64_t j = 0; j < ca; ++j) ga[i * ca + j] = g.at(i, j);
      for (int64_t j = 0; j < cb; ++j) gb[i * cb + j] = g.at(i, ca + j);
    }
    sink.add(a, ga);
    sink.add(b, gb);
  });
}

Var concat_rows(const Var& a, const Var& b) {
  const int64_t c = a->value.cols(), ra = a->value.rows(), rb = b->value.rows();
  if (b->value.cols() != c)
    throw std::invalid_argument("concat_rows: shape mismatch " + a->value.shape_str() + " vs " +
                                b->value.shape_str());
  Array out({ra + rb, c});
  std::copy(a->value.data(), a->value.data() + ra * c, out.data());
  std::copy(b->value.data(), b->value.data() + rb * c, out.data() + ra * c);
  return make_node(std::move(out), {a, b}, [a, b, ra, rb, c](const Array& g, GradSink& sink) {
    Array ga(a->value.shape()), gb(b->value.shape());
    std::copy(g.data(), g.data() + ra * c, ga.data());
    std::copy(g.data() + ra * c, g.data() + (ra + rb) * c, gb.data());
    sink.add(a, ga);
    sink.add(b, gb);
  });
}

Var slice_cols(const Var& a, int64_t start, int64_t len) {
  const int64_t r = a->value.rows(), c = a->value.cols();
  if (start < 0 || len < 0 || start + len > c)
    throw std::invalid_argument("slice_cols: range [" + std::to_string(start) + "," +
                                std::to_string(start + len) + ") out of " + a->value.shape_str());
  Array out({r, len});
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < len; ++j) out.at(i, j) = a->value.at(i, start + j);
  return make_node(std::move(out), {a}, [a, start, len, r](const Array& g, GradSink& sink) {
    Array ga = Array::zeros(a->value.shape());
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < len; ++j) ga.at(i, start + j) = g.at(i, j);
    sink.add(a, ga);
  });
}

Var gather_rows(const Var& a, std::vector<int64_t> idx) {
  const int64_t r = a->value.rows(), c = a->value.cols();
  for (int64_t i : idx)
    if (i < 0 || i >= r)
      throw std::invalid_argument("gather_rows: index " + std::to_string(i) + " out of " +
                                  a->value.shape_str());
  Array out({static_cast<int64_t>(idx.size()), c});
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy(a->value.data() + idx[i] * c, a->value.data() + (idx[i] + 1) * c, out.data() + i * c);
  return make_node(std::move(out), {a}, [a, idx = std::move(idx), c](const Array& g, GradSink& sink) {
    Array ga = Array::zeros(a->value.shape());
    for (size_t i = 0; i < idx.size(); ++i) {
      double* dst = ga.data() + idx[i] * c;
      const double* src = g.data() + i * c;
      for (int64_t j = 0; j < c; ++j) dst[j] += src[j];
    }
    sink.add(a, ga);
  });
}

Var interp_rows(const Var& a, std::vector<int64_t> idx, std::vector<double> w, int64_t k) {
  if (k <= 0 || idx.size() != w.size() || idx.size() % static_cast<size_t>(k) != 0)
    throw std::invalid_argument("interp_rows: bad index/weight layout");
  const int64_t r = a->value.rows(), c = a->value.cols();
  const int64_t m = static_cast<int64_t>(idx.size()) / k;
  for (int64_t i : idx)
    if (i < 0 || i >= r)
      throw std::invalid_argument("interp_rows: index " + std::to_string(i) + " out of " +
                                  a->value.shape_str());
  Array out({m, c});
  for (int64_t i = 0; i < m; ++i) {
    double* dst = out.data() + i * c;
    for (int64_t l = 0; l < k; ++l) {
      const double wv = w[i * k + l];
      const double* src = a->value.data() + idx[i * k + l] * c;
      for (int64_t j = 0; j < c; ++j) dst[j] += wv * src[j];
    }
  }
  return make_node(std::move(out), {a},
                   [a, idx = std::move(idx), w = std::move(w), k, c, m](const Array& g, GradSink& sink) {
                     Array ga = Array::zeros(a->value.shape());
                     for (int64_t i = 0; i < m; ++i) {
                       const double* src = g.data() + i * c;
                       for (int64_t l = 0; l < k; ++l) {
                         const double wv = w[i * k + l];
                         double* dst = ga.data() + idx[i * k + l] * c;
                         for (int64_t j = 0; j < c; ++j) dst[j] += wv * src[j];
                       }
                     }
                     sink.add(a, ga);
                   });
}

Var broadcast_rows(const Var& a, int64_t rows) {
  if (a->value.rows() != 1)
    throw std::invalid_argument("broadcast_rows: expected one row, got " + a->value.shape_str());
  const int64_t c = a->value.cols();
  Array out({rows, c});
  for (int64_t i = 0; i < rows; ++i)
    std::copy(a->value.data(), a->value.data() + c, out.data() + i * c);
  return make_node(std::move(out), {a}, [a, rows, c](const Array& g, GradSink& sink) {
    Array ga = Array::zeros(a->value.shape());
    for (int64_t i = 0; i < rows; ++i)
      for (int64_t j = 0; j < c; ++j) ga[j] += g.at(i, j);
    sink.add(a, ga);
  });
}

// ---- reductions ------------------------------------------------------------

Var sum(const Var& a) {
  double s = 0.0;
  for (int64_t i = 0; i < a->value.size(); ++i) s += a->value[i];
  return make_node(Array::scalar(s), {a}, [a](const Array& g, GradSink& sink) {
    sink.add(a, Array::full(a->value.shape(), g[0]));
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a->value.size());
  double s = 0.0;
  for (int64_t i = 0; i < a->value.size(); ++i) s += a->value[i];
  return make_node(Array::scalar(s / n), {a}, [a, n](const Array& g, GradSink& sink) {
    sink.add(a, Array::full(a->value.shape(), g[0] / n));
  });
}

Var max(const Var& a) {
  if (a->value.size() == 0) throw std::invalid_argument("max: empty array");
  int64_t arg = 0;
  for (int64_t i = 1; i < a->value.size(); ++i)
    if (a->value[i] > a->value[arg]) arg = i;
  return make_node(Array::scalar(a->value[arg]), {a}, [a, arg](const Array& g, GradSink& sink) {
    Array ga = Array::zeros(a->value.shape());
    ga[arg] = g[0];
    sink.add(a, ga);
  });
}

Var mean_rows(const Var& a) {
  const int64_t r = a->value.rows(), c = a->value.cols();
  Array out({1, c});
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) out[j] += a->value.at(i, j);
  for (int64_t j = 0; j < c; ++j) out[j] /= static_cast<double>(r);
  return make_node(std::move(out), {a}, [a, r, c](const Array& g, GradSink& sink) {
    Array ga(a->value.shape());
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < c; ++j) ga.at(i, j) = g[j] / static_cast<double>(r);
    sink.add(a, ga);
  });
}

Var group_max_rows(const Var& a, int64_t group) {
  const int64_t r = a->value.rows(), c = a->value.cols();
  if (group <= 0 || r % group != 0)
    throw std::invalid_argument("group_max_rows: rows " + std::to_string(r) +
                                " not divisible by group " + std::to_string(group));
  const int64_t gcount = r / group;
  Array out({gcount, c});
  std::vector<int64_t> arg(static_cast<size_t>(gcount * c));
  for (int64_t gi = 0; gi < gcount; ++gi) {
    for (int64_t j = 0; j < c; ++j) {
      int64_t best = gi * group;
      for (int64_t l = 1; l < group; ++l) {
        const int64_t row = gi * group + l;
        if (a->value.at(row, j) > a->value.at(best, j)) best = row;
      }
      out.at(gi, j) = a->value.at(best, j);
      arg[gi * c + j] = best;
    }
  }
  return make_node(std::move(out), {a},
                   [a, arg = std::move(arg), gcount, c](const Array& g, GradSink& sink) {
                     Array ga = Array::zeros(a->value.shape());
                     for (int64_t gi = 0; gi < gcount; ++gi)
                       for (int64_t j = 0; j < c; ++j) ga.at(arg[gi * c + j], j) += g.at(gi, j);
                     sink.add(a, ga);
                   });
}

// ---- pointwise nonlinearities ----------------------------------------------

Var relu(const Var& a) {
  Array out(a->value.shape());
  for (int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] > 0.0 ? a->value[i] : 0.0;
  return make_node(std::move(out), {a}, [a](const Array& g, GradSink& sink) {
    Array ga(g.shape());
    for (int64_t i = 0; i < g.size(); ++i) ga[i] = a->value[i] > 0.0 ? g[i] : 0.0;
    sink.add(a, ga);
  });
}

Var gelu(const Var& a) {
  Array out(a->value.shape());
  for (int64_t i = 0; i < out.size(); ++i) {
    const double x = a->value[i];
    out[i] = x * 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  }
  return make_node(std::move(out), {a}, [a](const Array& g, GradSink& sink) {
    Array ga(g.shape());
    for (int64_t i = 0; i < g.size(); ++i) {
      const double x = a->value[i];
      const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
      ga[i] = g[i] * (cdf + x * pdf);
    }
    sink.add(a, ga);
  });
}

Var sigmoid(const Var& a) {
  Array out(a->value.shape());
  for (int64_t i = 0; i < out.size(); ++i) {
    const double x = a->value[i];
    out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  Array saved = out;
  return make_node(std::move(out), {a}, [a, saved = std::move(saved)](const Array& g, GradSink& sink) {
    Array ga(g.shape());
    for (int64_t i = 0; i < g.size(); ++i) ga[i] = g[i] * saved[i] * (1.0 - saved[i]);
    sink.add(a, ga);
  });
}

Var log(const Var& a) {
  Array out(a->value.shape());
  for (int64_t i = 0; i < out.size(); ++i) out[i] = std::log(a->value[i]);
  return make_node(std::move(out), {a}, [a](const Array& g, GradSink& sink) {
    Array ga(g.shape());
    for (int64_t i = 0; i < g.size(); ++i) ga[i] = g[i] / a->value[i];
    sink.add(a, ga);
  });
}

Var clamp(const Var& a, double lo, double hi) {
  Array out(a->value.shape());
  for (int64_t i = 0; i < out.size(); ++i) out[i] = std::min(hi, std::max(lo, a->value[i]));
  return make_node(std::move(out), {a}, [a, lo, hi](const Array& g, GradSink& sink) {
    Array ga(g.shape());
    for (int64_t i = 0; i < g.size(); ++i) {
      const double x = a->value[i];
      ga[i] = (x > lo && x < hi) ? g[i] : 0.0;
    }
    sink.add(a, ga);
  });
}

Var softmax_rows(const Var& a) {
  const int64_t r = a->value.rows(), c = a->value.cols();
  Array out(a->value.shape());
  for (int64_t i = 0; i < r; ++i) {
    double m = a->value.at(i, 0);
    for (int64_t j = 1; j < c; ++j) m = std::max(m, a->value.at(i, j));
    double z = 0.0;
    for (int64_t j = 0; j < c; ++j) {
      const double e = std::exp(a->value.at(i, j) - m);
      out.at(i, j) = e;
      z += e;
    }
    for (int64_t j = 0; j < c; ++j) out.at(i, j) /= z;
  }
  Array saved = out;
  return make_node(std::move(out), {a},
                   [a, saved = std::move(saved), r, c](const Array& g, GradSink& sink) {
                     Array ga(g.shape());
                     for (int64_t i = 0; i < r; ++i) {
                       double dot = 0.0;
                       for (int64_t j = 0; j < c; ++j) dot += g.at(i, j) * saved.at(i, j);
                       for (int64_t j = 0; j < c; ++j)
                         ga.at(i, j) = saved.at(i, j) * (g.at(i, j) - dot);
                     }
                     sink.add(a, ga);
                   });
}

Var layer_norm_rows(const Var& x, const Var& gain, const Var& bias, double eps) {
  const int64_t r = x->value.rows(), c = x->value.cols();
  if (gain->value.size() != c || bias->value.size() != c)
    throw std::invalid_argument("layer_norm: gain/bias size mismatch " + x->value.shape_str() +
                                " vs " + gain->value.shape_str());
  Array xhat({r, c});
  std::vector<double> inv(static_cast<size_t>(r));
  Array out({r, c});
  for (int64_t i = 0; i < r; ++i) {
    double mu = 0.0;
    for (int64_t j = 0; j < c; ++j) mu += x->value.at(i, j);
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (int64_t j = 0; j < c; ++j) {
      const double d = x->value.at(i, j) - mu;
      var += d * d;
    }
    var /= static_cast<double>(c);
    inv[i] = 1.0 / std::sqrt(var + eps);
    for (int64_t j = 0; j < c; ++j) {
      xhat.at(i, j) = (x->value.at(i, j) - mu) * inv[i];
      out.at(i, j) = xhat.at(i, j) * gain->value[j] + bias->value[j];
    }
  }
  return make_node(
      std::move(out), {x, gain, bias},
      [x, gain, bias, xhat = std::move(xhat), inv = std::move(inv), r, c](const Array& g,
                                                                          GradSink& sink) {
        if (x->requires_grad) {
          Array gx({r, c});
          for (int64_t i = 0; i < r; ++i) {
            double m1 = 0.0, m2 = 0.0;
            for (int64_t j = 0; j < c; ++j) {
              const double gh = g.at(i, j) * gain->value[j];
              m1 += gh;
              m2 += gh * xhat.at(i, j);
            }
            m1 /= static_cast<double>(c);
            m2 /= static_cast<double>(c);
            for (int64_t j = 0; j < c; ++j) {
              const double gh = g.at(i, j) * gain->value[j];
              gx.at(i, j) = inv[i] * (gh - m1 - xhat.at(i, j) * m2);
            }
          }
          sink.add(x, gx);
        }
        if (gain->requires_grad) {
          Array gg = Array::zeros(gain->value.shape());
          for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < c; ++j) gg[j] += g.at(i, j) * xhat.at(i, j);
          sink.add(gain, gg);
        }
        if (bias->requires_grad) {
          Array gb = Array::zeros(bias->value.shape());
          for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < c; ++j) gb[j] += g.at(i, j);
          sink.add(bias, gb);
        }
      });
}

// ---- composed helpers ------------------------------------------------------

Var linear(const Var& x, const Var& w, const Var& b) {
  Var y = matmul(x, w);
  return b ? add(y, b) : y;
}

Var attention(const Var& q, const Var& k, const Var& v) {
  const double d = static_cast<double>(k->value.cols());
  Var logits = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(d));
  return matmul(softmax_rows(logits), v);
}

std::vector<std::string> op_set() {
  return {"add",         "sub",     "mul",        "div",           "scale",   "matmul",
          "transpose",   "concat",  "slice_cols", "gather_rows",   "interp_rows",
          "broadcast",   "sum",     "mean",       "max",           "mean_rows",
          "group_max_rows", "relu", "gelu",       "sigmoid",       "log",     "clamp",
          "softmax",     "layer_norm", "attention"};
}

// ---- gradient checking ------------------------------------------------------

GradCheckReport grad_check_sampled(const std::function<Var(const Var&)>& fn, const Array& point,
                                   const std::vector<int64_t>& elements, double h, double tol) {
  Var x = leaf(point);
  Var y = fn(x);
  if (y->value.size() != 1)
    throw std::invalid_argument("grad_check: fn must return a scalar, got " + y->value.shape_str());
  if (!y->value.all_finite()) throw NumericError("grad_check: non-finite fn output at base point");
  backward(y);
  const Array analytic = x->grad_or_zeros();

  GradCheckReport rep;
  for (int64_t e : elements) {
    if (e < 0 || e >= point.size())
      throw std::invalid_argument("grad_check: element " + std::to_string(e) + " out of range");
    Array p = point;
    p[e] += h;
    const double fp = fn(constant(p))->value[0];
    p[e] -= 2.0 * h;
    const double fm = fn(constant(p))->value[0];
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("grad_check: non-finite fn output at element " + std::to_string(e));
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic[e];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
    if (rel > rep.worst_rel_err) {
      rep.worst_rel_err = rel;
      rep.worst_index = e;
    }
    ++rep.n_checked;
  }
  rep.passed = rep.worst_rel_err <= tol;
  return rep;
}

GradCheckReport grad_check(const std::function<Var(const Var&)>& fn, const Array& point, double h,
                           double tol) {
  std::vector<int64_t> all(static_cast<size_t>(point.size()));
  for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int64_t>(i);
  return grad_check_sampled(fn, point, all, h, tol);
}

GradCheckReport grad_check_param(const std::function<Var()>& fn, const Var& param,
                                 const std::vector<int64_t>& elements, double h, double tol) {
  if (!param || !param->is_leaf() || !param->requires_grad)
    throw std::invalid_argument("grad_check_param: target must be a requires-grad leaf");
  param->zero_grad();
  Var y = fn();
  if (y->value.size() != 1)
    throw std::invalid_argument("grad_check_param: fn must return a scalar, got " + y->value.shape_str());
  if (!y->value.all_finite()) throw NumericError("grad_check_param: non-finite fn output at base point");
  backward(y);
  const Array analytic = param->grad_or_zeros();

  GradCheckReport rep;
  for (int64_t e : elements) {
    if (e < 0 || e >= param->value.size())
      throw std::invalid_argument("grad_check_param: element " + std::to_string(e) + " out of range");
    const double saved = param->value[e];
    param->value[e] = saved + h;
    const double fp = fn()->value[0];
    param->value[e] = saved - h;
    const double fm = fn()->value[0];
    param->value[e] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("grad_check_param: non-finite fn output at element " + std::to_string(e));
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic[e];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
    if (rel > rep.worst_rel_err) {
      rep.worst_rel_err = rel;
      rep.worst_index = e;
    }
    ++rep.n_checked;
  }
  rep.passed = rep.worst_rel_err <= tol;
  return rep;
}

}  // namespace affseq::ad
