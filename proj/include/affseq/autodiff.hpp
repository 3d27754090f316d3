#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "affseq/array.hpp"

namespace affseq::ad {

struct Node;
using Var = std::shared_ptr<Node>;

class GradSink;

/// One vertex of the reverse-mode graph. Values are computed eagerly on
/// construction; `backward_fn` pushes this node's pass-local gradient into
/// its parents. Leaf gradients accumulate across backward passes until
/// `zero_grad` is called.
struct Node {
  Array value;
  std::vector<Var> parents;
  std::function<void(const Array& gout, GradSink& sink)> backward_fn;
  bool requires_grad = false;

  Array grad;  // leaf accumulator, empty until first backward
  bool grad_valid = false;

  bool is_leaf() const { return parents.empty() && !backward_fn; }
  void zero_grad() {
    grad_valid = false;
    grad = Array();
  }
  Array grad_or_zeros() const { return grad_valid ? grad : Array::zeros(value.shape()); }
};

Var leaf(Array value, bool requires_grad = true);
Var constant(Array value);

/// Pass-local gradient accumulator used inside backward().
class GradSink {
public:
  // accumulates g into v's pass-local slot; no-op when v doesn't need grad
  void add(const Var& v, const Array& g);
  Array* find(Node* n);

private:
  friend void backward(const Var& root);
  std::unordered_map<Node*, Array> slots_;
};

/// Runs reverse-mode accumulation from a scalar root. Each call computes the
/// exact gradient of root w.r.t. every reachable leaf and adds it into the
/// leaf's `grad` (call zero_grad between steps; without it gradients sum).
void backward(const Var& root);

// ---- primitive ops -------------------------------------------------------

Var add(const Var& a, const Var& b);  // same shape, or row/scalar broadcast
Var sub(const Var& a, const Var& b);
Var neg(const Var& a);
Var mul(const Var& a, const Var& b);  // elementwise, same broadcast rules
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_const(const Var& a, double c);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var concat_cols(const Var& a, const Var& b);
Var concat_rows(const Var& a, const Var& b);
Var slice_cols(const Var& a, int64_t start, int64_t len);
Var gather_rows(const Var& a, std::vector<int64_t> idx);
// out[i] = sum_k w[i,k] * a[idx[i,k]]  (weights fixed, gradient w.r.t. a)
Var interp_rows(const Var& a, std::vector<int64_t> idx, std::vector<double> w, int64_t k);
Var broadcast_rows(const Var& a, int64_t rows);
Var sum(const Var& a);
Var mean(const Var& a);
Var max(const Var& a);
Var mean_rows(const Var& a);                    // RxC -> 1xC column means
Var group_max_rows(const Var& a, int64_t group);  // (G*g)xC -> GxC
Var relu(const Var& a);
Var gelu(const Var& a);
Var sigmoid(const Var& a);
Var log(const Var& a);
Var clamp(const Var& a, double lo, double hi);
Var softmax_rows(const Var& a);
Var layer_norm_rows(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);

// helpers composed from primitives
Var linear(const Var& x, const Var& w, const Var& b);
Var attention(const Var& q, const Var& k, const Var& v);  // scaled dot-product

/// Names of the supported primitives.
std::vector<std::string> op_set();

// ---- gradient checking ----------------------------------------------------

struct GradCheckReport {
  bool passed = false;
  double worst_rel_err = 0.0;
  int64_t worst_index = -1;
  int64_t n_checked = 0;
};

/// Central-difference check of an autodiff scalar function at `point`.
/// Relative error per element is |a-n| / max(|a|,|n|,1e-8).
GradCheckReport grad_check(const std::function<Var(const Var&)>& fn, const Array& point,
                           double h = 1e-5, double tol = 1e-4);

/// Same, restricted to a subset of elements (for large parameter tensors).
GradCheckReport grad_check_sampled(const std::function<Var(const Var&)>& fn, const Array& point,
                                   const std::vector<int64_t>& elements, double h = 1e-5,
                                   double tol = 1e-4);

/// Checks d(fn())/d(param) for a live leaf (e.g. a stored parameter): runs
/// backward once for the analytic side, then perturbs param->value in place
/// for the central differences. param's grad is zeroed first.
GradCheckReport grad_check_param(const std::function<Var()>& fn, const Var& param,
                                 const std::vector<int64_t>& elements, double h = 1e-5,
                                 double tol = 1e-4);

}  // namespace affseq::ad
