#pragma once

// Independent brute-force oracles used by the unit and acceptance suites.
// These deliberately avoid the library's own computation paths.

#include <algorithm>
#include <cmath>
#include <iterator>
#include <limits>
#include <set>
#include <vector>

#include "affseq/array.hpp"
#include "affseq/common.hpp"

namespace oracles {

// ROC AUC by O(n^2) pair counting, ties worth 1/2; gt binarized at > 0.
// Returns -1 when undefined (single-class truth).
inline double auc_pair_count(const std::vector<double>& pred, const std::vector<double>& gt) {
  double wins = 0.0;
  int64_t pairs = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (!(gt[i] > 0.0)) continue;
    for (size_t j = 0; j < pred.size(); ++j) {
      if (gt[j] > 0.0) continue;
      ++pairs;
      if (pred[i] > pred[j])
        wins += 1.0;
      else if (pred[i] == pred[j])
        wins += 0.5;
    }
  }
  if (pairs == 0) return -1.0;
  return wins / static_cast<double>(pairs);
}

// mIoU by explicit set construction per threshold.
inline double miou_sets(const std::vector<double>& pred, const std::vector<double>& gt) {
  double acc = 0.0;
  for (int ti = 1; ti <= 9; ++ti) {
    const double t = static_cast<double>(ti) / 10.0;
    std::set<size_t> p, g;
    for (size_t i = 0; i < pred.size(); ++i) {
      if (pred[i] > t) p.insert(i);
      if (gt[i] > 0.0) g.insert(i);
    }
    std::set<size_t> inter, uni;
    std::set_intersection(p.begin(), p.end(), g.begin(), g.end(), std::inserter(inter, inter.begin()));
    std::set_union(p.begin(), p.end(), g.begin(), g.end(), std::inserter(uni, uni.begin()));
    acc += uni.empty() ? 1.0 : static_cast<double>(inter.size()) / static_cast<double>(uni.size());
  }
  return acc / 9.0;
}

inline affseq::ad::Array random_cloud(int64_t n, affseq::Rng& rng, double lo = -1.0, double hi = 1.0) {
  affseq::ad::Array c({n, 3});
  for (int64_t i = 0; i < n * 3; ++i) c[i] = rng.uniform(lo, hi);
  return c;
}

// rotation matrix from a random unit quaternion
inline affseq::ad::Array random_rotation(affseq::Rng& rng) {
  double q[4];
  double norm = 0.0;
  for (double& v : q) {
    v = rng.normal();
    norm += v * v;
  }
  norm = std::sqrt(norm);
  for (double& v : q) v /= norm;
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  return affseq::ad::Array({3, 3}, {1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
                                    2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
                                    2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)});
}

inline affseq::ad::Array apply_rotation(const affseq::ad::Array& coords, const affseq::ad::Array& rot) {
  affseq::ad::Array out(coords.shape());
  for (int64_t i = 0; i < coords.rows(); ++i)
    for (int64_t r = 0; r < 3; ++r)
      out.at(i, r) = rot.at(r, 0) * coords.at(i, 0) + rot.at(r, 1) * coords.at(i, 1) +
                     rot.at(r, 2) * coords.at(i, 2);
  return out;
}

// verifies each fps pick maximizes the min squared distance to the prior set
inline bool fps_greedy_property(const affseq::ad::Array& coords, const std::vector<int64_t>& picked) {
  const int64_t n = coords.rows();
  auto d2 = [&](int64_t a, int64_t b) {
    double s = 0.0;
    for (int d = 0; d < 3; ++d) {
      const double diff = coords.at(a, d) - coords.at(b, d);
      s += diff * diff;
    }
    return s;
  };
  for (size_t step = 1; step < picked.size(); ++step) {
    double best = -1.0;
    int64_t best_idx = -1;
    for (int64_t i = 0; i < n; ++i) {
      if (std::find(picked.begin(), picked.begin() + static_cast<int64_t>(step), i) !=
          picked.begin() + static_cast<int64_t>(step))
        continue;
      double mind = std::numeric_limits<double>::infinity();
      for (size_t j = 0; j < step; ++j) mind = std::min(mind, d2(i, picked[j]));
      if (mind > best) {
        best = mind;
        best_idx = i;
      }
    }
    if (picked[step] != best_idx) return false;
  }
  return true;
}

}  // namespace oracles
