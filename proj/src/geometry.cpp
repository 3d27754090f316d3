#include "affseq/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace affseq::geom {

namespace {

inline double dist2(const double* a, const double* b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

void check_coords(const char* op, const ad::Array& c) {
  if (c.rank() != 2 || c.shape()[1] != 3)
    throw std::invalid_argument(std::string(op) + ": expected Nx3 coordinates, got " + c.shape_str());
}

}  // namespace

void PointCloud::validate() const {
  check_coords("PointCloud", coords);
  if (coords.rows() < 1) throw std::invalid_argument("PointCloud: empty cloud");
  if (!coords.all_finite()) throw std::invalid_argument("PointCloud: non-finite coordinate");
  if (channels && channels->rows() != coords.rows())
    throw std::invalid_argument("PointCloud: channel rows " + std::to_string(channels->rows()) +
                                " do not match point count " + std::to_string(coords.rows()));
}

std::vector<int64_t> fps(const ad::Array& coords, int64_t m, int64_t start) {
  check_coords("fps", coords);
  const int64_t n = coords.rows();
  if (m < 1 || m > n)
    throw std::invalid_argument("fps: m = " + std::to_string(m) + " out of range for " +
                                std::to_string(n) + " points");
  if (start < 0 || start >= n)
    throw std::invalid_argument("fps: start = " + std::to_string(start) + " out of range");

  std::vector<int64_t> picked;
  picked.reserve(static_cast<size_t>(m));
  std::vector<double> min_d2(static_cast<size_t>(n), std::numeric_limits<double>::infinity());
  int64_t cur = start;
  picked.push_back(cur);
  min_d2[static_cast<size_t>(cur)] = -1.0;  // picked points are never re-picked
  for (int64_t it = 1; it < m; ++it) {
    const double* p = coords.data() + cur * 3;
    int64_t best = -1;
    double best_d = -1.0;
    for (int64_t i = 0; i < n; ++i) {
      const double d = dist2(coords.data() + i * 3, p);
      if (d < min_d2[i]) min_d2[i] = d;
      // strict > keeps the lowest index on ties; picked points have d = 0
      if (min_d2[i] > best_d) {
        best_d = min_d2[i];
        best = i;
      }
    }
    cur = best;
    picked.push_back(cur);
    min_d2[static_cast<size_t>(cur)] = -1.0;  // never re-picked
  }
  return picked;
}

KnnResult knn(const ad::Array& queries, const ad::Array& refs, int64_t k) {
  check_coords("knn", queries);
  check_coords("knn", refs);
  const int64_t m = queries.rows(), r = refs.rows();
  if (k < 1 || k > r)
    throw std::invalid_argument("knn: k = " + std::to_string(k) + " out of range for " +
                                std::to_string(r) + " refs");
  KnnResult out;
  out.queries = m;
  out.k = k;
  out.index.resize(static_cast<size_t>(m * k));
  out.dist2.resize(static_cast<size_t>(m * k));
  std::vector<std::pair<double, int64_t>> cand(static_cast<size_t>(r));
  for (int64_t q = 0; q < m; ++q) {
    const double* pq = queries.data() + q * 3;
    for (int64_t i = 0; i < r; ++i) cand[i] = {dist2(refs.data() + i * 3, pq), i};
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
    for (int64_t j = 0; j < k; ++j) {
      out.index[q * k + j] = cand[j].second;
      out.dist2[q * k + j] = cand[j].first;
    }
  }
  return out;
}

InterpPlan propagate_plan(const ad::Array& dst_coords, const ad::Array& src_coords) {
  if (src_coords.rows() < 3)
    throw std::invalid_argument("propagate: need at least 3 source points, got " +
                                std::to_string(src_coords.rows()));
  const KnnResult nn = knn(dst_coords, src_coords, 3);
  const int64_t m = dst_coords.rows();
  InterpPlan plan;
  plan.idx.resize(static_cast<size_t>(m * 3));
  plan.w.resize(static_cast<size_t>(m * 3));
  constexpr double kEps = 1e-8;
  for (int64_t i = 0; i < m; ++i) {
    if (nn.d2(i, 0) < 1e-12) {
      // coincident destination: copy the source row exactly
      plan.idx[i * 3 + 0] = nn.at(i, 0);
      plan.idx[i * 3 + 1] = nn.at(i, 0);
      plan.idx[i * 3 + 2] = nn.at(i, 0);
      plan.w[i * 3 + 0] = 1.0;
      plan.w[i * 3 + 1] = 0.0;
      plan.w[i * 3 + 2] = 0.0;
      continue;
    }
    double wsum = 0.0;
    for (int64_t j = 0; j < 3; ++j) {
      plan.idx[i * 3 + j] = nn.at(i, j);
      const double w = 1.0 / (nn.d2(i, j) + kEps);
      plan.w[i * 3 + j] = w;
      wsum += w;
    }
    for (int64_t j = 0; j < 3; ++j) plan.w[i * 3 + j] /= wsum;
  }
  return plan;
}

ad::Var propagate(const ad::Array& dst_coords, const ad::Array& src_coords, const ad::Var& src_feats) {
  if (src_feats->value.rows() != src_coords.rows())
    throw std::invalid_argument("propagate: feature rows " + src_feats->value.shape_str() +
                                " do not match source count " + std::to_string(src_coords.rows()));
  InterpPlan plan = propagate_plan(dst_coords, src_coords);
  return ad::interp_rows(src_feats, std::move(plan.idx), std::move(plan.w), 3);
}

ad::Array take_rows(const ad::Array& a, const std::vector<int64_t>& idx) {
  const int64_t c = a.cols();
  ad::Array out({static_cast<int64_t>(idx.size()), c});
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a.rows())
      throw std::invalid_argument("take_rows: index " + std::to_string(idx[i]) + " out of " +
                                  a.shape_str());
    std::copy(a.data() + idx[i] * c, a.data() + (idx[i] + 1) * c, out.data() + i * c);
  }
  return out;
}

}  // namespace affseq::geom
