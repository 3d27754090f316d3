#pragma once

#include <optional>
#include <vector>

#include "affseq/autodiff.hpp"

namespace affseq::geom {

/// Nx3 coordinates plus optional per-point channels. Coordinates are
/// expected normalized (centroid at origin, max norm 1) before entering the
/// encoder; data::normalize produces that form.
struct PointCloud {
  ad::Array coords;                   // Nx3
  std::optional<ad::Array> channels;  // NxC

  int64_t size() const { return coords.rows(); }
  void validate() const;  // N >= 1, 3 columns, finite
};

/// Farthest point sampling. Returns m distinct indices starting at `start`;
/// each next pick maximizes the min squared distance to the chosen set,
/// ties broken by lowest index.
std::vector<int64_t> fps(const ad::Array& coords, int64_t m, int64_t start = 0);

struct KnnResult {
  int64_t queries = 0;
  int64_t k = 0;
  std::vector<int64_t> index;  // queries*k, sorted by ascending distance then index
  std::vector<double> dist2;

  int64_t at(int64_t q, int64_t j) const { return index[q * k + j]; }
  double d2(int64_t q, int64_t j) const { return dist2[q * k + j]; }
};

/// Exact k nearest neighbours by squared Euclidean distance.
KnnResult knn(const ad::Array& queries, const ad::Array& refs, int64_t k);

/// Index+weight plan for 3-neighbour inverse-squared-distance interpolation,
/// w_i = (d_i^2 + 1e-8)^-1 normalized; an exact coordinate match (d^2 <
/// 1e-12) copies that source row verbatim.
struct InterpPlan {
  std::vector<int64_t> idx;  // dst_count * 3
  std::vector<double> w;
};
InterpPlan propagate_plan(const ad::Array& dst_coords, const ad::Array& src_coords);

/// Differentiable feature propagation src -> dst using the plan above.
ad::Var propagate(const ad::Array& dst_coords, const ad::Array& src_coords, const ad::Var& src_feats);

// plain-array helpers
ad::Array take_rows(const ad::Array& a, const std::vector<int64_t>& idx);

}  // namespace affseq::geom
