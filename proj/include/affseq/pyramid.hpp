#pragma once

#include "affseq/encoder.hpp"
#include "affseq/geometry.hpp"

namespace affseq::geom {

/// Edge-style feature upsampling: for each destination point, take the k
/// nearest source points, build edge features [src_j - dst_i || dst_i]
/// (both sides first projected to a common width), push every edge through
/// a learned linear + gelu and max-reduce over the neighbourhood.
struct UpsampleParams {
  ad::Var src_proj;     // C_src x C_common
  ad::Var dst_proj;     // C_dst x C_common
  ad::Var edge_weight;  // 2*C_common x C_out
  ad::Var edge_bias;    // 1 x C_out
};

UpsampleParams make_upsample(ad::ParamStore& store, const std::string& prefix, int64_t src_width,
                             int64_t dst_width, int64_t common_width, int64_t out_width, Rng& rng);
UpsampleParams load_upsample(const ad::ParamStore& store, const std::string& prefix);

/// k is clamped to the source count when fewer than k source points exist.
ad::Var upsample(const ad::Array& src_coords, const ad::Var& src_feats, const ad::Array& dst_coords,
                 const ad::Var& dst_feats, const UpsampleParams& p, int64_t k = 8);

struct PyramidConfig {
  int64_t n2 = 512;
  int64_t n3 = 1024;
  int64_t dense_width = 128;  // C_d, output width of both upsample stages
  int64_t up_k = 8;

  void validate(int64_t cloud_size) const;
};

struct FeaturePyramid {
  std::vector<int64_t> p1_indices;  // encoder centers
  std::vector<int64_t> p2_indices;
  std::vector<int64_t> p3_indices;
  ad::Var tap_shallow, tap_deep;  // encoder intermediates, |P1| x C_enc
  ad::Var feats_l2;               // |P2| x C_enc, deep tap propagated onto P2
  ad::Var feats_l3;               // |P3| x C_enc, shallow tap propagated onto P3
  ad::Var dense_feats;            // N x C_d
  ad::Var global_feat;            // 1 x C_s
};

void init_pyramid_params(const enc::EncoderConfig& enc_cfg, const PyramidConfig& cfg, uint64_t seed,
                         ad::ParamStore& store);

/// The multi-granular chain: subsample P2/P3, propagate the encoder taps
/// down, refine with two upsample stages and propagate onto every point.
FeaturePyramid build_dense(const PointCloud& cloud, const enc::EncoderOutput& enc,
                           const PyramidConfig& cfg, const ad::ParamStore& store);

}  // namespace affseq::geom
