#include "affseq/pyramid.hpp"

#include <algorithm>
#include <stdexcept>

namespace affseq::geom {

using ad::Var;

UpsampleParams make_upsample(ad::ParamStore& store, const std::string& prefix, int64_t src_width,
                             int64_t dst_width, int64_t common_width, int64_t out_width, Rng& rng) {
  UpsampleParams p;
  p.src_proj = store.create(prefix + ".src_proj",
                            ad::uniform_init({src_width, common_width}, src_width, common_width, rng));
  p.dst_proj = store.create(prefix + ".dst_proj",
                            ad::uniform_init({dst_width, common_width}, dst_width, common_width, rng));
  p.edge_weight = store.create(
      prefix + ".edge.w", ad::uniform_init({2 * common_width, out_width}, 2 * common_width, out_width, rng));
  p.edge_bias = store.create(prefix + ".edge.b", ad::Array::zeros({1, out_width}));
  return p;
}

UpsampleParams load_upsample(const ad::ParamStore& store, const std::string& prefix) {
  UpsampleParams p;
  p.src_proj = store.get(prefix + ".src_proj");
  p.dst_proj = store.get(prefix + ".dst_proj");
  p.edge_weight = store.get(prefix + ".edge.w");
  p.edge_bias = store.get(prefix + ".edge.b");
  return p;
}

Var upsample(const ad::Array& src_coords, const Var& src_feats, const ad::Array& dst_coords,
             const Var& dst_feats, const UpsampleParams& p, int64_t k) {
  if (src_feats->value.size() == 0 || dst_feats->value.size() == 0)
    throw std::invalid_argument("upsample: empty feature input");
  const int64_t srcs = src_coords.rows(), dsts = dst_coords.rows();
  const int64_t keff = std::min<int64_t>(k, srcs);
  const KnnResult nn = knn(dst_coords, src_coords, keff);

  Var s = ad::matmul(src_feats, p.src_proj);
  Var d = ad::matmul(dst_feats, p.dst_proj);

  std::vector<int64_t> nbr_idx(static_cast<size_t>(dsts * keff));
  std::vector<int64_t> ctr_idx(static_cast<size_t>(dsts * keff));
  for (int64_t i = 0; i < dsts; ++i)
    for (int64_t j = 0; j < keff; ++j) {
      nbr_idx[i * keff + j] = nn.at(i, j);
      ctr_idx[i * keff + j] = i;
    }
  Var gs = ad::gather_rows(s, std::move(nbr_idx));
  Var gd = ad::gather_rows(d, std::move(ctr_idx));
  Var edge = ad::concat_cols(ad::sub(gs, gd), gd);
  Var h = ad::gelu(ad::linear(edge, p.edge_weight, p.edge_bias));
  return ad::group_max_rows(h, keff);
}

void PyramidConfig::validate(int64_t cloud_size) const {
  if (n2 < 1 || dense_width < 1 || up_k < 1)
    throw std::invalid_argument("PyramidConfig: counts must be positive");
  if (n2 >= n3 || n3 >= cloud_size)
    throw std::invalid_argument("PyramidConfig: need n2 < n3 < N, got n2 = " + std::to_string(n2) +
                                ", n3 = " + std::to_string(n3) + ", N = " + std::to_string(cloud_size));
}

void init_pyramid_params(const enc::EncoderConfig& enc_cfg, const PyramidConfig& cfg, uint64_t seed,
                         ad::ParamStore& store) {
  Rng rng(seed);
  const int64_t ce = enc_cfg.width, cd = cfg.dense_width;
  // stage 1 refines the deep-tap features in place over P2
  make_upsample(store, "pyramid/up1", ce, ce, cd, cd, rng);
  // stage 2 lifts P2 features onto P3, guided by the shallow tap
  make_upsample(store, "pyramid/up2", cd, ce, cd, cd, rng);
}

FeaturePyramid build_dense(const PointCloud& cloud, const enc::EncoderOutput& enc,
                           const PyramidConfig& cfg, const ad::ParamStore& store) {
  cloud.validate();
  cfg.validate(cloud.size());
  if (enc.p1_indices.empty() || !enc.tap_shallow || !enc.tap_deep)
    throw std::invalid_argument("build_dense: encoder output is missing centers or taps");

  FeaturePyramid pyr;
  pyr.p1_indices = enc.p1_indices;
  pyr.p2_indices = fps(cloud.coords, cfg.n2, 0);
  pyr.p3_indices = fps(cloud.coords, cfg.n3, 0);
  pyr.tap_shallow = enc.tap_shallow;
  pyr.tap_deep = enc.tap_deep;
  pyr.global_feat = enc.global_feat;

  const ad::Array p1 = take_rows(cloud.coords, pyr.p1_indices);
  const ad::Array p2 = take_rows(cloud.coords, pyr.p2_indices);
  const ad::Array p3 = take_rows(cloud.coords, pyr.p3_indices);

  pyr.feats_l2 = propagate(p2, p1, enc.tap_deep);
  pyr.feats_l3 = propagate(p3, p1, enc.tap_shallow);

  // in-place edge refinement over P2; the destination features are the
  // deep-tap features carried by P2 (width-matched by up1.dst_proj)
  Var refined_l2 = upsample(p2, pyr.feats_l2, p2, pyr.feats_l2, load_upsample(store, "pyramid/up1"),
                            cfg.up_k);
  Var refined_l3 = upsample(p2, refined_l2, p3, pyr.feats_l3, load_upsample(store, "pyramid/up2"),
                            cfg.up_k);
  pyr.dense_feats = propagate(cloud.coords, p3, refined_l3);
  return pyr;
}

}  // namespace affseq::geom
