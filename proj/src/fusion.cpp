#include "affseq/fusion.hpp"

#include <cmath>
#include <stdexcept>

#include "affseq/nn.hpp"

namespace affseq::fusion {

using ad::Var;

void FusionConfig::validate() const {
  if (seg_width < 1 || dense_width < 1 || sparse_width < 1 || fused_width < 1 || ffn_mult < 1)
    throw std::invalid_argument("FusionConfig: widths must be positive");
  if (fused_width < 2)
    throw std::invalid_argument("FusionConfig: fused_width must allow a hidden decoder layer");
}

void init_params(const FusionConfig& cfg, uint64_t seed, ad::ParamStore& store) {
  cfg.validate();
  Rng rng(seed);
  const int64_t cd = cfg.dense_width;
  nn::make_linear(store, "fusion/seg_proj1", cfg.seg_width, cd, rng);
  nn::make_linear(store, "fusion/seg_proj2", cd, cd, rng);
  nn::make_linear(store, "fusion/attn_q", cd, cd, rng, false);
  nn::make_linear(store, "fusion/attn_k", cd, cd, rng, false);
  nn::make_linear(store, "fusion/attn_v", cd, cd, rng, false);
  nn::make_linear(store, "fusion/attn_o", cd, cd, rng, false);
  nn::make_linear(store, "fusion/ffn1", cd, cfg.ffn_mult * cd, rng);
  nn::make_linear(store, "fusion/ffn2", cfg.ffn_mult * cd, cd, rng);
  nn::make_linear(store, "fusion/sparse_proj", cfg.sparse_width, cd, rng);
  store.create("fusion/fuse_ln.g", ad::Array::full({cd}, 1.0));
  store.create("fusion/fuse_ln.b", ad::Array::zeros({cd}));
  nn::make_linear(store, "fusion/pointwise", 2 * cd, cfg.fused_width, rng);
  nn::make_linear(store, "fusion/dec1", cfg.fused_width, cfg.fused_width / 2, rng);
  nn::make_linear(store, "fusion/dec2", cfg.fused_width / 2, 1, rng);
}

SegEmbedding project_seg(const Var& raw, const FusionConfig& cfg, const ad::ParamStore& store) {
  if (raw->value.cols() != cfg.seg_width || raw->value.rows() != 1)
    throw std::invalid_argument("project_seg: expected 1x" + std::to_string(cfg.seg_width) +
                                " embedding, got " + raw->value.shape_str());
  SegEmbedding seg;
  seg.raw = raw;
  Var h = ad::gelu(nn::apply(nn::load_linear(store, "fusion/seg_proj1"), raw));
  seg.projected = nn::apply(nn::load_linear(store, "fusion/seg_proj2"), h);
  return seg;
}

FusionOutput integrate(const Var& dense_feats, const Var& global_feat, const SegEmbedding& seg,
                       const FusionConfig& cfg, const ad::ParamStore& store) {
  const int64_t n = dense_feats->value.rows();
  if (n == 0) throw std::invalid_argument("integrate: empty point feature matrix");
  if (dense_feats->value.cols() != cfg.dense_width)
    throw std::invalid_argument("integrate: dense width " +
                                std::to_string(dense_feats->value.cols()) + " != config " +
                                std::to_string(cfg.dense_width));
  if (!seg.projected) throw std::invalid_argument("integrate: seg embedding not projected");

  Var q = ad::matmul(seg.projected, nn::load_linear(store, "fusion/attn_q", false).w);
  Var k = ad::matmul(dense_feats, nn::load_linear(store, "fusion/attn_k", false).w);
  Var v = ad::matmul(dense_feats, nn::load_linear(store, "fusion/attn_v", false).w);

  FusionOutput out;
  Var logits = ad::scale(ad::matmul(q, ad::transpose(k)),
                         1.0 / std::sqrt(static_cast<double>(cfg.dense_width)));
  out.attn_weights = ad::softmax_rows(logits);
  Var ctx = ad::matmul(ad::matmul(out.attn_weights, v), nn::load_linear(store, "fusion/attn_o", false).w);

  Var ffn = nn::apply(nn::load_linear(store, "fusion/ffn2"),
                      ad::gelu(nn::apply(nn::load_linear(store, "fusion/ffn1"), ctx)));
  ctx = ad::add(ctx, ffn);

  Var sparse = nn::apply(nn::load_linear(store, "fusion/sparse_proj"), global_feat);
  out.conditioned = ad::layer_norm_rows(ad::add(ctx, sparse), store.get("fusion/fuse_ln.g"),
                                        store.get("fusion/fuse_ln.b"));

  Var per_point = ad::concat_cols(dense_feats, ad::broadcast_rows(out.conditioned, n));
  out.fused = nn::apply(nn::load_linear(store, "fusion/pointwise"), per_point);
  return out;
}

Var decode_mask(const FusionOutput& out, const FusionConfig& cfg, const ad::ParamStore& store) {
  if (!out.fused) throw std::invalid_argument("decode_mask: fused features not populated");
  (void)cfg;
  Var h = ad::gelu(nn::apply(nn::load_linear(store, "fusion/dec1"), out.fused));
  return ad::sigmoid(nn::apply(nn::load_linear(store, "fusion/dec2"), h));
}

std::vector<Var> forward_sequence(const std::vector<Var>& raw_seg_embeddings,
                                  const geom::FeaturePyramid& pyramid, const FusionConfig& cfg,
                                  const ad::ParamStore& store) {
  if (raw_seg_embeddings.empty())
    throw std::invalid_argument("forward_sequence: empty seg embedding sequence");
  std::vector<Var> masks;
  masks.reserve(raw_seg_embeddings.size());
  for (const Var& raw : raw_seg_embeddings) {
    SegEmbedding seg = project_seg(raw, cfg, store);
    FusionOutput fo = integrate(pyramid.dense_feats, pyramid.global_feat, seg, cfg, store);
    masks.push_back(decode_mask(fo, cfg, store));
  }
  return masks;
}

}  // namespace affseq::fusion
