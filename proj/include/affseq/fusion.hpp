#pragma once

#include <vector>

#include "affseq/pyramid.hpp"

namespace affseq::fusion {

struct FusionConfig {
  int64_t seg_width = 256;    // raw seg-embedding width (language side)
  int64_t dense_width = 128;  // per-point feature width
  int64_t sparse_width = 256; // global feature width
  int64_t fused_width = 128;  // per-point fused feature width
  int64_t ffn_mult = 4;

  void validate() const;
};

struct SegEmbedding {
  ad::Var raw;        // 1 x seg_width
  ad::Var projected;  // 1 x dense_width
};

struct FusionOutput {
  ad::Var conditioned;   // 1 x dense_width
  ad::Var fused;         // N x fused_width
  ad::Var attn_weights;  // 1 x N, softmax over points
};

void init_params(const FusionConfig& cfg, uint64_t seed, ad::ParamStore& store);

/// Two-layer perceptron seg_width -> dense_width with gelu between.
SegEmbedding project_seg(const ad::Var& raw, const FusionConfig& cfg, const ad::ParamStore& store);

/// Single-query cross-attention (query = projected seg embedding, keys and
/// values = dense point features), FFN with residual, fusion with the
/// projected global feature, then per-point conditioning.
FusionOutput integrate(const ad::Var& dense_feats, const ad::Var& global_feat,
                       const SegEmbedding& seg, const FusionConfig& cfg,
                       const ad::ParamStore& store);

/// Per-point decoder: fused -> fused/2 -> 1 with gelu, sigmoid output.
ad::Var decode_mask(const FusionOutput& out, const FusionConfig& cfg, const ad::ParamStore& store);

/// One independent integrate+decode pass per seg embedding over a shared
/// pyramid; masks are returned in slot order.
std::vector<ad::Var> forward_sequence(const std::vector<ad::Var>& raw_seg_embeddings,
                                      const geom::FeaturePyramid& pyramid, const FusionConfig& cfg,
                                      const ad::ParamStore& store);

}  // namespace affseq::fusion
