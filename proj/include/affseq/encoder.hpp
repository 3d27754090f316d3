#pragma once

#include "affseq/geometry.hpp"
#include "affseq/nn.hpp"

namespace affseq::enc {

/// Small stand-in point encoder: FPS centers, kNN grouping, shared
/// point-wise embedding with max-pool, then a short self-attention stack.
/// Two intermediate taps and a pooled global feature are exposed with the
/// shapes downstream modules expect from a pretrained 3D backbone.
struct EncoderConfig {
  int64_t centers = 128;
  int64_t k = 32;
  int64_t width = 128;        // token width
  int64_t depth = 4;          // attention blocks
  int64_t heads = 4;
  int64_t tap_shallow = 2;    // 1-based block index of the shallow intermediate
  int64_t tap_deep = 4;       // 1-based block index of the deep intermediate
  int64_t sparse_width = 256; // global feature width
  int64_t ffn_mult = 4;

  void validate() const;
};

struct EncoderOutput {
  std::vector<int64_t> p1_indices;  // center indices into the full cloud
  ad::Var tokens;                   // centers x width
  ad::Var tap_shallow;              // centers x width
  ad::Var tap_deep;
  ad::Var global_feat;              // 1 x sparse_width
};

struct Grouping {
  std::vector<int64_t> center_indices;
  geom::KnnResult neighbors;  // per center, k nearest cloud points
  ad::Array rel_coords;       // (centers*k) x 3, neighbour minus center
  ad::Array abs_coords;       // (centers*k) x 3
};

Grouping group(const geom::PointCloud& cloud, const EncoderConfig& cfg, int64_t start = 0);

/// Creates parameters under "encoder/" in the store; deterministic per seed.
void init_params(const EncoderConfig& cfg, uint64_t seed, ad::ParamStore& store);

EncoderOutput encode(const geom::PointCloud& cloud, const EncoderConfig& cfg,
                     const ad::ParamStore& store, int64_t start = 0);

}  // namespace affseq::enc
