#include "affseq/encoder.hpp"

#include <stdexcept>
#include <string>

namespace affseq::enc {

using ad::Var;

void EncoderConfig::validate() const {
  if (centers < 1 || k < 1 || width < 1 || depth < 1 || sparse_width < 1)
    throw std::invalid_argument("EncoderConfig: counts and widths must be positive");
  if (width % heads != 0)
    throw std::invalid_argument("EncoderConfig: width " + std::to_string(width) +
                                " not divisible by heads " + std::to_string(heads));
  if (tap_shallow < 1 || tap_deep < 1 || tap_shallow > depth || tap_deep > depth ||
      tap_shallow > tap_deep)
    throw std::invalid_argument("EncoderConfig: taps must satisfy 1 <= shallow <= deep <= depth");
}

Grouping group(const geom::PointCloud& cloud, const EncoderConfig& cfg, int64_t start) {
  cloud.validate();
  const int64_t n = cloud.size();
  if (cfg.centers > n)
    throw std::invalid_argument("group: centers " + std::to_string(cfg.centers) + " > cloud size " +
                                std::to_string(n));
  if (cfg.k > n)
    throw std::invalid_argument("group: k " + std::to_string(cfg.k) + " > cloud size " +
                                std::to_string(n));
  Grouping g;
  g.center_indices = geom::fps(cloud.coords, cfg.centers, start);
  const ad::Array center_coords = geom::take_rows(cloud.coords, g.center_indices);
  g.neighbors = geom::knn(center_coords, cloud.coords, cfg.k);
  g.rel_coords = ad::Array({cfg.centers * cfg.k, 3});
  g.abs_coords = ad::Array({cfg.centers * cfg.k, 3});
  for (int64_t c = 0; c < cfg.centers; ++c) {
    const double* pc = center_coords.data() + c * 3;
    for (int64_t j = 0; j < cfg.k; ++j) {
      const double* pn = cloud.coords.data() + g.neighbors.at(c, j) * 3;
      double* rel = g.rel_coords.data() + (c * cfg.k + j) * 3;
      double* abs = g.abs_coords.data() + (c * cfg.k + j) * 3;
      for (int d = 0; d < 3; ++d) {
        rel[d] = pn[d] - pc[d];
        abs[d] = pn[d];
      }
    }
  }
  return g;
}

void init_params(const EncoderConfig& cfg, uint64_t seed, ad::ParamStore& store) {
  cfg.validate();
  Rng rng(seed);
  // per-neighbour input is [relative || absolute] coordinates
  nn::make_linear(store, "encoder/embed1", 6, cfg.width, rng);
  nn::make_linear(store, "encoder/embed2", cfg.width, cfg.width, rng);
  for (int64_t l = 0; l < cfg.depth; ++l)
    nn::make_block(store, "encoder/block" + std::to_string(l), cfg.width, cfg.ffn_mult * cfg.width, rng);
  nn::make_linear(store, "encoder/sparse", cfg.width, cfg.sparse_width, rng);
}

EncoderOutput encode(const geom::PointCloud& cloud, const EncoderConfig& cfg,
                     const ad::ParamStore& store, int64_t start) {
  cfg.validate();
  Grouping g = group(cloud, cfg, start);

  Var x = ad::constant(ad::Array({cfg.centers * cfg.k, 6}));
  for (int64_t i = 0; i < cfg.centers * cfg.k; ++i) {
    for (int d = 0; d < 3; ++d) {
      x->value.at(i, d) = g.rel_coords.at(i, d);
      x->value.at(i, 3 + d) = g.abs_coords.at(i, d);
    }
  }

  nn::Linear e1 = nn::load_linear(store, "encoder/embed1");
  nn::Linear e2 = nn::load_linear(store, "encoder/embed2");
  if (e1.w->value.cols() != cfg.width)
    throw std::invalid_argument("encode: parameter width " + std::to_string(e1.w->value.cols()) +
                                " does not match config width " + std::to_string(cfg.width));
  Var t = nn::apply(e2, ad::gelu(nn::apply(e1, x)));
  Var tokens = ad::group_max_rows(t, cfg.k);

  EncoderOutput out;
  out.p1_indices = g.center_indices;
  for (int64_t l = 0; l < cfg.depth; ++l) {
    tokens = nn::apply_block(nn::load_block(store, "encoder/block" + std::to_string(l)), tokens,
                             cfg.heads);
    if (l + 1 == cfg.tap_shallow) out.tap_shallow = tokens;
    if (l + 1 == cfg.tap_deep) out.tap_deep = tokens;
  }
  out.tokens = tokens;
  out.global_feat = nn::apply(nn::load_linear(store, "encoder/sparse"), ad::mean_rows(tokens));
  return out;
}

}  // namespace affseq::enc
