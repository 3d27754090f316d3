#pragma once

#include <string>

#include "affseq/params.hpp"

namespace affseq::nn {

struct Linear {
  ad::Var w;
  ad::Var b;  // may be null
};

Linear make_linear(ad::ParamStore& store, const std::string& name, int64_t in, int64_t out,
                   Rng& rng, bool bias = true);
Linear load_linear(const ad::ParamStore& store, const std::string& name, bool bias = true);
ad::Var apply(const Linear& l, const ad::Var& x);

// pre-norm transformer block: x + MHA(LN(x)), then x + FFN(LN(x))
struct Block {
  ad::Var ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  ad::Var wq, wk, wv, wo;
  Linear ffn1, ffn2;
};

Block make_block(ad::ParamStore& store, const std::string& prefix, int64_t width,
                 int64_t ffn_hidden, Rng& rng);
Block load_block(const ad::ParamStore& store, const std::string& prefix);
ad::Var apply_block(const Block& b, const ad::Var& x, int64_t heads);

ad::Var multihead_attention(const ad::Var& q, const ad::Var& k, const ad::Var& v, int64_t heads);

}  // namespace affseq::nn
