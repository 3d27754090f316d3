#include "affseq/nn.hpp"

#include <stdexcept>

namespace affseq::nn {

using ad::Var;

Linear make_linear(ad::ParamStore& store, const std::string& name, int64_t in, int64_t out,
                   Rng& rng, bool bias) {
  Linear l;
  l.w = store.create(name + ".w", ad::uniform_init({in, out}, in, out, rng));
  if (bias) l.b = store.create(name + ".b", ad::Array::zeros({1, out}));
  return l;
}

Linear load_linear(const ad::ParamStore& store, const std::string& name, bool bias) {
  Linear l;
  l.w = store.get(name + ".w");
  if (bias) l.b = store.get(name + ".b");
  return l;
}

Var apply(const Linear& l, const Var& x) { return ad::linear(x, l.w, l.b); }

Block make_block(ad::ParamStore& store, const std::string& prefix, int64_t width,
                 int64_t ffn_hidden, Rng& rng) {
  Block b;
  b.ln1_gain = store.create(prefix + ".ln1.g", ad::Array::full({width}, 1.0));
  b.ln1_bias = store.create(prefix + ".ln1.b", ad::Array::zeros({width}));
  b.wq = store.create(prefix + ".attn.wq", ad::uniform_init({width, width}, width, width, rng));
  b.wk = store.create(prefix + ".attn.wk", ad::uniform_init({width, width}, width, width, rng));
  b.wv = store.create(prefix + ".attn.wv", ad::uniform_init({width, width}, width, width, rng));
  b.wo = store.create(prefix + ".attn.wo", ad::uniform_init({width, width}, width, width, rng));
  b.ln2_gain = store.create(prefix + ".ln2.g", ad::Array::full({width}, 1.0));
  b.ln2_bias = store.create(prefix + ".ln2.b", ad::Array::zeros({width}));
  b.ffn1 = make_linear(store, prefix + ".ffn1", width, ffn_hidden, rng);
  b.ffn2 = make_linear(store, prefix + ".ffn2", ffn_hidden, width, rng);
  return b;
}

Block load_block(const ad::ParamStore& store, const std::string& prefix) {
  Block b;
  b.ln1_gain = store.get(prefix + ".ln1.g");
  b.ln1_bias = store.get(prefix + ".ln1.b");
  b.wq = store.get(prefix + ".attn.wq");
  b.wk = store.get(prefix + ".attn.wk");
  b.wv = store.get(prefix + ".attn.wv");
  b.wo = store.get(prefix + ".attn.wo");
  b.ln2_gain = store.get(prefix + ".ln2.g");
  b.ln2_bias = store.get(prefix + ".ln2.b");
  b.ffn1 = load_linear(store, prefix + ".ffn1");
  b.ffn2 = load_linear(store, prefix + ".ffn2");
  return b;
}

Var multihead_attention(const Var& q, const Var& k, const Var& v, int64_t heads) {
  const int64_t width = q->value.cols();
  if (heads < 1 || width % heads != 0)
    throw std::invalid_argument("multihead_attention: width " + std::to_string(width) +
                                " not divisible by heads " + std::to_string(heads));
  const int64_t hd = width / heads;
  Var out;
  for (int64_t h = 0; h < heads; ++h) {
    Var ah = ad::attention(ad::slice_cols(q, h * hd, hd), ad::slice_cols(k, h * hd, hd),
                           ad::slice_cols(v, h * hd, hd));
    out = out ? ad::concat_cols(out, ah) : ah;
  }
  return out;
}

Var apply_block(const Block& b, const Var& x, int64_t heads) {
  Var h = ad::layer_norm_rows(x, b.ln1_gain, b.ln1_bias);
  Var attn = multihead_attention(ad::matmul(h, b.wq), ad::matmul(h, b.wk), ad::matmul(h, b.wv), heads);
  Var x1 = ad::add(x, ad::matmul(attn, b.wo));
  Var h2 = ad::layer_norm_rows(x1, b.ln2_gain, b.ln2_bias);
  Var f = nn::apply(b.ffn2, ad::gelu(nn::apply(b.ffn1, h2)));
  return ad::add(x1, f);
}

}  // namespace affseq::nn
