#include "affseq/gradsuite.hpp"

#include <chrono>
#include <set>

#include "affseq/data.hpp"
#include "affseq/encoder.hpp"
#include "affseq/fusion.hpp"
#include "affseq/language.hpp"
#include "affseq/losses.hpp"
#include "affseq/pyramid.hpp"

namespace affseq {

namespace {

using ad::Var;

ad::Array rand_array(std::vector<int64_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  ad::Array a(std::move(shape));
  for (int64_t i = 0; i < a.size(); ++i) a[i] = rng.uniform(lo, hi);
  return a;
}

std::vector<int64_t> sample_elements(int64_t size, Rng& rng, int64_t cap = 24) {
  if (size <= cap) {
    std::vector<int64_t> all(static_cast<size_t>(size));
    for (int64_t i = 0; i < size; ++i) all[static_cast<size_t>(i)] = i;
    return all;
  }
  std::set<int64_t> picked;
  while (static_cast<int64_t>(picked.size()) < cap) picked.insert(rng.below(size));
  return {picked.begin(), picked.end()};
}

void merge(GradSuiteEntry& e, const ad::GradCheckReport& rep, const std::string& target) {
  ++e.instances;
  if (rep.worst_rel_err > e.worst_rel_err) {
    e.worst_rel_err = rep.worst_rel_err;
    e.worst_target = target;
  }
}

void check_target(GradSuiteEntry& e, const std::function<Var()>& fn, const Var& target,
                  const std::string& label, Rng& rng) {
  auto rep = ad::grad_check_param(fn, target, sample_elements(target->value.size(), rng));
  merge(e, rep, label);
}

GradSuiteEntry run_upsample(uint64_t seed, int instances) {
  GradSuiteEntry e{"geometry.upsample"};
  for (int i = 0; i < instances; ++i) {
    Rng rng(seed * 977 + static_cast<uint64_t>(i));
    const int64_t src_n = 6 + i % 3, dst_n = 5, csrc = 3, cdst = 4, cc = 4, cout = 3;
    ad::ParamStore store;
    geom::UpsampleParams p = geom::make_upsample(store, "up", csrc, cdst, cc, cout, rng);
    const ad::Array sc = rand_array({src_n, 3}, rng);
    const ad::Array dc = rand_array({dst_n, 3}, rng);
    Var sf = ad::leaf(rand_array({src_n, csrc}, rng));
    Var df = ad::leaf(rand_array({dst_n, cdst}, rng));
    auto fn = [&]() { return ad::sum(geom::upsample(sc, sf, dc, df, p, 3)); };
    const std::vector<std::pair<Var, std::string>> targets = {
        {sf, "src_feats"},       {df, "dst_feats"},       {p.src_proj, "src_proj"},
        {p.dst_proj, "dst_proj"}, {p.edge_weight, "edge.w"}, {p.edge_bias, "edge.b"}};
    const auto& [var, label] = targets[static_cast<size_t>(i) % targets.size()];
    check_target(e, fn, var, label, rng);
  }
  return e;
}

GradSuiteEntry run_encode(uint64_t seed, int instances) {
  GradSuiteEntry e{"encoder.encode"};
  enc::EncoderConfig cfg;
  cfg.centers = 5;
  cfg.k = 4;
  cfg.width = 8;
  cfg.depth = 2;
  cfg.heads = 2;
  cfg.tap_shallow = 1;
  cfg.tap_deep = 2;
  cfg.sparse_width = 8;
  const std::vector<std::string> names = {
      "encoder/embed1.w",       "encoder/embed2.w",       "encoder/block0.attn.wq",
      "encoder/block0.attn.wv", "encoder/block0.ffn1.w",  "encoder/block0.ln1.g",
      "encoder/block1.attn.wo", "encoder/block1.ffn2.w",  "encoder/block1.ln2.b",
      "encoder/sparse.w"};
  for (int i = 0; i < instances; ++i) {
    Rng rng(seed * 1571 + static_cast<uint64_t>(i));
    ad::ParamStore store;
    enc::init_params(cfg, rng.next_u64(), store);
    geom::PointCloud cloud;
    cloud.coords = rand_array({20, 3}, rng);
    cloud = data::normalize(cloud);
    auto fn = [&]() { return ad::sum(enc::encode(cloud, cfg, store).global_feat); };
    const std::string& name = names[static_cast<size_t>(i) % names.size()];
    check_target(e, fn, store.get(name), name, rng);
  }
  return e;
}

fusion::FusionConfig small_fusion() {
  fusion::FusionConfig cfg;
  cfg.seg_width = 6;
  cfg.dense_width = 8;
  cfg.sparse_width = 8;
  cfg.fused_width = 8;
  cfg.ffn_mult = 2;
  return cfg;
}

GradSuiteEntry run_project_seg(uint64_t seed, int instances) {
  GradSuiteEntry e{"fusion.project_seg"};
  const fusion::FusionConfig cfg = small_fusion();
  for (int i = 0; i < instances; ++i) {
    Rng rng(seed * 2221 + static_cast<uint64_t>(i));
    ad::ParamStore store;
    fusion::init_params(cfg, rng.next_u64(), store);
    Var raw = ad::leaf(rand_array({1, cfg.seg_width}, rng));
    auto fn = [&]() { return ad::sum(fusion::project_seg(raw, cfg, store).projected); };
    const std::vector<std::pair<Var, std::string>> targets = {
        {raw, "raw"},
        {store.get("fusion/seg_proj1.w"), "seg_proj1.w"},
        {store.get("fusion/seg_proj1.b"), "seg_proj1.b"},
        {store.get("fusion/seg_proj2.w"), "seg_proj2.w"}};
    const auto& [var, label] = targets[static_cast<size_t>(i) % targets.size()];
    check_target(e, fn, var, label, rng);
  }
  return e;
}

GradSuiteEntry run_integrate(uint64_t seed, int instances) {
  GradSuiteEntry e{"fusion.integrate"};
  const fusion::FusionConfig cfg = small_fusion();
  for (int i = 0; i < instances; ++i) {
    Rng rng(seed * 2791 + static_cast<uint64_t>(i));
    ad::ParamStore store;
    fusion::init_params(cfg, rng.next_u64(), store);
    Var dense = ad::leaf(rand_array({12, cfg.dense_width}, rng));
    Var global = ad::leaf(rand_array({1, cfg.sparse_width}, rng));
    Var raw = ad::leaf(rand_array({1, cfg.seg_width}, rng));
    auto fn = [&]() {
      fusion::SegEmbedding seg = fusion::project_seg(raw, cfg, store);
      fusion::FusionOutput fo = fusion::integrate(dense, global, seg, cfg, store);
      return ad::add(ad::sum(fo.fused), ad::sum(fo.conditioned));
    };
    const std::vector<std::pair<Var, std::string>> targets = {
        {dense, "dense_feats"},
        {global, "global_feat"},
        {raw, "seg_raw"},
        {store.get("fusion/attn_q.w"), "attn_q.w"},
        {store.get("fusion/attn_k.w"), "attn_k.w"},
        {store.get("fusion/attn_v.w"), "attn_v.w"},
        {store.get("fusion/ffn1.w"), "ffn1.w"},
        {store.get("fusion/sparse_proj.w"), "sparse_proj.w"},
        {store.get("fusion/fuse_ln.g"), "fuse_ln.g"},
        {store.get("fusion/pointwise.w"), "pointwise.w"}};
    const auto& [var, label] = targets[static_cast<size_t>(i) % targets.size()];
    check_target(e, fn, var, label, rng);
  }
  return e;
}

GradSuiteEntry run_decode(uint64_t seed, int instances) {
  GradSuiteEntry e{"fusion.decode_mask"};
  const fusion::FusionConfig cfg = small_fusion();
  for (int i = 0; i < instances; ++i) {
    Rng rng(seed * 3331 + static_cast<uint64_t>(i));
    ad::ParamStore store;
    fusion::init_params(cfg, rng.next_u64(), store);
    Var dense = ad::leaf(rand_array({10, cfg.dense_width}, rng));
    Var global = ad::leaf(rand_array({1, cfg.sparse_width}, rng));
    Var raw = ad::leaf(rand_array({1, cfg.seg_width}, rng));
    auto fn = [&]() {
      fusion::SegEmbedding seg = fusion::project_seg(raw, cfg, store);
      fusion::FusionOutput fo = fusion::integrate(dense, global, seg, cfg, store);
      return ad::sum(fusion::decode_mask(fo, cfg, store));
    };
    const std::vector<std::pair<Var, std::string>> targets = {
        {store.get("fusion/dec1.w"), "dec1.w"},
        {store.get("fusion/dec1.b"), "dec1.b"},
        {store.get("fusion/dec2.w"), "dec2.w"},
        {store.get("fusion/dec2.b"), "dec2.b"},
        {dense, "dense_feats"}};
    const auto& [var, label] = targets[static_cast<size_t>(i) % targets.size()];
    check_target(e, fn, var, label, rng);
  }
  return e;
}

GradSuiteEntry run_embed(uint64_t seed, int instances) {
  GradSuiteEntry e{"language.embed_instruction"};
  const std::vector<std::string> corpus = {"Grasp the mug.", "Open the microwave then contain the bowl.",
                                           "Cut the rope with the knife."};
  lang::Vocabulary vocab = lang::Vocabulary::build(corpus);
  lang::LangConfig cfg;
  cfg.width = 8;
  cfg.s_max = 3;
  cfg.max_tokens = 16;
  cfg.heads = 2;
  cfg.ffn_mult = 2;
  const std::vector<std::string> names = {"language/embed",        "language/pos",
                                          "language/slot_queries", "language/slot_k.w",
                                          "language/block0.attn.wq", "language/block0.ffn1.w",
                                          "language/route.w"};
  for (int i = 0; i < instances; ++i) {
    Rng rng(seed * 4447 + static_cast<uint64_t>(i));
    ad::ParamStore store;
    lang::init_params(cfg, vocab.size(), rng.next_u64(), store);
    lang::Instruction instr{corpus[static_cast<size_t>(i) % corpus.size()], {"mug"}};
    const int64_t forced = 1 + i % cfg.s_max;
    auto fn = [&]() {
      lang::EmbedResult res = lang::embed_instruction(instr, cfg, vocab, store, forced);
      Var acc = ad::sum(res.routing_logits);
      for (const auto& seg : res.seg_embeddings) acc = ad::add(acc, ad::sum(seg));
      return acc;
    };
    const std::string& name = names[static_cast<size_t>(i) % names.size()];
    check_target(e, fn, store.get(name), name, rng);
  }
  return e;
}

GradSuiteEntry run_losses(uint64_t seed, int instances, const char* which) {
  GradSuiteEntry e{which};
  for (int i = 0; i < instances; ++i) {
    Rng rng(seed * 5557 + static_cast<uint64_t>(i));
    if (std::string(which) == "loss.text") {
      Var logits = ad::leaf(rand_array({1, 4}, rng, -2.0, 2.0));
      const int64_t gt = 1 + i % 4;
      auto fn = [&]() { return train::text_loss(logits, gt); };
      check_target(e, fn, logits, "logits", rng);
      continue;
    }
    Var pred = ad::leaf(rand_array({16, 1}, rng, 0.05, 0.95));
    Var gt = ad::constant(rand_array({16, 1}, rng, 0.0, 1.0));
    auto fn = [&]() {
      return std::string(which) == "loss.dice" ? train::dice_loss(pred, gt)
                                               : train::bce_loss(pred, gt);
    };
    check_target(e, fn, pred, "pred", rng);
  }
  return e;
}

}  // namespace

bool GradSuiteResult::all_passed() const {
  for (const auto& e : entries)
    if (!e.passed) return false;
  return !entries.empty();
}

GradSuiteResult run_gradient_suite(uint64_t seed, int instances) {
  const auto t0 = std::chrono::steady_clock::now();
  GradSuiteResult result;
  result.entries.push_back(run_upsample(seed, instances));
  result.entries.push_back(run_encode(seed, instances));
  result.entries.push_back(run_project_seg(seed, instances));
  result.entries.push_back(run_integrate(seed, instances));
  result.entries.push_back(run_decode(seed, instances));
  result.entries.push_back(run_embed(seed, instances));
  result.entries.push_back(run_losses(seed, instances, "loss.dice"));
  result.entries.push_back(run_losses(seed, instances, "loss.bce"));
  result.entries.push_back(run_losses(seed, instances, "loss.text"));
  for (auto& e : result.entries) e.passed = e.worst_rel_err <= 1e-4;
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace affseq
