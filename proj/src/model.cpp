#include "affseq/model.hpp"

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "affseq/checkpoint.hpp"

namespace affseq {

using json = nlohmann::ordered_json;

void ModelConfig::validate() const {
  encoder.validate();
  fusion.validate();
  language.validate();
  if (fusion.seg_width != language.width)
    throw std::invalid_argument("ModelConfig: fusion.seg_width " + std::to_string(fusion.seg_width) +
                                " != language.width " + std::to_string(language.width));
  if (fusion.sparse_width != encoder.sparse_width)
    throw std::invalid_argument("ModelConfig: fusion.sparse_width != encoder.sparse_width");
  if (fusion.dense_width != pyramid.dense_width)
    throw std::invalid_argument("ModelConfig: fusion.dense_width != pyramid.dense_width");
}

ModelConfig ModelConfig::standard() {
  ModelConfig cfg;  // defaults already line up at full size
  return cfg;
}

ModelConfig ModelConfig::compact() {
  ModelConfig cfg;
  cfg.encoder.centers = 64;
  cfg.encoder.k = 32;
  cfg.encoder.width = 64;
  cfg.encoder.sparse_width = 128;
  cfg.pyramid.n2 = 256;
  cfg.pyramid.n3 = 512;
  cfg.pyramid.dense_width = 64;
  cfg.fusion.seg_width = 128;
  cfg.fusion.dense_width = 64;
  cfg.fusion.sparse_width = 128;
  cfg.fusion.fused_width = 64;
  cfg.language.width = 128;
  return cfg;
}

std::string model_config_to_json(const ModelConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["encoder"] = {{"centers", cfg.encoder.centers},
                  {"k", cfg.encoder.k},
                  {"width", cfg.encoder.width},
                  {"depth", cfg.encoder.depth},
                  {"heads", cfg.encoder.heads},
                  {"tap_shallow", cfg.encoder.tap_shallow},
                  {"tap_deep", cfg.encoder.tap_deep},
                  {"sparse_width", cfg.encoder.sparse_width},
                  {"ffn_mult", cfg.encoder.ffn_mult}};
  j["pyramid"] = {{"n2", cfg.pyramid.n2},
                  {"n3", cfg.pyramid.n3},
                  {"dense_width", cfg.pyramid.dense_width},
                  {"up_k", cfg.pyramid.up_k}};
  j["fusion"] = {{"seg_width", cfg.fusion.seg_width},
                 {"dense_width", cfg.fusion.dense_width},
                 {"sparse_width", cfg.fusion.sparse_width},
                 {"fused_width", cfg.fusion.fused_width},
                 {"ffn_mult", cfg.fusion.ffn_mult}};
  j["language"] = {{"width", cfg.language.width},
                   {"s_max", cfg.language.s_max},
                   {"max_tokens", cfg.language.max_tokens},
                   {"heads", cfg.language.heads},
                   {"ffn_mult", cfg.language.ffn_mult}};
  return j.dump(1);
}

ModelConfig model_config_from_json(const std::string& text) {
  const json j = json::parse(text);
  ModelConfig cfg;
  cfg.seed = j.value("seed", static_cast<uint64_t>(0));
  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    cfg.encoder.centers = e.value("centers", cfg.encoder.centers);
    cfg.encoder.k = e.value("k", cfg.encoder.k);
    cfg.encoder.width = e.value("width", cfg.encoder.width);
    cfg.encoder.depth = e.value("depth", cfg.encoder.depth);
    cfg.encoder.heads = e.value("heads", cfg.encoder.heads);
    cfg.encoder.tap_shallow = e.value("tap_shallow", cfg.encoder.tap_shallow);
    cfg.encoder.tap_deep = e.value("tap_deep", cfg.encoder.tap_deep);
    cfg.encoder.sparse_width = e.value("sparse_width", cfg.encoder.sparse_width);
    cfg.encoder.ffn_mult = e.value("ffn_mult", cfg.encoder.ffn_mult);
  }
  if (j.contains("pyramid")) {
    const auto& p = j.at("pyramid");
    cfg.pyramid.n2 = p.value("n2", cfg.pyramid.n2);
    cfg.pyramid.n3 = p.value("n3", cfg.pyramid.n3);
    cfg.pyramid.dense_width = p.value("dense_width", cfg.pyramid.dense_width);
    cfg.pyramid.up_k = p.value("up_k", cfg.pyramid.up_k);
  }
  if (j.contains("fusion")) {
    const auto& f = j.at("fusion");
    cfg.fusion.seg_width = f.value("seg_width", cfg.fusion.seg_width);
    cfg.fusion.dense_width = f.value("dense_width", cfg.fusion.dense_width);
    cfg.fusion.sparse_width = f.value("sparse_width", cfg.fusion.sparse_width);
    cfg.fusion.fused_width = f.value("fused_width", cfg.fusion.fused_width);
    cfg.fusion.ffn_mult = f.value("ffn_mult", cfg.fusion.ffn_mult);
  }
  if (j.contains("language")) {
    const auto& l = j.at("language");
    cfg.language.width = l.value("width", cfg.language.width);
    cfg.language.s_max = l.value("s_max", cfg.language.s_max);
    cfg.language.max_tokens = l.value("max_tokens", cfg.language.max_tokens);
    cfg.language.heads = l.value("heads", cfg.language.heads);
    cfg.language.ffn_mult = l.value("ffn_mult", cfg.language.ffn_mult);
  }
  cfg.validate();
  return cfg;
}

namespace {
uint64_t derive_seed(uint64_t seed, uint64_t salt) {
  return seed * 6364136223846793005ull + salt * 1442695040888963407ull + 0x9e3779b97f4a7c15ull;
}
}  // namespace

Model::Model(ModelConfig cfg, lang::Vocabulary vocab) : cfg_(std::move(cfg)), vocab_(std::move(vocab)) {
  cfg_.validate();
  enc::init_params(cfg_.encoder, derive_seed(cfg_.seed, 1), store_);
  geom::init_pyramid_params(cfg_.encoder, cfg_.pyramid, derive_seed(cfg_.seed, 2), store_);
  fusion::init_params(cfg_.fusion, derive_seed(cfg_.seed, 3), store_);
  lang::init_params(cfg_.language, vocab_.size(), derive_seed(cfg_.seed, 4), store_);
}

Model Model::load(const std::string& ckpt_path) {
  std::ifstream cjs(ckpt_path + ".json");
  if (!cjs) throw std::runtime_error("model: missing config sidecar " + ckpt_path + ".json");
  std::stringstream buf;
  buf << cjs.rdbuf();
  ModelConfig cfg = model_config_from_json(buf.str());
  lang::Vocabulary vocab = lang::Vocabulary::load(ckpt_path + ".vocab");
  Model m(std::move(cfg), std::move(vocab));
  load_checkpoint(ckpt_path, m.store_);
  return m;
}

void Model::save(const std::string& ckpt_path) const {
  save_checkpoint(ckpt_path, store_);
  std::ofstream cjs(ckpt_path + ".json");
  if (!cjs) throw std::runtime_error("model: cannot write " + ckpt_path + ".json");
  cjs << model_config_to_json(cfg_);
  vocab_.save(ckpt_path + ".vocab");
}

geom::FeaturePyramid Model::encode_cloud(const geom::PointCloud& cloud) const {
  const geom::PointCloud normalized = data::normalize(cloud);
  enc::EncoderOutput enc_out = enc::encode(normalized, cfg_.encoder, store_);
  return geom::build_dense(normalized, enc_out, cfg_.pyramid, store_);
}

Model::ForwardResult Model::forward(const std::vector<data::NamedCloud>& clouds,
                                    const lang::Instruction& instr,
                                    const std::vector<std::string>* forced_objects,
                                    int64_t forced_slots) const {
  if (clouds.empty()) throw std::invalid_argument("Model::forward: no clouds");

  lang::EmbedResult embed =
      lang::embed_instruction(instr, cfg_.language, vocab_, store_, forced_slots);
  const int64_t slots = embed.response.slot_count();
  if (forced_objects && static_cast<int64_t>(forced_objects->size()) != slots)
    throw std::invalid_argument("Model::forward: forced object list length " +
                                std::to_string(forced_objects->size()) + " != slot count " +
                                std::to_string(slots));

  std::map<std::string, geom::FeaturePyramid> pyramids;
  auto pyramid_of = [&](const std::string& object) -> const geom::FeaturePyramid& {
    auto it = pyramids.find(object);
    if (it != pyramids.end()) return it->second;
    for (const auto& nc : clouds)
      if (nc.name == object) return pyramids.emplace(object, encode_cloud(nc.cloud)).first->second;
    // unmatched mention: fall back to the first cloud
    return pyramids.emplace(object, encode_cloud(clouds.front().cloud)).first->second;
  };

  ForwardResult out;
  out.response = embed.response;
  out.routing_logits = embed.routing_logits;
  out.routed_slots = embed.routed_slots;
  for (int64_t i = 0; i < slots; ++i) {
    const std::string object = forced_objects ? (*forced_objects)[static_cast<size_t>(i)]
                                              : embed.response.slots[static_cast<size_t>(i)].mention;
    const geom::FeaturePyramid& pyr = pyramid_of(object);
    fusion::SegEmbedding seg =
        fusion::project_seg(embed.seg_embeddings[static_cast<size_t>(i)], cfg_.fusion, store_);
    fusion::FusionOutput fo = fusion::integrate(pyr.dense_feats, pyr.global_feat, seg, cfg_.fusion, store_);
    out.slots.push_back({object, fusion::decode_mask(fo, cfg_.fusion, store_)});
  }
  return out;
}

}  // namespace affseq
