#pragma once

#include <string>
#include <vector>

#include "affseq/data.hpp"
#include "affseq/fusion.hpp"
#include "affseq/pyramid.hpp"

namespace affseq {

struct ModelConfig {
  enc::EncoderConfig encoder;
  geom::PyramidConfig pyramid;
  fusion::FusionConfig fusion;
  lang::LangConfig language;
  uint64_t seed = 0;

  void validate() const;

  /// Full-size defaults (2048-point clouds).
  static ModelConfig standard();
  /// Reduced widths for fast CPU runs (1024-point clouds).
  static ModelConfig compact();
};

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

/// The assembled pipeline: instruction encoder with the seg-token protocol,
/// point encoder + feature pyramid, per-slot fusion and mask decoding.
class Model {
public:
  Model(ModelConfig cfg, lang::Vocabulary vocab);

  /// Reads <path> plus the <path>.json / <path>.vocab sidecars.
  static Model load(const std::string& ckpt_path);
  /// Writes the checkpoint and both sidecars.
  void save(const std::string& ckpt_path) const;

  const ModelConfig& config() const { return cfg_; }
  const lang::Vocabulary& vocab() const { return vocab_; }
  ad::ParamStore& params() { return store_; }
  const ad::ParamStore& params() const { return store_; }

  /// normalize + encode + build_dense for one cloud.
  geom::FeaturePyramid encode_cloud(const geom::PointCloud& cloud) const;

  struct SlotOutput {
    std::string object;  // which cloud the mask lives on
    ad::Var mask;        // N x 1 scores in (0,1)
  };

  struct ForwardResult {
    lang::SegResponse response;
    std::vector<SlotOutput> slots;
    ad::Var routing_logits;
    int64_t routed_slots = 0;
  };

  /// forced_objects/forced_slots implement teacher forcing; by default the
  /// routing head decides S and slots bind to object mentions in order.
  ForwardResult forward(const std::vector<data::NamedCloud>& clouds,
                        const lang::Instruction& instr,
                        const std::vector<std::string>* forced_objects = nullptr,
                        int64_t forced_slots = 0) const;

private:
  ModelConfig cfg_;
  lang::Vocabulary vocab_;
  ad::ParamStore store_;
};

}  // namespace affseq
