#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "affseq/common.hpp"
#include "affseq/geometry.hpp"
#include "affseq/language.hpp"

namespace affseq::data {

using AffordanceMask = std::vector<double>;  // per-point scores in [0, 1]

struct NamedCloud {
  std::string name;
  geom::PointCloud cloud;
};

struct Step {
  std::string object;
  std::string affordance;
  AffordanceMask mask;  // over the named object's cloud
};

enum class TaskKind { Single, Sequential };

std::string to_string(TaskKind k);
TaskKind task_kind_from_string(const std::string& s);

struct InstructionSample {
  std::string id;
  TaskKind task_kind = TaskKind::Single;
  std::string category;
  lang::Instruction instruction;
  std::vector<NamedCloud> clouds;
  std::vector<Step> steps;
  std::vector<std::string> split_tags;

  const NamedCloud& cloud_of(const std::string& object) const;
};

struct Dataset {
  int64_t format_version = 1;
  std::vector<std::string> label_registry;
  std::string catalog_hash;
  std::vector<InstructionSample> samples;
};

struct DatasetSummary {
  int64_t total = 0;
  int64_t singles = 0;
  int64_t sequentials = 0;
  std::map<std::string, int64_t> per_category;
  std::map<std::string, int64_t> per_affordance;  // counted per step
};

Dataset load_dataset(const std::string& path);
void save_dataset(const Dataset& ds, const std::string& path);
std::string dataset_to_json(const Dataset& ds);
Dataset dataset_from_json(const std::string& text);

DatasetSummary summarize(const Dataset& ds);

/// Full invariant check; throws naming the offending sample id and field.
void validate(const Dataset& ds);
void validate_sample(const InstructionSample& s, const std::vector<std::string>& registry);

/// Object names ordered by first occurrence in the instruction text;
/// unmentioned objects are appended in cloud order.
std::vector<std::string> derive_object_refs(const std::string& text,
                                            const std::vector<std::string>& names);

struct SplitSpec {
  enum class Mode { Seen, Unseen };
  Mode mode = Mode::Seen;
  std::vector<std::pair<std::string, std::string>> holdout;  // (category, affordance)
  double test_fraction = 0.1;
};

struct Split {
  std::vector<int64_t> train;
  std::vector<int64_t> test;
};

/// Seen: stratified by (category, first-step affordance) at test_fraction.
/// Unseen: any sample carrying a holdout pair goes to test; the remainder
/// is split as in seen mode. Deterministic in (samples, spec, seed).
Split make_splits(const std::vector<InstructionSample>& samples, const SplitSpec& spec,
                  uint64_t seed);

/// Centroid to origin, max point norm scaled to 1 (all-coincident clouds
/// keep scale 1). Channels pass through.
geom::PointCloud normalize(const geom::PointCloud& cloud);

// ---- synthetic generator ---------------------------------------------------

struct SurfacePatch {
  std::string name;
  double area = 0.0;
  std::function<std::array<double, 3>(double u, double v)> at;
};

struct CatalogObject {
  std::string name;
  std::vector<SurfacePatch> patches;
  std::map<std::string, std::vector<std::string>> regions;  // affordance -> labeled patches
};

struct SequenceTemplate {
  std::vector<std::pair<std::string, std::string>> steps;  // (object, affordance)
  std::vector<std::string> texts;
};

struct Catalog {
  std::vector<CatalogObject> objects;
  std::map<std::string, std::vector<std::string>> phrase_bank;  // affordance -> "{obj}" phrases
  std::vector<SequenceTemplate> sequences;

  const CatalogObject& object(const std::string& name) const;
  std::vector<std::string> labels() const;
};

const Catalog& shipped_catalog();
std::string catalog_hash(const Catalog& catalog);

struct GenOptions {
  enum class Kind { Mixed, SingleOnly, SequentialOnly };
  int64_t points = 2048;
  double jitter = 0.008;
  double falloff_band = 0.08;        // in normalized units
  double sequential_fraction = 0.35;  // used by Mixed
  Kind kind = Kind::Mixed;
};

Dataset synth_generate(uint64_t seed, int64_t n, const Catalog& catalog, const GenOptions& opt = {});

/// Converts per-shape records (shape id, category, points, per-affordance
/// point scores) into instruction samples, one per (shape, affordance),
/// with instructions drawn from the shipped phrase banks.
Dataset convert_shape_records(const std::string& path, uint64_t seed);

}  // namespace affseq::data
