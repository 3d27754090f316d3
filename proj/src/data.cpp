#include "affseq/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace affseq::data {

using json = nlohmann::ordered_json;

std::string to_string(TaskKind k) { return k == TaskKind::Single ? "single" : "sequential"; }

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "single") return TaskKind::Single;
  if (s == "sequential") return TaskKind::Sequential;
  throw std::invalid_argument("dataset: unknown task_kind '" + s + "'");
}

const NamedCloud& InstructionSample::cloud_of(const std::string& object) const {
  for (const auto& nc : clouds)
    if (nc.name == object) return nc;
  throw std::invalid_argument("sample " + id + ": no cloud named '" + object + "'");
}

namespace {

json cloud_to_json(const geom::PointCloud& c) {
  json pts = json::array();
  for (int64_t i = 0; i < c.coords.rows(); ++i)
    pts.push_back({c.coords.at(i, 0), c.coords.at(i, 1), c.coords.at(i, 2)});
  return pts;
}

geom::PointCloud cloud_from_json(const json& pts, const std::string& id) {
  if (!pts.is_array() || pts.empty())
    throw std::invalid_argument("sample " + id + ": field objects.points must be a non-empty array");
  geom::PointCloud c;
  c.coords = ad::Array({static_cast<int64_t>(pts.size()), 3});
  for (size_t i = 0; i < pts.size(); ++i) {
    if (!pts[i].is_array() || pts[i].size() != 3)
      throw std::invalid_argument("sample " + id + ": point " + std::to_string(i) + " is not [x,y,z]");
    for (int d = 0; d < 3; ++d) c.coords.at(static_cast<int64_t>(i), d) = pts[i][d].get<double>();
  }
  return c;
}

}  // namespace

std::string dataset_to_json(const Dataset& ds) {
  json root;
  root["format_version"] = ds.format_version;
  root["label_registry"] = ds.label_registry;
  root["catalog_hash"] = ds.catalog_hash;
  json samples = json::array();
  for (const auto& s : ds.samples) {
    json js;
    js["id"] = s.id;
    js["task_kind"] = to_string(s.task_kind);
    js["category"] = s.category;
    js["instruction"] = s.instruction.text;
    json objs = json::array();
    for (const auto& nc : s.clouds) objs.push_back({{"name", nc.name}, {"points", cloud_to_json(nc.cloud)}});
    js["objects"] = objs;
    json steps = json::array();
    for (const auto& st : s.steps)
      steps.push_back({{"object", st.object}, {"affordance", st.affordance}, {"mask", st.mask}});
    js["steps"] = steps;
    js["split_tags"] = s.split_tags;
    samples.push_back(std::move(js));
  }
  root["samples"] = std::move(samples);
  return root.dump(1);
}

Dataset dataset_from_json(const std::string& text) {
  json root = json::parse(text);
  Dataset ds;
  ds.format_version = root.at("format_version").get<int64_t>();
  if (ds.format_version != 1)
    throw std::invalid_argument("dataset: unsupported format_version " +
                                std::to_string(ds.format_version));
  ds.label_registry = root.at("label_registry").get<std::vector<std::string>>();
  ds.catalog_hash = root.at("catalog_hash").get<std::string>();
  for (const auto& js : root.at("samples")) {
    InstructionSample s;
    s.id = js.at("id").get<std::string>();
    s.task_kind = task_kind_from_string(js.at("task_kind").get<std::string>());
    s.category = js.at("category").get<std::string>();
    s.instruction.text = js.at("instruction").get<std::string>();
    for (const auto& jo : js.at("objects")) {
      NamedCloud nc;
      nc.name = jo.at("name").get<std::string>();
      nc.cloud = cloud_from_json(jo.at("points"), s.id);
      s.clouds.push_back(std::move(nc));
    }
    for (const auto& jt : js.at("steps")) {
      Step st;
      st.object = jt.at("object").get<std::string>();
      st.affordance = jt.at("affordance").get<std::string>();
      st.mask = jt.at("mask").get<std::vector<double>>();
      s.steps.push_back(std::move(st));
    }
    if (js.contains("split_tags")) s.split_tags = js.at("split_tags").get<std::vector<std::string>>();
    std::vector<std::string> names;
    for (const auto& nc : s.clouds) names.push_back(nc.name);
    s.instruction.object_refs = derive_object_refs(s.instruction.text, names);
    ds.samples.push_back(std::move(s));
  }
  validate(ds);
  return ds;
}

Dataset load_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("dataset: cannot open " + path);
  std::stringstream buf;
  buf << is.rdbuf();
  return dataset_from_json(buf.str());
}

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("dataset: cannot open " + path + " for writing");
  os << dataset_to_json(ds);
  if (!os) throw std::runtime_error("dataset: write failed for " + path);
}

DatasetSummary summarize(const Dataset& ds) {
  DatasetSummary sum;
  sum.total = static_cast<int64_t>(ds.samples.size());
  for (const auto& s : ds.samples) {
    (s.task_kind == TaskKind::Single ? sum.singles : sum.sequentials)++;
    sum.per_category[s.category]++;
    for (const auto& st : s.steps) sum.per_affordance[st.affordance]++;
  }
  return sum;
}

void validate_sample(const InstructionSample& s, const std::vector<std::string>& registry) {
  auto fail = [&](const std::string& field, const std::string& what) {
    throw std::invalid_argument("sample " + s.id + ": field " + field + ": " + what);
  };
  if (s.id.empty()) throw std::invalid_argument("sample with empty id");
  if (s.instruction.text.empty()) fail("instruction", "empty text");
  if (s.clouds.empty()) fail("objects", "no clouds");
  if (s.steps.empty()) fail("steps", "no steps");
  if (s.task_kind == TaskKind::Single && s.steps.size() != 1)
    fail("task_kind", "single task must have exactly one step");
  if (s.task_kind == TaskKind::Sequential && s.steps.size() < 2)
    fail("task_kind", "sequential task must have at least two steps");
  std::set<std::string> names;
  for (const auto& nc : s.clouds) {
    if (!names.insert(nc.name).second) fail("objects", "duplicate object name '" + nc.name + "'");
    nc.cloud.validate();
  }
  for (size_t i = 0; i < s.steps.size(); ++i) {
    const Step& st = s.steps[i];
    const std::string field = "steps[" + std::to_string(i) + "]";
    if (!names.count(st.object)) fail(field + ".object", "unknown object '" + st.object + "'");
    if (std::find(registry.begin(), registry.end(), st.affordance) == registry.end())
      fail(field + ".affordance", "label '" + st.affordance + "' not in the registry");
    const auto& cloud = s.cloud_of(st.object).cloud;
    if (static_cast<int64_t>(st.mask.size()) != cloud.size())
      fail(field + ".mask", "length " + std::to_string(st.mask.size()) + " does not match cloud size " +
                                std::to_string(cloud.size()));
    for (double v : st.mask)
      if (!(v >= 0.0 && v <= 1.0)) fail(field + ".mask", "score out of [0,1]");
  }
}

void validate(const Dataset& ds) {
  std::set<std::string> ids;
  for (const auto& s : ds.samples) {
    if (!ids.insert(s.id).second) throw std::invalid_argument("dataset: duplicate sample id " + s.id);
    validate_sample(s, ds.label_registry);
  }
}

std::vector<std::string> derive_object_refs(const std::string& text,
                                            const std::vector<std::string>& names) {
  std::string lower = text;
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::vector<std::pair<size_t, std::string>> found;
  std::vector<std::string> unmentioned;
  for (const auto& name : names) {
    std::string lname = name;
    std::transform(lname.begin(), lname.end(), lname.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    const size_t pos = lower.find(lname);
    if (pos == std::string::npos)
      unmentioned.push_back(name);
    else
      found.emplace_back(pos, name);
  }
  std::sort(found.begin(), found.end());
  std::vector<std::string> refs;
  for (auto& [pos, name] : found) refs.push_back(name);
  for (auto& name : unmentioned) refs.push_back(name);
  return refs;
}

Split make_splits(const std::vector<InstructionSample>& samples, const SplitSpec& spec,
                  uint64_t seed) {
  if (samples.empty()) throw std::invalid_argument("make_splits: empty sample list");
  if (spec.mode == SplitSpec::Mode::Unseen && spec.holdout.empty())
    throw std::invalid_argument("make_splits: unseen mode requires a non-empty holdout");
  if (!(spec.test_fraction >= 0.0 && spec.test_fraction < 1.0))
    throw std::invalid_argument("make_splits: test_fraction must be in [0,1)");

  auto carries_holdout = [&](const InstructionSample& s) {
    for (const auto& st : s.steps)
      for (const auto& [cat, aff] : spec.holdout)
        if (s.category == cat && st.affordance == aff) return true;
    return false;
  };

  Split split;
  std::map<std::string, std::vector<int64_t>> groups;  // stratification key -> indices
  for (int64_t i = 0; i < static_cast<int64_t>(samples.size()); ++i) {
    const auto& s = samples[static_cast<size_t>(i)];
    if (spec.mode == SplitSpec::Mode::Unseen && carries_holdout(s)) {
      split.test.push_back(i);
      continue;
    }
    groups[s.category + "\x1f" + s.steps.front().affordance].push_back(i);
  }
  if (groups.empty()) throw std::invalid_argument("make_splits: holdout covers every sample, train would be empty");

  Rng rng(seed);
  for (auto& [key, idx] : groups) {
    rng.shuffle(idx);
    const int64_t k = std::llround(spec.test_fraction * static_cast<double>(idx.size()));
    for (int64_t j = 0; j < static_cast<int64_t>(idx.size()); ++j)
      (j < k ? split.test : split.train).push_back(idx[static_cast<size_t>(j)]);
  }
  if (split.train.empty())
    throw std::invalid_argument("make_splits: resulting train set is empty");
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

geom::PointCloud normalize(const geom::PointCloud& cloud) {
  cloud.validate();
  const int64_t n = cloud.size();
  double cx = 0, cy = 0, cz = 0;
  for (int64_t i = 0; i < n; ++i) {
    cx += cloud.coords.at(i, 0);
    cy += cloud.coords.at(i, 1);
    cz += cloud.coords.at(i, 2);
  }
  cx /= static_cast<double>(n);
  cy /= static_cast<double>(n);
  cz /= static_cast<double>(n);
  geom::PointCloud out;
  out.coords = ad::Array({n, 3});
  double max_norm = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double x = cloud.coords.at(i, 0) - cx;
    const double y = cloud.coords.at(i, 1) - cy;
    const double z = cloud.coords.at(i, 2) - cz;
    out.coords.at(i, 0) = x;
    out.coords.at(i, 1) = y;
    out.coords.at(i, 2) = z;
    max_norm = std::max(max_norm, std::sqrt(x * x + y * y + z * z));
  }
  const double scale = max_norm > 0.0 ? 1.0 / max_norm : 1.0;  // coincident cloud keeps scale 1
  for (int64_t i = 0; i < n * 3; ++i) out.coords[i] *= scale;
  out.channels = cloud.channels;
  return out;
}

}  // namespace affseq::data
