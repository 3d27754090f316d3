#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "affseq/data.hpp"

namespace affseq::data {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kTwoPi = 2.0 * kPi;

using P3 = std::array<double, 3>;
using Surf = std::function<P3(double, double)>;

Surf cylinder_side(P3 base, double r, double h) {
  return [=](double u, double v) -> P3 {
    const double t = kTwoPi * u;
    return {base[0] + r * std::cos(t), base[1] + r * std::sin(t), base[2] + v * h};
  };
}

// cylinder around the y axis (used for spouts)
Surf cylinder_side_y(P3 base, double r, double len) {
  return [=](double u, double v) -> P3 {
    const double t = kTwoPi * u;
    return {base[0] + r * std::cos(t), base[1] + v * len, base[2] + r * std::sin(t)};
  };
}

// cylinder around the x axis (knife handle)
Surf cylinder_side_x(P3 base, double r, double len) {
  return [=](double u, double v) -> P3 {
    const double t = kTwoPi * u;
    return {base[0] + v * len, base[1] + r * std::cos(t), base[2] + r * std::sin(t)};
  };
}

Surf disk_z(P3 center, double r) {
  return [=](double u, double v) -> P3 {
    const double t = kTwoPi * u, rho = r * std::sqrt(v);
    return {center[0] + rho * std::cos(t), center[1] + rho * std::sin(t), center[2]};
  };
}

Surf annulus_z(P3 center, double r0, double r1) {
  return [=](double u, double v) -> P3 {
    const double t = kTwoPi * u;
    const double rho = std::sqrt(r0 * r0 + v * (r1 * r1 - r0 * r0));
    return {center[0] + rho * std::cos(t), center[1] + rho * std::sin(t), center[2]};
  };
}

// torus in the xz plane; sweep limits the major angle (half handles etc.)
Surf torus_xz(P3 center, double major, double minor, double sweep = kTwoPi) {
  return [=](double u, double v) -> P3 {
    const double a = sweep * u, b = kTwoPi * v;
    const double arm = major + minor * std::cos(b);
    return {center[0] + arm * std::cos(a), center[1] + minor * std::sin(b),
            center[2] + arm * std::sin(a)};
  };
}

Surf sphere(P3 center, double r) {
  return [=](double u, double v) -> P3 {
    const double t = kTwoPi * u, phi = std::acos(1.0 - 2.0 * v);
    return {center[0] + r * std::sin(phi) * std::cos(t), center[1] + r * std::sin(phi) * std::sin(t),
            center[2] + r * std::cos(phi)};
  };
}

// rectangle origin + u*eu + v*ev
Surf rect(P3 origin, P3 eu, P3 ev) {
  return [=](double u, double v) -> P3 {
    return {origin[0] + u * eu[0] + v * ev[0], origin[1] + u * eu[1] + v * ev[1],
            origin[2] + u * eu[2] + v * ev[2]};
  };
}

double rect_area(P3 eu, P3 ev) {
  const double cx = eu[1] * ev[2] - eu[2] * ev[1];
  const double cy = eu[2] * ev[0] - eu[0] * ev[2];
  const double cz = eu[0] * ev[1] - eu[1] * ev[0];
  return std::sqrt(cx * cx + cy * cy + cz * cz);
}

SurfacePatch patch(std::string name, double area, Surf at) {
  SurfacePatch p;
  p.name = std::move(name);
  p.area = area;
  p.at = std::move(at);
  return p;
}

SurfacePatch rect_patch(std::string name, P3 origin, P3 eu, P3 ev) {
  return patch(std::move(name), rect_area(eu, ev), rect(origin, eu, ev));
}

Catalog build_catalog() {
  Catalog cat;

  {
    CatalogObject mug;
    mug.name = "mug";
    mug.patches.push_back(patch("body", kTwoPi * 0.5 * 1.0, cylinder_side({0, 0, 0}, 0.5, 1.0)));
    mug.patches.push_back(patch("bottom", kPi * 0.25, disk_z({0, 0, 0}, 0.5)));
    mug.patches.push_back(
        patch("interior_side", kTwoPi * 0.44 * 0.92, cylinder_side({0, 0, 0.08}, 0.44, 0.92)));
    mug.patches.push_back(patch("interior_bottom", kPi * 0.44 * 0.44, disk_z({0, 0, 0.08}, 0.44)));
    mug.patches.push_back(patch("rim", kPi * (0.25 - 0.1936), annulus_z({0, 0, 1.0}, 0.44, 0.5)));
    mug.patches.push_back(
        patch("handle", 2.0 * kPi * kPi * 0.22 * 0.05, torus_xz({0.72, 0, 0.5}, 0.22, 0.05)));
    mug.regions["grasp"] = {"handle"};
    mug.regions["contain"] = {"interior_side", "interior_bottom"};
    mug.regions["pour"] = {"rim"};
    cat.objects.push_back(std::move(mug));
  }

  {
    CatalogObject door;
    door.name = "door";
    door.patches.push_back(rect_patch("front", {-0.5, 0.04, -1.0}, {1.0, 0, 0}, {0, 0, 2.0}));
    door.patches.push_back(rect_patch("back", {-0.5, -0.04, -1.0}, {1.0, 0, 0}, {0, 0, 2.0}));
    door.patches.push_back(patch("knob", 4.0 * kPi * 0.06 * 0.06, sphere({0.38, 0.10, 0.0}, 0.06)));
    door.regions["open"] = {"knob"};
    cat.objects.push_back(std::move(door));
  }

  {
    CatalogObject mw;
    mw.name = "microwave";
    mw.patches.push_back(rect_patch("left", {-0.6, -0.4, -0.35}, {0, 0.8, 0}, {0, 0, 0.7}));
    mw.patches.push_back(rect_patch("right", {0.6, -0.4, -0.35}, {0, 0.8, 0}, {0, 0, 0.7}));
    mw.patches.push_back(rect_patch("top", {-0.6, -0.4, 0.35}, {1.2, 0, 0}, {0, 0.8, 0}));
    mw.patches.push_back(rect_patch("bottom", {-0.6, -0.4, -0.35}, {1.2, 0, 0}, {0, 0.8, 0}));
    mw.patches.push_back(rect_patch("rear", {-0.6, -0.4, -0.35}, {1.2, 0, 0}, {0, 0, 0.7}));
    mw.patches.push_back(rect_patch("front_panel", {-0.6, 0.4, -0.35}, {0.93, 0, 0}, {0, 0, 0.7}));
    mw.patches.push_back(rect_patch("panel_edge", {0.33, 0.4, -0.35}, {0.27, 0, 0}, {0, 0, 0.7}));
    mw.patches.push_back(rect_patch("cavity_floor", {-0.52, -0.32, -0.27}, {1.04, 0, 0}, {0, 0.64, 0}));
    mw.patches.push_back(rect_patch("cavity_back", {-0.52, -0.32, -0.27}, {1.04, 0, 0}, {0, 0, 0.54}));
    mw.regions["open"] = {"panel_edge"};
    mw.regions["contain"] = {"cavity_floor", "cavity_back"};
    cat.objects.push_back(std::move(mw));
  }

  {
    CatalogObject bag;
    bag.name = "bag";
    bag.patches.push_back(rect_patch("front", {-0.45, 0.22, -0.5}, {0.9, 0, 0}, {0, 0, 0.75}));
    bag.patches.push_back(rect_patch("back", {-0.45, -0.22, -0.5}, {0.9, 0, 0}, {0, 0, 0.75}));
    bag.patches.push_back(rect_patch("left", {-0.45, -0.22, -0.5}, {0, 0.44, 0}, {0, 0, 0.75}));
    bag.patches.push_back(rect_patch("right", {0.45, -0.22, -0.5}, {0, 0.44, 0}, {0, 0, 0.75}));
    bag.patches.push_back(rect_patch("base", {-0.45, -0.22, -0.5}, {0.9, 0, 0}, {0, 0.44, 0}));
    bag.patches.push_back(
        rect_patch("top_opening", {-0.4, -0.18, 0.25}, {0.8, 0, 0}, {0, 0.36, 0}));
    bag.patches.push_back(
        patch("handle", kPi * kPi * 0.28 * 0.035 * 2.0, torus_xz({0, 0, 0.25}, 0.28, 0.035, kPi)));
    bag.regions["grasp"] = {"handle"};
    bag.regions["contain"] = {"top_opening"};
    cat.objects.push_back(std::move(bag));
  }

  {
    CatalogObject knife;
    knife.name = "knife";
    knife.patches.push_back(
        patch("handle", kTwoPi * 0.05 * 0.45, cylinder_side_x({-0.55, 0, 0.06}, 0.05, 0.45)));
    knife.patches.push_back(rect_patch("blade_left", {-0.1, 0.012, 0.02}, {0.7, 0, 0}, {0, 0, 0.14}));
    knife.patches.push_back(rect_patch("blade_right", {-0.1, -0.012, 0.02}, {0.7, 0, 0}, {0, 0, 0.14}));
    knife.patches.push_back(rect_patch("blade_edge", {-0.1, -0.012, 0.0}, {0.7, 0, 0}, {0, 0.024, 0.02}));
    knife.regions["grasp"] = {"handle"};
    knife.regions["cut"] = {"blade_edge"};
    cat.objects.push_back(std::move(knife));
  }

  {
    CatalogObject faucet;
    faucet.name = "faucet";
    faucet.patches.push_back(patch("base", kTwoPi * 0.07 * 0.55, cylinder_side({0, 0, 0}, 0.07, 0.55)));
    faucet.patches.push_back(
        patch("spout", kTwoPi * 0.055 * 0.45, cylinder_side_y({0, 0, 0.55}, 0.055, 0.45)));
    faucet.patches.push_back(patch("valve", 4.0 * kPi * 0.07 * 0.07, sphere({0.16, 0, 0.58}, 0.07)));
    faucet.regions["open"] = {"valve"};
    faucet.regions["grasp"] = {"spout"};
    cat.objects.push_back(std::move(faucet));
  }

  cat.phrase_bank["grasp"] = {
      "Grasp the {obj}.",
      "Pick up the {obj} with your hand.",
      "Where should your fingers hold the {obj}?",
      "Take hold of the {obj} firmly.",
      "Show me the right part to grip on the {obj}.",
  };
  cat.phrase_bank["contain"] = {
      "Put something inside the {obj}.",
      "Use the {obj} to hold your things.",
      "Which part of the {obj} can contain items?",
      "Fill the {obj} up.",
  };
  cat.phrase_bank["pour"] = {
      "Pour the water out of the {obj}.",
      "Tip the {obj} to pour from it.",
      "From which part does the {obj} pour?",
  };
  cat.phrase_bank["open"] = {
      "Open the {obj}.",
      "Which part would you use to open the {obj}?",
      "Show me where to pull to open the {obj}.",
  };
  cat.phrase_bank["cut"] = {
      "Cut the rope using the {obj}.",
      "Which part of the {obj} does the cutting?",
      "Use the {obj} to slice the bread.",
  };

  cat.sequences.push_back({{{"mug", "grasp"}, {"mug", "pour"}},
                           {"Grasp the mug and pour out the tea.",
                            "Pick up the mug, then pour the water away."}});
  cat.sequences.push_back({{{"mug", "grasp"}, {"mug", "contain"}},
                           {"Grasp the mug and fill it with coffee.",
                            "Hold the mug so it can contain the hot water."}});
  cat.sequences.push_back(
      {{{"mug", "grasp"}, {"microwave", "open"}, {"microwave", "contain"}},
       {"To reheat the milk, grasp the mug, open the microwave, and put it inside the microwave.",
        "Warm your drink: grasp the mug, then open the microwave and place the mug in the "
        "microwave cavity."}});
  cat.sequences.push_back({{{"bag", "grasp"}, {"door", "open"}},
                           {"Grab the bag and open the door on your way out.",
                            "Pick up the bag, then open the door."}});
  cat.sequences.push_back({{{"knife", "grasp"}, {"knife", "cut"}},
                           {"Hold the knife and cut the apple.",
                            "Grasp the knife, then cut the loaf."}});
  cat.sequences.push_back({{{"microwave", "open"}, {"microwave", "contain"}},
                           {"Open the microwave and put the bowl inside.",
                            "Open the microwave, then use its cavity to contain the plate."}});
  cat.sequences.push_back({{{"mug", "grasp"}, {"faucet", "open"}},
                           {"Grasp the mug, then open the faucet to fill it.",
                            "Take the mug and open the faucet."}});
  cat.sequences.push_back({{{"bag", "grasp"}, {"bag", "contain"}},
                           {"Grasp the bag and pack your books inside.",
                            "Pick the bag up so it can contain the groceries."}});
  return cat;
}

std::string substitute_obj(const std::string& tpl, const std::string& name) {
  std::string out = tpl;
  size_t pos;
  while ((pos = out.find("{obj}")) != std::string::npos) out.replace(pos, 5, name);
  return out;
}

struct SampledCloud {
  geom::PointCloud cloud;         // normalized
  std::vector<int64_t> patch_of;  // per point
};

SampledCloud sample_object(const CatalogObject& obj, Rng& rng, const GenOptions& opt) {
  const size_t np = obj.patches.size();
  double total = 0.0;
  for (const auto& p : obj.patches) total += p.area;

  // proportional allocation with a 1% floor per patch so every labeled
  // region is always represented
  const int64_t floor_count = std::max<int64_t>(1, opt.points / 100);
  std::vector<int64_t> count(np, floor_count);
  int64_t assigned = floor_count * static_cast<int64_t>(np);
  if (assigned > opt.points)
    throw std::invalid_argument("synth: too few points for " + std::to_string(np) + " patches");
  std::vector<std::pair<double, size_t>> frac(np);
  for (size_t i = 0; i < np; ++i) {
    const double want = obj.patches[i].area / total * static_cast<double>(opt.points - assigned);
    count[i] += static_cast<int64_t>(want);
    frac[i] = {-(want - std::floor(want)), i};  // negative for descending sort
    assigned += static_cast<int64_t>(want);
  }
  std::sort(frac.begin(), frac.end());
  for (size_t i = 0; assigned < opt.points; ++i, ++assigned) count[frac[i % np].second]++;

  geom::PointCloud raw;
  raw.coords = ad::Array({opt.points, 3});
  SampledCloud out;
  out.patch_of.reserve(static_cast<size_t>(opt.points));
  int64_t row = 0;
  for (size_t i = 0; i < np; ++i) {
    for (int64_t j = 0; j < count[i]; ++j, ++row) {
      const P3 p = obj.patches[i].at(rng.uniform(), rng.uniform());
      raw.coords.at(row, 0) = p[0] + opt.jitter * rng.normal();
      raw.coords.at(row, 1) = p[1] + opt.jitter * rng.normal();
      raw.coords.at(row, 2) = p[2] + opt.jitter * rng.normal();
      out.patch_of.push_back(static_cast<int64_t>(i));
    }
  }
  out.cloud = normalize(raw);
  return out;
}

AffordanceMask region_mask(const CatalogObject& obj, const std::string& affordance,
                           const SampledCloud& sc, double band) {
  auto rit = obj.regions.find(affordance);
  if (rit == obj.regions.end())
    throw std::invalid_argument("synth: object " + obj.name + " has no affordance '" + affordance + "'");
  std::set<int64_t> labeled_patches;
  for (const auto& pname : rit->second) {
    bool found = false;
    for (size_t i = 0; i < obj.patches.size(); ++i)
      if (obj.patches[i].name == pname) {
        labeled_patches.insert(static_cast<int64_t>(i));
        found = true;
      }
    if (!found) throw std::invalid_argument("synth: unknown patch '" + pname + "' on " + obj.name);
  }

  const int64_t n = sc.cloud.size();
  std::vector<int64_t> labeled_points;
  for (int64_t i = 0; i < n; ++i)
    if (labeled_patches.count(sc.patch_of[static_cast<size_t>(i)])) labeled_points.push_back(i);

  AffordanceMask mask(static_cast<size_t>(n), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    if (labeled_patches.count(sc.patch_of[static_cast<size_t>(i)])) {
      mask[static_cast<size_t>(i)] = 1.0;
      continue;
    }
    double best = std::numeric_limits<double>::infinity();
    const double* pi = sc.cloud.coords.data() + i * 3;
    for (int64_t l : labeled_points) {
      const double* pl = sc.cloud.coords.data() + l * 3;
      const double dx = pi[0] - pl[0], dy = pi[1] - pl[1], dz = pi[2] - pl[2];
      best = std::min(best, dx * dx + dy * dy + dz * dz);
    }
    const double d = std::sqrt(best);
    if (d < band) mask[static_cast<size_t>(i)] = 0.5 * (1.0 + std::cos(kPi * d / band));
  }
  return mask;
}

}  // namespace

const CatalogObject& Catalog::object(const std::string& name) const {
  for (const auto& o : objects)
    if (o.name == name) return o;
  throw std::invalid_argument("catalog: unknown object '" + name + "'");
}

std::vector<std::string> Catalog::labels() const {
  std::set<std::string> labels;
  for (const auto& o : objects)
    for (const auto& [aff, patches] : o.regions) labels.insert(aff);
  return {labels.begin(), labels.end()};
}

const Catalog& shipped_catalog() {
  static const Catalog cat = build_catalog();
  return cat;
}

std::string catalog_hash(const Catalog& catalog) {
  std::ostringstream desc;
  for (const auto& o : catalog.objects) {
    desc << o.name << '{';
    for (const auto& p : o.patches) desc << p.name << ':' << p.area << ';';
    for (const auto& [aff, patches] : o.regions) {
      desc << aff << "->";
      for (const auto& pn : patches) desc << pn << ',';
    }
    desc << '}';
  }
  for (const auto& seq : catalog.sequences)
    for (const auto& [obj, aff] : seq.steps) desc << obj << '.' << aff << '|';
  const std::string s = desc.str();
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream hex;
  hex << std::hex << h;
  return hex.str();
}

Dataset synth_generate(uint64_t seed, int64_t n, const Catalog& catalog, const GenOptions& opt) {
  if (n < 1) throw std::invalid_argument("synth_generate: n must be positive");
  if (catalog.objects.empty()) throw std::invalid_argument("synth_generate: empty catalog");
  Dataset ds;
  ds.label_registry = catalog.labels();
  ds.catalog_hash = catalog_hash(catalog);
  Rng rng(seed);

  for (int64_t i = 0; i < n; ++i) {
    const bool sequential = opt.kind == GenOptions::Kind::SequentialOnly ||
                            (opt.kind == GenOptions::Kind::Mixed &&
                             rng.uniform() < opt.sequential_fraction);
    InstructionSample s;
    std::ostringstream id;
    id << "synth-" << std::setw(6) << std::setfill('0') << i;
    s.id = id.str();

    if (!sequential) {
      const CatalogObject& obj =
          catalog.objects[static_cast<size_t>(rng.below(static_cast<int64_t>(catalog.objects.size())))];
      std::vector<std::string> affs;
      for (const auto& [aff, patches] : obj.regions) affs.push_back(aff);
      const std::string aff = affs[static_cast<size_t>(rng.below(static_cast<int64_t>(affs.size())))];
      const auto& phrases = catalog.phrase_bank.at(aff);
      s.instruction.text = substitute_obj(
          phrases[static_cast<size_t>(rng.below(static_cast<int64_t>(phrases.size())))], obj.name);
      s.task_kind = TaskKind::Single;
      s.category = obj.name;
      SampledCloud sc = sample_object(obj, rng, opt);
      s.steps.push_back({obj.name, aff, region_mask(obj, aff, sc, opt.falloff_band)});
      s.clouds.push_back({obj.name, std::move(sc.cloud)});
    } else {
      const SequenceTemplate& seq =
          catalog.sequences[static_cast<size_t>(rng.below(static_cast<int64_t>(catalog.sequences.size())))];
      s.instruction.text =
          seq.texts[static_cast<size_t>(rng.below(static_cast<int64_t>(seq.texts.size())))];
      s.task_kind = TaskKind::Sequential;
      s.category = seq.steps.front().first;
      std::map<std::string, SampledCloud> sampled;
      for (const auto& [objname, aff] : seq.steps)
        if (!sampled.count(objname))
          sampled.emplace(objname, sample_object(catalog.object(objname), rng, opt));
      for (const auto& [objname, aff] : seq.steps)
        s.steps.push_back(
            {objname, aff, region_mask(catalog.object(objname), aff, sampled.at(objname), opt.falloff_band)});
      // clouds in first-step order
      std::vector<std::string> order;
      for (const auto& [objname, aff] : seq.steps)
        if (std::find(order.begin(), order.end(), objname) == order.end()) order.push_back(objname);
      for (const auto& objname : order) s.clouds.push_back({objname, std::move(sampled.at(objname).cloud)});
    }
    std::vector<std::string> names;
    for (const auto& nc : s.clouds) names.push_back(nc.name);
    s.instruction.object_refs = derive_object_refs(s.instruction.text, names);
    ds.samples.push_back(std::move(s));
  }
  validate(ds);
  return ds;
}

Dataset convert_shape_records(const std::string& path, uint64_t seed) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("convert: cannot open " + path);
  nlohmann::json root = nlohmann::json::parse(is);
  Rng rng(seed);
  Dataset ds;
  ds.catalog_hash = "external-shape-records";
  std::set<std::string> labels;

  for (const auto& shape : root.at("shapes")) {
    const std::string shape_id = shape.at("shape_id").get<std::string>();
    const std::string category = shape.at("category").get<std::string>();
    geom::PointCloud cloud;
    const auto& pts = shape.at("points");
    cloud.coords = ad::Array({static_cast<int64_t>(pts.size()), 3});
    for (size_t i = 0; i < pts.size(); ++i)
      for (int d = 0; d < 3; ++d) cloud.coords.at(static_cast<int64_t>(i), d) = pts[i][d].get<double>();

    for (const auto& [aff, scores] : shape.at("affordances").items()) {
      labels.insert(aff);
      InstructionSample s;
      s.id = shape_id + "/" + aff;
      s.task_kind = TaskKind::Single;
      s.category = category;
      const auto& bank = shipped_catalog().phrase_bank;
      auto it = bank.find(aff);
      if (it != bank.end()) {
        const auto& phrases = it->second;
        s.instruction.text = substitute_obj(
            phrases[static_cast<size_t>(rng.below(static_cast<int64_t>(phrases.size())))], category);
      } else {
        s.instruction.text = "Where can you " + aff + " the " + category + "?";
      }
      s.clouds.push_back({category, cloud});
      s.steps.push_back({category, aff, scores.get<std::vector<double>>()});
      s.instruction.object_refs = derive_object_refs(s.instruction.text, {category});
      ds.samples.push_back(std::move(s));
    }
  }
  ds.label_registry.assign(labels.begin(), labels.end());
  validate(ds);
  return ds;
}

}  // namespace affseq::data
