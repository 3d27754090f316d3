#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "affseq/gradsuite.hpp"
#include "affseq/model.hpp"
#include "affseq/train.hpp"

namespace {

using affseq::Model;
using affseq::ModelConfig;
using json = nlohmann::ordered_json;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitNumeric = 3;

std::string read_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::stringstream buf;
  buf << is.rdbuf();
  return buf.str();
}

affseq::geom::PointCloud load_cloud_file(const std::string& path) {
  affseq::geom::PointCloud cloud;
  std::vector<double> vals;
  if (path.size() > 5 && path.substr(path.size() - 5) == ".json") {
    json j = json::parse(read_file(path));
    const json& pts = j.is_array() ? j : j.at("points");
    for (const auto& p : pts)
      for (int d = 0; d < 3; ++d) vals.push_back(p.at(d).get<double>());
  } else {
    // whitespace-separated x y z per line
    std::istringstream is(read_file(path));
    double v;
    while (is >> v) vals.push_back(v);
    if (vals.empty() || vals.size() % 3 != 0)
      throw std::invalid_argument("cloud file " + path + ": expected x y z triples");
  }
  const int64_t n = static_cast<int64_t>(vals.size() / 3);
  cloud.coords = affseq::ad::Array({n, 3}, std::move(vals));
  cloud.validate();
  return cloud;
}

Model build_model(const json& cfg_json, const std::string& preset, const affseq::data::Dataset& ds,
                  uint64_t seed) {
  ModelConfig mcfg;
  if (cfg_json.contains("model")) {
    mcfg = affseq::model_config_from_json(cfg_json.at("model").dump());
  } else if (preset == "compact") {
    mcfg = ModelConfig::compact();
  } else {
    mcfg = ModelConfig::standard();
  }
  mcfg.seed = seed;
  std::vector<std::string> corpus;
  for (const auto& s : ds.samples) corpus.push_back(s.instruction.text);
  return Model(mcfg, affseq::lang::Vocabulary::build(corpus));
}

int cmd_synth(uint64_t seed, int64_t n, const std::string& out, int64_t points,
              const std::string& kind, double seq_fraction) {
  affseq::data::GenOptions opt;
  opt.points = points;
  opt.sequential_fraction = seq_fraction;
  if (kind == "single")
    opt.kind = affseq::data::GenOptions::Kind::SingleOnly;
  else if (kind == "sequential")
    opt.kind = affseq::data::GenOptions::Kind::SequentialOnly;
  else if (kind != "mixed")
    throw std::invalid_argument("synth: unknown kind '" + kind + "'");
  auto ds = affseq::data::synth_generate(seed, n, affseq::data::shipped_catalog(), opt);
  affseq::data::save_dataset(ds, out);
  const auto sum = affseq::data::summarize(ds);
  std::cout << "wrote " << out << ": " << sum.total << " samples (" << sum.singles << " single, "
            << sum.sequentials << " sequential)\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& data_path, const std::string& out,
              const std::string& preset, const std::string& init_ckpt) {
  const auto ds = affseq::data::load_dataset(data_path);
  json cfg_json = config_path.empty() ? json::object() : json::parse(read_file(config_path));
  affseq::train::TrainConfig tcfg = affseq::train::train_config_from_json(cfg_json.dump());

  Model model = init_ckpt.empty() ? build_model(cfg_json, preset, ds, tcfg.seed)
                                  : Model::load(init_ckpt);
  auto result = affseq::train::train(model, ds, tcfg, out, out + ".loss.csv");
  std::cout << "trained " << result.steps << " steps, final loss " << std::setprecision(6)
            << result.final_loss << "\n"
            << "checkpoint: " << out << "\nloss log:   " << out << ".loss.csv\n";
  return kExitOk;
}

std::vector<affseq::data::InstructionSample> select_split(const affseq::data::Dataset& ds,
                                                          const std::string& split) {
  if (split == "all") return ds.samples;
  std::vector<affseq::data::InstructionSample> out;
  for (const auto& s : ds.samples)
    for (const auto& tag : s.split_tags)
      if (tag == split) {
        out.push_back(s);
        break;
      }
  if (out.empty())
    throw std::invalid_argument("eval: no samples tagged '" + split + "' in the dataset");
  return out;
}

int cmd_eval(const std::string& ckpt, const std::string& data_path, const std::string& report_path,
             const std::string& split) {
  Model model = Model::load(ckpt);
  const auto ds = affseq::data::load_dataset(data_path);
  const auto samples = select_split(ds, split);
  const auto report = affseq::train::evaluate(model, samples);
  affseq::train::write_report(report, report_path);
  std::cout << "evaluated " << report.samples.size() << " samples\n"
            << "mIoU " << report.overall.miou << "  AUC " << report.overall.auc << "  SIM "
            << report.overall.sim << "  MAE " << report.overall.mae << "\n"
            << "routing correct " << report.routing_correct << "/" << report.samples.size() << "\n"
            << "report: " << report_path << "\n";
  return kExitOk;
}

int cmd_infer(const std::string& ckpt, const std::string& cloud_path, const std::string& instruction,
              const std::string& object_name) {
  Model model = Model::load(ckpt);
  affseq::data::NamedCloud nc{object_name, load_cloud_file(cloud_path)};
  affseq::lang::Instruction instr;
  instr.text = instruction;
  instr.object_refs = affseq::data::derive_object_refs(instruction, {object_name});
  const auto fwd = model.forward({nc}, instr);

  json out;
  out["response"] = fwd.response.text;
  out["predicted_slots"] = fwd.routed_slots;
  json slots = json::array();
  for (size_t i = 0; i < fwd.slots.size(); ++i) {
    json js;
    js["object"] = fwd.slots[i].object;
    js["offset"] = fwd.response.slots[i].offset;
    js["mask"] = fwd.slots[i].mask->value.vec();
    slots.push_back(std::move(js));
  }
  out["slots"] = std::move(slots);
  std::cout << out.dump(1) << "\n";
  return kExitOk;
}

int cmd_gradcheck(uint64_t seed) {
  const auto result = affseq::run_gradient_suite(seed);
  for (const auto& e : result.entries)
    std::cout << (e.passed ? "[PASS] " : "[FAIL] ") << e.op << "  instances=" << e.instances
              << "  worst_rel_err=" << std::scientific << std::setprecision(3) << e.worst_rel_err
              << std::defaultfloat << (e.worst_target.empty() ? "" : "  at " + e.worst_target)
              << "\n";
  std::cout << "total " << std::fixed << std::setprecision(2) << result.seconds << " s\n";
  if (!result.all_passed()) throw affseq::NumericError("gradient suite failed");
  return kExitOk;
}

void write_histogram_svg(const affseq::train::EvalReport& rep, const std::string& path) {
  struct Panel {
    const char* name;
    std::vector<double> values;
  };
  std::vector<Panel> panels = {{"mIoU", {}}, {"AUC", {}}, {"SIM", {}}, {"MAE", {}}};
  for (const auto& s : rep.samples) {
    if (s.miou) panels[0].values.push_back(*s.miou);
    if (s.auc) panels[1].values.push_back(*s.auc);
    if (s.sim) panels[2].values.push_back(*s.sim);
    if (s.mae) panels[3].values.push_back(*s.mae);
  }
  const int bins = 10, pw = 220, ph = 150, pad = 30;
  std::ostringstream svg;
  svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << 2 * (pw + pad) + pad << "' height='"
      << 2 * (ph + pad) + pad << "'>\n";
  for (size_t pi = 0; pi < panels.size(); ++pi) {
    std::vector<int> hist(bins, 0);
    int peak = 1;
    for (double v : panels[pi].values) {
      int b = std::min(bins - 1, std::max(0, static_cast<int>(v * bins)));
      peak = std::max(peak, ++hist[static_cast<size_t>(b)]);
    }
    const int ox = pad + static_cast<int>(pi % 2) * (pw + pad);
    const int oy = pad + static_cast<int>(pi / 2) * (ph + pad);
    svg << "<text x='" << ox << "' y='" << oy - 8 << "' font-size='12'>" << panels[pi].name << " ("
        << panels[pi].values.size() << " samples)</text>\n";
    svg << "<rect x='" << ox << "' y='" << oy << "' width='" << pw << "' height='" << ph
        << "' fill='none' stroke='black'/>\n";
    for (int b = 0; b < bins; ++b) {
      const int h = hist[static_cast<size_t>(b)] * (ph - 4) / peak;
      svg << "<rect x='" << ox + b * pw / bins + 1 << "' y='" << oy + ph - h << "' width='"
          << pw / bins - 2 << "' height='" << h << "' fill='steelblue'/>\n";
    }
  }
  svg << "</svg>\n";
  std::ofstream os(path);
  if (!os) throw std::runtime_error("report: cannot open " + path + " for writing");
  os << svg.str();
}

int cmd_report(const std::string& eval_json, std::string csv_path, std::string plot_path,
               bool make_plot) {
  const auto rep = affseq::train::report_from_json(read_file(eval_json));
  if (csv_path.empty()) csv_path = eval_json + ".csv";
  std::ofstream csv(csv_path);
  if (!csv) throw std::runtime_error("report: cannot open " + csv_path + " for writing");
  csv << "id,kind,predicted_slots,gt_slots,routing_correct,miou,auc,sim,mae\n";
  auto cell = [](const std::optional<double>& v) { return v ? std::to_string(*v) : std::string(); };
  for (const auto& s : rep.samples)
    csv << s.id << ',' << s.kind << ',' << s.predicted_slots << ',' << s.gt_slots << ','
        << (s.routing_correct ? 1 : 0) << ',' << cell(s.miou) << ',' << cell(s.auc) << ','
        << cell(s.sim) << ',' << cell(s.mae) << "\n";
  std::cout << "csv: " << csv_path << "\n";
  if (make_plot) {
    if (plot_path.empty()) plot_path = eval_json + ".svg";
    write_histogram_svg(rep, plot_path);
    std::cout << "plot: " << plot_path << "\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sequential affordance segmentation pipeline"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  uint64_t synth_seed = 0;
  int64_t synth_n = 100, synth_points = 2048;
  std::string synth_out, synth_kind = "mixed";
  double synth_frac = 0.35;
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--n", synth_n, "sample count")->required();
  synth->add_option("--out", synth_out, "output dataset path")->required();
  synth->add_option("--points", synth_points, "points per cloud");
  synth->add_option("--kind", synth_kind, "mixed|single|sequential");
  synth->add_option("--seq-fraction", synth_frac, "sequential share for mixed");

  auto* trn = app.add_subcommand("train", "train a model");
  std::string train_cfg, train_data, train_out, train_preset = "standard", train_init;
  trn->add_option("--config", train_cfg, "training config JSON");
  trn->add_option("--data", train_data, "dataset path")->required();
  trn->add_option("--out", train_out, "checkpoint output path")->required();
  trn->add_option("--preset", train_preset, "model preset: standard|compact");
  trn->add_option("--init-ckpt", train_init, "start from an existing checkpoint (finetune)");

  auto* evl = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_ckpt, eval_data, eval_report, eval_split = "all";
  evl->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
  evl->add_option("--data", eval_data, "dataset path")->required();
  evl->add_option("--report", eval_report, "report JSON output")->required();
  evl->add_option("--split", eval_split, "split tag filter or 'all'");

  auto* inf = app.add_subcommand("infer", "run one instruction on one cloud");
  std::string infer_ckpt, infer_cloud, infer_instruction, infer_object = "object";
  inf->add_option("--ckpt", infer_ckpt, "checkpoint path")->required();
  inf->add_option("--cloud", infer_cloud, "xyz text or JSON cloud file")->required();
  inf->add_option("--instruction", infer_instruction, "instruction text")->required();
  inf->add_option("--object", infer_object, "object name for the cloud");

  auto* grd = app.add_subcommand("gradcheck", "run the finite-difference suite");
  uint64_t grad_seed = 7;
  grd->add_option("--seed", grad_seed, "suite seed");

  auto* rpt = app.add_subcommand("report", "summarize an eval report");
  std::string report_in, report_csv, report_plot;
  rpt->add_option("--eval-json", report_in, "evaluation report JSON")->required();
  rpt->add_option("--csv", report_csv, "CSV output path");
  auto* plot_opt = rpt->add_option("--plot", report_plot, "SVG output path")->expected(0, 1);

  try {
    app.parse(argc, argv);
    if (synth->parsed())
      return cmd_synth(synth_seed, synth_n, synth_out, synth_points, synth_kind, synth_frac);
    if (trn->parsed()) return cmd_train(train_cfg, train_data, train_out, train_preset, train_init);
    if (evl->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_report, eval_split);
    if (inf->parsed()) return cmd_infer(infer_ckpt, infer_cloud, infer_instruction, infer_object);
    if (grd->parsed()) return cmd_gradcheck(grad_seed);
    if (rpt->parsed()) return cmd_report(report_in, report_csv, report_plot, plot_opt->count() > 0);
    return kExitValidation;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  } catch (const affseq::NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
}
