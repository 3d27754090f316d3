#include "affseq/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace affseq::train {

using ad::Var;
using json = nlohmann::ordered_json;

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0))
    throw std::invalid_argument("TrainConfig: warmup_ratio must be in [0,1)");
  if (epochs < 1 || batch_size < 1)
    throw std::invalid_argument("TrainConfig: epochs and batch_size must be positive");
  if (weight_decay < 0.0) throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
  weights.validate();
}

std::string train_config_to_json(const TrainConfig& cfg) {
  json j;
  j["learning_rate"] = cfg.learning_rate;
  j["weight_decay"] = cfg.weight_decay;
  j["warmup_ratio"] = cfg.warmup_ratio;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["seed"] = cfg.seed;
  j["freeze_encoder"] = cfg.freeze_encoder;
  j["lambda_c"] = cfg.weights.lambda_c;
  j["lambda_b"] = cfg.weights.lambda_b;
  j["lambda_d"] = cfg.weights.lambda_d;
  j["max_steps"] = cfg.max_steps;
  return j.dump(1);
}

TrainConfig train_config_from_json(const std::string& text) {
  const json j = json::parse(text);
  TrainConfig cfg;
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
  cfg.warmup_ratio = j.value("warmup_ratio", cfg.warmup_ratio);
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.freeze_encoder = j.value("freeze_encoder", cfg.freeze_encoder);
  cfg.weights.lambda_c = j.value("lambda_c", cfg.weights.lambda_c);
  cfg.weights.lambda_b = j.value("lambda_b", cfg.weights.lambda_b);
  cfg.weights.lambda_d = j.value("lambda_d", cfg.weights.lambda_d);
  cfg.max_steps = j.value("max_steps", cfg.max_steps);
  cfg.validate();
  return cfg;
}

SampleLoss sample_loss(const Model& model, const data::InstructionSample& sample,
                       const LossWeights& weights) {
  const int64_t s_gt = static_cast<int64_t>(sample.steps.size());
  if (s_gt > model.config().language.s_max)
    throw std::invalid_argument("sample " + sample.id + ": " + std::to_string(s_gt) +
                                " steps exceed s_max " + std::to_string(model.config().language.s_max));
  std::vector<std::string> objects;
  for (const auto& st : sample.steps) objects.push_back(st.object);

  Model::ForwardResult fwd = model.forward(sample.clouds, sample.instruction, &objects, s_gt);

  std::vector<Var> dices, bces;
  for (int64_t i = 0; i < s_gt; ++i) {
    const auto& step = sample.steps[static_cast<size_t>(i)];
    Var gt = ad::constant(
        ad::Array({static_cast<int64_t>(step.mask.size()), 1}, std::vector<double>(step.mask)));
    const Var& pred = fwd.slots[static_cast<size_t>(i)].mask;
    dices.push_back(dice_loss(pred, gt));
    bces.push_back(bce_loss(pred, gt));
  }
  Var text = text_loss(fwd.routing_logits, s_gt);

  SampleLoss out;
  out.total = total_loss(weights, dices, bces, text);
  out.text_value = text->value[0];
  for (const auto& v : bces) out.bce_value += v->value[0] / static_cast<double>(s_gt);
  for (const auto& v : dices) out.dice_value += v->value[0] / static_cast<double>(s_gt);
  return out;
}

TrainResult train(Model& model, const data::Dataset& dataset, const TrainConfig& cfg,
                  const std::string& ckpt_out, const std::string& log_out) {
  cfg.validate();
  data::validate(dataset);
  if (dataset.samples.empty()) throw std::invalid_argument("train: empty dataset");

  const int64_t n = static_cast<int64_t>(dataset.samples.size());
  const int64_t batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  int64_t total_steps = cfg.epochs * batches_per_epoch;
  if (cfg.max_steps > 0) total_steps = std::min(total_steps, cfg.max_steps);

  std::vector<std::pair<std::string, Var>> trainable;
  if (cfg.freeze_encoder)
    trainable = model.params().without_prefix("encoder/");
  else
    for (const auto& [name, v] : model.params().all()) trainable.emplace_back(name, v);

  AdamW optimizer(AdamWConfig{0.9, 0.999, 1e-8, cfg.weight_decay});
  Rng rng(cfg.seed);
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  std::ofstream log;
  if (!log_out.empty()) {
    log.open(log_out);
    if (!log) throw std::runtime_error("train: cannot open loss log " + log_out);
    log << "step,lr,total,text,bce,dice\n";
  }

  int64_t step = 0;
  for (int64_t epoch = 0; step < total_steps && epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (int64_t b = 0; b < batches_per_epoch && step < total_steps; ++b) {
      ++step;
      const double lr = cosine_schedule(step, total_steps, cfg.warmup_ratio, cfg.learning_rate);

      model.params().zero_grad();
      Var batch_total;
      double text_v = 0, bce_v = 0, dice_v = 0;
      const int64_t lo = b * cfg.batch_size;
      const int64_t hi = std::min(n, lo + cfg.batch_size);
      for (int64_t i = lo; i < hi; ++i) {
        SampleLoss sl =
            sample_loss(model, dataset.samples[static_cast<size_t>(order[static_cast<size_t>(i)])],
                        cfg.weights);
        batch_total = batch_total ? ad::add(batch_total, sl.total) : sl.total;
        text_v += sl.text_value;
        bce_v += sl.bce_value;
        dice_v += sl.dice_value;
      }
      const double inv = 1.0 / static_cast<double>(hi - lo);
      batch_total = ad::scale(batch_total, inv);
      text_v *= inv;
      bce_v *= inv;
      dice_v *= inv;

      const double loss_value = batch_total->value[0];
      if (!std::isfinite(loss_value)) {
        std::ostringstream msg;
        msg << "train: non-finite loss at step " << step << " (text=" << text_v << ", bce=" << bce_v
            << ", dice=" << dice_v << ")";
        throw NumericError(msg.str());
      }

      ad::backward(batch_total);
      optimizer.step(trainable, lr);

      result.log.push_back({step, lr, loss_value, text_v, bce_v, dice_v});
      result.final_loss = loss_value;
      if (log)
        log << step << ',' << lr << ',' << loss_value << ',' << text_v << ',' << bce_v << ','
            << dice_v << '\n';
    }
  }
  result.steps = step;
  if (!ckpt_out.empty()) model.save(ckpt_out);
  return result;
}

// ---- evaluation --------------------------------------------------------------

void MetricAggregate::push(const std::optional<double>& m, const std::optional<double>& a,
                           const std::optional<double>& s, const std::optional<double>& e) {
  if (m) {
    miou += *m;
    ++miou_n;
  }
  if (a) {
    auc += *a;
    ++auc_n;
  }
  if (s) {
    sim += *s;
    ++sim_n;
  }
  if (e) {
    mae += *e;
    ++mae_n;
  }
}

void MetricAggregate::finish() {
  if (miou_n) miou /= static_cast<double>(miou_n);
  if (auc_n) auc /= static_cast<double>(auc_n);
  if (sim_n) sim /= static_cast<double>(sim_n);
  if (mae_n) mae /= static_cast<double>(mae_n);
}

EvalReport evaluate_predictions(const std::vector<data::InstructionSample>& samples,
                                const std::vector<SamplePrediction>& predictions) {
  if (samples.empty()) throw std::invalid_argument("evaluate: empty sample set");
  if (samples.size() != predictions.size())
    throw std::invalid_argument("evaluate: prediction count " + std::to_string(predictions.size()) +
                                " != sample count " + std::to_string(samples.size()));

  EvalReport rep;
  rep.header = {
      "ground truth binarized at score > 0 for AUC and mIoU",
      "mIoU averaged over prediction thresholds 0.10..0.90 step 0.10; empty union counts as 1",
      "sequence-length mismatch penalized per missing/extra slot: mIoU/AUC/SIM 0, MAE 1",
      "slots bound to a wrong object are penalized the same way",
      "AUC skipped when truth has no positives or no negatives; SIM skipped on zero-sum maps",
      "aggregates are the mean of per-sample values; per-affordance entries aggregate slots",
  };

  for (size_t si = 0; si < samples.size(); ++si) {
    const auto& sample = samples[si];
    const auto& pred = predictions[si];
    SampleEval se;
    se.id = sample.id;
    se.kind = data::to_string(sample.task_kind);
    se.gt_slots = static_cast<int64_t>(sample.steps.size());
    se.predicted_slots = pred.predicted_slots;
    se.routing_correct = se.predicted_slots == se.gt_slots;
    if (se.routing_correct) ++rep.routing_correct;

    const int64_t matched = std::min<int64_t>(se.gt_slots, static_cast<int64_t>(pred.slots.size()));
    const int64_t width = std::max<int64_t>(se.gt_slots, pred.predicted_slots);
    MetricAggregate per_sample;
    for (int64_t i = 0; i < width; ++i) {
      SlotEval slot;
      const bool has_gt = i < se.gt_slots;
      if (has_gt) slot.affordance = sample.steps[static_cast<size_t>(i)].affordance;
      bool usable = i < matched;
      if (usable) {
        const auto& st = sample.steps[static_cast<size_t>(i)];
        const auto& sp = pred.slots[static_cast<size_t>(i)];
        usable = sp.object == st.object && sp.mask.size() == st.mask.size();
      }
      if (usable) {
        const auto& st = sample.steps[static_cast<size_t>(i)];
        const auto& sp = pred.slots[static_cast<size_t>(i)];
        slot.miou = metric_miou(sp.mask, st.mask);
        slot.mae = metric_mae(sp.mask, st.mask);
        MetricOutcome auc = metric_auc(sp.mask, st.mask);
        MetricOutcome sim = metric_sim(sp.mask, st.mask);
        if (auc.skipped())
          rep.skip_counts["auc: " + auc.skip_reason]++;
        else
          slot.auc = auc.value;
        if (sim.skipped())
          rep.skip_counts["sim: " + sim.skip_reason]++;
        else
          slot.sim = sim.value;
      } else {
        slot.shortfall = true;
        slot.miou = 0.0;
        slot.mae = 1.0;
        slot.auc = 0.0;
        slot.sim = 0.0;
      }
      per_sample.push(slot.miou, slot.auc, slot.sim, slot.mae);
      if (!slot.affordance.empty()) {
        rep.by_affordance[slot.affordance].push(slot.miou, slot.auc, slot.sim, slot.mae);
      }
      se.slots.push_back(std::move(slot));
    }

    if (per_sample.miou_n) se.miou = per_sample.miou / static_cast<double>(per_sample.miou_n);
    if (per_sample.auc_n) se.auc = per_sample.auc / static_cast<double>(per_sample.auc_n);
    if (per_sample.sim_n) se.sim = per_sample.sim / static_cast<double>(per_sample.sim_n);
    if (per_sample.mae_n) se.mae = per_sample.mae / static_cast<double>(per_sample.mae_n);
    if (!se.auc) rep.skip_counts["sample without any AUC-eligible slot"]++;
    if (!se.sim) rep.skip_counts["sample without any SIM-eligible slot"]++;

    rep.overall.push(se.miou, se.auc, se.sim, se.mae);
    rep.by_kind[se.kind].push(se.miou, se.auc, se.sim, se.mae);
    for (const auto& tag : sample.split_tags) rep.by_tag[tag].push(se.miou, se.auc, se.sim, se.mae);
    rep.samples.push_back(std::move(se));
  }

  rep.overall.finish();
  for (auto& [k, agg] : rep.by_kind) agg.finish();
  for (auto& [k, agg] : rep.by_affordance) agg.finish();
  for (auto& [k, agg] : rep.by_tag) agg.finish();
  return rep;
}

EvalReport evaluate(const Model& model, const std::vector<data::InstructionSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("evaluate: empty sample set");
  std::vector<SamplePrediction> preds;
  preds.reserve(samples.size());
  for (const auto& sample : samples) {
    Model::ForwardResult fwd = model.forward(sample.clouds, sample.instruction);
    SamplePrediction sp;
    sp.predicted_slots = static_cast<int64_t>(fwd.slots.size());
    for (const auto& slot : fwd.slots) {
      SlotPrediction p;
      p.object = slot.object;
      p.mask = slot.mask->value.vec();
      sp.slots.push_back(std::move(p));
    }
    preds.push_back(std::move(sp));
  }
  return evaluate_predictions(samples, preds);
}

namespace {
json aggregate_to_json(const MetricAggregate& a) {
  return {{"miou", a.miou},     {"auc", a.auc},     {"sim", a.sim},     {"mae", a.mae},
          {"miou_n", a.miou_n}, {"auc_n", a.auc_n}, {"sim_n", a.sim_n}, {"mae_n", a.mae_n}};
}

MetricAggregate aggregate_from_json(const json& j) {
  MetricAggregate a;
  a.miou = j.at("miou");
  a.auc = j.at("auc");
  a.sim = j.at("sim");
  a.mae = j.at("mae");
  a.miou_n = j.at("miou_n");
  a.auc_n = j.at("auc_n");
  a.sim_n = j.at("sim_n");
  a.mae_n = j.at("mae_n");
  return a;
}

json optional_to_json(const std::optional<double>& v) {
  return v ? json(*v) : json(nullptr);
}

std::optional<double> optional_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}
}  // namespace

std::string report_to_json(const EvalReport& rep) {
  json j;
  j["header"] = rep.header;
  j["routing_correct"] = rep.routing_correct;
  j["overall"] = aggregate_to_json(rep.overall);
  json kinds, affs, tags;
  for (const auto& [k, a] : rep.by_kind) kinds[k] = aggregate_to_json(a);
  for (const auto& [k, a] : rep.by_affordance) affs[k] = aggregate_to_json(a);
  for (const auto& [k, a] : rep.by_tag) tags[k] = aggregate_to_json(a);
  j["by_kind"] = std::move(kinds);
  j["by_affordance"] = std::move(affs);
  j["by_tag"] = std::move(tags);
  j["skip_counts"] = rep.skip_counts;
  json samples = json::array();
  for (const auto& se : rep.samples) {
    json js;
    js["id"] = se.id;
    js["kind"] = se.kind;
    js["predicted_slots"] = se.predicted_slots;
    js["gt_slots"] = se.gt_slots;
    js["routing_correct"] = se.routing_correct;
    js["miou"] = optional_to_json(se.miou);
    js["auc"] = optional_to_json(se.auc);
    js["sim"] = optional_to_json(se.sim);
    js["mae"] = optional_to_json(se.mae);
    json slots = json::array();
    for (const auto& sl : se.slots)
      slots.push_back({{"affordance", sl.affordance},
                       {"shortfall", sl.shortfall},
                       {"miou", sl.miou},
                       {"mae", sl.mae},
                       {"auc", optional_to_json(sl.auc)},
                       {"sim", optional_to_json(sl.sim)}});
    js["slots"] = std::move(slots);
    samples.push_back(std::move(js));
  }
  j["samples"] = std::move(samples);
  return j.dump(1);
}

EvalReport report_from_json(const std::string& text) {
  const json j = json::parse(text);
  EvalReport rep;
  rep.header = j.at("header").get<std::vector<std::string>>();
  rep.routing_correct = j.at("routing_correct");
  rep.overall = aggregate_from_json(j.at("overall"));
  for (const auto& [k, v] : j.at("by_kind").items()) rep.by_kind[k] = aggregate_from_json(v);
  for (const auto& [k, v] : j.at("by_affordance").items()) rep.by_affordance[k] = aggregate_from_json(v);
  for (const auto& [k, v] : j.at("by_tag").items()) rep.by_tag[k] = aggregate_from_json(v);
  rep.skip_counts = j.at("skip_counts").get<std::map<std::string, int64_t>>();
  for (const auto& js : j.at("samples")) {
    SampleEval se;
    se.id = js.at("id");
    se.kind = js.at("kind");
    se.predicted_slots = js.at("predicted_slots");
    se.gt_slots = js.at("gt_slots");
    se.routing_correct = js.at("routing_correct");
    se.miou = optional_from_json(js.at("miou"));
    se.auc = optional_from_json(js.at("auc"));
    se.sim = optional_from_json(js.at("sim"));
    se.mae = optional_from_json(js.at("mae"));
    for (const auto& js2 : js.at("slots")) {
      SlotEval sl;
      sl.affordance = js2.at("affordance");
      sl.shortfall = js2.at("shortfall");
      sl.miou = js2.at("miou");
      sl.mae = js2.at("mae");
      sl.auc = optional_from_json(js2.at("auc"));
      sl.sim = optional_from_json(js2.at("sim"));
      se.slots.push_back(std::move(sl));
    }
    rep.samples.push_back(std::move(se));
  }
  return rep;
}

void write_report(const EvalReport& report, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("report: cannot open " + path + " for writing");
  os << report_to_json(report);
  if (!os) throw std::runtime_error("report: write failed for " + path);
}

}  // namespace affseq::train
