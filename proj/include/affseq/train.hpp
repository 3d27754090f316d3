#pragma once

#include <optional>
#include <string>
#include <vector>

#include "affseq/losses.hpp"
#include "affseq/metrics.hpp"
#include "affseq/model.hpp"
#include "affseq/optim.hpp"

namespace affseq::train {

struct TrainConfig {
  double learning_rate = 2e-4;
  double weight_decay = 0.0;
  double warmup_ratio = 0.03;
  int64_t epochs = 10;
  int64_t batch_size = 4;
  uint64_t seed = 0;
  bool freeze_encoder = false;
  LossWeights weights;
  int64_t max_steps = 0;  // 0: run epochs * batches

  void validate() const;
};

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

struct SampleLoss {
  ad::Var total;
  double text_value = 0.0;
  double bce_value = 0.0;   // mean over slots
  double dice_value = 0.0;  // mean over slots
};

/// Teacher-forced loss of one sample: slots forced to the ground-truth step
/// count and bound to the step objects.
SampleLoss sample_loss(const Model& model, const data::InstructionSample& sample,
                       const LossWeights& weights);

struct StepLog {
  int64_t step = 0;
  double lr = 0.0, total = 0.0, text = 0.0, bce = 0.0, dice = 0.0;
};

struct TrainResult {
  int64_t steps = 0;
  double final_loss = 0.0;
  std::vector<StepLog> log;
};

/// Deterministic training loop (seeded shuffle order); writes the final
/// checkpoint and a per-step CSV loss log unless the paths are empty.
/// A non-finite loss aborts with a NumericError naming the step.
TrainResult train(Model& model, const data::Dataset& dataset, const TrainConfig& cfg,
                  const std::string& ckpt_out, const std::string& log_out);

// ---- evaluation -------------------------------------------------------------

struct SlotEval {
  std::string affordance;
  bool shortfall = false;  // penalized: no usable prediction for this slot
  double miou = 0.0;
  double mae = 1.0;
  std::optional<double> auc, sim;
};

struct SampleEval {
  std::string id;
  std::string kind;
  int64_t predicted_slots = 0;
  int64_t gt_slots = 0;
  bool routing_correct = false;
  std::vector<SlotEval> slots;
  std::optional<double> miou, auc, sim, mae;  // means over this sample's slots
};

struct MetricAggregate {
  double miou = 0.0, auc = 0.0, sim = 0.0, mae = 0.0;
  int64_t miou_n = 0, auc_n = 0, sim_n = 0, mae_n = 0;

  void push(const std::optional<double>& m, const std::optional<double>& a,
            const std::optional<double>& s, const std::optional<double>& e);
  void finish();
};

struct EvalReport {
  std::vector<std::string> header;  // scoring conventions, for reproducibility
  std::vector<SampleEval> samples;
  MetricAggregate overall;
  std::map<std::string, MetricAggregate> by_kind;
  std::map<std::string, MetricAggregate> by_affordance;  // slot level
  std::map<std::string, MetricAggregate> by_tag;
  std::map<std::string, int64_t> skip_counts;
  int64_t routing_correct = 0;
};

struct SlotPrediction {
  std::string object;
  std::vector<double> mask;
};

struct SamplePrediction {
  int64_t predicted_slots = 0;
  std::vector<SlotPrediction> slots;
};

/// Free-running evaluation of the model over a sample list.
EvalReport evaluate(const Model& model, const std::vector<data::InstructionSample>& samples);

/// Metric core, decoupled from the model so oracles can feed predictions.
EvalReport evaluate_predictions(const std::vector<data::InstructionSample>& samples,
                                const std::vector<SamplePrediction>& predictions);

std::string report_to_json(const EvalReport& report);
void write_report(const EvalReport& report, const std::string& path);
EvalReport report_from_json(const std::string& text);

}  // namespace affseq::train
