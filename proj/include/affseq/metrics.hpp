#pragma once

#include <optional>
#include <string>
#include <vector>

namespace affseq::train {

struct MetricOutcome {
  std::optional<double> value;
  std::string skip_reason;  // set when value is empty
  bool skipped() const { return !value.has_value(); }
};

/// ROC AUC via the midrank statistic, ground truth binarized at > 0.
/// Skipped (with reason) when the truth has no positives or no negatives.
MetricOutcome metric_auc(const std::vector<double>& pred, const std::vector<double>& gt);

/// IoU averaged over prediction thresholds 0.10..0.90 (step 0.10), ground
/// truth binarized at > 0; an empty union counts as IoU 1.
double metric_miou(const std::vector<double>& pred, const std::vector<double>& gt);

/// Histogram intersection of the sum-normalized maps; skipped when either
/// map sums to zero.
MetricOutcome metric_sim(const std::vector<double>& pred, const std::vector<double>& gt);

double metric_mae(const std::vector<double>& pred, const std::vector<double>& gt);

}  // namespace affseq::train
