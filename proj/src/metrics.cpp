#include "affseq/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace affseq::train {

namespace {
void check_lengths(const char* op, const std::vector<double>& pred, const std::vector<double>& gt) {
  if (pred.size() != gt.size())
    throw std::invalid_argument(std::string(op) + ": length mismatch " + std::to_string(pred.size()) +
                                " vs " + std::to_string(gt.size()));
  if (pred.empty()) throw std::invalid_argument(std::string(op) + ": empty input");
}
}  // namespace

MetricOutcome metric_auc(const std::vector<double>& pred, const std::vector<double>& gt) {
  check_lengths("metric_auc", pred, gt);
  const size_t n = pred.size();
  int64_t npos = 0;
  for (double g : gt)
    if (g > 0.0) ++npos;
  const int64_t nneg = static_cast<int64_t>(n) - npos;
  if (npos == 0) return {std::nullopt, "no positive points"};
  if (nneg == 0) return {std::nullopt, "no negative points"};

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return pred[a] < pred[b]; });

  // midranks over tied scores, 1-based
  std::vector<double> rank(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && pred[order[j + 1]] == pred[order[i]]) ++j;
    const double mid = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (size_t l = i; l <= j; ++l) rank[order[l]] = mid;
    i = j + 1;
  }
  double pos_rank_sum = 0.0;
  for (size_t l = 0; l < n; ++l)
    if (gt[l] > 0.0) pos_rank_sum += rank[l];
  const double numer = pos_rank_sum - 0.5 * static_cast<double>(npos) * static_cast<double>(npos + 1);
  return {numer / (static_cast<double>(npos) * static_cast<double>(nneg)), ""};
}

double metric_miou(const std::vector<double>& pred, const std::vector<double>& gt) {
  check_lengths("metric_miou", pred, gt);
  double acc = 0.0;
  for (int ti = 1; ti <= 9; ++ti) {
    const double t = static_cast<double>(ti) / 10.0;
    int64_t inter = 0, uni = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
      const bool p = pred[i] > t;
      const bool g = gt[i] > 0.0;
      if (p && g) ++inter;
      if (p || g) ++uni;
    }
    acc += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  }
  return acc / 9.0;
}

MetricOutcome metric_sim(const std::vector<double>& pred, const std::vector<double>& gt) {
  check_lengths("metric_sim", pred, gt);
  double sp = 0.0, sg = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    sp += pred[i];
    sg += gt[i];
  }
  if (sp == 0.0) return {std::nullopt, "prediction sums to zero"};
  if (sg == 0.0) return {std::nullopt, "ground truth sums to zero"};
  double sim = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) sim += std::min(pred[i] / sp, gt[i] / sg);
  return {sim, ""};
}

double metric_mae(const std::vector<double>& pred, const std::vector<double>& gt) {
  check_lengths("metric_mae", pred, gt);
  double acc = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - gt[i]);
  return acc / static_cast<double>(pred.size());
}

}  // namespace affseq::train
