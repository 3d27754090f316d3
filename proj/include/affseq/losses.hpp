#pragma once

#include <vector>

#include "affseq/autodiff.hpp"

namespace affseq::train {

struct LossWeights {
  double lambda_c = 1.0;
  double lambda_b = 1.0;
  double lambda_d = 1.0;

  void validate() const;
};

/// 1 - (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps), eps = 1e-6.
ad::Var dice_loss(const ad::Var& pred, const ad::Var& gt);

/// Mean over points of -[g ln p + (1-g) ln(1-p)], p clamped to [1e-7, 1-1e-7].
ad::Var bce_loss(const ad::Var& pred, const ad::Var& gt);

/// Softmax cross-entropy of the routing logits (1 x S_max) against the
/// ground-truth sequence length in 1..S_max.
ad::Var text_loss(const ad::Var& routing_logits, int64_t gt_length);

/// lambda_c * L_c + lambda_b * mean(L_b) + lambda_d * mean(L_d); the dice
/// and bce lists must pair up slot for slot.
ad::Var total_loss(const LossWeights& weights, const std::vector<ad::Var>& dice_per_slot,
                   const std::vector<ad::Var>& bce_per_slot, const ad::Var& text);

}  // namespace affseq::train
