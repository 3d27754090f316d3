#include "affseq/losses.hpp"

#include <stdexcept>

namespace affseq::train {

using ad::Var;

void LossWeights::validate() const {
  if (lambda_c < 0.0 || lambda_b < 0.0 || lambda_d < 0.0)
    throw std::invalid_argument("LossWeights: weights must be non-negative");
  if (lambda_c == 0.0 && lambda_b == 0.0 && lambda_d == 0.0)
    throw std::invalid_argument("LossWeights: at least one weight must be positive");
}

namespace {
void check_lengths(const char* op, const Var& pred, const Var& gt) {
  if (pred->value.size() != gt->value.size())
    throw std::invalid_argument(std::string(op) + ": length mismatch " +
                                std::to_string(pred->value.size()) + " vs " +
                                std::to_string(gt->value.size()));
}
}  // namespace

Var dice_loss(const Var& pred, const Var& gt) {
  check_lengths("dice_loss", pred, gt);
  constexpr double kEps = 1e-6;
  Var inter = ad::sum(ad::mul(pred, gt));
  Var denom = ad::add(ad::sum(pred), ad::sum(gt));
  Var frac = ad::div(ad::add_const(ad::scale(inter, 2.0), kEps), ad::add_const(denom, kEps));
  return ad::add_const(ad::neg(frac), 1.0);
}

Var bce_loss(const Var& pred, const Var& gt) {
  check_lengths("bce_loss", pred, gt);
  Var p = ad::clamp(pred, 1e-7, 1.0 - 1e-7);
  Var one_minus_p = ad::add_const(ad::neg(p), 1.0);
  Var one_minus_g = ad::add_const(ad::neg(gt), 1.0);
  Var ll = ad::add(ad::mul(gt, ad::log(p)), ad::mul(one_minus_g, ad::log(one_minus_p)));
  return ad::neg(ad::mean(ll));
}

Var text_loss(const Var& routing_logits, int64_t gt_length) {
  const int64_t s_max = routing_logits->value.size();
  if (routing_logits->value.rows() != 1)
    throw std::invalid_argument("text_loss: logits must be a single row, got " +
                                routing_logits->value.shape_str());
  if (gt_length < 1 || gt_length > s_max)
    throw std::invalid_argument("text_loss: ground-truth length " + std::to_string(gt_length) +
                                " out of 1.." + std::to_string(s_max));
  Var probs = ad::softmax_rows(routing_logits);
  Var picked = ad::slice_cols(probs, gt_length - 1, 1);
  return ad::neg(ad::sum(ad::log(picked)));
}

Var total_loss(const LossWeights& weights, const std::vector<Var>& dice_per_slot,
               const std::vector<Var>& bce_per_slot, const Var& text) {
  weights.validate();
  if (dice_per_slot.size() != bce_per_slot.size())
    throw std::invalid_argument("total_loss: slot count mismatch, dice " +
                                std::to_string(dice_per_slot.size()) + " vs bce " +
                                std::to_string(bce_per_slot.size()));
  if (dice_per_slot.empty()) throw std::invalid_argument("total_loss: no slots");

  Var bce_sum, dice_sum;
  for (size_t i = 0; i < dice_per_slot.size(); ++i) {
    bce_sum = bce_sum ? ad::add(bce_sum, bce_per_slot[i]) : bce_per_slot[i];
    dice_sum = dice_sum ? ad::add(dice_sum, dice_per_slot[i]) : dice_per_slot[i];
  }
  const double inv = 1.0 / static_cast<double>(dice_per_slot.size());
  Var out = ad::scale(text, weights.lambda_c);
  out = ad::add(out, ad::scale(bce_sum, weights.lambda_b * inv));
  out = ad::add(out, ad::scale(dice_sum, weights.lambda_d * inv));
  return out;
}

}  // namespace affseq::train
