#pragma once

#include <map>
#include <string>
#include <vector>

#include "affseq/params.hpp"

namespace affseq::train {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// One decoupled-weight-decay update at step t >= 1 (bias-corrected moments).
void adamw_update(ad::Array& param, const ad::Array& grad, ad::Array& m, ad::Array& v, int64_t t,
                  const AdamWConfig& cfg, double lr);

class AdamW {
public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  /// Applies one update (using grad-or-zeros) to every listed parameter.
  void step(const std::vector<std::pair<std::string, ad::Var>>& params, double lr);
  int64_t t() const { return t_; }

private:
  struct State {
    ad::Array m, v;
  };
  AdamWConfig cfg_;
  std::map<std::string, State> state_;
  int64_t t_ = 0;
};

/// Linear warmup over ceil(ratio * total) steps, then cosine decay to zero.
double cosine_schedule(int64_t t, int64_t total_steps, double warmup_ratio, double peak_lr);

}  // namespace affseq::train
