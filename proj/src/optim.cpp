#include "affseq/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace affseq::train {

void adamw_update(ad::Array& param, const ad::Array& grad, ad::Array& m, ad::Array& v, int64_t t,
                  const AdamWConfig& cfg, double lr) {
  if (t < 1) throw std::invalid_argument("adamw_update: step index must be >= 1");
  ad::check_same_shape("adamw_update", param, grad);
  ad::check_same_shape("adamw_update", param, m);
  ad::check_same_shape("adamw_update", param, v);
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (int64_t i = 0; i < param.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    param[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * param[i]);
  }
}

void AdamW::step(const std::vector<std::pair<std::string, ad::Var>>& params, double lr) {
  ++t_;
  for (const auto& [name, var] : params) {
    State& st = state_[name];
    if (st.m.empty()) {
      st.m = ad::Array::zeros(var->value.shape());
      st.v = ad::Array::zeros(var->value.shape());
    }
    const ad::Array grad = var->grad_or_zeros();
    adamw_update(var->value, grad, st.m, st.v, t_, cfg_, lr);
  }
}

double cosine_schedule(int64_t t, int64_t total_steps, double warmup_ratio, double peak_lr) {
  if (total_steps <= 0) throw std::invalid_argument("cosine_schedule: total_steps must be positive");
  if (t < 0 || t > total_steps)
    throw std::invalid_argument("cosine_schedule: t = " + std::to_string(t) + " out of 0.." +
                                std::to_string(total_steps));
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0))
    throw std::invalid_argument("cosine_schedule: warmup_ratio must be in [0,1)");
  const int64_t warm = static_cast<int64_t>(std::ceil(warmup_ratio * static_cast<double>(total_steps)));
  if (t <= warm) {
    if (warm == 0) return peak_lr;
    return peak_lr * static_cast<double>(t) / static_cast<double>(warm);
  }
  const double progress = static_cast<double>(t - warm) / static_cast<double>(total_steps - warm);
  return peak_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

}  // namespace affseq::train
