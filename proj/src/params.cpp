#include "affseq/params.hpp"

#include <cmath>
#include <stdexcept>

namespace affseq::ad {

Var ParamStore::create(const std::string& name, Array init) {
  if (params_.count(name)) throw std::invalid_argument("ParamStore: duplicate parameter " + name);
  Var v = leaf(std::move(init), true);
  params_.emplace(name, v);
  return v;
}

Var ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::invalid_argument("ParamStore: unknown parameter " + name);
  return it->second;
}

std::vector<std::pair<std::string, Var>> ParamStore::with_prefix(const std::string& prefix) const {
  std::vector<std::pair<std::string, Var>> out;
  for (const auto& [name, v] : params_)
    if (name.rfind(prefix, 0) == 0) out.emplace_back(name, v);
  return out;
}

std::vector<std::pair<std::string, Var>> ParamStore::without_prefix(const std::string& prefix) const {
  std::vector<std::pair<std::string, Var>> out;
  for (const auto& [name, v] : params_)
    if (name.rfind(prefix, 0) != 0) out.emplace_back(name, v);
  return out;
}

void ParamStore::zero_grad() {
  for (auto& [name, v] : params_) v->zero_grad();
}

int64_t ParamStore::total_size() const {
  int64_t n = 0;
  for (const auto& [name, v] : params_) n += v->value.size();
  return n;
}

Array uniform_init(std::vector<int64_t> shape, int64_t fan_in, int64_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Array out(std::move(shape));
  for (int64_t i = 0; i < out.size(); ++i) out[i] = rng.uniform(-a, a);
  return out;
}

}  // namespace affseq::ad
