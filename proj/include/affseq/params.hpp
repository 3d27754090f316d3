#pragma once

#include <map>
#include <string>
#include <vector>

#include "affseq/autodiff.hpp"
#include "affseq/common.hpp"

namespace affseq::ad {

/// Named trainable leaves. Iteration order is the lexicographic name order,
/// which keeps optimizer updates and checkpoints deterministic.
class ParamStore {
public:
  Var create(const std::string& name, Array init);
  Var get(const std::string& name) const;
  bool has(const std::string& name) const { return params_.count(name) > 0; }
  const std::map<std::string, Var>& all() const { return params_; }
  std::vector<std::pair<std::string, Var>> with_prefix(const std::string& prefix) const;
  std::vector<std::pair<std::string, Var>> without_prefix(const std::string& prefix) const;
  void zero_grad();
  int64_t total_size() const;

private:
  std::map<std::string, Var> params_;
};

/// Scaled-uniform init: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
Array uniform_init(std::vector<int64_t> shape, int64_t fan_in, int64_t fan_out, Rng& rng);

}  // namespace affseq::ad
