#pragma once

#include <string>
#include <vector>

namespace affseq {

struct GradSuiteEntry {
  std::string op;
  int instances = 0;
  bool passed = false;
  double worst_rel_err = 0.0;
  std::string worst_target;
};

struct GradSuiteResult {
  std::vector<GradSuiteEntry> entries;
  double seconds = 0.0;
  bool all_passed() const;
};

/// Finite-difference checks for every differentiable operation in the
/// pipeline (upsample, encode, seg projection, integration, mask decoding,
/// instruction embedding, and the three losses), `instances` random small
/// cases each at relative tolerance 1e-4.
GradSuiteResult run_gradient_suite(uint64_t seed, int instances = 10);

}  // namespace affseq
