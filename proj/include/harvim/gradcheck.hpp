#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace harvim::gradcheck {

struct SuiteResult {
  std::string name;
  int cases = 0;
  int failures = 0;
  double worst_rel_err = 0.0;
  double tolerance = 0.0;

  bool passed() const { return failures == 0; }
};

/// Finite-difference agreement suites, all run in 64-bit mode with
/// h = 1e-5 central differences and norm-relative comparison.
/// Tolerances: 1e-4 for core ops and the flow score, 1e-3 for render
/// parameters and the end-to-end exact-K1 meta-gradient.
SuiteResult check_core_ops(std::uint64_t seed, int cases);
SuiteResult check_flow_grads(std::uint64_t seed, int cases);
SuiteResult check_render_grads(std::uint64_t seed, int cases);
SuiteResult check_meta_grad(std::uint64_t seed, int cases);

std::vector<SuiteResult> run_all(std::uint64_t seed, int cases_per_suite);

}  // namespace harvim::gradcheck
