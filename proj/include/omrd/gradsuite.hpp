#pragma once

#include <string>
#include <vector>

#include "omrd/gradcheck.hpp"

namespace omrd {

struct GradSuiteEntry {
  std::string component;
  int instances = 0;
  double max_rel_error = 0.0;
  bool passed = false;
  std::string worst_parameter;
};

struct GradSuiteResult {
  std::vector<GradSuiteEntry> entries;
  double tolerance = 1e-4;
  bool all_passed = false;

  const GradSuiteEntry* worst() const;
};

// Runs the full 64-bit verification battery: every tensor op, the GRU cell
// and 3-layer bidirectional stack, both losses, and the end-to-end combined
// loss of a small five-branch model. `sabotage` names a component whose
// derivative is deliberately corrupted (failure-path fixture); leave empty
// for the real suite.
GradSuiteResult run_gradient_suite(double tolerance = 1e-4, const std::string& sabotage = {});

std::string gradient_suite_table(const GradSuiteResult& result);

}  // namespace omrd
