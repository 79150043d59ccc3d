#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "omrd/config.hpp"
#include "omrd/eval.hpp"

namespace omrd {

// The four branch configurations compared by the ablation harness.
const std::vector<std::string>& ablation_config_names();
BranchMask ablation_mask(const std::string& name);

struct AblationRow {
  std::string config_name;
  WhichFeature feature = WhichFeature::Oim;
  double map = 0.0;    // medians across seeds
  double rank1 = 0.0;
  double rank5 = 0.0;
  std::vector<double> map_per_seed;
};

struct AblationResult {
  std::vector<std::uint64_t> seeds;
  std::vector<AblationRow> rows;  // config-major, feature-minor

  const AblationRow& row(const std::string& config_name, WhichFeature feature) const;
};

// Trains every configuration with the shared seed list on the base config's
// dataset, evaluates each run with both descriptors, reports per-metric
// medians across seeds.
AblationResult run_ablation(const RunConfig& base, const std::vector<std::uint64_t>& seeds);

std::string ablation_csv(const AblationResult& result);

double median(std::vector<double> values);

}  // namespace omrd
