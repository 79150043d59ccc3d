#include "omrd/ablation.hpp"

#include <algorithm>
#include <sstream>

#include "omrd/trainer.hpp"

namespace omrd {

const std::vector<std::string>& ablation_config_names() {
  static const std::vector<std::string> names = {"Our-G", "Our-G-B1", "Our", "Our/channels"};
  return names;
}

BranchMask ablation_mask(const std::string& name) {
  BranchMask mask;
  if (name == "Our-G") {
    mask.b1_vert = false;
    mask.b2_horz = false;
  } else if (name == "Our-G-B1") {
    mask.b2_horz = false;
  } else if (name == "Our") {
    // all branches on
  } else if (name == "Our/channels") {
    mask.b3_chan = false;
  } else {
    throw std::runtime_error("unknown ablation configuration: " + name);
  }
  return mask;
}

double median(std::vector<double> values) {
  check(!values.empty(), "median of empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

const AblationRow& AblationResult::row(const std::string& config_name, WhichFeature feature) const {
  for (const AblationRow& r : rows) {
    if (r.config_name == config_name && r.feature == feature) return r;
  }
  throw std::runtime_error("ablation result lacks row " + config_name + "/" + feature_name(feature));
}

AblationResult run_ablation(const RunConfig& base, const std::vector<std::uint64_t>& seeds) {
  check(!seeds.empty(), "run_ablation: at least one seed required");
  const Dataset ds = load_dataset_for(base);

  AblationResult result;
  result.seeds = seeds;
  constexpr WhichFeature kFeatures[2] = {WhichFeature::Oim, WhichFeature::Trip};

  for (const std::string& name : ablation_config_names()) {
    std::vector<double> maps[2], r1s[2], r5s[2];
    for (std::uint64_t seed : seeds) {
      TrainConfig tcfg = base.train;
      tcfg.mask = ablation_mask(name);
      tcfg.seed = seed;
      const TrainedModel tm = train(ds, base.model, tcfg);
      for (int f = 0; f < 2; ++f) {
        const EmbeddingSet queries = embed(tm, ds, Split::Query, kFeatures[f]);
        const EmbeddingSet gallery = embed(tm, ds, Split::Gallery, kFeatures[f]);
        const EvalReport report = evaluate(queries, gallery, 10);
        maps[f].push_back(report.map);
        r1s[f].push_back(report.cmc[0]);
        r5s[f].push_back(report.cmc[4]);
      }
    }
    for (int f = 0; f < 2; ++f) {
      AblationRow row;
      row.config_name = name;
      row.feature = kFeatures[f];
      row.map = median(maps[f]);
      row.rank1 = median(r1s[f]);
      row.rank5 = median(r5s[f]);
      row.map_per_seed = maps[f];
      result.rows.push_back(std::move(row));
    }
  }
  return result;
}

std::string ablation_csv(const AblationResult& result) {
  std::ostringstream os;
  os << "config,feature,map,rank1,rank5\n";
  for (const AblationRow& row : result.rows) {
    os << row.config_name << "," << feature_name(row.feature) << "," << format_double(row.map) << ","
       << format_double(row.rank1) << "," << format_double(row.rank5) << "\n";
  }
  return os.str();
}

}  // namespace omrd
