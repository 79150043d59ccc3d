#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "omrd/data.hpp"
#include "omrd/model.hpp"
#include "omrd/trainer.hpp"

namespace omrd {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DatasetConfig {
  enum class Source { Synth, Dir };
  Source source = Source::Synth;
  std::string path;  // Dir source only
  SynthParams synth;
};

struct RunConfig {
  DatasetConfig dataset;
  ModelConfig model;
  TrainConfig train;
  std::string output_dir = "out";
  std::vector<std::uint64_t> ablate_seeds;  // defaults to {train.seed}
};

// Strict parse: unknown keys anywhere are rejected with their full key path;
// omitted keys fall back to defaults.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

// Every effective value, including defaults the user omitted.
nlohmann::json resolved_config_json(const RunConfig& cfg);

Dataset load_dataset_for(const RunConfig& cfg);

}  // namespace omrd
