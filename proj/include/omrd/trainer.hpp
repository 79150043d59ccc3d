#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "omrd/checkpoint.hpp"
#include "omrd/data.hpp"
#include "omrd/eval.hpp"
#include "omrd/losses.hpp"
#include "omrd/model.hpp"
#include "omrd/optim.hpp"

namespace omrd {

struct TrainConfig {
  BranchMask mask;
  LossWeights<float> weights;
  int p = 4;
  int k = 4;
  int epochs = 30;
  std::uint64_t seed = 1;
  float margin = 0.5f;
  WhichFeature descriptor = WhichFeature::Oim;
  double base_lr = 3e-3;  // desk-scale default; 2e-4 over 150 epochs is the full-scale setting
  float weight_decay = 5e-4f;
  float oim_temperature = 0.1f;
  float oim_momentum = 0.5f;
  int oim_queue = 0;
  AugmentConfig augment;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double total = 0.0;
  std::array<double, 4> oim{};
  double trp = 0.0;
};

struct BatchRecord {
  int epoch = 0;
  int batch = 0;
  double total = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::vector<BatchRecord> batches;
};

struct TrainAbort : std::runtime_error {
  int epoch;
  int batch;
  TrainAbort(int e, int b, const std::string& what)
      : std::runtime_error("training aborted at epoch " + std::to_string(e) + ", batch " +
                           std::to_string(b) + ": " + what),
        epoch(e),
        batch(b) {}
};

struct TrainedModel {
  ModelConfig model_cfg;
  TrainConfig train_cfg;
  ModelParams<float> params;
  std::array<OimState<float>, 4> heads;  // branch 1..4 OIM heads; disabled heads stay empty
  std::vector<int> label_ids;            // LUT row -> dataset identity
};

// OIM feature width per head: 2*hidden for the part branches, 2*hidden for
// the channel branch, oim_dim for the global head.
std::array<int, 4> oim_head_dims(const ModelConfig& cfg);

// One batch's five-branch loss graph. oim_features holds the normalized
// features per enabled head for the post-step LUT update.
struct BatchLoss {
  Tensor<float> total;
  std::array<Tensor<float>, 4> oim;
  Tensor<float> triplet;
  std::array<Tensor<float>, 4> oim_features;
};

BatchLoss batch_loss(const ModelParams<float>& params, const std::array<OimState<float>, 4>& heads,
                     std::span<const Tensor<float>> images, std::span<const int> labels,
                     const TrainConfig& tcfg);

// Deterministic end-to-end loop: forward, combined loss, backward, Adam step,
// then OIM LUT updates, once per batch. Masked branches contribute no loss
// and their parameters stay at initialization.
TrainedModel train(const Dataset& ds, const ModelConfig& mcfg, const TrainConfig& tcfg,
                   TrainLog* log = nullptr);

// Inference embeddings of one dataset split; no augmentation. f_oim rows are
// l2-normalized (matching how the identification head consumes them), f_trip
// rows are the raw pooled features.
EmbeddingSet embed(const TrainedModel& tm, const Dataset& ds, Split split, WhichFeature which);

std::string train_log_csv(const TrainLog& log);

nlohmann::json model_config_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json train_config_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

Checkpoint to_checkpoint(const TrainedModel& tm);
TrainedModel from_checkpoint(const Checkpoint& cp);

}  // namespace omrd
