#include "omrd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace omrd {

std::array<int, 4> oim_head_dims(const ModelConfig& cfg) {
  return {2 * cfg.hidden_parts, 2 * cfg.hidden_parts, 2 * cfg.hidden_channels, cfg.oim_dim};
}

namespace {

std::array<bool, 4> oim_head_enabled(const BranchMask& mask) {
  return {mask.b1_vert, mask.b2_horz, mask.b3_chan, mask.b4_oim_global};
}

void validate_train_config(const TrainConfig& tcfg) {
  check(tcfg.mask.any_loss(), "train: every branch is masked off; nothing to optimize");
  check(tcfg.p >= 1 && tcfg.k >= 1, "train: p and k must be >= 1");
  if (tcfg.mask.b5_triplet) {
    check(tcfg.p >= 2 && tcfg.k >= 2, "train: the triplet branch needs p >= 2 and k >= 2");
  }
  check(tcfg.epochs >= 1, "train: epochs must be >= 1");
  check(tcfg.margin >= 0.0f, "train: margin must be >= 0");
  check(tcfg.base_lr > 0.0, "train: base_lr must be positive");
  check(tcfg.oim_temperature > 0.0f, "train: oim temperature must be positive");
  check(tcfg.oim_momentum >= 0.0f && tcfg.oim_momentum <= 1.0f, "train: oim momentum must lie in [0,1]");
  check(tcfg.oim_queue >= 0, "train: oim queue size must be >= 0");
}

std::vector<NamedParam<float>> trainable_params(const ModelParams<float>& params, const BranchMask& mask) {
  std::vector<NamedParam<float>> out = params.backbone_named();
  if (mask.b1_vert) {
    for (auto& p : params.vert.named("branch1")) out.push_back(p);
  }
  if (mask.b2_horz) {
    for (auto& p : params.horz.named("branch2")) out.push_back(p);
  }
  if (mask.b3_chan) {
    for (auto& p : params.chan.named("branch3")) out.push_back(p);
  }
  if (mask.b4_oim_global) {
    out.push_back({"head.weight", params.head_w});
    out.push_back({"head.bias", params.head_b});
  }
  return out;
}

}  // namespace

BatchLoss batch_loss(const ModelParams<float>& params, const std::array<OimState<float>, 4>& heads,
                     std::span<const Tensor<float>> images, std::span<const int> labels,
                     const TrainConfig& tcfg) {
  check(images.size() == labels.size(), "batch_loss: one label per image required");
  BatchOutputs<float> fb = forward_batch(params, images, tcfg.mask);
  BatchLoss out;
  auto feed = [&](int hi, const Tensor<float>& feature) {
    out.oim_features[static_cast<std::size_t>(hi)] = l2_normalize_rows(feature);
    out.oim[static_cast<std::size_t>(hi)] =
        oim_loss(heads[static_cast<std::size_t>(hi)], out.oim_features[static_cast<std::size_t>(hi)], labels);
  };
  if (tcfg.mask.b1_vert) feed(0, fb.f_vert);
  if (tcfg.mask.b2_horz) feed(1, fb.f_horz);
  if (tcfg.mask.b3_chan) feed(2, fb.f_chan);
  if (tcfg.mask.b4_oim_global) feed(3, fb.f_oim);
  if (tcfg.mask.b5_triplet) out.triplet = batch_hard_triplet(fb.f_trip, labels, tcfg.margin);
  out.total = combined_loss(out.oim, out.triplet, tcfg.weights);
  return out;
}

TrainedModel train(const Dataset& ds, const ModelConfig& mcfg, const TrainConfig& tcfg, TrainLog* log) {
  validate_model(mcfg);
  validate_train_config(tcfg);
  check(ds.image_h == mcfg.backbone.input_h && ds.image_w == mcfg.backbone.input_w,
        "train: dataset images are " + std::to_string(ds.image_h) + "x" + std::to_string(ds.image_w) +
            " but the model expects " + std::to_string(mcfg.backbone.input_h) + "x" +
            std::to_string(mcfg.backbone.input_w));

  const std::vector<std::size_t> pool = ds.split_indices(Split::Train);
  check(!pool.empty(), "train: dataset has no training split");
  const std::vector<int> label_ids = ds.identities(Split::Train);
  check(static_cast<int>(label_ids.size()) >= tcfg.p,
        "train: " + std::to_string(label_ids.size()) + " train identities but p=" + std::to_string(tcfg.p));
  std::map<int, int> label_of;
  for (std::size_t i = 0; i < label_ids.size(); ++i) label_of[label_ids[i]] = static_cast<int>(i);

  TrainedModel tm;
  tm.model_cfg = mcfg;
  tm.train_cfg = tcfg;
  tm.label_ids = label_ids;
  tm.params = make_model<float>(mcfg, mix_seed(tcfg.seed, 0x11));

  const std::array<int, 4> head_dims = oim_head_dims(mcfg);
  const std::array<bool, 4> head_on = oim_head_enabled(tcfg.mask);
  for (int h = 0; h < 4; ++h) {
    if (!head_on[static_cast<std::size_t>(h)]) continue;
    tm.heads[static_cast<std::size_t>(h)] =
        make_oim_state<float>(static_cast<int>(label_ids.size()), head_dims[static_cast<std::size_t>(h)],
                              tcfg.oim_queue, tcfg.oim_temperature, tcfg.oim_momentum);
  }

  std::vector<NamedParam<float>> trainable = trainable_params(tm.params, tcfg.mask);
  AdamConfig<float> adam_cfg;
  adam_cfg.weight_decay = tcfg.weight_decay;
  AdamState<float> adam(adam_cfg);

  const int batch_size = tcfg.p * tcfg.k;
  const int batches_per_epoch =
      static_cast<int>((pool.size() + static_cast<std::size_t>(batch_size) - 1) / batch_size);

  for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    const double lr = lr_schedule_scaled(epoch, tcfg.epochs, tcfg.base_lr);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    for (int bi = 0; bi < batches_per_epoch; ++bi) {
      Rng rng(mix_seed(tcfg.seed, 0xA000u + static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(bi)));
      PKBatch batch = pk_sample(ds, pool, tcfg.p, tcfg.k, rng);

      std::vector<Tensor<float>> images;
      std::vector<int> labels;
      images.reserve(batch.indices.size());
      labels.reserve(batch.indices.size());
      for (std::size_t idx : batch.indices) {
        Sample s = augment(ds.samples[idx], tcfg.augment, rng);
        images.push_back(sample_to_tensor<float>(s));
        labels.push_back(label_of.at(s.identity));
      }

      BatchLoss bl = batch_loss(tm.params, tm.heads, images, labels, tcfg);
      const double total = static_cast<double>(bl.total.item());
      if (!std::isfinite(total)) throw TrainAbort(epoch, bi, "non-finite combined loss");
      bl.total.backward();
      try {
        adam_step<float>(adam, trainable, static_cast<float>(lr));
      } catch (const std::runtime_error& e) {
        throw TrainAbort(epoch, bi, e.what());
      }
      for (int h = 0; h < 4; ++h) {
        if (!head_on[static_cast<std::size_t>(h)]) continue;
        oim_update(tm.heads[static_cast<std::size_t>(h)], bl.oim_features[static_cast<std::size_t>(h)], labels);
      }

      rec.total += total;
      for (int h = 0; h < 4; ++h) {
        if (bl.oim[static_cast<std::size_t>(h)].defined()) {
          rec.oim[static_cast<std::size_t>(h)] += static_cast<double>(bl.oim[static_cast<std::size_t>(h)].item());
        }
      }
      if (bl.triplet.defined()) rec.trp += static_cast<double>(bl.triplet.item());
      if (log) log->batches.push_back({epoch, bi, total});
      bl.total.release_graph();
    }
    rec.total /= batches_per_epoch;
    for (double& v : rec.oim) v /= batches_per_epoch;
    rec.trp /= batches_per_epoch;
    if (log) log->epochs.push_back(rec);
  }
  return tm;
}

EmbeddingSet embed(const TrainedModel& tm, const Dataset& ds, Split split, WhichFeature which) {
  check(ds.image_h == tm.model_cfg.backbone.input_h && ds.image_w == tm.model_cfg.backbone.input_w,
        "embed: dataset images are " + std::to_string(ds.image_h) + "x" + std::to_string(ds.image_w) +
            " but the checkpoint expects " + std::to_string(tm.model_cfg.backbone.input_h) + "x" +
            std::to_string(tm.model_cfg.backbone.input_w));
  const std::vector<std::size_t> indices = ds.split_indices(split);
  check(!indices.empty(), "embed: dataset has no " + split_name(split) + " split");

  BranchMask mask;
  mask.b1_vert = mask.b2_horz = mask.b3_chan = false;
  mask.b4_oim_global = which == WhichFeature::Oim;
  mask.b5_triplet = false;

  const int dim = which == WhichFeature::Oim ? tm.model_cfg.oim_dim : tm.model_cfg.feature_channels();
  EmbeddingSet set;
  set.which = which;
  set.vectors.resize(static_cast<Eigen::Index>(indices.size()), dim);
  set.identities.reserve(indices.size());
  set.cameras.reserve(indices.size());

  constexpr std::size_t kChunk = 16;  // row results are chunking-invariant
  for (std::size_t begin = 0; begin < indices.size(); begin += kChunk) {
    const std::size_t end = std::min(begin + kChunk, indices.size());
    std::vector<Tensor<float>> images;
    images.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
      images.push_back(sample_to_tensor<float>(ds.samples[indices[i]]));
    }
    BatchOutputs<float> fb = forward_batch(tm.params, images, mask);
    const Tensor<float>& feat = which == WhichFeature::Oim ? fb.f_oim : fb.f_trip;
    for (std::size_t i = begin; i < end; ++i) {
      const Eigen::Index r = static_cast<Eigen::Index>(i - begin);
      Eigen::RowVector<float, Eigen::Dynamic> v =
          as_matrix(feat.value(), static_cast<int>(end - begin), dim).row(r);
      if (which == WhichFeature::Oim) {
        const float norm = v.norm();
        v /= std::max(norm, 1e-12f);
      }
      set.vectors.row(static_cast<Eigen::Index>(i)) = v;
    }
  }
  for (std::size_t idx : indices) {
    set.identities.push_back(ds.samples[idx].identity);
    set.cameras.push_back(ds.samples[idx].camera);
  }
  return set;
}

std::string train_log_csv(const TrainLog& log) {
  std::ostringstream os;
  os << "epoch,lr,loss_total,loss_oim1,loss_oim2,loss_oim3,loss_oim4,loss_trp\n";
  for (const EpochRecord& r : log.epochs) {
    os << r.epoch << "," << format_double(r.lr) << "," << format_double(r.total);
    for (double v : r.oim) os << "," << format_double(v);
    os << "," << format_double(r.trp) << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// config snapshots
// ---------------------------------------------------------------------------

nlohmann::json model_config_json(const ModelConfig& cfg) {
  return {{"input_h", cfg.backbone.input_h},
          {"input_w", cfg.backbone.input_w},
          {"stage_channels", cfg.backbone.stage_channels},
          {"gru_layers", cfg.gru_layers},
          {"hidden_parts", cfg.hidden_parts},
          {"hidden_channels", cfg.hidden_channels},
          {"oim_dim", cfg.oim_dim},
          {"descriptor_mode", cfg.descriptor_mode == DescriptorMode::FinalStates ? "final" : "mean"}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.backbone.input_h = j.at("input_h").get<int>();
  cfg.backbone.input_w = j.at("input_w").get<int>();
  cfg.backbone.stage_channels = j.at("stage_channels").get<std::vector<int>>();
  cfg.gru_layers = j.at("gru_layers").get<int>();
  cfg.hidden_parts = j.at("hidden_parts").get<int>();
  cfg.hidden_channels = j.at("hidden_channels").get<int>();
  cfg.oim_dim = j.at("oim_dim").get<int>();
  const std::string mode = j.at("descriptor_mode").get<std::string>();
  check(mode == "final" || mode == "mean", "model config: descriptor_mode must be final or mean");
  cfg.descriptor_mode = mode == "final" ? DescriptorMode::FinalStates : DescriptorMode::MeanSteps;
  return cfg;
}

nlohmann::json train_config_json(const TrainConfig& cfg) {
  return {{"branches",
           {{"b1_vert", cfg.mask.b1_vert},
            {"b2_horz", cfg.mask.b2_horz},
            {"b3_chan", cfg.mask.b3_chan},
            {"b4_oim_global", cfg.mask.b4_oim_global},
            {"b5_triplet", cfg.mask.b5_triplet}}},
          {"weights", {cfg.weights.l1, cfg.weights.l2, cfg.weights.l3, cfg.weights.l4, cfg.weights.l5}},
          {"p", cfg.p},
          {"k", cfg.k},
          {"epochs", cfg.epochs},
          {"seed", cfg.seed},
          {"margin", cfg.margin},
          {"descriptor", feature_name(cfg.descriptor)},
          {"base_lr", cfg.base_lr},
          {"weight_decay", cfg.weight_decay},
          {"oim",
           {{"temperature", cfg.oim_temperature}, {"momentum", cfg.oim_momentum}, {"queue", cfg.oim_queue}}},
          {"augment",
           {{"flip_prob", cfg.augment.flip_prob},
            {"erase_prob", cfg.augment.erase_prob},
            {"erase_area", {cfg.augment.erase_area_lo, cfg.augment.erase_area_hi}},
            {"erase_aspect", {cfg.augment.erase_aspect_lo, cfg.augment.erase_aspect_hi}}}}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  const auto& br = j.at("branches");
  cfg.mask.b1_vert = br.at("b1_vert").get<bool>();
  cfg.mask.b2_horz = br.at("b2_horz").get<bool>();
  cfg.mask.b3_chan = br.at("b3_chan").get<bool>();
  cfg.mask.b4_oim_global = br.at("b4_oim_global").get<bool>();
  cfg.mask.b5_triplet = br.at("b5_triplet").get<bool>();
  const auto w = j.at("weights").get<std::vector<float>>();
  check(w.size() == 5, "train config: weights must have five entries");
  cfg.weights = {w[0], w[1], w[2], w[3], w[4]};
  cfg.p = j.at("p").get<int>();
  cfg.k = j.at("k").get<int>();
  cfg.epochs = j.at("epochs").get<int>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.margin = j.at("margin").get<float>();
  cfg.descriptor = feature_from_name(j.at("descriptor").get<std::string>());
  cfg.base_lr = j.at("base_lr").get<double>();
  cfg.weight_decay = j.at("weight_decay").get<float>();
  const auto& oim = j.at("oim");
  cfg.oim_temperature = oim.at("temperature").get<float>();
  cfg.oim_momentum = oim.at("momentum").get<float>();
  cfg.oim_queue = oim.at("queue").get<int>();
  const auto& aug = j.at("augment");
  cfg.augment.flip_prob = aug.at("flip_prob").get<double>();
  cfg.augment.erase_prob = aug.at("erase_prob").get<double>();
  const auto area = aug.at("erase_area").get<std::vector<double>>();
  const auto aspect = aug.at("erase_aspect").get<std::vector<double>>();
  check(area.size() == 2 && aspect.size() == 2, "train config: erase ranges must be pairs");
  cfg.augment.erase_area_lo = area[0];
  cfg.augment.erase_area_hi = area[1];
  cfg.augment.erase_aspect_lo = aspect[0];
  cfg.augment.erase_aspect_hi = aspect[1];
  return cfg;
}

// ---------------------------------------------------------------------------
// checkpoint conversion
// ---------------------------------------------------------------------------

namespace {

std::vector<float> tensor_data(const Tensor<float>& t) {
  return {t.value().data(), t.value().data() + t.size()};
}

const char* head_key(int h) {
  static const char* keys[4] = {"b1", "b2", "b3", "b4"};
  return keys[h];
}

}  // namespace

Checkpoint to_checkpoint(const TrainedModel& tm) {
  Checkpoint cp;
  cp.model = model_config_json(tm.model_cfg);
  cp.train = train_config_json(tm.train_cfg);
  cp.extra["label_ids"] = tm.label_ids;
  nlohmann::json heads = nlohmann::json::object();
  for (int h = 0; h < 4; ++h) {
    const OimState<float>& state = tm.heads[static_cast<std::size_t>(h)];
    if (state.num_labeled() == 0) continue;
    const std::string prefix = std::string("oim.") + head_key(h);
    heads[head_key(h)] = {{"labels", state.num_labeled()},
                          {"dim", state.dim()},
                          {"capacity", state.capacity},
                          {"temperature", state.temperature},
                          {"momentum", state.momentum},
                          {"queue_len", static_cast<int>(state.queue.size())}};
    std::vector<float> lut(state.lut.data(), state.lut.data() + state.lut.size());
    cp.tensors[prefix + ".lut"] = {{state.num_labeled(), state.dim()}, std::move(lut)};
    if (!state.queue.empty()) {
      std::vector<float> q;
      q.reserve(state.queue.size() * static_cast<std::size_t>(state.dim()));
      for (const VecX<float>& entry : state.queue) {
        q.insert(q.end(), entry.data(), entry.data() + entry.size());
      }
      cp.tensors[prefix + ".queue"] = {{static_cast<int>(state.queue.size()), state.dim()}, std::move(q)};
    }
  }
  cp.extra["oim"] = std::move(heads);
  for (const NamedParam<float>& p : tm.params.named_tensors()) {
    cp.tensors[p.name] = {p.tensor.shape(), tensor_data(p.tensor)};
  }
  return cp;
}

TrainedModel from_checkpoint(const Checkpoint& cp) {
  TrainedModel tm;
  tm.model_cfg = model_config_from_json(cp.model);
  tm.train_cfg = train_config_from_json(cp.train);
  tm.label_ids = cp.extra.at("label_ids").get<std::vector<int>>();
  tm.params = make_model<float>(tm.model_cfg, 0);
  for (const NamedParam<float>& p : tm.params.named_tensors()) {
    const auto it = cp.tensors.find(p.name);
    check(it != cp.tensors.end(), "checkpoint: missing tensor " + p.name);
    check(it->second.first == p.tensor.shape(),
          "checkpoint: tensor " + p.name + " has shape " + shape_str(it->second.first) +
              ", model expects " + shape_str(p.tensor.shape()));
    Tensor<float> t = p.tensor;
    t.value_mut() = Eigen::Map<const ArrX<float>>(it->second.second.data(),
                                                  static_cast<Eigen::Index>(it->second.second.size()));
  }
  const nlohmann::json heads = cp.extra.value("oim", nlohmann::json::object());
  for (int h = 0; h < 4; ++h) {
    if (!heads.contains(head_key(h))) continue;
    const nlohmann::json& meta = heads.at(head_key(h));
    OimState<float> state = make_oim_state<float>(meta.at("labels").get<int>(), meta.at("dim").get<int>(),
                                                  meta.at("capacity").get<int>(),
                                                  meta.at("temperature").get<float>(),
                                                  meta.at("momentum").get<float>());
    const std::string prefix = std::string("oim.") + head_key(h);
    const auto lut_it = cp.tensors.find(prefix + ".lut");
    check(lut_it != cp.tensors.end(), "checkpoint: missing tensor " + prefix + ".lut");
    check(lut_it->second.first == Shape({state.num_labeled(), state.dim()}),
          "checkpoint: " + prefix + ".lut shape mismatch");
    state.lut = Eigen::Map<const MatRM<float>>(lut_it->second.second.data(), state.num_labeled(), state.dim());
    const int queue_len = meta.at("queue_len").get<int>();
    if (queue_len > 0) {
      const auto q_it = cp.tensors.find(prefix + ".queue");
      check(q_it != cp.tensors.end(), "checkpoint: missing tensor " + prefix + ".queue");
      check(q_it->second.first == Shape({queue_len, state.dim()}),
            "checkpoint: " + prefix + ".queue shape mismatch");
      for (int i = 0; i < queue_len; ++i) {
        state.queue.emplace_back(Eigen::Map<const VecX<float>>(
            q_it->second.second.data() + static_cast<std::size_t>(i) * state.dim(), state.dim()));
      }
    }
    tm.heads[static_cast<std::size_t>(h)] = std::move(state);
  }
  return tm;
}

}  // namespace omrd
