#include "omrd/config.hpp"

#include <fstream>
#include <set>

namespace omrd {

namespace {

// Object view that records which keys were consumed and rejects leftovers
// with their full path.
class StrictObj {
 public:
  StrictObj(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: " + path_ + " must be an object");
  }

  template <typename T>
  T get(const char* key, const T& fallback) {
    known_.insert(key);
    if (!j_.contains(key)) return fallback;
    try {
      return j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config: bad value for " + join(key));
    }
  }

  bool has(const char* key) {
    known_.insert(key);
    return j_.contains(key);
  }

  StrictObj child(const char* key) {
    known_.insert(key);
    return StrictObj(j_.at(key), join(key));
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!known_.count(k)) throw ConfigError("config: unknown key " + join(k));
    }
  }

  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> known_;
};

DatasetConfig parse_dataset(StrictObj obj) {
  DatasetConfig cfg;
  const std::string source = obj.get<std::string>("source", "synth");
  if (source == "synth") {
    cfg.source = DatasetConfig::Source::Synth;
  } else if (source == "dir") {
    cfg.source = DatasetConfig::Source::Dir;
  } else {
    throw ConfigError("config: " + obj.join("source") + " must be synth or dir");
  }
  cfg.path = obj.get<std::string>("path", "");
  if (cfg.source == DatasetConfig::Source::Dir && cfg.path.empty()) {
    throw ConfigError("config: " + obj.join("path") + " is required for source=dir");
  }
  if (obj.has("synth")) {
    StrictObj synth = obj.child("synth");
    SynthParams& p = cfg.synth;
    p.num_ids = synth.get("num_ids", p.num_ids);
    p.images_per_id = synth.get("images_per_id", p.images_per_id);
    p.height = synth.get("height", p.height);
    p.width = synth.get("width", p.width);
    p.seed = synth.get("seed", p.seed);
    p.train_ids = synth.get("train_ids", p.train_ids);
    p.queries_per_id = synth.get("queries_per_id", p.queries_per_id);
    p.occlusion_prob = synth.get("occlusion_prob", p.occlusion_prob);
    p.brightness_jitter = synth.get("brightness_jitter", p.brightness_jitter);
    p.shift_frac = synth.get("shift_frac", p.shift_frac);
    p.pixel_noise = synth.get("pixel_noise", p.pixel_noise);
    p.min_separation = synth.get("min_separation", p.min_separation);
    p.arrangement_swap_prob = synth.get("arrangement_swap_prob", p.arrangement_swap_prob);
    synth.finish();
  }
  obj.finish();
  return cfg;
}

ModelConfig parse_model(StrictObj obj) {
  ModelConfig cfg;
  cfg.backbone.input_h = obj.get("input_h", cfg.backbone.input_h);
  cfg.backbone.input_w = obj.get("input_w", cfg.backbone.input_w);
  cfg.backbone.stage_channels = obj.get("stage_channels", cfg.backbone.stage_channels);
  cfg.gru_layers = obj.get("gru_layers", cfg.gru_layers);
  cfg.hidden_parts = obj.get("hidden_parts", cfg.hidden_parts);
  cfg.hidden_channels = obj.get("hidden_channels", cfg.hidden_channels);
  cfg.oim_dim = obj.get("oim_dim", cfg.oim_dim);
  const std::string mode = obj.get<std::string>("descriptor_mode", "final");
  if (mode == "final") {
    cfg.descriptor_mode = DescriptorMode::FinalStates;
  } else if (mode == "mean") {
    cfg.descriptor_mode = DescriptorMode::MeanSteps;
  } else {
    throw ConfigError("config: " + obj.join("descriptor_mode") + " must be final or mean");
  }
  obj.finish();
  return cfg;
}

TrainConfig parse_train(StrictObj obj) {
  TrainConfig cfg;
  if (obj.has("branches")) {
    StrictObj br = obj.child("branches");
    cfg.mask.b1_vert = br.get("b1_vert", cfg.mask.b1_vert);
    cfg.mask.b2_horz = br.get("b2_horz", cfg.mask.b2_horz);
    cfg.mask.b3_chan = br.get("b3_chan", cfg.mask.b3_chan);
    cfg.mask.b4_oim_global = br.get("b4_oim_global", cfg.mask.b4_oim_global);
    cfg.mask.b5_triplet = br.get("b5_triplet", cfg.mask.b5_triplet);
    br.finish();
  }
  if (obj.has("weights")) {
    const auto w = obj.get<std::vector<float>>("weights", {});
    if (w.size() != 5) throw ConfigError("config: " + obj.join("weights") + " must have five entries");
    cfg.weights = {w[0], w[1], w[2], w[3], w[4]};
  }
  cfg.p = obj.get("p", cfg.p);
  cfg.k = obj.get("k", cfg.k);
  cfg.epochs = obj.get("epochs", cfg.epochs);
  cfg.seed = obj.get("seed", cfg.seed);
  cfg.margin = obj.get("margin", cfg.margin);
  cfg.descriptor = feature_from_name(obj.get<std::string>("descriptor", feature_name(cfg.descriptor)));
  cfg.base_lr = obj.get("base_lr", cfg.base_lr);
  cfg.weight_decay = obj.get("weight_decay", cfg.weight_decay);
  if (obj.has("oim")) {
    StrictObj oim = obj.child("oim");
    cfg.oim_temperature = oim.get("temperature", cfg.oim_temperature);
    cfg.oim_momentum = oim.get("momentum", cfg.oim_momentum);
    cfg.oim_queue = oim.get("queue", cfg.oim_queue);
    oim.finish();
  }
  if (obj.has("augment")) {
    StrictObj aug = obj.child("augment");
    cfg.augment.flip_prob = aug.get("flip_prob", cfg.augment.flip_prob);
    cfg.augment.erase_prob = aug.get("erase_prob", cfg.augment.erase_prob);
    const std::vector<double> area =
        aug.get<std::vector<double>>("erase_area", {cfg.augment.erase_area_lo, cfg.augment.erase_area_hi});
    const std::vector<double> aspect = aug.get<std::vector<double>>(
        "erase_aspect", {cfg.augment.erase_aspect_lo, cfg.augment.erase_aspect_hi});
    if (area.size() != 2 || aspect.size() != 2) {
      throw ConfigError("config: " + aug.join("erase_area") + " / erase_aspect must be [lo, hi] pairs");
    }
    cfg.augment.erase_area_lo = area[0];
    cfg.augment.erase_area_hi = area[1];
    cfg.augment.erase_aspect_lo = aspect[0];
    cfg.augment.erase_aspect_hi = aspect[1];
    aug.finish();
  }
  obj.finish();
  return cfg;
}

}  // namespace

RunConfig parse_run_config(const nlohmann::json& j) {
  StrictObj root(j, "");
  RunConfig cfg;
  if (root.has("dataset")) cfg.dataset = parse_dataset(root.child("dataset"));
  if (root.has("model")) cfg.model = parse_model(root.child("model"));
  if (root.has("train")) cfg.train = parse_train(root.child("train"));
  cfg.output_dir = root.get<std::string>("output_dir", cfg.output_dir);
  cfg.ablate_seeds = root.get<std::vector<std::uint64_t>>("ablate_seeds", {});
  root.finish();
  if (cfg.ablate_seeds.empty()) cfg.ablate_seeds = {cfg.train.seed};

  if (cfg.dataset.source == DatasetConfig::Source::Synth) {
    if (cfg.dataset.synth.height != cfg.model.backbone.input_h ||
        cfg.dataset.synth.width != cfg.model.backbone.input_w) {
      throw ConfigError("config: dataset.synth image size " + std::to_string(cfg.dataset.synth.height) +
                        "x" + std::to_string(cfg.dataset.synth.width) + " must match model input " +
                        std::to_string(cfg.model.backbone.input_h) + "x" +
                        std::to_string(cfg.model.backbone.input_w));
    }
  }
  try {
    validate_model(cfg.model);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: " + path + " is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

nlohmann::json resolved_config_json(const RunConfig& cfg) {
  const SynthParams& p = cfg.dataset.synth;
  nlohmann::json dataset = {
      {"source", cfg.dataset.source == DatasetConfig::Source::Synth ? "synth" : "dir"},
      {"path", cfg.dataset.path},
      {"synth",
       {{"num_ids", p.num_ids},
        {"images_per_id", p.images_per_id},
        {"height", p.height},
        {"width", p.width},
        {"seed", p.seed},
        {"train_ids", p.train_ids},
        {"queries_per_id", p.queries_per_id},
        {"occlusion_prob", p.occlusion_prob},
        {"brightness_jitter", p.brightness_jitter},
        {"shift_frac", p.shift_frac},
        {"pixel_noise", p.pixel_noise},
        {"min_separation", p.min_separation},
        {"arrangement_swap_prob", p.arrangement_swap_prob}}}};
  return {{"dataset", dataset},
          {"model", model_config_json(cfg.model)},
          {"train", train_config_json(cfg.train)},
          {"output_dir", cfg.output_dir},
          {"ablate_seeds", cfg.ablate_seeds}};
}

Dataset load_dataset_for(const RunConfig& cfg) {
  if (cfg.dataset.source == DatasetConfig::Source::Synth) {
    return synth_generate(cfg.dataset.synth);
  }
  return load_reid_directory(cfg.dataset.path, cfg.model.backbone.input_h, cfg.model.backbone.input_w);
}

}  // namespace omrd
