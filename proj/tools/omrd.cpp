#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "omrd/ablation.hpp"
#include "omrd/config.hpp"
#include "omrd/gradsuite.hpp"
#include "omrd/trainer.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerificationFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitRuntimeAbort = 3;

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

int cmd_train(const std::string& config_path) {
  const omrd::RunConfig cfg = omrd::load_run_config(config_path);
  const omrd::Dataset ds = omrd::load_dataset_for(cfg);
  omrd::TrainLog log;
  const omrd::TrainedModel tm = omrd::train(ds, cfg.model, cfg.train, &log);

  fs::create_directories(cfg.output_dir);
  if (!fs::is_directory(cfg.output_dir)) throw std::runtime_error("cannot create " + cfg.output_dir);
  omrd::save_checkpoint((fs::path(cfg.output_dir) / "checkpoint.omrd").string(), omrd::to_checkpoint(tm));
  write_file(fs::path(cfg.output_dir) / "train_log.csv", omrd::train_log_csv(log));
  write_file(fs::path(cfg.output_dir) / "resolved_config.json",
             omrd::resolved_config_json(cfg).dump(2) + "\n");

  std::cout << "trained " << tm.label_ids.size() << " identities for " << cfg.train.epochs
            << " epochs; final loss " << (log.epochs.empty() ? 0.0 : log.epochs.back().total) << "\n"
            << "wrote " << cfg.output_dir << "/checkpoint.omrd, train_log.csv, resolved_config.json\n";
  return kExitOk;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& data_dir, const std::string& config_path,
             const std::string& feature, int max_rank, const std::string& out_dir) {
  const omrd::WhichFeature which = omrd::feature_from_name(feature);
  const omrd::TrainedModel tm = omrd::from_checkpoint(omrd::load_checkpoint(checkpoint_path));

  omrd::Dataset ds;
  if (!data_dir.empty()) {
    ds = omrd::load_reid_directory(data_dir, tm.model_cfg.backbone.input_h, tm.model_cfg.backbone.input_w);
  } else if (!config_path.empty()) {
    ds = omrd::load_dataset_for(omrd::load_run_config(config_path));
  } else {
    throw omrd::ConfigError("eval: provide --data or --config");
  }

  const omrd::EmbeddingSet queries = omrd::embed(tm, ds, omrd::Split::Query, which);
  const omrd::EmbeddingSet gallery = omrd::embed(tm, ds, omrd::Split::Gallery, which);
  const omrd::EvalReport report = omrd::evaluate(queries, gallery, max_rank);

  std::cout << "feature " << omrd::feature_name(which) << ": mAP " << report.map;
  for (int r : {1, 5, 10}) {
    if (r <= report.max_rank) {
      std::cout << "  Rank-" << r << " " << report.cmc[static_cast<std::size_t>(r - 1)];
    }
  }
  std::cout << "  (" << report.num_valid_queries << " queries";
  if (report.num_dropped_queries > 0) std::cout << ", " << report.num_dropped_queries << " dropped";
  std::cout << ")\n";

  fs::create_directories(out_dir);
  const std::string suffix = omrd::feature_name(which);
  write_file(fs::path(out_dir) / ("eval_report_" + suffix + ".json"), omrd::eval_report_json(report));
  write_file(fs::path(out_dir) / ("cmc_" + suffix + ".csv"), omrd::cmc_csv(report));
  std::cout << "wrote " << out_dir << "/eval_report_" << suffix << ".json and cmc_" << suffix << ".csv\n";
  return kExitOk;
}

int cmd_ablate(const std::string& config_path) {
  const omrd::RunConfig cfg = omrd::load_run_config(config_path);
  const omrd::AblationResult result = omrd::run_ablation(cfg, cfg.ablate_seeds);
  const std::string csv = omrd::ablation_csv(result);
  std::cout << csv;
  fs::create_directories(cfg.output_dir);
  write_file(fs::path(cfg.output_dir) / "ablation.csv", csv);
  std::cout << "wrote " << cfg.output_dir << "/ablation.csv (medians over " << result.seeds.size()
            << " seed(s))\n";
  return kExitOk;
}

int cmd_gradcheck(double tolerance, const std::string& sabotage) {
  const omrd::GradSuiteResult result = omrd::run_gradient_suite(tolerance, sabotage);
  std::cout << omrd::gradient_suite_table(result);
  if (!result.all_passed) {
    const omrd::GradSuiteEntry* w = result.worst();
    std::cerr << "gradient verification failed";
    if (w) std::cerr << ": " << w->component << " (max rel error " << w->max_rel_error << ")";
    std::cerr << "\n";
    return kExitVerificationFailure;
  }
  return kExitOk;
}

int cmd_synth(const omrd::SynthParams& params, const std::string& out_dir) {
  const omrd::Dataset ds = omrd::synth_generate(params);
  omrd::write_dataset(ds, out_dir);
  int train = 0, query = 0, gallery = 0;
  for (const omrd::Sample& s : ds.samples) {
    if (s.split == omrd::Split::Train) ++train;
    else if (s.split == omrd::Split::Query) ++query;
    else ++gallery;
  }
  std::cout << "wrote " << ds.samples.size() << " images (" << train << " train, " << query << " query, "
            << gallery << " gallery) and manifest.json to " << out_dir << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"omrd: omni-directional GRU re-identification, trained and evaluated at desk scale"};
  app.require_subcommand(1);

  std::string config_path;
  auto* train_cmd = app.add_subcommand("train", "train a model from a JSON config");
  train_cmd->add_option("--config", config_path, "JSON run configuration")->required();

  std::string ckpt_path, data_dir, eval_config, feature = "oim", out_dir = ".";
  int max_rank = 10;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint with single-query CMC/mAP");
  eval_cmd->add_option("--checkpoint", ckpt_path, "checkpoint.omrd file")->required();
  eval_cmd->add_option("--data", data_dir, "dataset directory (manifest.json or train/query/gallery layout)");
  eval_cmd->add_option("--config", eval_config, "JSON run configuration to regenerate the dataset");
  eval_cmd->add_option("--feature", feature, "descriptor: oim or trip")->check(CLI::IsMember({"oim", "trip"}));
  eval_cmd->add_option("--max-rank", max_rank, "CMC curve length")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--out", out_dir, "directory for eval_report_*.json and cmc_*.csv");

  std::string ablate_config;
  auto* ablate_cmd = app.add_subcommand("ablate", "train and compare the four branch configurations");
  ablate_cmd->add_option("--config", ablate_config, "JSON run configuration")->required();

  double tolerance = 1e-4;
  std::string sabotage;
  auto* grad_cmd = app.add_subcommand("gradcheck", "run the finite-difference verification suite");
  grad_cmd->add_option("--tolerance", tolerance, "max relative error accepted")->check(CLI::PositiveNumber);
  grad_cmd->add_option("--sabotage", sabotage)->group("");  // failure-path fixture, hidden

  omrd::SynthParams synth;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic identity dataset as PNGs + manifest");
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->add_option("--ids", synth.num_ids, "number of identities");
  synth_cmd->add_option("--images", synth.images_per_id, "images per identity");
  synth_cmd->add_option("--height", synth.height, "image height");
  synth_cmd->add_option("--width", synth.width, "image width");
  synth_cmd->add_option("--seed", synth.seed, "generator seed");
  synth_cmd->add_option("--train-ids", synth.train_ids, "identities assigned to the train split");
  synth_cmd->add_option("--queries-per-id", synth.queries_per_id, "query images per held-out identity");
  synth_cmd->add_option("--occlusion-prob", synth.occlusion_prob, "side occlusion probability");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(config_path);
    if (eval_cmd->parsed()) return cmd_eval(ckpt_path, data_dir, eval_config, feature, max_rank, out_dir);
    if (ablate_cmd->parsed()) return cmd_ablate(ablate_config);
    if (grad_cmd->parsed()) return cmd_gradcheck(tolerance, sabotage);
    if (synth_cmd->parsed()) return cmd_synth(synth, synth_out);
  } catch (const omrd::TrainAbort& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntimeAbort;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
