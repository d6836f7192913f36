// Command-line experiment runner: dataset generation, training, evaluation,
// ablation grids, capacity sweeps, and attention-map export.

#include <cstdint>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hinet/experiment.hpp"

namespace {

hinet::GeneratorConfig load_generator_config(const std::string& path) {
  if (path.empty()) return hinet::default_generator_config();
  std::ifstream in(path);
  if (!in) throw hinet::IoError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw hinet::ParseError(path + ": " + e.what());
  }
  return j.get<hinet::GeneratorConfig>();
}

void cmd_generate(const std::string& config_path, const std::string& out_path,
                  std::int64_t seed_override, std::int64_t impressions_override) {
  hinet::GeneratorConfig cfg = load_generator_config(config_path);
  if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
  if (impressions_override > 0) cfg.impressions = static_cast<int>(impressions_override);
  const std::vector<hinet::ExampleRecord> records = hinet::generate(cfg);
  hinet::write_dataset(records, out_path);
  std::cout << "wrote " << records.size() << " records to " << out_path << "\n";
}

void cmd_train(const std::string& config_path, std::int64_t seed_override,
               const std::string& out_override) {
  hinet::ExperimentConfig cfg = hinet::load_experiment_config(config_path);
  if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
  if (!out_override.empty()) cfg.output_dir = out_override;
  if (cfg.output_dir.empty())
    throw hinet::ConfigError("train needs an output directory (config output_dir or --out)");
  hinet::RunArtifacts art = hinet::run_experiment(cfg);
  std::cout << "trained " << cfg.model_kind << " for " << art.log.rows.size()
            << " epochs; mean test auc " << hinet::str17(art.report.mean_auc()) << "\n"
            << "artifacts in " << cfg.output_dir << "\n";
}

void cmd_evaluate(const std::string& checkpoint_path, const std::string& data_path,
                  const std::string& out_dir) {
  hinet::Checkpoint ck = hinet::load_checkpoint(checkpoint_path);
  const std::vector<hinet::ExampleRecord> records = hinet::read_dataset(data_path);
  const hinet::FeatureSchema schema =
      hinet::detail::schema_from_json(ck.model->architecture().at("schema"));
  hinet::EvalReport report = hinet::evaluate(*ck.model, records, schema);
  report.meta = {{"checkpoint", checkpoint_path}, {"dataset", data_path}};
  std::filesystem::create_directories(out_dir);
  report.write_tsv((std::filesystem::path(out_dir) / "eval.tsv").string());
  report.write_json((std::filesystem::path(out_dir) / "eval.json").string());
  std::cout << "mean auc " << hinet::str17(report.mean_auc()) << "; report in " << out_dir << "\n";
}

void cmd_ablation(const std::string& config_path, std::int64_t repeats, std::int64_t workers,
                  const std::string& out_override, const std::vector<std::string>& variants) {
  hinet::ExperimentConfig cfg = hinet::load_experiment_config(config_path);
  if (repeats > 0) cfg.repeats = static_cast<std::size_t>(repeats);
  if (workers > 0) cfg.workers = static_cast<std::size_t>(workers);
  if (!out_override.empty()) cfg.output_dir = out_override;
  hinet::AblationOutcome out = hinet::ablation_suite(cfg, variants);
  std::cout << "ablation over " << out.variants.size() << " variants x " << out.repeats
            << " seeds\n";
  for (std::size_t v = 0; v < out.variants.size(); ++v)
    std::cout << "  " << out.variants[v] << ": mean rank "
              << hinet::str17(out.overall.mean_ranks[v]) << "\n";
  std::cout << "statistic " << hinet::str17(out.overall.statistic) << "\n";
}

void cmd_sweep(const std::string& config_path, const std::string& axis_name,
               const std::vector<std::size_t>& values, std::int64_t repeats,
               std::int64_t workers, const std::string& out_override) {
  hinet::ExperimentConfig cfg = hinet::load_experiment_config(config_path);
  if (repeats > 0) cfg.repeats = static_cast<std::size_t>(repeats);
  if (workers > 0) cfg.workers = static_cast<std::size_t>(workers);
  if (!out_override.empty()) cfg.output_dir = out_override;
  const hinet::SweepAxis axis = hinet::sweep_axis_from(axis_name);
  hinet::SweepOutcome out = hinet::sweep(cfg, axis, values);
  for (std::size_t k = 0; k < out.values.size(); ++k)
    std::cout << hinet::sweep_axis_name(axis) << "=" << out.values[k] << ": mean auc "
              << hinet::str17(out.mean_auc[k]) << ", final train loss "
              << hinet::str17(out.final_train_loss[k]) << ", " << out.parameter_values[k]
              << " parameter values\n";
}

void cmd_attention(const std::string& checkpoint_path, const std::string& out_path,
                   const std::string& probe_path) {
  hinet::Checkpoint ck = hinet::load_checkpoint(checkpoint_path);
  auto* model = dynamic_cast<hinet::HiNetModel*>(ck.model.get());
  if (!model)
    throw hinet::ContractError("attention export needs a hierarchical model checkpoint");
  if (!probe_path.empty()) {
    // Read and discard: trained attention weights are a function of the
    // scenario embedding only, so probe data cannot change them.
    hinet::read_dataset(probe_path);
  }
  hinet::AttentionMap map = hinet::attention_map(*model);
  hinet::write_attention(map, out_path);
  std::cout << "wrote " << map.scenario_count() << "x" << map.scenario_count()
            << " attention map to " << out_path << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-scenario multi-task ranking experiments"};
  app.require_subcommand(1);
  std::function<void()> action;

  // generate
  auto* gen = app.add_subcommand("generate", "generate a synthetic impression log");
  std::string gen_config, gen_out = "dataset.txt";
  std::int64_t gen_seed = -1, gen_impressions = -1;
  gen->add_option("--config", gen_config, "generator config json (default: built-in six-scenario config)");
  gen->add_option("--out", gen_out, "output dataset path")->required();
  gen->add_option("--seed", gen_seed, "override generator seed");
  gen->add_option("--impressions", gen_impressions, "override impression count");
  gen->callback([&] { action = [&] { cmd_generate(gen_config, gen_out, gen_seed, gen_impressions); }; });

  // train
  auto* train = app.add_subcommand("train", "train one model end to end and write artifacts");
  std::string train_config, train_out;
  std::int64_t train_seed = -1;
  train->add_option("--config", train_config, "experiment config json")->required();
  train->add_option("--seed", train_seed, "override master seed");
  train->add_option("--out", train_out, "override output directory");
  train->callback([&] { action = [&] { cmd_train(train_config, train_seed, train_out); }; });

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "evaluate a checkpoint on a dataset");
  std::string eval_ckpt, eval_data, eval_out = "eval_out";
  eval->add_option("--checkpoint", eval_ckpt, "training checkpoint path")->required();
  eval->add_option("--data", eval_data, "dataset path")->required();
  eval->add_option("--out", eval_out, "output directory");
  eval->callback([&] { action = [&] { cmd_evaluate(eval_ckpt, eval_data, eval_out); }; });

  // ablation
  auto* abl = app.add_subcommand("ablation", "train all architecture variants across seeds");
  std::string abl_config, abl_out;
  std::int64_t abl_repeats = -1, abl_workers = -1;
  std::vector<std::string> abl_variants;
  abl->add_option("--config", abl_config, "experiment config json")->required();
  abl->add_option("--repeats", abl_repeats, "seeds per variant (default from config)");
  abl->add_option("--workers", abl_workers, "parallel runs");
  abl->add_option("--out", abl_out, "override output directory");
  abl->add_option("--variants", abl_variants, "subset of variants")->delimiter(',');
  abl->callback([&] {
    action = [&] { cmd_ablation(abl_config, abl_repeats, abl_workers, abl_out, abl_variants); };
  });

  // sweep
  auto* sw = app.add_subcommand("sweep", "sweep an expert-count axis");
  std::string sw_config, sw_axis = "sub_experts", sw_out;
  std::vector<std::size_t> sw_values;
  std::int64_t sw_repeats = -1, sw_workers = -1;
  sw->add_option("--config", sw_config, "experiment config json")->required();
  sw->add_option("--axis", sw_axis, "sub_experts | cgc_experts");
  sw->add_option("--values", sw_values, "axis values (default: 1,3,5,7 or 1..5)")->delimiter(',');
  sw->add_option("--repeats", sw_repeats, "repeats per value");
  sw->add_option("--workers", sw_workers, "parallel runs");
  sw->add_option("--out", sw_out, "override output directory");
  sw->callback([&] {
    action = [&] { cmd_sweep(sw_config, sw_axis, sw_values, sw_repeats, sw_workers, sw_out); };
  });

  // attention
  auto* att = app.add_subcommand("attention", "export the trained cross-scenario attention map");
  std::string att_ckpt, att_out = "attention.tsv", att_probe;
  att->add_option("--checkpoint", att_ckpt, "trained checkpoint")->required();
  att->add_option("--out", att_out, "output tsv path");
  att->add_option("--probe", att_probe,
                  "probe dataset (accepted for interface symmetry; weights depend only on the "
                  "scenario embedding, so this input does not affect the output)");
  att->callback([&] { action = [&] { cmd_attention(att_ckpt, att_out, att_probe); }; });

  CLI11_PARSE(app, argc, argv);
  try {
    action();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
