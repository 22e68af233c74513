// Command-line harness: oracle validation plus the CSV ablation experiments
// on the synthetic attention stack.

#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "kronquant/experiment.hpp"

namespace {

using kronquant::ExperimentConfig;

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> seeds;
  std::string item;
  std::stringstream ss(s);
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) seeds.push_back(std::stoull(item));
  }
  return seeds;
}

ExperimentConfig load_config(const std::string& path, const std::string& seeds_override,
                             const std::string& out_override, const std::string& default_out) {
  ExperimentConfig cfg;
  if (!path.empty()) cfg = kronquant::load_config_file(path);
  if (!seeds_override.empty()) cfg.seeds = parse_seed_list(seeds_override);
  if (!out_override.empty())
    cfg.out = out_override;
  else if (cfg.out.empty())
    cfg.out = default_out;
  return cfg;
}

int run_csv_command(const std::string& config_path, const std::string& seeds_override,
                    const std::string& out_override, const std::string& default_out,
                    void (*command)(const ExperimentConfig&, std::ostream&)) {
  try {
    const ExperimentConfig cfg =
        load_config(config_path, seeds_override, out_override, default_out);
    std::ofstream out(cfg.out);
    if (!out) {
      std::cerr << "cannot open output file: " << cfg.out << "\n";
      return 1;
    }
    command(cfg, out);
    std::cout << "wrote " << cfg.out << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale Kronecker-curvature weight quantization experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_path;
  std::string seeds;

  auto* validate = app.add_subcommand("validate", "run the oracle anchor suites");
  auto* ablate_n = app.add_subcommand("ablate-n", "sweep the joint block size");
  auto* ablate_features = app.add_subcommand("ablate-features", "sweep the feature flags");
  auto* ablate_cd = app.add_subcommand("ablate-cd", "sweep the scale-refinement iterations");
  auto* pipeline = app.add_subcommand("pipeline", "one full quantization run per seed");
  for (CLI::App* sub : {validate, ablate_n, ablate_features, ablate_cd, pipeline}) {
    sub->add_option("--config", config_path, "experiment config file (key = value lines)");
    sub->add_option("--out", out_path, "output path override");
    sub->add_option("--seeds", seeds, "comma-separated seed list override");
  }

  CLI11_PARSE(app, argc, argv);

  try {
    if (validate->parsed()) {
      std::vector<std::uint64_t> vseeds = kronquant::default_validation_seeds();
      std::vector<double> alphas = {0.05, 0.125, 0.25};
      if (!config_path.empty()) {
        const ExperimentConfig cfg = kronquant::load_config_file(config_path);
        alphas = cfg.alpha_list;
        vseeds = cfg.seeds;
      }
      if (!seeds.empty()) vseeds = parse_seed_list(seeds);
      const std::string replay = out_path.empty() ? "kronquant_replay.txt" : out_path;
      return kronquant::cmd_validate(vseeds, alphas, replay, std::cout);
    }
    if (ablate_n->parsed())
      return run_csv_command(config_path, seeds, out_path, "ablate_n.csv",
                             kronquant::cmd_ablate_n);
    if (ablate_features->parsed())
      return run_csv_command(config_path, seeds, out_path, "ablate_features.csv",
                             kronquant::cmd_ablate_features);
    if (ablate_cd->parsed())
      return run_csv_command(config_path, seeds, out_path, "ablate_cd.csv",
                             kronquant::cmd_ablate_cd);
    if (pipeline->parsed())
      return run_csv_command(config_path, seeds, out_path, "pipeline.csv",
                             kronquant::cmd_pipeline_report);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
