#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "kronquant/pipeline.hpp"

namespace kronquant {

inline constexpr const char* kVersion = "0.1.0";

// Flat key = value experiment configuration: pipeline knobs, toy-model
// dimensions, seed list and the sweep lists used by the ablation commands.
struct ExperimentConfig {
  PipelineConfig pipe;
  std::size_t d = 32;
  std::size_t d_h = 8;
  std::size_t heads = 2;
  std::size_t seq_len = 64;
  std::size_t blocks = 2;
  std::size_t outlier_channels = 2;
  double outlier_gain = 10.0;
  std::vector<std::uint64_t> seeds;
  std::string out;
  std::vector<std::size_t> n_list = {1, 4, 8, 16, 32, 64};
  std::vector<double> alpha_list = {0.05, 0.125, 0.25};
  std::vector<int> cd_list = {0, 1, 2};

  ExperimentConfig();
};

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);
std::string serialize_config(const ExperimentConfig& cfg);
std::uint64_t config_hash(const ExperimentConfig& cfg);

// One full toy-model quantization for a seed: build blocks and calibration
// input, propagate with the pipeline quantizer, aggregate the reports.
struct RunStats {
  std::size_t steps_per_layer = 0;
  double block_ms = 0.0;          // block-loop wall time summed over layers
  double loss_layer = 0.0;        // sum of ||dW X||_F^2 over all layers
  double loss_attn = 0.0;         // sum of ||G dW X||_F^2 over all layers
  double loss_attn_dev = 0.0;     // deviation-aware sum (vs FP reference)
  double loss_attn_block0 = 0.0;  // first block only
  double final_dev = 0.0;         // end-to-end mean squared output deviation
};
RunStats run_toy_quantization(const ExperimentConfig& cfg, std::uint64_t seed);

// Ablation commands write one CSV to the stream: a '#' metadata preamble
// (version, config hash, timestamp) followed by fixed-order columns.
void cmd_ablate_n(const ExperimentConfig& cfg, std::ostream& os);
void cmd_ablate_features(const ExperimentConfig& cfg, std::ostream& os);
void cmd_ablate_cd(const ExperimentConfig& cfg, std::ostream& os);
void cmd_pipeline_report(const ExperimentConfig& cfg, std::ostream& os);

struct ValidateCheck {
  std::string name;
  double max_residual = 0.0;
  double tolerance = 0.0;
  bool pass = true;
};

// Test-only hooks for exercising the failure path of the validator.
struct ValidateFixtures {
  bool negate_joint_rule = false;
};

struct ValidateReport {
  std::vector<ValidateCheck> checks;
  bool all_pass = true;
  std::string failure_dump;  // replay text for the first failing instance
};

ValidateReport run_validation(const std::vector<std::uint64_t>& seeds,
                              const std::vector<double>& alpha_list,
                              const ValidateFixtures& fx = {});

// Prints one line per check with its max residual; on failure writes the
// replay dump to replay_path (when nonempty) and returns 1.
int cmd_validate(const std::vector<std::uint64_t>& seeds,
                 const std::vector<double>& alpha_list, const std::string& replay_path,
                 std::ostream& os, const ValidateFixtures& fx = {});

std::vector<std::uint64_t> default_validation_seeds();

}  // namespace kronquant
