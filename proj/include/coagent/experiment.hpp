#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "coagent/network.hpp"
#include "coagent/tabular_mdp.hpp"
#include "coagent/training.hpp"

namespace coagent {

enum class ExperimentKind { GradCheck, Train, ComdpVerify, ReduceVerify, OptionCritic };

struct GradCheckConfig {
  std::vector<long> batch_sizes{1000, 10000, 100000, 1000000};
  int warmup_episodes = 5;
  int n_atomic = 1;
  int horizon = 1000;
};

struct VerifyConfig {
  int horizon = 10;
  double tolerance = 1e-10;
  int theta_draws = 3;
  double theta_scale = 0.5;
};

struct OptionCriticConfig {
  int n_options = 2;
  int theta_draws = 3;
  double theta_scale = 0.5;
  long mc_episodes = 100000;
  int horizon = 1000;
};

struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::GradCheck;
  uint64_t seed = 0;
  int trials = 1;
  std::string output = "out";
  TabularMdp mdp;
  std::optional<std::vector<CoagentSpec>> coagents;
  int action_coagent = -1;
  GradCheckConfig gradcheck;
  TrainConfig train_config;
  VerifyConfig verify;
  OptionCriticConfig option_critic;
  std::string echo;  // canonical JSON echo of the parsed config

  CoagentNetwork build_network() const;
};

/// Parses and validates a JSON experiment config. Messages name the
/// offending field. Overrides replace trials/seed/output when present.
ExperimentConfig parse_experiment_config(const std::filesystem::path& path,
                                         std::optional<int> trials_override,
                                         std::optional<uint64_t> seed_override,
                                         std::optional<std::string> out_override);

/// Runs the experiment, writing output CSV/report files plus manifest.json
/// under config.output. Returns the paths written.
std::vector<std::filesystem::path> run_experiment(const ExperimentConfig& config, int workers);

}  // namespace coagent
