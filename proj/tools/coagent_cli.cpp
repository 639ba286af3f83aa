#include <CLI11.hpp>
#include <cstdio>

#include "coagent/errors.hpp"
#include "coagent/experiment.hpp"
#include "coagent/parallel.hpp"

int main(int argc, char** argv) {
  CLI::App app{"coagent network experiments"};
  app.require_subcommand(1);

  std::string config_path;
  int trials = -1;
  std::string seed_str;
  std::string out_dir;
  int workers = coagent::default_workers();

  CLI::App* run = app.add_subcommand("run", "run an experiment config");
  run->add_option("config", config_path, "path to a JSON experiment config")->required();
  run->add_option("--trials", trials, "override the trial count");
  run->add_option("--seed", seed_str, "override the master seed");
  run->add_option("--out", out_dir, "override the output directory");
  run->add_option("--workers", workers, "worker threads (results are worker-count independent)");

  CLI11_PARSE(app, argc, argv);

  try {
    std::optional<int> trials_override;
    if (trials >= 0) trials_override = trials;
    std::optional<uint64_t> seed_override;
    if (!seed_str.empty()) seed_override = std::stoull(seed_str);
    std::optional<std::string> out_override;
    if (!out_dir.empty()) out_override = out_dir;

    const coagent::ExperimentConfig cfg =
        coagent::parse_experiment_config(config_path, trials_override, seed_override, out_override);
    const auto outputs = coagent::run_experiment(cfg, workers);
    for (const auto& p : outputs) std::printf("wrote %s\n", p.string().c_str());
    return 0;
  } catch (const coagent::SingularSystemError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 2;
  } catch (const coagent::SizeOverflowError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "invalid config: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
