#include "coagent/experiment.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "coagent/comdp.hpp"
#include "coagent/gradients.hpp"
#include "coagent/option_critic.hpp"
#include "coagent/parallel.hpp"
#include "coagent/reduction.hpp"
#include "coagent/stats.hpp"

namespace coagent {

namespace {

using nlohmann::json;

constexpr const char* kVersion = "0.1.0";

[[noreturn]] void bad_field(const std::string& field, const std::string& why) {
  throw std::invalid_argument("config field '" + field + "': " + why);
}

template <typename T>
T require(const json& j, const std::string& field) {
  if (!j.contains(field)) bad_field(field, "missing");
  try {
    return j.at(field).get<T>();
  } catch (const json::exception& e) {
    bad_field(field, e.what());
  }
}

template <typename T>
T optional_or(const json& j, const std::string& field, T fallback) {
  if (!j.contains(field)) return fallback;
  try {
    return j.at(field).get<T>();
  } catch (const json::exception& e) {
    bad_field(field, e.what());
  }
}

TabularMdp parse_mdp(const json& j) {
  const std::string type = require<std::string>(j, "type");
  if (type == "gridworld") {
    const auto start = require<std::vector<int>>(j, "start");
    const auto goal = require<std::vector<int>>(j, "goal");
    if (start.size() != 2 || goal.size() != 2) bad_field("mdp.start/goal", "expected [x, y]");
    return build_gridworld(require<int>(j, "width"), require<int>(j, "height"),
                           {start[0], start[1]}, {goal[0], goal[1]},
                           require<double>(j, "step_reward"), require<double>(j, "goal_reward"),
                           optional_or<double>(j, "discount", 1.0));
  }
  if (type == "tables") {
    TabularMdp mdp;
    mdp.n_states = require<int>(j, "n_states");
    mdp.n_actions = require<int>(j, "n_actions");
    mdp.reward_support = require<std::vector<double>>(j, "reward_support");
    mdp.transition = require<std::vector<double>>(j, "transition");
    mdp.reward_dist = require<std::vector<double>>(j, "reward_dist");
    const auto d0 = require<std::vector<double>>(j, "initial_dist");
    mdp.initial_dist = Eigen::Map<const Eigen::VectorXd>(d0.data(), d0.size());
    mdp.discount = require<double>(j, "discount");
    const auto term = optional_or<std::vector<int>>(j, "terminal", {});
    mdp.terminal.assign(mdp.n_states, 0);
    for (int s : term) mdp.terminal[s] = 1;
    mdp.validate();
    return mdp;
  }
  bad_field("mdp.type", "unknown type '" + type + "'");
}

ExecutionFn parse_execution(const json& j) {
  const std::string kind = require<std::string>(j, "kind");
  if (kind == "always") return ExecutionFn::always();
  if (kind == "bernoulli") return ExecutionFn::bernoulli(require<double>(j, "prob"));
  if (kind == "table") return ExecutionFn::from_table(require<std::vector<double>>(j, "table"));
  if (kind == "gated") return ExecutionFn::gated(require<int>(j, "source"));
  bad_field("execution.kind", "unknown kind '" + kind + "'");
}

std::vector<CoagentSpec> parse_coagents(const json& j) {
  std::vector<CoagentSpec> specs;
  for (const auto& cj : j) {
    CoagentSpec c;
    c.uses_state = optional_or<bool>(cj, "uses_state", false);
    c.feedforward_inputs = optional_or<std::vector<int>>(cj, "feedforward", {});
    c.recurrent_inputs = optional_or<std::vector<int>>(cj, "recurrent", {});
    c.output_arity = require<int>(cj, "arity");
    c.execution = cj.contains("execution") ? parse_execution(cj.at("execution"))
                                           : ExecutionFn::always();
    c.init_dist = optional_or<std::vector<double>>(cj, "init_dist", {});
    if (cj.contains("forced_initial_output"))
      c.forced_initial_output = cj.at("forced_initial_output").get<int>();
    specs.push_back(std::move(c));
  }
  return specs;
}

TrainConfig parse_train(const json& j, uint64_t seed) {
  TrainConfig t;
  const std::string algo = require<std::string>(j, "algorithm");
  if (algo == "reinforce")
    t.algorithm = Algorithm::Reinforce;
  else if (algo == "actor_critic_traces")
    t.algorithm = Algorithm::ActorCriticTraces;
  else
    bad_field("train.algorithm", "unknown algorithm '" + algo + "'");
  t.actor_steps = require<std::vector<double>>(j, "actor_steps");
  t.critic_step = optional_or<double>(j, "critic_step", 0.0);
  t.trace_decay = optional_or<double>(j, "lambda", 0.0);
  t.episodes = require<int>(j, "episodes");
  const std::string schedule = optional_or<std::string>(j, "schedule", "constant");
  if (schedule == "constant") {
    t.schedule = StepSchedule::Constant;
  } else if (schedule == "harmonic") {
    t.schedule = StepSchedule::Harmonic;
    t.harmonic_a = require<double>(j, "harmonic_a");
    t.harmonic_b = require<double>(j, "harmonic_b");
  } else {
    bad_field("train.schedule", "unknown schedule '" + schedule + "'");
  }
  t.n_atomic = optional_or<int>(j, "n_atomic", 1);
  t.horizon = optional_or<int>(j, "horizon", 1000);
  t.seed = seed;
  return t;
}

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

void write_file(const std::filesystem::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << contents;
}

}  // namespace

CoagentNetwork ExperimentConfig::build_network() const {
  if (!coagents) bad_field("network", "missing");
  return make_network(mdp, *coagents, action_coagent);
}

ExperimentConfig parse_experiment_config(const std::filesystem::path& path,
                                         std::optional<int> trials_override,
                                         std::optional<uint64_t> seed_override,
                                         std::optional<std::string> out_override) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
  }

  ExperimentConfig cfg;
  const std::string kind = require<std::string>(j, "experiment");
  if (kind == "gradcheck")
    cfg.experiment = ExperimentKind::GradCheck;
  else if (kind == "train")
    cfg.experiment = ExperimentKind::Train;
  else if (kind == "comdp-verify")
    cfg.experiment = ExperimentKind::ComdpVerify;
  else if (kind == "reduce-verify")
    cfg.experiment = ExperimentKind::ReduceVerify;
  else if (kind == "option-critic")
    cfg.experiment = ExperimentKind::OptionCritic;
  else
    bad_field("experiment", "unknown experiment '" + kind + "'");

  cfg.seed = require<uint64_t>(j, "seed");
  cfg.trials = optional_or<int>(j, "trials", 1);
  cfg.output = optional_or<std::string>(j, "output", "out");
  cfg.mdp = parse_mdp(j.contains("mdp") ? j.at("mdp") : json::object({{"type", "missing"}}));

  if (j.contains("network")) {
    cfg.coagents = parse_coagents(require<json>(j.at("network"), "coagents"));
    cfg.action_coagent = require<int>(j.at("network"), "action_coagent");
  }

  if (j.contains("gradcheck")) {
    const json& g = j.at("gradcheck");
    cfg.gradcheck.batch_sizes = optional_or<std::vector<long>>(g, "batch_sizes",
                                                               cfg.gradcheck.batch_sizes);
    cfg.gradcheck.warmup_episodes = optional_or<int>(g, "warmup_episodes", 5);
    cfg.gradcheck.n_atomic = optional_or<int>(g, "n_atomic", 1);
    cfg.gradcheck.horizon = optional_or<int>(g, "horizon", 1000);
  }
  if (j.contains("train")) cfg.train_config = parse_train(j.at("train"), cfg.seed);
  if (j.contains("verify")) {
    const json& v = j.at("verify");
    cfg.verify.horizon = optional_or<int>(v, "horizon", 10);
    cfg.verify.tolerance = optional_or<double>(v, "tolerance", 1e-10);
    cfg.verify.theta_draws = optional_or<int>(v, "theta_draws", 3);
    cfg.verify.theta_scale = optional_or<double>(v, "theta_scale", 0.5);
  }
  if (j.contains("option_critic")) {
    const json& o = j.at("option_critic");
    cfg.option_critic.n_options = optional_or<int>(o, "n_options", 2);
    cfg.option_critic.theta_draws = optional_or<int>(o, "theta_draws", 3);
    cfg.option_critic.theta_scale = optional_or<double>(o, "theta_scale", 0.5);
    cfg.option_critic.mc_episodes = optional_or<long>(o, "mc_episodes", 100000);
    cfg.option_critic.horizon = optional_or<int>(o, "horizon", 1000);
  }

  if (trials_override) cfg.trials = *trials_override;
  if (seed_override) cfg.seed = *seed_override;
  if (out_override) cfg.output = *out_override;
  if (cfg.trials < 1) bad_field("trials", "must be >= 1");

  json echo = j;
  echo["trials"] = cfg.trials;
  echo["seed"] = cfg.seed;
  echo["output"] = cfg.output;
  cfg.echo = echo.dump(2);
  return cfg;
}

namespace {

void write_manifest(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                    const std::vector<std::string>& outputs) {
  json m;
  m["library"] = "coagent";
  m["version"] = kVersion;
  m["seed"] = cfg.seed;
  m["outputs"] = outputs;
  m["config"] = json::parse(cfg.echo);
  write_file(dir / "manifest.json", m.dump(2) + "\n");
}

std::vector<std::filesystem::path> run_gradcheck(const ExperimentConfig& cfg, int workers) {
  const CoagentNetwork net = cfg.build_network();
  std::string csv = "trial,batch_size,mean_distance,stderr\n";
  std::string grad_csv = "trial,block,coordinate,value\n";

  for (int trial = 0; trial < cfg.trials; ++trial) {
    // Warm-up training, then freeze parameters for the comparison.
    TrainConfig warmup = cfg.train_config;
    warmup.episodes = cfg.gradcheck.warmup_episodes;
    warmup.seed = derive_seed(cfg.seed, 2 * static_cast<uint64_t>(trial));
    warmup.n_atomic = cfg.gradcheck.n_atomic;
    warmup.horizon = cfg.gradcheck.horizon;
    const NetworkParams frozen = train(cfg.mdp, net, warmup).final_params;

    const GradientVector exact = exact_gradient(cfg.mdp, net, frozen);
    for (size_t b = 0; b < exact.blocks.size(); ++b)
      for (long k = 0; k < exact.blocks[b].size(); ++k)
        grad_csv += std::to_string(trial) + "," + std::to_string(b) + "," + std::to_string(k) +
                    "," + format_double(exact.blocks[b][k]) + "\n";

    McBatchRequest req;
    req.episodes = cfg.gradcheck.batch_sizes.back();
    req.n_atomic = cfg.gradcheck.n_atomic;
    req.horizon = cfg.gradcheck.horizon;
    req.seed = derive_seed(cfg.seed, 2 * static_cast<uint64_t>(trial) + 1);
    req.workers = workers;
    req.snapshot_at = cfg.gradcheck.batch_sizes;
    const McBatchResult batch = sample_mc_gradient(cfg.mdp, net, frozen, req);

    for (size_t bi = 0; bi < cfg.gradcheck.batch_sizes.size(); ++bi) {
      const CosineReport rep = cosine_distance_per_block(batch.snapshots[bi], exact);
      RunningStats stats;
      for (double d : rep.per_block) stats.add(d);
      csv += std::to_string(trial) + "," + std::to_string(cfg.gradcheck.batch_sizes[bi]) + "," +
             format_double(rep.mean) + "," + format_double(stats.stderr_of_mean()) + "\n";
    }
  }

  const std::filesystem::path dir(cfg.output);
  std::filesystem::create_directories(dir);
  write_file(dir / "gradcheck.csv", csv);
  write_file(dir / "exact_gradients.csv", grad_csv);
  write_manifest(dir, cfg, {"gradcheck.csv", "exact_gradients.csv"});
  return {dir / "gradcheck.csv", dir / "exact_gradients.csv", dir / "manifest.json"};
}

std::vector<std::filesystem::path> run_train(const ExperimentConfig& cfg, int workers) {
  const CoagentNetwork net = cfg.build_network();
  std::string csv = "trial,episode,return\n";
  std::vector<TrainResult> results(static_cast<size_t>(cfg.trials));
  parallel_chunks(cfg.trials, workers, [&](long trial) {
    TrainConfig tc = cfg.train_config;
    tc.seed = derive_seed(cfg.seed, static_cast<uint64_t>(trial));
    results[static_cast<size_t>(trial)] = train(cfg.mdp, net, tc);
  });
  for (int trial = 0; trial < cfg.trials; ++trial)
    for (size_t ep = 0; ep < results[static_cast<size_t>(trial)].returns.size(); ++ep)
      csv += std::to_string(trial) + "," + std::to_string(ep) + "," +
             format_double(results[static_cast<size_t>(trial)].returns[ep]) + "\n";

  const std::filesystem::path dir(cfg.output);
  std::filesystem::create_directories(dir);
  write_file(dir / "curve.csv", csv);
  write_manifest(dir, cfg, {"curve.csv"});
  return {dir / "curve.csv", dir / "manifest.json"};
}

std::vector<std::filesystem::path> run_comdp_verify(const ExperimentConfig& cfg, int) {
  const CoagentNetwork net = cfg.build_network();
  Rng rng(derive_seed(cfg.seed, 7));
  std::string report;
  for (int draw = 0; draw < cfg.verify.theta_draws; ++draw) {
    const NetworkParams params = draw == 0 ? zero_params(net)
                                           : random_params(net, cfg.verify.theta_scale, rng);
    for (int i = 0; i < net.size(); ++i) {
      report += "draw=" + std::to_string(draw) + " coagent=" + std::to_string(i) + "\n";
      report += verify_properties(cfg.mdp, net, params, i, cfg.verify.horizon,
                                  cfg.verify.tolerance)
                    .to_text();
      const CoMdp comdp = build_comdp(cfg.mdp, net, params, i);
      const auto og = comdp_objective_and_gradient(comdp, net, params);
      const double j = exact_network_objective(cfg.mdp, net, params);
      report += "objective_equality J=" + format_double(j) +
                " J_i=" + format_double(og.objective) +
                " deviation=" + format_double(std::abs(j - og.objective)) +
                (std::abs(j - og.objective) < cfg.verify.tolerance ? " pass" : " fail") + "\n";
    }
  }
  const std::filesystem::path dir(cfg.output);
  std::filesystem::create_directories(dir);
  write_file(dir / "comdp_report.txt", report);
  write_manifest(dir, cfg, {"comdp_report.txt"});
  return {dir / "comdp_report.txt", dir / "manifest.json"};
}

std::vector<std::filesystem::path> run_reduce_verify(const ExperimentConfig& cfg, int) {
  const CoagentNetwork net = cfg.build_network();
  const SyncNetwork sync = build_sync_network(net);
  Rng rng(derive_seed(cfg.seed, 11));
  std::string report;
  for (int draw = 0; draw < cfg.verify.theta_draws; ++draw) {
    const NetworkParams params = draw == 0 ? zero_params(net)
                                           : random_params(net, cfg.verify.theta_scale, rng);
    const auto behavior = verify_behavior_equivalence(net, sync, params, cfg.verify.tolerance);
    report += "draw=" + std::to_string(draw) +
              " check=behavior max_deviation=" + format_double(behavior.max_deviation) +
              (behavior.pass ? " pass" : " fail") + "\n";
    const auto objective = verify_objective_equivalence(cfg.mdp, net, params,
                                                        cfg.verify.tolerance);
    report += "draw=" + std::to_string(draw) +
              " check=objective J=" + format_double(objective.j_async) +
              " J_reduced=" + format_double(objective.j_reduced) +
              " deviation=" + format_double(objective.deviation) +
              (objective.pass ? " pass" : " fail") + "\n";
  }
  const std::filesystem::path dir(cfg.output);
  std::filesystem::create_directories(dir);
  write_file(dir / "reduce_report.txt", report);
  write_manifest(dir, cfg, {"reduce_report.txt"});
  return {dir / "reduce_report.txt", dir / "manifest.json"};
}

std::vector<std::filesystem::path> run_option_critic(const ExperimentConfig& cfg, int workers) {
  const OptionCriticNet oc = build_option_critic(cfg.mdp, cfg.option_critic.n_options);
  Rng rng(derive_seed(cfg.seed, 13));
  std::string report;
  for (int draw = 0; draw < cfg.option_critic.theta_draws; ++draw) {
    const NetworkParams params =
        draw == 0 ? zero_params(oc.net) : random_params(oc.net, cfg.option_critic.theta_scale, rng);
    const OptionValueTables tables = exact_option_tables(cfg.mdp, oc, params);
    const GradientVector generic = exact_gradient(cfg.mdp, oc.net, params);

    const Eigen::VectorXd qbeta =
        termination_gradient(tables, oc, params, TerminationForm::QBeta);
    const Eigen::VectorXd adv =
        termination_gradient(tables, oc, params, TerminationForm::Advantage);
    const Eigen::VectorXd intra = intra_option_gradient(tables, oc, params);

    auto dev = [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
      return (a - b).cwiseAbs().maxCoeff();
    };
    report += "draw=" + std::to_string(draw) +
              " check=termination_forms deviation=" + format_double(dev(qbeta, adv)) + "\n";
    report += "draw=" + std::to_string(draw) +
              " check=intra_vs_generic deviation=" +
              format_double(dev(intra, generic.blocks[oc.intra_id])) + "\n";
    report += "draw=" + std::to_string(draw) +
              " check=termination_vs_generic deviation=" +
              format_double(dev(qbeta, generic.blocks[oc.beta_id])) + "\n";

    if (cfg.option_critic.mc_episodes > 0) {
      McBatchRequest req;
      req.episodes = cfg.option_critic.mc_episodes;
      req.horizon = cfg.option_critic.horizon;
      req.seed = derive_seed(cfg.seed, 1000 + static_cast<uint64_t>(draw));
      req.workers = workers;
      const McBatchResult mc = sample_mc_gradient(cfg.mdp, oc.net, params, req);
      const Eigen::VectorXd& mc_mu = mc.mean.blocks[oc.pol_over_options_id];
      const Eigen::VectorXd& var_mu = mc.variance.blocks[oc.pol_over_options_id];
      const Eigen::VectorXd& exact_mu = generic.blocks[oc.pol_over_options_id];
      double worst_z = 0.0;
      for (long k = 0; k < mc_mu.size(); ++k) {
        const double se =
            std::sqrt(var_mu[k] / static_cast<double>(cfg.option_critic.mc_episodes));
        if (se > 0.0) worst_z = std::max(worst_z, std::abs(mc_mu[k] - exact_mu[k]) / se);
      }
      report += "draw=" + std::to_string(draw) + " check=mu_mc_vs_exact episodes=" +
                std::to_string(cfg.option_critic.mc_episodes) +
                " worst_z=" + format_double(worst_z) + "\n";
    }
  }
  const std::filesystem::path dir(cfg.output);
  std::filesystem::create_directories(dir);
  write_file(dir / "option_critic_report.txt", report);
  write_manifest(dir, cfg, {"option_critic_report.txt"});
  return {dir / "option_critic_report.txt", dir / "manifest.json"};
}

}  // namespace

std::vector<std::filesystem::path> run_experiment(const ExperimentConfig& config, int workers) {
  switch (config.experiment) {
    case ExperimentKind::GradCheck:
      return run_gradcheck(config, workers);
    case ExperimentKind::Train:
      return run_train(config, workers);
    case ExperimentKind::ComdpVerify:
      return run_comdp_verify(config, workers);
    case ExperimentKind::ReduceVerify:
      return run_reduce_verify(config, workers);
    case ExperimentKind::OptionCritic:
      return run_option_critic(config, workers);
  }
  throw std::invalid_argument("unknown experiment kind");
}

}  // namespace coagent
