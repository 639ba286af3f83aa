#include "coagent/training.hpp"

#include <cmath>

#include "coagent/gradients.hpp"

namespace coagent {

void TrainConfig::validate(const CoagentNetwork& network) const {
  if (static_cast<int>(actor_steps.size()) != network.n_blocks())
    throw std::invalid_argument("train config: one actor step size per parameter block required");
  for (double a : actor_steps)
    if (a < 0.0) throw std::invalid_argument("train config: negative actor step size");
  if (algorithm == Algorithm::ActorCriticTraces && critic_step <= 0.0)
    throw std::invalid_argument("train config: critic step size must be positive");
  if (trace_decay < 0.0 || trace_decay > 1.0)
    throw std::invalid_argument("train config: lambda out of [0,1]");
  if (episodes <= 0) throw std::invalid_argument("train config: episodes must be positive");
  if (schedule == StepSchedule::Harmonic && (harmonic_a <= 0.0 || harmonic_b <= 0.0))
    throw std::invalid_argument("train config: harmonic schedule needs positive a, b");
  if (n_atomic < 1) throw std::invalid_argument("train config: n_atomic must be >= 1");
  if (horizon < 1) throw std::invalid_argument("train config: horizon must be >= 1");
}

double TrainConfig::schedule_factor(int episode) const {
  // Harmonic a/(b+t) satisfies the Robbins-Monro conditions by form.
  if (schedule == StepSchedule::Harmonic)
    return harmonic_a / (harmonic_b + static_cast<double>(episode));
  return 1.0;
}

CriticState CriticState::zero(const TabularMdp& mdp, const CoagentNetwork& network) {
  CriticState c;
  c.values = Eigen::VectorXd::Zero(mdp.n_live());
  c.critic_trace = Eigen::VectorXd::Zero(mdp.n_live());
  c.actor_traces.reserve(network.block_dims.size());
  for (const auto& [rows, arity] : network.block_dims)
    c.actor_traces.emplace_back(Eigen::MatrixXd::Zero(rows, arity));
  return c;
}

void CriticState::reset_traces() {
  critic_trace.setZero();
  for (auto& t : actor_traces) t.setZero();
}

void reinforce_update(NetworkParams& params, const CoagentNetwork& network,
                      const AtomicTrajectory& trajectory, std::span<const double> step_sizes) {
  if (trajectory.params_hash != params.hash())
    throw std::invalid_argument("reinforce_update: off-policy trajectory");
  const PolicyCache cache = build_policy_cache(network, params);
  std::vector<Eigen::MatrixXd> delta;
  delta.reserve(network.block_dims.size());
  for (const auto& [rows, arity] : network.block_dims)
    delta.emplace_back(Eigen::MatrixXd::Zero(rows, arity));
  accumulate_trajectory_gradient(network, cache, trajectory, 1.0, delta);
  for (size_t b = 0; b < delta.size(); ++b) params.blocks[b] += step_sizes[b] * delta[b];
}

void actor_critic_step(NetworkParams& params, CriticState& critic, const CoagentNetwork& network,
                       const TabularMdp& mdp, const TransitionRecord& transition,
                       const TrainConfig& config, double schedule_factor) {
  const int live_s = mdp.live_row[transition.state];
  const int live_s2 = mdp.live_row[transition.next_state];
  const double v_s = critic.values[live_s];
  const double v_s2 = live_s2 >= 0 ? critic.values[live_s2] : 0.0;
  const double delta = transition.reward + mdp.discount * v_s2 - v_s;

  const double gl = mdp.discount * config.trace_decay;
  critic.critic_trace *= gl;
  critic.critic_trace[live_s] += 1.0;
  critic.values += (config.critic_step * schedule_factor * delta) * critic.critic_trace;

  for (auto& t : critic.actor_traces) t *= gl;
  for (int i = 0; i < network.size(); ++i) {
    if (((transition.exec_mask >> i) & 1u) == 0) continue;
    const auto& c = network.coagents[i];
    if (c.param_block < 0 || c.policy_kind != PolicyKind::Softmax) continue;
    if (transition.initial_atomic_step && c.forced_initial_output) continue;
    const long row = transition.rows[i];
    auto trace_row = critic.actor_traces[c.param_block].row(row);
    trace_row -= softmax_row(params.blocks[c.param_block], row).transpose();
    trace_row[transition.outputs[i]] += 1.0;
  }
  for (size_t b = 0; b < params.blocks.size(); ++b)
    params.blocks[b] +=
        (config.actor_steps[b] * schedule_factor * delta) * critic.actor_traces[b];
}

TrainResult train(const TabularMdp& mdp, const CoagentNetwork& network,
                  const TrainConfig& config) {
  config.validate(network);
  TrainResult result;
  result.final_params = zero_params(network);
  NetworkParams& params = result.final_params;
  CriticState critic = CriticState::zero(mdp, network);
  Rng rng(config.seed);

  for (int ep = 0; ep < config.episodes; ++ep) {
    const double factor = config.schedule_factor(ep);
    if (config.algorithm == Algorithm::Reinforce) {
      const AtomicTrajectory traj =
          run_episode(mdp, network, params, config.n_atomic, config.horizon, rng);
      if (traj.truncated) ++result.truncated_episodes;
      result.returns.push_back(traj.undiscounted_return());
      std::vector<double> alphas(config.actor_steps);
      for (double& a : alphas) a *= factor;
      reinforce_update(params, network, traj, alphas);
      continue;
    }

    // Actor-critic runs online: update on every environment-update step.
    critic.reset_traces();
    std::vector<int> u_prev(network.size());
    for (int i = 0; i < network.size(); ++i) {
      const auto& c = network.coagents[i];
      u_prev[i] = c.init_dist.empty() ? rng.uniform_int(c.output_arity)
                                      : rng.categorical(c.init_dist);
    }
    int s = rng.categorical({mdp.initial_dist.data(), static_cast<size_t>(mdp.n_states)});
    double ep_return = 0.0;
    int env_steps = 0;
    bool truncated = false;
    for (long t = 0; !mdp.is_terminal(s); ++t) {
      const StepResult step = atomic_step(network, params, s, u_prev, rng, t == 0);
      if ((t + 1) % config.n_atomic == 0) {
        const int a = step.outputs[network.action_coagent];
        const auto [s2, r] = sample_step(mdp, s, a, rng);
        TransitionRecord rec;
        rec.state = s;
        rec.exec_mask = step.exec_mask;
        rec.rows = step.rows;
        rec.outputs = step.outputs;
        rec.reward = r;
        rec.next_state = s2;
        rec.initial_atomic_step = t == 0;
        actor_critic_step(params, critic, network, mdp, rec, config, factor);
        ep_return += r;
        s = s2;
        ++env_steps;
      }
      u_prev = step.outputs;
      if (env_steps >= config.horizon && !mdp.is_terminal(s)) {
        truncated = true;
        break;
      }
    }
    if (truncated) ++result.truncated_episodes;
    result.returns.push_back(ep_return);
  }
  return result;
}

}  // namespace coagent
