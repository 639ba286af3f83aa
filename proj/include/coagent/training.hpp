#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "coagent/network.hpp"
#include "coagent/tabular_mdp.hpp"

namespace coagent {

enum class Algorithm { Reinforce, ActorCriticTraces };
enum class StepSchedule { Constant, Harmonic };

struct TrainConfig {
  Algorithm algorithm = Algorithm::Reinforce;
  std::vector<double> actor_steps;  // per parameter block
  double critic_step = 0.0;
  double trace_decay = 0.0;  // lambda
  int episodes = 0;
  StepSchedule schedule = StepSchedule::Constant;
  double harmonic_a = 1.0;  // alpha_t = a / (b + t), t = episode index
  double harmonic_b = 1.0;
  uint64_t seed = 0;
  int n_atomic = 1;
  int horizon = 1000;

  void validate(const CoagentNetwork& network) const;
  double schedule_factor(int episode) const;
};

/// Tabular state-value critic plus eligibility traces for the critic and
/// each coagent block. Traces reset at episode start.
struct CriticState {
  Eigen::VectorXd values;        // per live env state
  Eigen::VectorXd critic_trace;  // per live env state
  std::vector<Eigen::MatrixXd> actor_traces;

  static CriticState zero(const TabularMdp& mdp, const CoagentNetwork& network);
  void reset_traces();
};

/// REINFORCE-style update from one on-policy episode:
/// theta_i += alpha_i * sum_t E^i_t gamma^t G_t dln pi_i / dtheta_i.
void reinforce_update(NetworkParams& params, const CoagentNetwork& network,
                      const AtomicTrajectory& trajectory, std::span<const double> step_sizes);

/// One environment-update step's worth of transition data.
struct TransitionRecord {
  int state = 0;
  uint32_t exec_mask = 0;
  std::vector<long> rows;
  std::vector<int> outputs;
  double reward = 0.0;
  int next_state = 0;
  bool initial_atomic_step = false;
};

/// Actor-critic with eligibility traces (shared critic): TD error from the
/// critic, accumulating traces masked by execution.
void actor_critic_step(NetworkParams& params, CriticState& critic, const CoagentNetwork& network,
                       const TabularMdp& mdp, const TransitionRecord& transition,
                       const TrainConfig& config, double schedule_factor);

struct TrainResult {
  std::vector<double> returns;  // undiscounted environment return per episode
  NetworkParams final_params;
  int truncated_episodes = 0;
};

TrainResult train(const TabularMdp& mdp, const CoagentNetwork& network, const TrainConfig& config);

}  // namespace coagent
