#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <utility>
#include <vector>

#include "coagent/errors.hpp"
#include "coagent/rng.hpp"

namespace coagent {

/// Finite MDP with a distributional reward over a finite support.
/// Terminal states are absorbing self-loops with reward 0; they are the
/// only states allowed to keep a discount-1 chain summable.
struct TabularMdp {
  int n_states = 0;
  int n_actions = 0;
  std::vector<double> reward_support;
  std::vector<double> transition;   // [(s * A + a) * S + s2]
  std::vector<double> reward_dist;  // [((s * A + a) * S + s2) * R + ri]
  Eigen::VectorXd initial_dist;
  double discount = 1.0;
  std::vector<uint8_t> terminal;  // per-state flag

  // Dense indexing of non-terminal ("live") states, filled by validate().
  std::vector<int> live_row;     // state -> live index, -1 for terminal
  std::vector<int> live_states;  // live index -> state

  int n_rewards() const { return static_cast<int>(reward_support.size()); }
  int n_live() const { return static_cast<int>(live_states.size()); }
  bool is_terminal(int s) const { return terminal[static_cast<size_t>(s)] != 0; }

  double p(int s, int a, int s2) const {
    return transition[(static_cast<size_t>(s) * n_actions + a) * n_states + s2];
  }
  double& p(int s, int a, int s2) {
    return transition[(static_cast<size_t>(s) * n_actions + a) * n_states + s2];
  }
  double rprob(int s, int a, int s2, int ri) const {
    return reward_dist[((static_cast<size_t>(s) * n_actions + a) * n_states + s2) * n_rewards() +
                       ri];
  }
  double& rprob(int s, int a, int s2, int ri) {
    return reward_dist[((static_cast<size_t>(s) * n_actions + a) * n_states + s2) * n_rewards() +
                       ri];
  }
  double mean_reward(int s, int a, int s2) const {
    double m = 0.0;
    for (int ri = 0; ri < n_rewards(); ++ri) m += rprob(s, a, s2, ri) * reward_support[ri];
    return m;
  }

  /// Checks stochasticity, absorbing-terminal structure and, for
  /// discount 1, that the uniform policy's transient chain is absorbing.
  /// Throws std::invalid_argument on violation. Also fills the live maps.
  void validate();
};

struct Cell {
  int x = 0;
  int y = 0;
};

/// Deterministic four-action gridworld (up/down/left/right). Off-grid moves
/// leave the state unchanged. Every move costs step_reward; the move that
/// enters the goal cell additionally earns goal_reward and lands in an
/// absorbing terminal state appended after the cells.
TabularMdp build_gridworld(int width, int height, Cell start, Cell goal, double step_reward,
                           double goal_reward, double discount = 1.0);

/// One environment transition: s' ~ P(s,a,.), r ~ R(s,a,s',.).
std::pair<int, double> sample_step(const TabularMdp& mdp, int s, int a, Rng& rng);

/// Solves v = r_pi + gamma P_pi v over non-terminal states (terminal values
/// are 0). For discount 1 the chain must be absorbing; otherwise throws
/// SingularSystemError naming the states that cannot reach a terminal.
Eigen::VectorXd exact_state_values(const TabularMdp& mdp, const Eigen::MatrixXd& policy);

/// J(pi) = sum_s d0(s) v(s).
double exact_objective(const TabularMdp& mdp, const Eigen::MatrixXd& policy);

/// Uniform policy matrix (rows for terminal states included, unused).
Eigen::MatrixXd uniform_policy(const TabularMdp& mdp);

/// Max-norm Bellman residual of a value vector under a policy.
double bellman_residual(const TabularMdp& mdp, const Eigen::MatrixXd& policy,
                        const Eigen::VectorXd& values);

}  // namespace coagent
