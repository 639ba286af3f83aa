#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "coagent/network.hpp"
#include "coagent/tabular_mdp.hpp"

namespace coagent {

/// Exact conditional laws of the coagents before and after coagent i in a
/// synchronous acyclic network: pre(s, u_pre) and post((s, u_pre), u, a).
struct NetworkMarginals {
  int coagent = 0;
  std::vector<int> pre_arities;  // output arities of i's feedforward inputs
  long n_pre = 1;                // product of pre_arities
  Eigen::MatrixXd pre;           // n_states x n_pre
  Eigen::MatrixXd post;          // (n_states * n_pre * n_outputs) x n_actions
  std::vector<uint8_t> post_unreachable;  // rows conditioned on a null event

  long pre_index(std::span<const int> u_pre) const {
    long idx = 0;
    for (size_t k = 0; k < u_pre.size(); ++k) idx = idx * pre_arities[k] + u_pre[k];
    return idx;
  }
  long post_row(int s, long pre_idx, int u, int n_outputs) const {
    return (static_cast<long>(s) * n_pre + pre_idx) * n_outputs + u;
  }
};

NetworkMarginals compute_marginals(const TabularMdp& mdp, const CoagentNetwork& network,
                                   const NetworkParams& params, int i);

/// The conjugate MDP M^i for coagent i: states X = S x U^pre, actions U^i,
/// tables built exactly from (pre, post, P, R). Rows conditioned on events
/// of probability zero are marked unreachable and filled uniformly.
struct CoMdp {
  int coagent = 0;
  int n_base_states = 0;
  long n_pre = 1;
  std::vector<int> pre_arities;
  long n_states = 0;  // n_base_states * n_pre
  int n_outputs = 0;
  std::vector<double> reward_support;
  double discount = 1.0;

  std::vector<double> transition;   // [x][u][x']
  std::vector<double> reward_dist;  // [x][u][x'][ri]
  Eigen::VectorXd d0;
  std::vector<uint8_t> terminal;             // lifted from base terminal states
  std::vector<uint8_t> unreachable_xu;       // pi_post condition has probability 0
  std::vector<uint8_t> unreachable_xux;      // reward ratio denominator is 0

  int n_rewards() const { return static_cast<int>(reward_support.size()); }
  long x_index(int s, long pre_idx) const { return static_cast<long>(s) * n_pre + pre_idx; }
  double p(long x, int u, long x2) const {
    return transition[(static_cast<size_t>(x) * n_outputs + u) * n_states + x2];
  }
  double rprob(long x, int u, long x2, int ri) const {
    return reward_dist[((static_cast<size_t>(x) * n_outputs + u) * n_states + x2) * n_rewards() +
                       ri];
  }
  double mean_reward(long x, int u, long x2) const {
    double m = 0.0;
    for (int ri = 0; ri < n_rewards(); ++ri) m += rprob(x, u, x2, ri) * reward_support[ri];
    return m;
  }
  /// The coagent's policy over outputs at CoMDP state x (Assumption 1: the
  /// same table drives both the network and the CoMDP).
  Eigen::VectorXd policy(const CoagentNetwork& network, const NetworkParams& params, long x) const;
};

CoMdp build_comdp(const TabularMdp& mdp, const CoagentNetwork& network,
                  const NetworkParams& params, int i);

/// Numeric re-check of Appendix B: Lemma 1 stochasticity plus Properties
/// 1-10, by exact enumeration of the network's joint chain and the CoMDP
/// chain for t = 0..horizon.
struct PropertyCheck {
  int id = 0;
  std::string name;
  double max_deviation = 0.0;
  bool pass = false;
};

struct PropertyReport {
  std::vector<PropertyCheck> checks;
  double tol = 0.0;
  bool all_pass() const {
    for (const auto& c : checks)
      if (!c.pass) return false;
    return true;
  }
  std::string to_text() const;  // "property=<id> name=... max_deviation=... pass|fail"
};

PropertyReport verify_properties(const TabularMdp& mdp, const CoagentNetwork& network,
                                 const NetworkParams& params, int i, int horizon, double tol);

/// J_i and dJ_i/dtheta_i on the CoMDP via exact linear solves (value,
/// action-value, and discounted occupancy), summed in the policy-gradient
/// form. Independent of the reduction-based route.
struct CoMdpObjectiveGradient {
  double objective = 0.0;
  Eigen::VectorXd gradient;  // flattened (row, output)
};

CoMdpObjectiveGradient comdp_objective_and_gradient(const CoMdp& comdp,
                                                    const CoagentNetwork& network,
                                                    const NetworkParams& params);

}  // namespace coagent
