#pragma once

#include <Eigen/Dense>
#include <span>
#include <string>
#include <vector>

#include "coagent/network.hpp"
#include "coagent/tabular_mdp.hpp"

namespace coagent {

/// The option-critic rendered as a three-coagent network:
///   beta (termination):  inputs s_t and omega_{t-1} (recurrent from the
///                        policy over options); arity 2; executes always.
///   pi_Omega:            inputs s_t and e_t; executes iff e_t = 1 (gated);
///                        outputs the option label.
///   pi_omega:            inputs s_t and omega_t; executes always; outputs
///                        the environment action.
///
/// Output conventions: the termination coagent's output e_t follows the
/// network diagram, e_t = 1 means "pi_Omega executes" (the option
/// terminated and a fresh one is selected); e_t = 0 continues the current
/// option. The gradient formulas below are written with the opposite
/// indexing (termination action u = 0, continuation u = 1), so u = 1 - e
/// throughout. At t = 0 the termination output is forced to 1: an initial
/// option is always selected.
struct OptionCriticNet {
  CoagentNetwork net;
  int n_options = 0;
  int beta_id = 0;
  int pol_over_options_id = 1;
  int intra_id = 2;
};

OptionCriticNet build_option_critic(const TabularMdp& mdp, int n_options);

/// Exact value and occupancy tables of the option-critic process, from
/// linear solves on the (state, option) chain.
struct OptionValueTables {
  int n_options = 0;
  // Discounted weighting of pi_omega's local states (s, omega_t),
  // including the forced initial selection at t = 0.
  Eigen::MatrixXd d_current;  // live state x option
  // Discounted weighting of the termination coagent's local states
  // (s_t, omega_{t-1}) over t >= 1; the t = 0 term is excluded because the
  // initial termination output is forced and carries no score.
  Eigen::MatrixXd d_prev;  // live state x option
  Eigen::MatrixXd q_u;     // (live state * option) x action
  Eigen::MatrixXd q_omega;  // live state x option
  Eigen::VectorXd v_omega;  // live state
  Eigen::MatrixXd a_omega;  // q_omega - v_omega
  // Termination action values in the formulas' indexing:
  // column 0 = terminate (fresh option) = V_Omega(s);
  // column 1 = continue = Q_Omega(s, omega).
  Eigen::MatrixXd q_beta;  // (live state * option) x 2
};

OptionValueTables exact_option_tables(const TabularMdp& mdp, const OptionCriticNet& oc,
                                      const NetworkParams& params);

/// d J / d theta = sum_x d_current(x) sum_a dpi_omega(x,a) Q_U(x,a),
/// flattened over pi_omega's table.
Eigen::VectorXd intra_option_gradient(const OptionValueTables& tables, const OptionCriticNet& oc,
                                      const NetworkParams& params);

enum class TerminationForm { QBeta, Advantage };
TerminationForm termination_form_from_string(const std::string& name);

/// d J / d vartheta in either the two-action Q_beta form or the advantage
/// form; the two agree identically for a two-output softmax.
Eigen::VectorXd termination_gradient(const OptionValueTables& tables, const OptionCriticNet& oc,
                                     const NetworkParams& params, TerminationForm form);

/// d J / d mu: the asynchronous Monte Carlo estimator restricted to
/// pi_Omega (a delegation to the generic local-gradient machinery).
Eigen::VectorXd option_policy_gradient(std::span<const AtomicTrajectory> trajectories,
                                       const OptionCriticNet& oc, const NetworkParams& params);

}  // namespace coagent
