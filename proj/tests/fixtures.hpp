#pragma once

#include "coagent/network.hpp"
#include "coagent/tabular_mdp.hpp"

namespace coagent::fixtures {

/// Two-state, two-action MDP with stochastic dynamics and rewards; no
/// terminal states, discount < 1.
inline TabularMdp two_state(double discount = 0.9) {
  TabularMdp mdp;
  mdp.n_states = 2;
  mdp.n_actions = 2;
  mdp.reward_support = {0.0, 1.0};
  mdp.discount = discount;
  mdp.terminal.assign(2, 0);
  mdp.initial_dist = Eigen::VectorXd::Zero(2);
  mdp.initial_dist[0] = 0.75;
  mdp.initial_dist[1] = 0.25;
  mdp.transition.assign(8, 0.0);
  mdp.reward_dist.assign(16, 0.0);
  mdp.p(0, 0, 0) = 0.9;
  mdp.p(0, 0, 1) = 0.1;
  mdp.p(0, 1, 0) = 0.3;
  mdp.p(0, 1, 1) = 0.7;
  mdp.p(1, 0, 0) = 0.6;
  mdp.p(1, 0, 1) = 0.4;
  mdp.p(1, 1, 0) = 0.2;
  mdp.p(1, 1, 1) = 0.8;
  for (int s = 0; s < 2; ++s)
    for (int a = 0; a < 2; ++a)
      for (int s2 = 0; s2 < 2; ++s2) {
        if (s2 == 1) {
          mdp.rprob(s, a, s2, 0) = 0.25;
          mdp.rprob(s, a, s2, 1) = 0.75;
        } else {
          mdp.rprob(s, a, s2, 0) = 1.0;
        }
      }
  mdp.validate();
  return mdp;
}

/// Three-state, two-action MDP with a terminal state; usable at gamma = 1.
inline TabularMdp three_state_absorbing(double discount = 1.0) {
  TabularMdp mdp;
  mdp.n_states = 3;
  mdp.n_actions = 2;
  mdp.reward_support = {-1.0, 0.0, 2.0};
  mdp.discount = discount;
  mdp.terminal = {0, 0, 1};
  mdp.initial_dist = Eigen::VectorXd::Zero(3);
  mdp.initial_dist[0] = 1.0;
  mdp.transition.assign(3 * 2 * 3, 0.0);
  mdp.reward_dist.assign(3 * 2 * 3 * 3, 0.0);
  auto set = [&](int s, int a, int s2, double pr, int ri) {
    mdp.p(s, a, s2) = pr;
    mdp.rprob(s, a, s2, ri) = 1.0;
  };
  set(0, 0, 1, 0.8, 0);
  set(0, 0, 0, 0.2, 0);
  set(0, 1, 2, 0.5, 2);
  mdp.p(0, 1, 0) = 0.5;
  mdp.rprob(0, 1, 0, 0) = 1.0;
  set(1, 0, 2, 1.0, 2);
  set(1, 1, 0, 0.6, 0);
  mdp.p(1, 1, 2) = 0.4;
  mdp.rprob(1, 1, 2, 1) = 1.0;
  set(2, 0, 2, 1.0, 1);
  set(2, 1, 2, 1.0, 1);
  for (int s = 0; s < 3; ++s)
    for (int a = 0; a < 2; ++a)
      for (int s2 = 0; s2 < 3; ++s2) {
        double sum = 0.0;
        for (int ri = 0; ri < 3; ++ri) sum += mdp.rprob(s, a, s2, ri);
        if (sum == 0.0) mdp.rprob(s, a, s2, 1) = 1.0;
      }
  mdp.validate();
  return mdp;
}

/// Single softmax coagent reading the state; a flat tabular policy.
inline CoagentNetwork single_coagent(const TabularMdp& mdp, ExecutionFn exec = ExecutionFn::always()) {
  CoagentSpec c;
  c.uses_state = true;
  c.output_arity = mdp.n_actions;
  c.execution = exec;
  return make_network(mdp, {c}, 0);
}

/// Two-coagent chain: a state-reading binary coagent feeding the action
/// coagent (which also sees the state).
inline CoagentNetwork two_coagent_chain(const TabularMdp& mdp,
                                        ExecutionFn exec0 = ExecutionFn::always(),
                                        ExecutionFn exec1 = ExecutionFn::always()) {
  CoagentSpec front;
  front.uses_state = true;
  front.output_arity = 2;
  front.execution = exec0;
  CoagentSpec back;
  back.uses_state = true;
  back.feedforward_inputs = {0};
  back.output_arity = mdp.n_actions;
  back.execution = exec1;
  return make_network(mdp, {front, back}, 1);
}

/// The finite-difference experiment's network: two state-reading binary
/// coagents feeding a third that maps their joint output to the action.
/// On the 3x3 gridworld this is 18 + 18 + 16 = 52 parameters.
inline CoagentNetwork appendix_c_network(const TabularMdp& mdp, double exec_prob = 0.5) {
  CoagentSpec in0;
  in0.uses_state = true;
  in0.output_arity = 2;
  in0.execution = exec_prob >= 1.0 ? ExecutionFn::always() : ExecutionFn::bernoulli(exec_prob);
  CoagentSpec in1 = in0;
  CoagentSpec out;
  out.uses_state = false;
  out.feedforward_inputs = {0, 1};
  out.output_arity = mdp.n_actions;
  out.execution = in0.execution;
  return make_network(mdp, {in0, in1, out}, 2);
}

/// Recurrent variant of the two-coagent chain: the front coagent also sees
/// both coagents' previous outputs.
inline CoagentNetwork recurrent_chain(const TabularMdp& mdp, double exec_prob = 0.5) {
  CoagentSpec front;
  front.uses_state = true;
  front.recurrent_inputs = {0, 1};
  front.output_arity = 2;
  front.execution = ExecutionFn::bernoulli(exec_prob);
  CoagentSpec back;
  back.uses_state = true;
  back.feedforward_inputs = {0};
  back.output_arity = mdp.n_actions;
  back.execution = ExecutionFn::bernoulli(exec_prob);
  return make_network(mdp, {front, back}, 1);
}

}  // namespace coagent::fixtures
