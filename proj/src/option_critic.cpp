#include "coagent/option_critic.hpp"

#include <cmath>
#include <deque>

#include "coagent/errors.hpp"
#include "coagent/gradients.hpp"

namespace coagent {

OptionCriticNet build_option_critic(const TabularMdp& mdp, int n_options) {
  if (n_options < 1) throw std::invalid_argument("option critic: n_options must be >= 1");
  OptionCriticNet oc;
  oc.n_options = n_options;

  CoagentSpec beta;
  beta.uses_state = true;
  beta.recurrent_inputs = {1};
  beta.output_arity = 2;
  beta.execution = ExecutionFn::always();
  beta.forced_initial_output = 1;  // a fresh option is always selected at t=0

  CoagentSpec pol_over_options;
  pol_over_options.uses_state = true;
  pol_over_options.feedforward_inputs = {0};
  pol_over_options.output_arity = n_options;
  pol_over_options.execution = ExecutionFn::gated(0);

  CoagentSpec intra;
  intra.uses_state = true;
  intra.feedforward_inputs = {1};
  intra.output_arity = mdp.n_actions;
  intra.execution = ExecutionFn::always();

  oc.net = make_network(mdp, {beta, pol_over_options, intra}, 2);
  return oc;
}

namespace {

struct OptionPolicies {
  int n_options = 0;
  Eigen::MatrixXd beta_term;   // live s x option: Pr(e=1) = terminate
  Eigen::MatrixXd fresh;       // live s x option: pi_Omega((s, e=1), .)
  Eigen::MatrixXd intra;       // (live s * option) x action
};

OptionPolicies evaluate_policies(const TabularMdp& mdp, const OptionCriticNet& oc,
                                 const NetworkParams& params) {
  OptionPolicies p;
  const int L = mdp.n_live();
  const int W = oc.n_options;
  p.n_options = W;
  p.beta_term.resize(L, W);
  p.fresh.resize(L, W);
  p.intra.resize(static_cast<long>(L) * W, mdp.n_actions);
  for (int ls = 0; ls < L; ++ls) {
    for (int w = 0; w < W; ++w) {
      const Eigen::VectorXd b = softmax_row(params.blocks[oc.beta_id],
                                            static_cast<long>(ls) * W + w);
      p.beta_term(ls, w) = b[1];
      p.intra.row(static_cast<long>(ls) * W + w) =
          softmax_row(params.blocks[oc.intra_id], static_cast<long>(ls) * W + w).transpose();
    }
    const Eigen::VectorXd f =
        softmax_row(params.blocks[oc.pol_over_options_id], static_cast<long>(ls) * 2 + 1);
    p.fresh.row(ls) = f.transpose();
  }
  return p;
}

void check_absorbing_pairs(const Eigen::MatrixXd& kernel, double discount) {
  if (discount < 1.0) return;
  const long n = kernel.rows();
  std::vector<uint8_t> reaches(static_cast<size_t>(n), 0);
  std::deque<long> frontier;
  for (long k = 0; k < n; ++k)
    if (kernel.row(k).sum() < 1.0 - 1e-13) {
      reaches[static_cast<size_t>(k)] = 1;
      frontier.push_back(k);
    }
  while (!frontier.empty()) {
    const long t = frontier.front();
    frontier.pop_front();
    for (long k = 0; k < n; ++k)
      if (!reaches[static_cast<size_t>(k)] && kernel(k, t) > 0.0) {
        reaches[static_cast<size_t>(k)] = 1;
        frontier.push_back(k);
      }
  }
  for (long k = 0; k < n; ++k)
    if (!reaches[static_cast<size_t>(k)])
      throw SingularSystemError("option tables: discount-1 state-option chain is not absorbing");
}

}  // namespace

OptionValueTables exact_option_tables(const TabularMdp& mdp, const OptionCriticNet& oc,
                                      const NetworkParams& params) {
  const OptionPolicies pol = evaluate_policies(mdp, oc, params);
  const int L = mdp.n_live();
  const int W = oc.n_options;
  const long n = static_cast<long>(L) * W;
  const double gamma = mdp.discount;

  // Option-label law at a step: Pr(omega_t = wc | s, omega_prev = wp).
  auto label_prob = [&](int ls, int wp, int wc) {
    double pr = pol.beta_term(ls, wp) * pol.fresh(ls, wc);
    if (wc == wp) pr += 1.0 - pol.beta_term(ls, wp);
    return pr;
  };

  // Chain over (s, omega_t) pairs: act with pi_omega, transition, then the
  // next step's termination decision relabels the option.
  Eigen::MatrixXd kernel = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd reward = Eigen::VectorXd::Zero(n);
  for (int ls = 0; ls < L; ++ls) {
    const int s = mdp.live_states[ls];
    for (int wc = 0; wc < W; ++wc) {
      const long row = static_cast<long>(ls) * W + wc;
      for (int a = 0; a < mdp.n_actions; ++a) {
        const double pa = pol.intra(row, a);
        if (pa == 0.0) continue;
        for (int s2 = 0; s2 < mdp.n_states; ++s2) {
          const double pr = pa * mdp.p(s, a, s2);
          if (pr == 0.0) continue;
          reward[row] += pr * mdp.mean_reward(s, a, s2);
          const int ls2 = mdp.live_row[s2];
          if (ls2 < 0) continue;
          for (int wc2 = 0; wc2 < W; ++wc2)
            kernel(row, static_cast<long>(ls2) * W + wc2) +=
                pr * label_prob(ls2, wc, wc2);
        }
      }
    }
  }
  check_absorbing_pairs(kernel, gamma);

  // u(s, omega_t) = E[G_t | S_t = s, omega_t], the value after the
  // termination decision but before the action.
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(eye - gamma * kernel);
  const Eigen::VectorXd u_val = lu.solve(reward);
  if (!u_val.allFinite()) throw SingularSystemError("option tables: singular value system");

  OptionValueTables t;
  t.n_options = W;
  t.q_u.resize(n, mdp.n_actions);
  t.q_omega.resize(L, W);
  t.v_omega.resize(L);
  t.a_omega.resize(L, W);
  t.q_beta.resize(n, 2);

  // w(s', omega) = E[G | arriving at s' with option omega still current],
  // i.e. the pre-termination value.
  Eigen::MatrixXd w_val(L, W);
  for (int ls = 0; ls < L; ++ls)
    for (int wp = 0; wp < W; ++wp) {
      double v = 0.0;
      for (int wc = 0; wc < W; ++wc)
        v += label_prob(ls, wp, wc) * u_val[static_cast<long>(ls) * W + wc];
      w_val(ls, wp) = v;
    }

  for (int ls = 0; ls < L; ++ls) {
    const int s = mdp.live_states[ls];
    for (int wc = 0; wc < W; ++wc) {
      const long row = static_cast<long>(ls) * W + wc;
      for (int a = 0; a < mdp.n_actions; ++a) {
        double q = 0.0;
        for (int s2 = 0; s2 < mdp.n_states; ++s2) {
          const double pr = mdp.p(s, a, s2);
          if (pr == 0.0) continue;
          double cont = mdp.mean_reward(s, a, s2);
          const int ls2 = mdp.live_row[s2];
          if (ls2 >= 0) cont += gamma * w_val(ls2, wc);
          q += pr * cont;
        }
        t.q_u(row, a) = q;
      }
      t.q_omega(ls, wc) = pol.intra.row(row).dot(t.q_u.row(row));
    }
    t.v_omega[ls] = pol.fresh.row(ls).dot(t.q_omega.row(ls));
    for (int wc = 0; wc < W; ++wc) {
      t.a_omega(ls, wc) = t.q_omega(ls, wc) - t.v_omega[ls];
      const long row = static_cast<long>(ls) * W + wc;
      t.q_beta(row, 0) = t.v_omega[ls];       // terminate: fresh option
      t.q_beta(row, 1) = t.q_omega(ls, wc);   // continue current option
    }
  }

  // Occupancies. xi_0(s, omega_0): the forced initial selection.
  Eigen::VectorXd xi0 = Eigen::VectorXd::Zero(n);
  for (int ls = 0; ls < L; ++ls) {
    const double d = mdp.initial_dist[mdp.live_states[ls]];
    if (d == 0.0) continue;
    for (int wc = 0; wc < W; ++wc)
      xi0[static_cast<long>(ls) * W + wc] = d * pol.fresh(ls, wc);
  }
  Eigen::PartialPivLU<Eigen::MatrixXd> lut(eye - gamma * kernel.transpose());
  const Eigen::VectorXd d_cur = lut.solve(xi0);
  if (!d_cur.allFinite()) throw SingularSystemError("option tables: singular occupancy system");
  t.d_current.resize(L, W);
  for (int ls = 0; ls < L; ++ls)
    for (int wc = 0; wc < W; ++wc) t.d_current(ls, wc) = d_cur[static_cast<long>(ls) * W + wc];

  // d_prev(s', omega) = gamma * pushforward of d_current through one
  // environment step: the termination coagent sees (s_t, omega_{t-1}) for
  // t >= 1 only (its t = 0 output is forced).
  t.d_prev = Eigen::MatrixXd::Zero(L, W);
  for (int ls = 0; ls < L; ++ls) {
    const int s = mdp.live_states[ls];
    for (int wc = 0; wc < W; ++wc) {
      const double mass = t.d_current(ls, wc);
      if (mass == 0.0) continue;
      const long row = static_cast<long>(ls) * W + wc;
      for (int a = 0; a < mdp.n_actions; ++a) {
        const double pa = pol.intra(row, a);
        if (pa == 0.0) continue;
        for (int s2 = 0; s2 < mdp.n_states; ++s2) {
          const int ls2 = mdp.live_row[s2];
          if (ls2 < 0) continue;
          t.d_prev(ls2, wc) += gamma * mass * pa * mdp.p(s, a, s2);
        }
      }
    }
  }
  return t;
}

Eigen::VectorXd intra_option_gradient(const OptionValueTables& tables, const OptionCriticNet& oc,
                                      const NetworkParams& params) {
  const auto& table = params.blocks[oc.intra_id];
  const int W = tables.n_options;
  const int L = static_cast<int>(tables.d_current.rows());
  const int A = static_cast<int>(table.cols());
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(table.size());
  for (int ls = 0; ls < L; ++ls)
    for (int w = 0; w < W; ++w) {
      const double mass = tables.d_current(ls, w);
      if (mass == 0.0) continue;
      const long row = static_cast<long>(ls) * W + w;
      const Eigen::VectorXd probs = softmax_row(table, row);
      const Eigen::VectorXd q = tables.q_u.row(row).transpose();
      const double mean_q = probs.dot(q);
      for (int a = 0; a < A; ++a) grad[row * A + a] += mass * probs[a] * (q[a] - mean_q);
    }
  return grad;
}

TerminationForm termination_form_from_string(const std::string& name) {
  if (name == "qbeta") return TerminationForm::QBeta;
  if (name == "advantage") return TerminationForm::Advantage;
  throw std::invalid_argument("unknown termination gradient form: " + name);
}

Eigen::VectorXd termination_gradient(const OptionValueTables& tables, const OptionCriticNet& oc,
                                     const NetworkParams& params, TerminationForm form) {
  const auto& table = params.blocks[oc.beta_id];
  const int W = tables.n_options;
  const int L = static_cast<int>(tables.d_prev.rows());
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(table.size());
  for (int ls = 0; ls < L; ++ls)
    for (int w = 0; w < W; ++w) {
      const double mass = tables.d_prev(ls, w);
      if (mass == 0.0) continue;
      const long row = static_cast<long>(ls) * W + w;
      const Eigen::VectorXd probs = softmax_row(table, row);  // over e in {0,1}
      if (form == TerminationForm::QBeta) {
        // Values per network output e: e=1 terminates (V), e=0 continues.
        Eigen::Vector2d q_by_e(tables.q_beta(row, 1), tables.q_beta(row, 0));
        const double mean_q = probs.dot(q_by_e);
        for (int e = 0; e < 2; ++e)
          grad[row * 2 + e] += mass * probs[e] * (q_by_e[e] - mean_q);
      } else {
        // -d(x) * dbeta(x, 0)/dtheta * A; beta(x,0) is the termination
        // probability, i.e. Pr(e=1).
        const double adv = tables.a_omega(ls, w);
        const double p1 = probs[1];
        grad[row * 2 + 0] -= mass * adv * p1 * (0.0 - probs[0]);
        grad[row * 2 + 1] -= mass * adv * p1 * (1.0 - probs[1]);
      }
    }
  return grad;
}

Eigen::VectorXd option_policy_gradient(std::span<const AtomicTrajectory> trajectories,
                                       const OptionCriticNet& oc, const NetworkParams& params) {
  return mc_local_gradient(trajectories, oc.net, params, oc.pol_over_options_id);
}

}  // namespace coagent
