#include "coagent/comdp.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <sstream>

#include "coagent/errors.hpp"

namespace coagent {

namespace {

constexpr double kMass = 1e-12;  // threshold for a conditioning event to exist

void require_synchronous(const CoagentNetwork& network) {
  for (const auto& c : network.coagents) {
    if (!c.recurrent_inputs.empty())
      throw std::invalid_argument(
          "comdp: network has recurrent edges; reduce with async_reduction first");
    if (c.execution.kind != ExecKind::Always)
      throw std::invalid_argument(
          "comdp: network is asynchronous; reduce with async_reduction first");
  }
}

}  // namespace

NetworkMarginals compute_marginals(const TabularMdp& mdp, const CoagentNetwork& network,
                                   const NetworkParams& params, int i) {
  require_synchronous(network);
  const auto& spec = network.coagents[i];
  NetworkMarginals m;
  m.coagent = i;
  for (int src : spec.feedforward_inputs)
    m.pre_arities.push_back(network.coagents[src].output_arity);
  m.n_pre = 1;
  for (int a : m.pre_arities) m.n_pre *= a;
  const int n_u = spec.output_arity;
  const int n_a = mdp.n_actions;

  m.pre = Eigen::MatrixXd::Zero(mdp.n_states, m.n_pre);
  m.post = Eigen::MatrixXd::Zero(static_cast<long>(mdp.n_states) * m.n_pre * n_u, n_a);
  m.post_unreachable.assign(static_cast<size_t>(m.post.rows()), 0);

  Eigen::MatrixXd joint_ua(m.n_pre * n_u, n_a);
  std::vector<int> u_prev(network.size(), 0);
  std::vector<int> pre_vals(spec.feedforward_inputs.size());
  for (int s = 0; s < mdp.n_states; ++s) {
    joint_ua.setZero();
    for_each_joint_outcome(network, params, s, u_prev, false,
                           [&](double prob, uint32_t, std::span<const int> outputs,
                               std::span<const ScoreEntry>) {
                             for (size_t k = 0; k < pre_vals.size(); ++k)
                               pre_vals[k] = outputs[spec.feedforward_inputs[k]];
                             const long pre_idx = m.pre_index(pre_vals);
                             joint_ua(pre_idx * n_u + outputs[i],
                                      outputs[network.action_coagent]) += prob;
                           });
    for (long pre_idx = 0; pre_idx < m.n_pre; ++pre_idx) {
      double pre_mass = 0.0;
      for (int u = 0; u < n_u; ++u) pre_mass += joint_ua.row(pre_idx * n_u + u).sum();
      m.pre(s, pre_idx) = pre_mass;
      for (int u = 0; u < n_u; ++u) {
        const long row = m.post_row(s, pre_idx, u, n_u);
        const double mass = joint_ua.row(pre_idx * n_u + u).sum();
        if (mass > kMass) {
          m.post.row(row) = joint_ua.row(pre_idx * n_u + u) / mass;
        } else {
          m.post.row(row).setConstant(1.0 / n_a);
          m.post_unreachable[static_cast<size_t>(row)] = 1;
        }
      }
    }
  }
  return m;
}

CoMdp build_comdp(const TabularMdp& mdp, const CoagentNetwork& network,
                  const NetworkParams& params, int i) {
  const NetworkMarginals m = compute_marginals(mdp, network, params, i);
  const auto& spec = network.coagents[i];

  CoMdp c;
  c.coagent = i;
  c.n_base_states = mdp.n_states;
  c.n_pre = m.n_pre;
  c.pre_arities = m.pre_arities;
  c.n_states = static_cast<long>(mdp.n_states) * m.n_pre;
  c.n_outputs = spec.output_arity;
  c.reward_support = mdp.reward_support;
  c.discount = mdp.discount;

  const long x_count = c.n_states;
  const int n_u = c.n_outputs;
  const int n_r = c.n_rewards();
  c.transition.assign(static_cast<size_t>(x_count) * n_u * x_count, 0.0);
  c.reward_dist.assign(static_cast<size_t>(x_count) * n_u * x_count * n_r, 0.0);
  c.d0 = Eigen::VectorXd::Zero(x_count);
  c.terminal.assign(static_cast<size_t>(x_count), 0);
  c.unreachable_xu.assign(static_cast<size_t>(x_count) * n_u, 0);
  c.unreachable_xux.assign(static_cast<size_t>(x_count) * n_u * x_count, 0);

  for (int s = 0; s < mdp.n_states; ++s)
    for (long pre = 0; pre < c.n_pre; ++pre) {
      const long x = c.x_index(s, pre);
      c.d0[x] = mdp.initial_dist[s] * m.pre(s, pre);
      if (mdp.is_terminal(s)) c.terminal[static_cast<size_t>(x)] = 1;
    }

  for (int s = 0; s < mdp.n_states; ++s) {
    for (long pre = 0; pre < c.n_pre; ++pre) {
      const long x = c.x_index(s, pre);
      for (int u = 0; u < n_u; ++u) {
        const long post_row = m.post_row(s, pre, u, n_u);
        if (m.post_unreachable[static_cast<size_t>(post_row)])
          c.unreachable_xu[static_cast<size_t>(x) * n_u + u] = 1;
        for (int s2 = 0; s2 < mdp.n_states; ++s2) {
          // Marginal over actions of reaching s2, and the reward mixture.
          double denom = 0.0;
          std::vector<double> rmix(n_r, 0.0);
          for (int a = 0; a < mdp.n_actions; ++a) {
            const double w = mdp.p(s, a, s2) * m.post(post_row, a);
            if (w == 0.0) continue;
            denom += w;
            for (int ri = 0; ri < n_r; ++ri) rmix[ri] += w * mdp.rprob(s, a, s2, ri);
          }
          for (long pre2 = 0; pre2 < c.n_pre; ++pre2) {
            const long x2 = c.x_index(s2, pre2);
            const size_t tidx = (static_cast<size_t>(x) * n_u + u) * x_count + x2;
            c.transition[tidx] = m.pre(s2, pre2) * denom;
            if (denom > kMass) {
              for (int ri = 0; ri < n_r; ++ri)
                c.reward_dist[tidx * n_r + ri] = rmix[ri] / denom;
            } else {
              c.unreachable_xux[tidx] = 1;
              for (int ri = 0; ri < n_r; ++ri) c.reward_dist[tidx * n_r + ri] = 1.0 / n_r;
            }
          }
        }
      }
    }
  }
  return c;
}

Eigen::VectorXd CoMdp::policy(const CoagentNetwork& network, const NetworkParams& params,
                              long x) const {
  const int s = static_cast<int>(x / n_pre);
  if (network.live_row[s] < 0)
    return Eigen::VectorXd::Constant(n_outputs, 1.0 / n_outputs);
  long pre = x % n_pre;
  std::vector<int> inputs(pre_arities.size());
  for (size_t k = pre_arities.size(); k-- > 0;) {
    inputs[k] = static_cast<int>(pre % pre_arities[k]);
    pre /= pre_arities[k];
  }
  LocalState local;
  local.state_row = network.live_row[s];
  local.inputs = inputs;
  local.index = network.layouts[coagent].encode(local.state_row, inputs);
  return coagent_policy(network, params, coagent, local);
}

namespace {

/// CoMDP chain state distribution at each t.
std::vector<Eigen::VectorXd> comdp_chain(const CoMdp& comdp, const CoagentNetwork& network,
                                         const NetworkParams& params, int horizon) {
  std::vector<Eigen::VectorXd> chi;
  chi.push_back(comdp.d0);
  for (int t = 0; t < horizon; ++t) {
    Eigen::VectorXd next = Eigen::VectorXd::Zero(comdp.n_states);
    const Eigen::VectorXd& cur = chi.back();
    for (long x = 0; x < comdp.n_states; ++x) {
      if (cur[x] == 0.0) continue;
      const Eigen::VectorXd pol = comdp.policy(network, params, x);
      for (int u = 0; u < comdp.n_outputs; ++u) {
        const double w = cur[x] * pol[u];
        if (w == 0.0) continue;
        for (long x2 = 0; x2 < comdp.n_states; ++x2) next[x2] += w * comdp.p(x, u, x2);
      }
    }
    chi.push_back(std::move(next));
  }
  return chi;
}

}  // namespace

std::string PropertyReport::to_text() const {
  std::ostringstream os;
  for (const auto& c : checks) {
    os << "property=" << c.id << " name=" << c.name;
    os.setf(std::ios::scientific);
    os.precision(3);
    os << " max_deviation=" << c.max_deviation << (c.pass ? " pass" : " fail") << "\n";
    os.unsetf(std::ios::scientific);
  }
  return os.str();
}

PropertyReport verify_properties(const TabularMdp& mdp, const CoagentNetwork& network,
                                 const NetworkParams& params, int i, int horizon, double tol) {
  const NetworkMarginals m = compute_marginals(mdp, network, params, i);
  const CoMdp comdp = build_comdp(mdp, network, params, i);
  const auto& spec = network.coagents[i];
  const int n_u = spec.output_arity;
  const int n_r = mdp.n_rewards();

  const double joint_size = static_cast<double>(mdp.n_states) * comdp.n_pre * n_u *
                            mdp.n_states * comdp.n_pre * n_r;
  if (joint_size > 1e6)
    throw SizeOverflowError("verify_properties: joint space of " + std::to_string(joint_size) +
                            " entries exceeds 1e6");

  // Stationary per-state law nu_s(pre, u, a) of the real network.
  std::vector<Eigen::MatrixXd> nu(static_cast<size_t>(mdp.n_states));
  std::vector<int> u_prev(network.size(), 0);
  std::vector<int> pre_vals(spec.feedforward_inputs.size());
  for (int s = 0; s < mdp.n_states; ++s) {
    Eigen::MatrixXd& table = nu[static_cast<size_t>(s)];
    table = Eigen::MatrixXd::Zero(comdp.n_pre * n_u, mdp.n_actions);
    for_each_joint_outcome(network, params, s, u_prev, false,
                           [&](double prob, uint32_t, std::span<const int> outputs,
                               std::span<const ScoreEntry>) {
                             for (size_t k = 0; k < pre_vals.size(); ++k)
                               pre_vals[k] = outputs[spec.feedforward_inputs[k]];
                             table(m.pre_index(pre_vals) * n_u + outputs[i],
                                   outputs[network.action_coagent]) += prob;
                           });
  }

  // Real env-state marginal mu_t and CoMDP chain chi_t.
  const Eigen::MatrixXd policy = exact_policy_matrix(mdp, network, params);
  std::vector<Eigen::VectorXd> mu;
  mu.push_back(mdp.initial_dist);
  for (int t = 0; t < horizon; ++t) {
    Eigen::VectorXd next = Eigen::VectorXd::Zero(mdp.n_states);
    for (int s = 0; s < mdp.n_states; ++s) {
      if (mu.back()[s] == 0.0) continue;
      for (int a = 0; a < mdp.n_actions; ++a) {
        const double w = mu.back()[s] * policy(s, a);
        if (w == 0.0) continue;
        for (int s2 = 0; s2 < mdp.n_states; ++s2) next[s2] += w * mdp.p(s, a, s2);
      }
    }
    mu.push_back(std::move(next));
  }
  const auto chi = comdp_chain(comdp, network, params, horizon);

  PropertyReport report;
  report.tol = tol;
  auto add = [&](int id, const std::string& name, double dev) {
    report.checks.push_back({id, name, dev, dev < tol});
  };

  // Lemma 1: stochasticity of P^i, R^i, d0^i.
  {
    double dev = std::abs(comdp.d0.sum() - 1.0);
    for (long x = 0; x < comdp.n_states; ++x)
      for (int u = 0; u < n_u; ++u) {
        double row = 0.0;
        for (long x2 = 0; x2 < comdp.n_states; ++x2) {
          row += comdp.p(x, u, x2);
          double rrow = 0.0;
          for (int ri = 0; ri < n_r; ++ri) rrow += comdp.rprob(x, u, x2, ri);
          dev = std::max(dev, std::abs(rrow - 1.0));
        }
        dev = std::max(dev, std::abs(row - 1.0));
      }
    add(0, "lemma1_stochasticity", dev);
  }

  // Property 1: d0^i(x) = Pr(S_0 = x.s, U_pre_0 = x.u_pre).
  {
    double dev = 0.0;
    for (int s = 0; s < mdp.n_states; ++s)
      for (long pre = 0; pre < comdp.n_pre; ++pre)
        dev = std::max(dev, std::abs(comdp.d0[comdp.x_index(s, pre)] -
                                     mdp.initial_dist[s] * m.pre(s, pre)));
    add(1, "initial_joint", dev);
  }
  // Property 2: Pr(X0.s = s) = d0(s).
  {
    double dev = 0.0;
    for (int s = 0; s < mdp.n_states; ++s) {
      double mass = 0.0;
      for (long pre = 0; pre < comdp.n_pre; ++pre) mass += chi[0][comdp.x_index(s, pre)];
      dev = std::max(dev, std::abs(mass - mdp.initial_dist[s]));
    }
    add(2, "initial_state_marginal", dev);
  }

  // Real-chain conditionals. nu1_s(pre,u,s2) = sum_a nu_s(pre,u,a) P(s,a,s2).
  auto nu1 = [&](int s, long pre, int u, int s2) {
    double total = 0.0;
    for (int a = 0; a < mdp.n_actions; ++a)
      total += nu[static_cast<size_t>(s)](pre * n_u + u, a) * mdp.p(s, a, s2);
    return total;
  };

  // Property 3: P^i vs the real transition conditional, on conditioning
  // events reachable at some t <= horizon.
  {
    double dev = 0.0;
    for (int s = 0; s < mdp.n_states; ++s) {
      double reach = 0.0;
      for (int t = 0; t <= horizon; ++t) reach = std::max(reach, mu[t][s]);
      if (reach < kMass) continue;
      for (long pre = 0; pre < comdp.n_pre; ++pre)
        for (int u = 0; u < n_u; ++u) {
          double cond = 0.0;
          for (int a = 0; a < mdp.n_actions; ++a)
            cond += nu[static_cast<size_t>(s)](pre * n_u + u, a);
          if (cond < kMass) continue;
          for (int s2 = 0; s2 < mdp.n_states; ++s2) {
            const double step_mass = nu1(s, pre, u, s2) / cond;
            for (long pre2 = 0; pre2 < comdp.n_pre; ++pre2) {
              const double real = step_mass * m.pre(s2, pre2);
              dev = std::max(dev, std::abs(comdp.p(comdp.x_index(s, pre), u,
                                                   comdp.x_index(s2, pre2)) -
                                           real));
            }
          }
        }
    }
    add(3, "transition_conditional", dev);
  }

  // Property 4: R^i vs the real reward conditional.
  {
    double dev = 0.0;
    for (int s = 0; s < mdp.n_states; ++s) {
      double reach = 0.0;
      for (int t = 0; t <= horizon; ++t) reach = std::max(reach, mu[t][s]);
      if (reach < kMass) continue;
      for (long pre = 0; pre < comdp.n_pre; ++pre)
        for (int u = 0; u < n_u; ++u)
          for (int s2 = 0; s2 < mdp.n_states; ++s2) {
            const double denom = nu1(s, pre, u, s2);
            if (denom < kMass) continue;
            for (int ri = 0; ri < n_r; ++ri) {
              double num = 0.0;
              for (int a = 0; a < mdp.n_actions; ++a)
                num += nu[static_cast<size_t>(s)](pre * n_u + u, a) * mdp.p(s, a, s2) *
                       mdp.rprob(s, a, s2, ri);
              const double real = num / denom;
              for (long pre2 = 0; pre2 < comdp.n_pre; ++pre2)
                dev = std::max(dev, std::abs(comdp.rprob(comdp.x_index(s, pre), u,
                                                         comdp.x_index(s2, pre2), ri) -
                                             real));
            }
          }
    }
    add(4, "reward_conditional", dev);
  }

  // Property 5: Pr(X_t = (s,pre)) matches; Property 6: its state marginal.
  {
    double dev5 = 0.0;
    double dev6 = 0.0;
    for (int t = 0; t <= horizon; ++t)
      for (int s = 0; s < mdp.n_states; ++s) {
        double comdp_mass = 0.0;
        for (long pre = 0; pre < comdp.n_pre; ++pre) {
          const double real = mu[t][s] * m.pre(s, pre);
          const double ours = chi[t][comdp.x_index(s, pre)];
          comdp_mass += ours;
          dev5 = std::max(dev5, std::abs(ours - real));
        }
        dev6 = std::max(dev6, std::abs(comdp_mass - mu[t][s]));
      }
    add(5, "local_state_joint", dev5);
    add(6, "state_marginal", dev6);
  }

  // Property 7: CoMDP conditional of u_pre given s vs pi_pre.
  {
    double dev = 0.0;
    for (int t = 0; t <= horizon; ++t)
      for (int s = 0; s < mdp.n_states; ++s) {
        double mass = 0.0;
        for (long pre = 0; pre < comdp.n_pre; ++pre) mass += chi[t][comdp.x_index(s, pre)];
        if (mass < kMass) continue;
        for (long pre = 0; pre < comdp.n_pre; ++pre)
          dev = std::max(dev, std::abs(chi[t][comdp.x_index(s, pre)] / mass - m.pre(s, pre)));
      }
    add(7, "pre_conditional", dev);
  }

  // Property 8: next-state marginal conditional agrees between chains.
  {
    double dev = 0.0;
    for (int s = 0; s < mdp.n_states; ++s)
      for (long pre = 0; pre < comdp.n_pre; ++pre) {
        const long x = comdp.x_index(s, pre);
        double reach = 0.0;
        for (int t = 0; t <= horizon; ++t) reach = std::max(reach, chi[t][x]);
        if (reach < kMass) continue;
        for (int u = 0; u < n_u; ++u) {
          double cond = 0.0;
          for (int a = 0; a < mdp.n_actions; ++a)
            cond += nu[static_cast<size_t>(s)](pre * n_u + u, a);
          if (cond < kMass) continue;
          for (int s2 = 0; s2 < mdp.n_states; ++s2) {
            double comdp_side = 0.0;
            for (long pre2 = 0; pre2 < comdp.n_pre; ++pre2)
              comdp_side += comdp.p(x, u, comdp.x_index(s2, pre2));
            const double real = nu1(s, pre, u, s2) / cond;
            dev = std::max(dev, std::abs(comdp_side - real));
          }
        }
      }
    add(8, "next_state_conditional", dev);
  }

  // Property 9: u_pre at t+1 is conditionally independent of (x, u) given
  // the next state, on the CoMDP chain.
  {
    double dev = 0.0;
    for (int s = 0; s < mdp.n_states; ++s)
      for (long pre = 0; pre < comdp.n_pre; ++pre) {
        const long x = comdp.x_index(s, pre);
        double reach = 0.0;
        for (int t = 0; t <= horizon; ++t) reach = std::max(reach, chi[t][x]);
        if (reach < kMass) continue;
        for (int u = 0; u < n_u; ++u) {
          if (comdp.unreachable_xu[static_cast<size_t>(x) * n_u + u]) continue;
          for (int s2 = 0; s2 < mdp.n_states; ++s2) {
            double s2_mass = 0.0;
            for (long pre2 = 0; pre2 < comdp.n_pre; ++pre2)
              s2_mass += comdp.p(x, u, comdp.x_index(s2, pre2));
            if (s2_mass < kMass) continue;
            for (long pre2 = 0; pre2 < comdp.n_pre; ++pre2) {
              const double given_xu = comdp.p(x, u, comdp.x_index(s2, pre2)) / s2_mass;
              dev = std::max(dev, std::abs(given_xu - m.pre(s2, pre2)));
            }
          }
        }
      }
    add(9, "pre_independence", dev);
  }

  // Property 10: marginal reward laws agree at every t.
  {
    double dev = 0.0;
    for (int t = 0; t < horizon; ++t) {
      std::vector<double> real(n_r, 0.0);
      std::vector<double> ours(n_r, 0.0);
      for (int s = 0; s < mdp.n_states; ++s) {
        if (mu[t][s] == 0.0) continue;
        for (long pre = 0; pre < comdp.n_pre; ++pre)
          for (int u = 0; u < n_u; ++u)
            for (int a = 0; a < mdp.n_actions; ++a) {
              const double w = mu[t][s] * nu[static_cast<size_t>(s)](pre * n_u + u, a);
              if (w == 0.0) continue;
              for (int s2 = 0; s2 < mdp.n_states; ++s2) {
                const double wp = w * mdp.p(s, a, s2);
                if (wp == 0.0) continue;
                for (int ri = 0; ri < n_r; ++ri) real[ri] += wp * mdp.rprob(s, a, s2, ri);
              }
            }
      }
      for (long x = 0; x < comdp.n_states; ++x) {
        if (chi[t][x] == 0.0) continue;
        const Eigen::VectorXd pol = comdp.policy(network, params, x);
        for (int u = 0; u < n_u; ++u) {
          const double w = chi[t][x] * pol[u];
          if (w == 0.0) continue;
          for (long x2 = 0; x2 < comdp.n_states; ++x2) {
            const double wp = w * comdp.p(x, u, x2);
            if (wp == 0.0) continue;
            for (int ri = 0; ri < n_r; ++ri) ours[ri] += wp * comdp.rprob(x, u, x2, ri);
          }
        }
      }
      for (int ri = 0; ri < n_r; ++ri) dev = std::max(dev, std::abs(real[ri] - ours[ri]));
    }
    add(10, "reward_marginal", dev);
  }

  return report;
}

CoMdpObjectiveGradient comdp_objective_and_gradient(const CoMdp& comdp,
                                                    const CoagentNetwork& network,
                                                    const NetworkParams& params) {
  const auto& spec = network.coagents[comdp.coagent];
  if (spec.policy_kind != PolicyKind::Softmax)
    throw std::invalid_argument("comdp_objective_and_gradient: coagent must be softmax");
  const int n_u = comdp.n_outputs;

  std::vector<long> live;
  std::vector<long> live_of(static_cast<size_t>(comdp.n_states), -1);
  for (long x = 0; x < comdp.n_states; ++x)
    if (!comdp.terminal[static_cast<size_t>(x)]) {
      live_of[static_cast<size_t>(x)] = static_cast<long>(live.size());
      live.push_back(x);
    }
  const long n = static_cast<long>(live.size());

  std::vector<Eigen::VectorXd> pol(static_cast<size_t>(n));
  for (long k = 0; k < n; ++k) pol[static_cast<size_t>(k)] = comdp.policy(network, params, live[k]);

  Eigen::MatrixXd kernel = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd reward = Eigen::VectorXd::Zero(n);
  for (long k = 0; k < n; ++k) {
    const long x = live[k];
    for (int u = 0; u < n_u; ++u) {
      const double w = pol[static_cast<size_t>(k)][u];
      if (w == 0.0) continue;
      for (long x2 = 0; x2 < comdp.n_states; ++x2) {
        const double pr = comdp.p(x, u, x2);
        if (pr == 0.0) continue;
        reward[k] += w * pr * comdp.mean_reward(x, u, x2);
        const long k2 = live_of[static_cast<size_t>(x2)];
        if (k2 >= 0) kernel(k, k2) += w * pr;
      }
    }
  }

  if (comdp.discount == 1.0) {
    // Absorbing check mirroring the base-MDP solver.
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
        throw SingularSystemError(
            "comdp: discount-1 chain has a recurrent class that never reaches a lifted terminal "
            "(first local state " +
            std::to_string(live[k]) + ")");
  }

  const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n) - comdp.discount * kernel;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
  const Eigen::VectorXd v = lu.solve(reward);
  if (!v.allFinite() || (a * v - reward).cwiseAbs().maxCoeff() > 1e-8)
    throw SingularSystemError("comdp: singular value system");

  Eigen::VectorXd d0_live(n);
  for (long k = 0; k < n; ++k) d0_live[k] = comdp.d0[live[k]];
  const Eigen::MatrixXd at = Eigen::MatrixXd::Identity(n, n) - comdp.discount * kernel.transpose();
  Eigen::PartialPivLU<Eigen::MatrixXd> lut(at);
  const Eigen::VectorXd occ = lut.solve(d0_live);
  if (!occ.allFinite() || (at * occ - d0_live).cwiseAbs().maxCoeff() > 1e-8)
    throw SingularSystemError("comdp: singular occupancy system");

  CoMdpObjectiveGradient out;
  out.objective = 0.0;
  for (long x = 0; x < comdp.n_states; ++x) {
    const long k = live_of[static_cast<size_t>(x)];
    if (k >= 0) out.objective += comdp.d0[x] * v[k];
  }

  const auto& table = params.blocks[spec.param_block];
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(table.rows(), table.cols());
  for (long k = 0; k < n; ++k) {
    if (occ[k] == 0.0) continue;
    const long x = live[k];
    const int s = static_cast<int>(x / comdp.n_pre);
    long pre = x % comdp.n_pre;
    std::vector<int> inputs(comdp.pre_arities.size());
    for (size_t q = comdp.pre_arities.size(); q-- > 0;) {
      inputs[q] = static_cast<int>(pre % comdp.pre_arities[q]);
      pre /= comdp.pre_arities[q];
    }
    const long row = network.layouts[comdp.coagent].encode(network.live_row[s], inputs);
    Eigen::VectorXd q_values(n_u);
    for (int u = 0; u < n_u; ++u) {
      double q = 0.0;
      for (long x2 = 0; x2 < comdp.n_states; ++x2) {
        const double pr = comdp.p(x, u, x2);
        if (pr == 0.0) continue;
        double cont = comdp.mean_reward(x, u, x2);
        const long k2 = live_of[static_cast<size_t>(x2)];
        if (k2 >= 0) cont += comdp.discount * v[k2];
        q += pr * cont;
      }
      q_values[u] = q;
    }
    const Eigen::VectorXd probs = pol[static_cast<size_t>(k)];
    const double mean_q = probs.dot(q_values);
    for (int u = 0; u < n_u; ++u)
      grad(row, u) += occ[k] * probs[u] * (q_values[u] - mean_q);
  }

  Eigen::VectorXd flat(grad.size());
  for (long r = 0; r < grad.rows(); ++r)
    for (long u = 0; u < grad.cols(); ++u) flat[r * grad.cols() + u] = grad(r, u);
  out.gradient = std::move(flat);
  return out;
}

}  // namespace coagent
