#include "coagent/reduction.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <sstream>

namespace coagent {

double AugmentedMdp::p(long z, long aidx, long z2) const {
  const auto [s, u] = std::pair<int, long>{static_cast<int>(z / codec.n_u_all), z % codec.n_u_all};
  (void)u;
  if (terminal[static_cast<size_t>(z)]) return z2 == z ? 1.0 : 0.0;
  const auto [a, u2, e] = action_decode(aidx);
  (void)e;
  const int s2 = static_cast<int>(z2 / codec.n_u_all);
  if (z2 % codec.n_u_all != u2) return 0.0;
  return base.p(s, a, s2);
}

double AugmentedMdp::reward_prob(long z, long aidx, long z2, int ri) const {
  if (terminal[static_cast<size_t>(z)])
    return base.reward_support[ri] == 0.0 ? 1.0 : 0.0;
  const auto [a, u2, e] = action_decode(aidx);
  (void)u2;
  (void)e;
  const int s = static_cast<int>(z / codec.n_u_all);
  const int s2 = static_cast<int>(z2 / codec.n_u_all);
  return base.rprob(s, a, s2, ri);
}

TabularMdp AugmentedMdp::as_tabular(long max_entries) const {
  std::vector<double> support = base.reward_support;
  if (std::find(support.begin(), support.end(), 0.0) == support.end()) {
    support.push_back(0.0);
    std::sort(support.begin(), support.end());
  }
  const long r = static_cast<long>(support.size());
  const long entries = n_states * n_actions * n_states * (1 + r);
  if (entries > max_entries)
    throw SizeOverflowError("as_tabular: " + std::to_string(entries) + " table entries exceed " +
                            std::to_string(max_entries));

  TabularMdp out;
  out.n_states = static_cast<int>(n_states);
  out.n_actions = static_cast<int>(n_actions);
  out.reward_support = support;
  out.discount = base.discount;
  out.terminal.assign(terminal.begin(), terminal.end());
  out.initial_dist = d0;
  out.transition.assign(static_cast<size_t>(n_states) * n_actions * n_states, 0.0);
  out.reward_dist.assign(static_cast<size_t>(n_states) * n_actions * n_states * r, 0.0);
  auto ri_of = [&](double x) {
    return static_cast<int>(std::find(support.begin(), support.end(), x) - support.begin());
  };
  const int zero_ri = ri_of(0.0);

  for (long z = 0; z < n_states; ++z) {
    for (long aidx = 0; aidx < n_actions; ++aidx) {
      if (terminal[static_cast<size_t>(z)]) {
        out.p(static_cast<int>(z), static_cast<int>(aidx), static_cast<int>(z)) = 1.0;
        for (long z2 = 0; z2 < n_states; ++z2)
          out.rprob(static_cast<int>(z), static_cast<int>(aidx), static_cast<int>(z2), zero_ri) =
              1.0;
        continue;
      }
      const auto [a, u2, e] = action_decode(aidx);
      (void)e;
      const int s = static_cast<int>(z / codec.n_u_all);
      for (long z2 = 0; z2 < n_states; ++z2) {
        const int s2 = static_cast<int>(z2 / codec.n_u_all);
        if (z2 % codec.n_u_all == u2) {
          out.p(static_cast<int>(z), static_cast<int>(aidx), static_cast<int>(z2)) =
              base.p(s, a, s2);
          for (int k = 0; k < static_cast<int>(base.reward_support.size()); ++k)
            out.rprob(static_cast<int>(z), static_cast<int>(aidx), static_cast<int>(z2),
                      ri_of(base.reward_support[k])) = base.rprob(s, a, s2, k);
        } else {
          out.rprob(static_cast<int>(z), static_cast<int>(aidx), static_cast<int>(z2), zero_ri) =
              1.0;
        }
      }
    }
  }
  out.validate();
  return out;
}

AugmentedMdp build_augmented_mdp(const TabularMdp& mdp, const CoagentNetwork& network,
                                 long max_states) {
  double product = static_cast<double>(mdp.n_states);
  for (const auto& c : network.coagents) product *= c.output_arity;
  if (product > static_cast<double>(max_states))
    throw SizeOverflowError("build_augmented_mdp: product space of " + std::to_string(product) +
                            " states exceeds " + std::to_string(max_states));

  AugmentedMdp aug;
  aug.base = mdp;
  aug.codec.n_base_states = mdp.n_states;
  long n_u = 1;
  for (const auto& c : network.coagents) {
    aug.codec.arities.push_back(c.output_arity);
    n_u *= c.output_arity;
  }
  aug.codec.n_u_all = n_u;
  aug.n_states = static_cast<long>(mdp.n_states) * n_u;
  aug.n_actions = static_cast<long>(mdp.n_actions) * n_u << network.size();

  aug.terminal.assign(static_cast<size_t>(aug.n_states), 0);
  aug.live_row.assign(static_cast<size_t>(aug.n_states), -1);
  aug.d0 = Eigen::VectorXd::Zero(aug.n_states);
  for (int s = 0; s < mdp.n_states; ++s) {
    for (long u = 0; u < n_u; ++u) {
      const long z = static_cast<long>(s) * n_u + u;
      if (mdp.is_terminal(s)) {
        aug.terminal[static_cast<size_t>(z)] = 1;
      } else {
        aug.live_row[static_cast<size_t>(z)] =
            static_cast<long>(mdp.live_row[s]) * n_u + u;
      }
      double h = mdp.initial_dist[s];
      const auto uvec = aug.codec.u_decode(u);
      for (int i = 0; i < network.size(); ++i) {
        const auto& c = network.coagents[i];
        h *= c.init_dist.empty() ? 1.0 / c.output_arity : c.init_dist[uvec[i]];
      }
      aug.d0[z] = h;
    }
  }
  aug.live_z.resize(static_cast<size_t>(mdp.n_live()) * n_u);
  for (long z = 0; z < aug.n_states; ++z)
    if (aug.live_row[static_cast<size_t>(z)] >= 0)
      aug.live_z[static_cast<size_t>(aug.live_row[static_cast<size_t>(z)])] = z;

  if (std::abs(aug.d0.sum() - 1.0) > 1e-12)
    throw std::invalid_argument("build_augmented_mdp: d0 does not sum to 1");

  // Structural spot check of the transition definition against the base
  // MDP (bounded so construction stays cheap on large product spaces).
  long budget = 200000;
  for (long z = 0; z < aug.n_states && budget > 0; z += std::max<long>(1, aug.n_states / 64)) {
    if (aug.terminal[static_cast<size_t>(z)]) continue;
    for (long aidx = 0; aidx < aug.n_actions && budget > 0;
         aidx += std::max<long>(1, aug.n_actions / 16)) {
      const auto [a, u2, e] = aug.action_decode(aidx);
      (void)e;
      const int s = static_cast<int>(z / n_u);
      double row = 0.0;
      for (int s2 = 0; s2 < mdp.n_states; ++s2) {
        const long z2 = static_cast<long>(s2) * n_u + u2;
        const double pr = aug.p(z, aidx, z2);
        if (pr != mdp.p(s, a, s2))
          throw std::invalid_argument("build_augmented_mdp: transition mismatch");
        row += pr;
        --budget;
      }
      if (std::abs(row - 1.0) > 1e-12)
        throw std::invalid_argument("build_augmented_mdp: transition row sum != 1");
    }
  }
  return aug;
}

namespace {

std::vector<std::vector<double>> resolved_init_dists(const CoagentNetwork& network) {
  std::vector<std::vector<double>> dists;
  dists.reserve(network.coagents.size());
  for (const auto& c : network.coagents) {
    if (c.init_dist.empty())
      dists.emplace_back(c.output_arity, 1.0 / c.output_arity);
    else
      dists.push_back(c.init_dist);
  }
  return dists;
}

ChainModel build_chain_common(const TabularMdp& mdp, const AugmentedCodec& codec,
                              const std::vector<std::vector<double>>& init_dists, long max_live) {
  ChainModel chain;
  chain.base = &mdp;
  chain.codec = codec;
  chain.discount = mdp.discount;
  const long n_live = static_cast<long>(mdp.n_live()) * codec.n_u_all;
  if (n_live > max_live)
    throw SizeOverflowError("chain model: " + std::to_string(n_live) +
                            " live augmented states exceed " + std::to_string(max_live));
  chain.live_z.resize(static_cast<size_t>(n_live));
  chain.d0_live = Eigen::VectorXd::Zero(n_live);
  for (int li = 0; li < mdp.n_live(); ++li) {
    const int s = mdp.live_states[li];
    for (long u = 0; u < codec.n_u_all; ++u) {
      const long zl = static_cast<long>(li) * codec.n_u_all + u;
      chain.live_z[static_cast<size_t>(zl)] = static_cast<long>(s) * codec.n_u_all + u;
      double h = mdp.initial_dist[s];
      const auto uvec = codec.u_decode(u);
      for (size_t i = 0; i < init_dists.size(); ++i) h *= init_dists[i][uvec[i]];
      chain.d0_live[zl] = h;
    }
  }
  return chain;
}

bool network_has_forced(const CoagentNetwork& net) {
  for (const auto& c : net.coagents)
    if (c.forced_initial_output) return true;
  return false;
}

}  // namespace

SyncNetwork build_sync_network(const CoagentNetwork& network) {
  SyncNetwork sync;
  const int m = network.size();
  sync.bit_of.assign(m, -1);
  sync.policy_of.assign(m, -1);
  sync.base_init = resolved_init_dists(network);

  AugmentedCodec codec;
  codec.n_base_states = network.n_env_states;
  codec.n_u_all = 1;
  for (const auto& c : network.coagents) {
    codec.arities.push_back(c.output_arity);
    codec.n_u_all *= c.output_arity;
  }

  CoagentNetwork& net = sync.net;
  net.codec = codec;
  net.n_env_states = static_cast<int>(static_cast<long>(network.n_env_states) * codec.n_u_all);
  net.n_live_states = static_cast<int>(static_cast<long>(network.n_live_states) * codec.n_u_all);
  net.live_row.assign(static_cast<size_t>(net.n_env_states), -1);
  for (int s = 0; s < network.n_env_states; ++s) {
    if (network.live_row[s] < 0) continue;
    for (long u = 0; u < codec.n_u_all; ++u)
      net.live_row[static_cast<size_t>(s) * codec.n_u_all + u] =
          static_cast<int>(static_cast<long>(network.live_row[s]) * codec.n_u_all + u);
  }

  int next_id = 0;
  for (int i : network.topo_order) {
    const auto& c = network.coagents[i];
    ReductionRole base_role;
    base_role.orig_id = i;
    base_role.orig_layout = network.layouts[i];
    base_role.rec_components = c.recurrent_inputs;

    CoagentSpec bit;
    bit.id = next_id++;
    bit.uses_state = true;
    bit.output_arity = 2;
    bit.policy_kind = PolicyKind::ExecBit;
    bit.reduction = base_role;
    bit.reduction->orig_exec = c.execution;
    for (size_t k = 0; k < c.feedforward_inputs.size(); ++k) {
      bit.feedforward_inputs.push_back(sync.policy_of[c.feedforward_inputs[k]]);
      bit.reduction->ff_positions.push_back(static_cast<int>(k));
      if (c.execution.kind == ExecKind::Gated &&
          c.feedforward_inputs[k] == c.execution.gate_source)
        bit.reduction->gate_position = static_cast<int>(k);
    }
    sync.bit_of[i] = bit.id;

    CoagentSpec pol;
    pol.id = next_id++;
    pol.uses_state = true;
    pol.output_arity = c.output_arity;
    pol.policy_kind = PolicyKind::SwitchCopy;
    pol.param_block = c.param_block;
    pol.forced_initial_output = c.forced_initial_output;
    pol.reduction = base_role;
    for (size_t k = 0; k < c.feedforward_inputs.size(); ++k) {
      pol.feedforward_inputs.push_back(sync.policy_of[c.feedforward_inputs[k]]);
      pol.reduction->ff_positions.push_back(static_cast<int>(k));
    }
    pol.feedforward_inputs.push_back(bit.id);
    pol.reduction->bit_position = static_cast<int>(c.feedforward_inputs.size());
    pol.reduction->self_component = i;
    sync.policy_of[i] = pol.id;

    net.coagents.push_back(std::move(bit));
    net.coagents.push_back(std::move(pol));
  }
  net.action_coagent = sync.policy_of[network.action_coagent];
  net.finalize();
  return sync;
}


ChainModel build_chain_async(const TabularMdp& mdp, const CoagentNetwork& network,
                             const NetworkParams& params, long max_live) {
  AugmentedCodec codec;
  codec.n_base_states = mdp.n_states;
  codec.n_u_all = 1;
  for (const auto& c : network.coagents) {
    codec.arities.push_back(c.output_arity);
    codec.n_u_all *= c.output_arity;
  }
  ChainModel chain = build_chain_common(mdp, codec, resolved_init_dists(network), max_live);
  chain.has_forced = network_has_forced(network);

  const long n_live = chain.n_live();
  chain.outcomes.resize(static_cast<size_t>(n_live));
  if (chain.has_forced) chain.initial_outcomes.resize(static_cast<size_t>(n_live));
  std::vector<int> u_prev(network.size());
  for (long zl = 0; zl < n_live; ++zl) {
    const long z = chain.live_z[static_cast<size_t>(zl)];
    const int s = static_cast<int>(z / codec.n_u_all);
    const auto uvec = codec.u_decode(z % codec.n_u_all);
    u_prev = uvec;
    auto collect = [&](std::vector<ChainOutcome>& dst, bool initial) {
      for_each_joint_outcome(network, params, s, u_prev, initial,
                             [&](double prob, uint32_t exec_mask, std::span<const int> outputs,
                                 std::span<const ScoreEntry> scores) {
                               ChainOutcome o;
                               o.prob = prob;
                               o.action = outputs[network.action_coagent];
                               o.u_idx = codec.u_index(outputs);
                               o.exec_mask = exec_mask;
                               o.scores.assign(scores.begin(), scores.end());
                               dst.push_back(std::move(o));
                             });
    };
    collect(chain.outcomes[static_cast<size_t>(zl)], false);
    if (chain.has_forced) collect(chain.initial_outcomes[static_cast<size_t>(zl)], true);
  }
  return chain;
}

ChainModel build_chain_sync(const TabularMdp& mdp, const SyncNetwork& sync,
                            const NetworkParams& params, long max_live) {
  const AugmentedCodec& codec = *sync.net.codec;
  ChainModel chain = build_chain_common(mdp, codec, sync.base_init, max_live);
  chain.has_forced = network_has_forced(sync.net);

  const int m = static_cast<int>(codec.arities.size());
  const long n_live = chain.n_live();
  chain.outcomes.resize(static_cast<size_t>(n_live));
  if (chain.has_forced) chain.initial_outcomes.resize(static_cast<size_t>(n_live));
  std::vector<int> u_prev(sync.net.size(), 0);
  for (long zl = 0; zl < n_live; ++zl) {
    const long z = chain.live_z[static_cast<size_t>(zl)];
    auto collect = [&](std::vector<ChainOutcome>& dst, bool initial) {
      for_each_joint_outcome(sync.net, params, static_cast<int>(z), u_prev, initial,
                             [&](double prob, uint32_t, std::span<const int> outputs,
                                 std::span<const ScoreEntry> scores) {
                               ChainOutcome o;
                               o.prob = prob;
                               std::vector<int> u(m);
                               uint32_t e = 0;
                               for (int i = 0; i < m; ++i) {
                                 u[i] = outputs[sync.policy_of[i]];
                                 if (outputs[sync.bit_of[i]] == 1) e |= 1u << i;
                               }
                               o.action = outputs[sync.net.action_coagent];
                               o.u_idx = codec.u_index(u);
                               o.exec_mask = e;
                               o.scores.assign(scores.begin(), scores.end());
                               dst.push_back(std::move(o));
                             });
    };
    collect(chain.outcomes[static_cast<size_t>(zl)], false);
    if (chain.has_forced) collect(chain.initial_outcomes[static_cast<size_t>(zl)], true);
  }
  return chain;
}

namespace {

/// Dense live-to-live transition kernel of the chain.
Eigen::MatrixXd chain_kernel(const ChainModel& chain) {
  const long n = chain.n_live();
  const TabularMdp& mdp = *chain.base;
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(n, n);
  for (long zl = 0; zl < n; ++zl) {
    const long z = chain.live_z[static_cast<size_t>(zl)];
    const int s = static_cast<int>(z / chain.codec.n_u_all);
    for (const auto& o : chain.outcomes[static_cast<size_t>(zl)]) {
      for (int li2 = 0; li2 < mdp.n_live(); ++li2) {
        const int s2 = mdp.live_states[li2];
        const double pr = mdp.p(s, o.action, s2);
        if (pr > 0.0) k(zl, chain.live_index(li2, o.u_idx)) += o.prob * pr;
      }
    }
  }
  return k;
}

Eigen::VectorXd chain_rewards(const ChainModel& chain) {
  const long n = chain.n_live();
  const TabularMdp& mdp = *chain.base;
  Eigen::VectorXd r = Eigen::VectorXd::Zero(n);
  for (long zl = 0; zl < n; ++zl) {
    const long z = chain.live_z[static_cast<size_t>(zl)];
    const int s = static_cast<int>(z / chain.codec.n_u_all);
    for (const auto& o : chain.outcomes[static_cast<size_t>(zl)]) {
      double expected = 0.0;
      for (int s2 = 0; s2 < mdp.n_states; ++s2) {
        const double pr = mdp.p(s, o.action, s2);
        if (pr > 0.0) expected += pr * mdp.mean_reward(s, o.action, s2);
      }
      r[zl] += o.prob * expected;
    }
  }
  return r;
}

void check_absorbing(const ChainModel& chain, const Eigen::MatrixXd& kernel) {
  if (chain.discount < 1.0) return;
  const long n = chain.n_live();
  // Live states must be able to lose probability mass (reach a terminal).
  std::vector<uint8_t> reaches(static_cast<size_t>(n), 0);
  std::deque<long> frontier;
  for (long zl = 0; zl < n; ++zl)
    if (kernel.row(zl).sum() < 1.0 - 1e-13) {
      reaches[static_cast<size_t>(zl)] = 1;
      frontier.push_back(zl);
    }
  while (!frontier.empty()) {
    const long t = frontier.front();
    frontier.pop_front();
    for (long zl = 0; zl < n; ++zl)
      if (!reaches[static_cast<size_t>(zl)] && kernel(zl, t) > 0.0) {
        reaches[static_cast<size_t>(zl)] = 1;
        frontier.push_back(zl);
      }
  }
  std::vector<int> bad;
  for (long zl = 0; zl < n; ++zl)
    if (!reaches[static_cast<size_t>(zl)]) bad.push_back(static_cast<int>(zl));
  if (!bad.empty()) {
    std::ostringstream os;
    os << "chain model: discount-1 chain has a recurrent class of " << bad.size()
       << " augmented states that never reaches a terminal (first live index " << bad.front()
       << ")";
    throw SingularSystemError(os.str());
  }
}

}  // namespace

Eigen::VectorXd ChainModel::values() const {
  const long n = n_live();
  const Eigen::MatrixXd kernel = chain_kernel(*this);
  check_absorbing(*this, kernel);
  const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n) - discount * kernel;
  const Eigen::VectorXd b = chain_rewards(*this);
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
  const Eigen::VectorXd v = lu.solve(b);
  if (!v.allFinite() || (a * v - b).cwiseAbs().maxCoeff() > 1e-8)
    throw SingularSystemError("chain model: singular value system");
  return v;
}

double ChainModel::outcome_backup(long zl, const ChainOutcome& outcome,
                                  const Eigen::VectorXd& v) const {
  const TabularMdp& mdp = *base;
  const long z = live_z[static_cast<size_t>(zl)];
  const int s = static_cast<int>(z / codec.n_u_all);
  double total = 0.0;
  for (int s2 = 0; s2 < mdp.n_states; ++s2) {
    const double pr = mdp.p(s, outcome.action, s2);
    if (pr == 0.0) continue;
    double cont = mdp.mean_reward(s, outcome.action, s2);
    const int li2 = mdp.live_row[s2];
    if (li2 >= 0) cont += discount * v[live_index(li2, outcome.u_idx)];
    total += pr * cont;
  }
  return total;
}

double ChainModel::objective() const {
  const Eigen::VectorXd v = values();
  if (!has_forced) return d0_live.dot(v);
  double j = 0.0;
  for (long zl = 0; zl < n_live(); ++zl) {
    if (d0_live[zl] == 0.0) continue;
    double v0 = 0.0;
    for (const auto& o : initial_outcomes[static_cast<size_t>(zl)])
      v0 += o.prob * outcome_backup(zl, o, v);
    j += d0_live[zl] * v0;
  }
  return j;
}

ChainModel::Occupancy ChainModel::occupancy() const {
  const long n = n_live();
  const Eigen::MatrixXd kernel = chain_kernel(*this);
  check_absorbing(*this, kernel);
  Occupancy occ;
  Eigen::VectorXd source;
  if (has_forced) {
    occ.initial = d0_live;
    // Push d0 through the forced kernel to get the t=1 distribution.
    Eigen::VectorXd d1 = Eigen::VectorXd::Zero(n);
    const TabularMdp& mdp = *base;
    for (long zl = 0; zl < n; ++zl) {
      if (d0_live[zl] == 0.0) continue;
      const long z = live_z[static_cast<size_t>(zl)];
      const int s = static_cast<int>(z / codec.n_u_all);
      for (const auto& o : initial_outcomes[static_cast<size_t>(zl)]) {
        for (int li2 = 0; li2 < mdp.n_live(); ++li2) {
          const double pr = mdp.p(s, o.action, mdp.live_states[li2]);
          if (pr > 0.0) d1[live_index(li2, o.u_idx)] += d0_live[zl] * o.prob * pr;
        }
      }
    }
    source = discount * d1;
  } else {
    occ.initial = Eigen::VectorXd::Zero(n);
    source = d0_live;
  }
  const Eigen::MatrixXd a =
      Eigen::MatrixXd::Identity(n, n) - discount * kernel.transpose();
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
  occ.tail = lu.solve(source);
  if (!occ.tail.allFinite() || (a * occ.tail - source).cwiseAbs().maxCoeff() > 1e-8)
    throw SingularSystemError("chain model: singular occupancy system");
  return occ;
}

BehaviorEquivalence verify_behavior_equivalence(const CoagentNetwork& network,
                                                const SyncNetwork& sync,
                                                const NetworkParams& params, double tol) {
  const AugmentedCodec& codec = *sync.net.codec;
  const int m = network.size();
  const long n_keys = codec.n_u_all << m;
  if (static_cast<double>(network.n_live_states) * static_cast<double>(n_keys) > 5e7)
    throw SizeOverflowError("verify_behavior_equivalence: law table too large");

  BehaviorEquivalence result;
  std::vector<int> u_prev(m);
  std::vector<double> law_async(static_cast<size_t>(n_keys));
  std::vector<double> law_sync(static_cast<size_t>(n_keys));
  for (int s = 0; s < network.n_env_states; ++s) {
    if (network.live_row[s] < 0) continue;
    for (long u = 0; u < codec.n_u_all; ++u) {
      const auto uvec = codec.u_decode(u);
      u_prev = uvec;
      std::fill(law_async.begin(), law_async.end(), 0.0);
      std::fill(law_sync.begin(), law_sync.end(), 0.0);
      for_each_joint_outcome(network, params, s, u_prev, false,
                             [&](double prob, uint32_t exec_mask, std::span<const int> outputs,
                                 std::span<const ScoreEntry>) {
                               law_async[static_cast<size_t>(
                                   codec.u_index(outputs) << m | exec_mask)] += prob;
                             });
      const long z = static_cast<long>(s) * codec.n_u_all + u;
      const std::vector<int> dummy(sync.net.size(), 0);
      for_each_joint_outcome(sync.net, params, static_cast<int>(z), dummy, false,
                             [&](double prob, uint32_t, std::span<const int> outputs,
                                 std::span<const ScoreEntry>) {
                               std::vector<int> uo(m);
                               uint32_t e = 0;
                               for (int i = 0; i < m; ++i) {
                                 uo[i] = outputs[sync.policy_of[i]];
                                 if (outputs[sync.bit_of[i]] == 1) e |= 1u << i;
                               }
                               law_sync[static_cast<size_t>(codec.u_index(uo) << m | e)] += prob;
                             });
      for (long k = 0; k < n_keys; ++k)
        result.max_deviation = std::max(
            result.max_deviation,
            std::abs(law_async[static_cast<size_t>(k)] - law_sync[static_cast<size_t>(k)]));
    }
  }
  result.pass = result.max_deviation < tol;
  return result;
}

ObjectiveEquivalence verify_objective_equivalence(const TabularMdp& mdp,
                                                  const CoagentNetwork& network,
                                                  const NetworkParams& params, double tol) {
  ObjectiveEquivalence result;
  const ChainModel async_chain = build_chain_async(mdp, network, params);
  result.j_async = async_chain.objective();

  const SyncNetwork sync = build_sync_network(network);
  bool dense_route = !async_chain.has_forced;
  AugmentedMdp aug;
  if (dense_route) {
    try {
      aug = build_augmented_mdp(mdp, network);
      const long entries =
          aug.n_states * aug.n_actions * aug.n_states *
          (1 + static_cast<long>(mdp.reward_support.size()));
      dense_route = entries <= 20000000;
    } catch (const SizeOverflowError&) {
      dense_route = false;
    }
  }
  if (dense_route) {
    // Induced policy matrix of the reduction over the dense augmented MDP.
    const TabularMdp tab = aug.as_tabular();
    Eigen::MatrixXd policy = Eigen::MatrixXd::Constant(
        tab.n_states, tab.n_actions, 1.0 / static_cast<double>(tab.n_actions));
    const std::vector<int> dummy(sync.net.size(), 0);
    const int m = network.size();
    for (long z = 0; z < aug.n_states; ++z) {
      if (aug.terminal[static_cast<size_t>(z)]) continue;
      policy.row(z).setZero();
      for_each_joint_outcome(sync.net, params, static_cast<int>(z), dummy, false,
                             [&](double prob, uint32_t, std::span<const int> outputs,
                                 std::span<const ScoreEntry>) {
                               std::vector<int> uo(m);
                               uint32_t e = 0;
                               for (int i = 0; i < m; ++i) {
                                 uo[i] = outputs[sync.policy_of[i]];
                                 if (outputs[sync.bit_of[i]] == 1) e |= 1u << i;
                               }
                               policy(z, aug.action_index(outputs[sync.net.action_coagent],
                                                          sync.net.codec->u_index(uo), e)) += prob;
                             });
    }
    result.j_reduced = exact_objective(tab, policy);
  } else {
    result.j_reduced = build_chain_sync(mdp, sync, params).objective();
  }
  result.deviation = std::abs(result.j_async - result.j_reduced);
  result.pass = result.deviation < tol;
  return result;
}

double exact_network_objective(const TabularMdp& mdp, const CoagentNetwork& network,
                               const NetworkParams& params) {
  if (is_synchronous_acyclic(network))
    return exact_objective(mdp, exact_policy_matrix(mdp, network, params));
  return build_chain_async(mdp, network, params).objective();
}

}  // namespace coagent
