#include "coagent/network.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace coagent {

namespace {

std::vector<int> topo_sort_or_throw(const std::vector<CoagentSpec>& coagents) {
  const int m = static_cast<int>(coagents.size());
  std::vector<std::vector<int>> succ(m);
  std::vector<int> indeg(m, 0);
  for (const auto& c : coagents)
    for (int src : c.feedforward_inputs) {
      if (src < 0 || src >= m) throw std::invalid_argument("network: feedforward input out of range");
      succ[src].push_back(c.id);
      ++indeg[c.id];
    }
  std::vector<int> order;
  order.reserve(m);
  std::vector<int> ready;
  for (int i = 0; i < m; ++i)
    if (indeg[i] == 0) ready.push_back(i);
  // Smallest-id-first Kahn keeps the order deterministic.
  while (!ready.empty()) {
    std::sort(ready.begin(), ready.end(), std::greater<int>());
    const int v = ready.back();
    ready.pop_back();
    order.push_back(v);
    for (int w : succ[v])
      if (--indeg[w] == 0) ready.push_back(w);
  }
  if (static_cast<int>(order.size()) != m) {
    // Extract one cycle for the error message.
    std::vector<int> state(m, 0);
    std::vector<int> stack;
    std::vector<int> cycle;
    std::function<bool(int)> dfs = [&](int v) {
      state[v] = 1;
      stack.push_back(v);
      for (int w : succ[v]) {
        if (state[w] == 1) {
          auto it = std::find(stack.begin(), stack.end(), w);
          cycle.assign(it, stack.end());
          return true;
        }
        if (state[w] == 0 && dfs(w)) return true;
      }
      state[v] = 2;
      stack.pop_back();
      return false;
    };
    for (int v = 0; v < m && cycle.empty(); ++v)
      if (state[v] == 0) dfs(v);
    std::ostringstream os;
    os << "network: feedforward cycle {";
    for (size_t i = 0; i < cycle.size(); ++i) os << (i ? " -> " : "") << cycle[i];
    os << "}";
    throw std::invalid_argument(os.str());
  }
  return order;
}

}  // namespace

void CoagentNetwork::finalize() {
  const int m = size();
  if (m == 0) throw std::invalid_argument("network: empty");
  if (m > 31) throw std::invalid_argument("network: too many coagents for the execution mask");
  for (int i = 0; i < m; ++i)
    if (coagents[i].id != i) throw std::invalid_argument("network: coagent ids must be positional");

  topo_order = topo_sort_or_throw(coagents);
  std::vector<int> topo_pos(m);
  for (int k = 0; k < m; ++k) topo_pos[topo_order[k]] = k;

  layouts.assign(m, {});
  for (int i = 0; i < m; ++i) {
    auto& c = coagents[i];
    if (c.output_arity < 1) throw std::invalid_argument("network: output arity must be >= 1");
    if (!c.init_dist.empty()) {
      if (static_cast<int>(c.init_dist.size()) != c.output_arity)
        throw std::invalid_argument("network: init_dist size mismatch");
      double sum = 0.0;
      for (double p : c.init_dist) {
        if (p < 0) throw std::invalid_argument("network: negative init_dist entry");
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-12)
        throw std::invalid_argument("network: init_dist does not sum to 1");
    }
    if (c.forced_initial_output &&
        (*c.forced_initial_output < 0 || *c.forced_initial_output >= c.output_arity))
      throw std::invalid_argument("network: forced initial output out of range");
    for (int src : c.feedforward_inputs)
      if (topo_pos[src] >= topo_pos[i])
        throw std::invalid_argument("network: feedforward input not earlier in topological order");
    for (int src : c.recurrent_inputs)
      if (src < 0 || src >= m) throw std::invalid_argument("network: recurrent input out of range");
    if (c.execution.kind == ExecKind::Gated) {
      const auto& ff = c.feedforward_inputs;
      if (std::find(ff.begin(), ff.end(), c.execution.gate_source) == ff.end())
        throw std::invalid_argument(
            "network: gated execution source must be a feedforward input of the coagent");
    }
    if (c.execution.kind == ExecKind::Bernoulli &&
        (c.execution.prob < 0.0 || c.execution.prob > 1.0))
      throw std::invalid_argument("network: execution probability out of [0,1]");

    LocalLayout& lay = layouts[i];
    lay.uses_state = c.uses_state;
    lay.n_state_values = n_live_states;
    lay.rows = c.uses_state ? n_live_states : 1;
    for (int src : c.feedforward_inputs) lay.input_arities.push_back(coagents[src].output_arity);
    for (int src : c.recurrent_inputs) lay.input_arities.push_back(coagents[src].output_arity);
    for (int r : lay.input_arities) lay.rows *= r;
    if (lay.rows <= 0) throw std::invalid_argument("network: empty local-state space");

    if (c.execution.kind == ExecKind::Table) {
      if (static_cast<long>(c.execution.table.size()) != lay.rows)
        throw std::invalid_argument("network: execution table size mismatch");
      for (double p : c.execution.table)
        if (p < 0.0 || p > 1.0)
          throw std::invalid_argument("network: execution probability out of [0,1]");
    }
  }

  int max_block = -1;
  for (const auto& c : coagents)
    if (c.param_block > max_block) max_block = c.param_block;
  block_dims.assign(max_block + 1, {0, 0});
  for (const auto& c : coagents) {
    if (c.param_block < 0) continue;
    const LocalLayout& lay =
        (c.policy_kind == PolicyKind::SwitchCopy) ? c.reduction->orig_layout : layouts[c.id];
    block_dims[c.param_block] = {lay.rows, c.output_arity};
  }
  if (action_coagent < 0 || action_coagent >= m)
    throw std::invalid_argument("network: action coagent out of range");
}

CoagentNetwork make_network(const TabularMdp& mdp, std::vector<CoagentSpec> coagents,
                            int action_coagent) {
  CoagentNetwork net;
  net.coagents = std::move(coagents);
  for (size_t i = 0; i < net.coagents.size(); ++i) {
    net.coagents[i].id = static_cast<int>(i);
    if (net.coagents[i].policy_kind == PolicyKind::Softmax && net.coagents[i].param_block < 0)
      net.coagents[i].param_block = static_cast<int>(i);
  }
  net.action_coagent = action_coagent;
  net.n_env_states = mdp.n_states;
  net.live_row = mdp.live_row;
  net.n_live_states = mdp.n_live();
  net.finalize();
  return net;
}

std::vector<int> validate_topology(const CoagentNetwork& network) {
  return topo_sort_or_throw(network.coagents);
}

uint64_t NetworkParams::hash() const {
  uint64_t h = 1469598103934665603ULL;  // FNV-1a
  auto mix = [&h](const void* data, size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& b : blocks) {
    const long dims[2] = {b.rows(), b.cols()};
    mix(dims, sizeof(dims));
    mix(b.data(), sizeof(double) * static_cast<size_t>(b.size()));
  }
  return h;
}

long NetworkParams::total_size() const {
  long n = 0;
  for (const auto& b : blocks) n += b.size();
  return n;
}

NetworkParams zero_params(const CoagentNetwork& network) {
  NetworkParams p;
  p.blocks.reserve(network.block_dims.size());
  for (const auto& [rows, arity] : network.block_dims)
    p.blocks.emplace_back(Eigen::MatrixXd::Zero(rows, arity));
  return p;
}

NetworkParams random_params(const CoagentNetwork& network, double scale, Rng& rng) {
  NetworkParams p = zero_params(network);
  for (auto& b : p.blocks)
    for (long r = 0; r < b.rows(); ++r)
      for (long c = 0; c < b.cols(); ++c) b(r, c) = scale * rng.normal();
  return p;
}

Eigen::VectorXd softmax_row(const Eigen::MatrixXd& table, long row) {
  Eigen::VectorXd v = table.row(row).transpose();
  const double mx = v.maxCoeff();
  v = (v.array() - mx).exp();
  return v / v.sum();
}

namespace {

/// Decodes the augmented state and current-step feedforward values into the
/// original coagent's local state row.
long orig_row_for_reduction(const CoagentNetwork& net, const ReductionRole& role, long state_row,
                            std::span<const int> inputs) {
  const auto& codec = *net.codec;
  // state_row indexes live augmented states; live augmented states are
  // exactly (live base s) x u_all, enumerated base-major.
  const long u_idx = state_row % codec.n_u_all;
  const long base_live = state_row / codec.n_u_all;
  const std::vector<int> u_all = codec.u_decode(u_idx);
  std::vector<int> orig_inputs;
  orig_inputs.reserve(role.ff_positions.size() + role.rec_components.size());
  for (int pos : role.ff_positions) orig_inputs.push_back(inputs[pos]);
  for (int comp : role.rec_components) orig_inputs.push_back(u_all[comp]);
  return role.orig_layout.encode(role.orig_layout.uses_state ? base_live : 0, orig_inputs);
}

double exec_probability(const CoagentNetwork& net, int i, const LocalState& x,
                        std::span<const int> outputs_this_step) {
  const auto& exec = net.coagents[i].execution;
  switch (exec.kind) {
    case ExecKind::Always:
      return 1.0;
    case ExecKind::Bernoulli:
      return exec.prob;
    case ExecKind::Table:
      return exec.table[static_cast<size_t>(x.index)];
    case ExecKind::Gated:
      return outputs_this_step[exec.gate_source] == 1 ? 1.0 : 0.0;
  }
  return 1.0;
}

Eigen::VectorXd policy_probs(const CoagentNetwork& net, const NetworkParams& params, int i,
                             const LocalState& x, const PolicyCache* cache) {
  const auto& c = net.coagents[i];
  switch (c.policy_kind) {
    case PolicyKind::Softmax:
      if (cache) return cache->probs[c.param_block].row(x.index).transpose();
      return softmax_row(params.blocks[c.param_block], x.index);
    case PolicyKind::ExecBit: {
      const auto& role = *c.reduction;
      double beta;
      if (role.orig_exec.kind == ExecKind::Gated) {
        beta = x.inputs[role.gate_position] == 1 ? 1.0 : 0.0;
      } else if (role.orig_exec.kind == ExecKind::Table) {
        const long row = orig_row_for_reduction(net, role, x.state_row, x.inputs);
        beta = role.orig_exec.table[static_cast<size_t>(row)];
      } else if (role.orig_exec.kind == ExecKind::Bernoulli) {
        beta = role.orig_exec.prob;
      } else {
        beta = 1.0;
      }
      Eigen::VectorXd p(2);
      p << 1.0 - beta, beta;
      return p;
    }
    case PolicyKind::SwitchCopy: {
      const auto& role = *c.reduction;
      if (x.inputs[role.bit_position] == 1) {
        const long row = orig_row_for_reduction(net, role, x.state_row, x.inputs);
        if (cache) return cache->probs[c.param_block].row(row).transpose();
        return softmax_row(params.blocks[c.param_block], row);
      }
      const auto& codec = *net.codec;
      const std::vector<int> u_all = codec.u_decode(x.state_row % codec.n_u_all);
      Eigen::VectorXd p = Eigen::VectorXd::Zero(c.output_arity);
      p[u_all[role.self_component]] = 1.0;
      return p;
    }
  }
  return Eigen::VectorXd::Constant(c.output_arity, 1.0 / c.output_arity);
}

LocalState build_local_state(const CoagentNetwork& net, int i, long state_row,
                             std::span<const int> outputs_this_step,
                             std::span<const int> u_all_prev) {
  const auto& c = net.coagents[i];
  LocalState x;
  x.state_row = state_row;
  x.inputs.reserve(c.feedforward_inputs.size() + c.recurrent_inputs.size());
  for (int src : c.feedforward_inputs) x.inputs.push_back(outputs_this_step[src]);
  for (int src : c.recurrent_inputs) x.inputs.push_back(u_all_prev[src]);
  x.index = net.layouts[i].encode(state_row, x.inputs);
  return x;
}

}  // namespace

Eigen::VectorXd coagent_policy(const CoagentNetwork& network, const NetworkParams& params, int i,
                               const LocalState& x) {
  return policy_probs(network, params, i, x, nullptr);
}

SparseRowGradient logprob_gradient(const Eigen::MatrixXd& table, long row, int output) {
  SparseRowGradient g;
  g.row = row;
  g.values = -softmax_row(table, row);
  g.values[output] += 1.0;
  return g;
}

PolicyCache build_policy_cache(const CoagentNetwork& network, const NetworkParams& params) {
  PolicyCache cache;
  cache.params_hash = params.hash();
  cache.probs.resize(params.blocks.size());
  for (size_t b = 0; b < params.blocks.size(); ++b) {
    const auto& table = params.blocks[b];
    Eigen::MatrixXd probs(table.rows(), table.cols());
    for (long r = 0; r < table.rows(); ++r) probs.row(r) = softmax_row(table, r).transpose();
    cache.probs[b] = std::move(probs);
  }
  (void)network;
  return cache;
}

StepResult atomic_step(const CoagentNetwork& network, const NetworkParams& params, int s,
                       std::span<const int> u_all_prev, Rng& rng, bool initial_step,
                       const PolicyCache* cache) {
  const int m = network.size();
  if (static_cast<int>(u_all_prev.size()) != m)
    throw std::invalid_argument("atomic_step: previous output vector size mismatch");
  if (s < 0 || s >= network.n_env_states) throw std::out_of_range("atomic_step: state index");
  const long state_row = network.live_row[s];
  if (state_row < 0) throw std::invalid_argument("atomic_step: terminal state");

  StepResult result;
  result.outputs.assign(m, 0);
  result.rows.assign(m, -1);
  for (int i : network.topo_order) {
    const auto& c = network.coagents[i];
    const LocalState x = build_local_state(network, i, state_row, result.outputs, u_all_prev);
    result.rows[i] = x.index;
    if (initial_step && c.forced_initial_output) {
      result.exec_mask |= 1u << i;
      result.outputs[i] = *c.forced_initial_output;
      continue;
    }
    const double beta = exec_probability(network, i, x, result.outputs);
    const bool executes = beta >= 1.0 || (beta > 0.0 && rng.uniform() < beta);
    if (executes) {
      result.exec_mask |= 1u << i;
      const Eigen::VectorXd probs = policy_probs(network, params, i, x, cache);
      result.outputs[i] = rng.categorical({probs.data(), static_cast<size_t>(probs.size())});
    } else {
      result.outputs[i] = u_all_prev[i];
    }
  }
  return result;
}

double AtomicTrajectory::undiscounted_return() const {
  double total = 0.0;
  for (const auto& step : steps) total += step.reward;
  return total;
}

std::string AtomicTrajectory::to_lines() const {
  std::ostringstream os;
  os << "t,s,E,U,a,r\n";
  for (size_t t = 0; t < steps.size(); ++t) {
    const auto& st = steps[t];
    os << t << ',' << st.state << ',';
    for (size_t i = 0; i < st.outputs.size(); ++i) os << ((st.exec_mask >> i) & 1u);
    os << ',';
    for (size_t i = 0; i < st.outputs.size(); ++i) os << (i ? "|" : "") << st.outputs[i];
    os << ',' << st.env_action << ',' << st.reward << '\n';
  }
  return os.str();
}

AtomicTrajectory run_episode(const TabularMdp& mdp, const CoagentNetwork& network,
                             const NetworkParams& params, int n_atomic, int horizon, Rng& rng,
                             const PolicyCache* cache) {
  if (n_atomic < 1) throw std::invalid_argument("run_episode: n_atomic must be >= 1");
  if (network.coagents[network.action_coagent].output_arity != mdp.n_actions)
    throw std::invalid_argument("run_episode: action coagent arity != n_actions");

  AtomicTrajectory traj;
  traj.n_atomic = n_atomic;
  traj.atomic_discount = n_atomic == 1 ? mdp.discount : std::pow(mdp.discount, 1.0 / n_atomic);
  traj.params_hash = params.hash();

  const int m = network.size();
  traj.initial_outputs.resize(m);
  for (int i = 0; i < m; ++i) {
    const auto& c = network.coagents[i];
    if (c.init_dist.empty())
      traj.initial_outputs[i] = rng.uniform_int(c.output_arity);
    else
      traj.initial_outputs[i] = rng.categorical(c.init_dist);
  }

  int s = rng.categorical({mdp.initial_dist.data(), static_cast<size_t>(mdp.n_states)});
  std::vector<int> u_prev = traj.initial_outputs;
  int env_steps = 0;
  for (long t = 0; !mdp.is_terminal(s); ++t) {
    StepResult step = atomic_step(network, params, s, u_prev, rng, t == 0, cache);
    AtomicStepRecord rec;
    rec.state = s;
    rec.exec_mask = step.exec_mask;
    rec.outputs = step.outputs;
    rec.rows = std::move(step.rows);
    if ((t + 1) % n_atomic == 0) {
      rec.env_action = rec.outputs[network.action_coagent];
      const auto [s2, r] = sample_step(mdp, s, rec.env_action, rng);
      rec.reward = r;
      s = s2;
      ++env_steps;
    }
    u_prev = rec.outputs;
    traj.steps.push_back(std::move(rec));
    if (env_steps >= horizon && !mdp.is_terminal(s)) {
      traj.truncated = true;
      break;
    }
  }
  return traj;
}

namespace {

struct OutcomeEnumerator {
  const CoagentNetwork& net;
  const NetworkParams& params;
  std::span<const int> u_prev;
  bool initial_step;
  const OutcomeVisitor& visit;
  const PolicyCache* cache;
  long state_row = 0;

  std::vector<int> outputs;
  std::vector<ScoreEntry> scores;
  uint32_t exec_mask = 0;

  void recurse(size_t pos, double prob) {
    if (prob == 0.0) return;
    if (pos == net.topo_order.size()) {
      visit(prob, exec_mask, outputs, scores);
      return;
    }
    const int i = net.topo_order[pos];
    const auto& c = net.coagents[i];
    const LocalState x = build_local_state(net, i, state_row, outputs, u_prev);

    if (initial_step && c.forced_initial_output) {
      exec_mask |= 1u << i;
      outputs[i] = *c.forced_initial_output;
      recurse(pos + 1, prob);
      exec_mask &= ~(1u << i);
      return;
    }

    const double beta = exec_probability(net, i, x, outputs);
    if (beta > 0.0) {
      const Eigen::VectorXd probs = policy_probs(net, params, i, x, cache);
      exec_mask |= 1u << i;
      const bool scored = c.param_block >= 0 &&
                          (c.policy_kind == PolicyKind::Softmax ||
                           (c.policy_kind == PolicyKind::SwitchCopy &&
                            x.inputs[c.reduction->bit_position] == 1));
      long score_row = x.index;
      if (c.policy_kind == PolicyKind::SwitchCopy && scored)
        score_row = orig_row_for_reduction(net, *c.reduction, x.state_row, x.inputs);
      for (int u = 0; u < c.output_arity; ++u) {
        if (probs[u] == 0.0) continue;
        outputs[i] = u;
        if (scored) {
          scores.push_back({c.param_block, score_row, u});
          recurse(pos + 1, prob * beta * probs[u]);
          scores.pop_back();
        } else {
          recurse(pos + 1, prob * beta * probs[u]);
        }
      }
      exec_mask &= ~(1u << i);
    }
    if (beta < 1.0) {
      outputs[i] = u_prev[i];
      recurse(pos + 1, prob * (1.0 - beta));
    }
  }
};

}  // namespace

void for_each_joint_outcome(const CoagentNetwork& network, const NetworkParams& params, int s,
                            std::span<const int> u_all_prev, bool initial_step,
                            const OutcomeVisitor& visit, const PolicyCache* cache) {
  const int m = network.size();
  const long state_row = network.live_row[s];
  if (state_row < 0) {
    // Absorbing convention: everyone executes, outputs uniform, no scores.
    std::vector<int> outputs(m, 0);
    const uint32_t all = (1u << m) - 1u;
    double prob = 1.0;
    for (const auto& c : network.coagents) prob /= c.output_arity;
    std::function<void(int)> rec = [&](int i) {
      if (i == m) {
        visit(prob, all, outputs, {});
        return;
      }
      for (int u = 0; u < network.coagents[i].output_arity; ++u) {
        outputs[i] = u;
        rec(i + 1);
      }
    };
    rec(0);
    return;
  }
  OutcomeEnumerator en{network, params, u_all_prev, initial_step, visit, cache};
  en.state_row = state_row;
  en.outputs.assign(m, 0);
  en.recurse(0, 1.0);
}

bool is_synchronous_acyclic(const CoagentNetwork& network) {
  for (const auto& c : network.coagents) {
    if (c.execution.kind != ExecKind::Always) return false;
    if (!c.recurrent_inputs.empty()) return false;
    if (c.forced_initial_output) return false;
  }
  return true;
}

Eigen::MatrixXd exact_policy_matrix(const TabularMdp& mdp, const CoagentNetwork& network,
                                    const NetworkParams& params) {
  if (!is_synchronous_acyclic(network))
    throw std::invalid_argument("exact_policy_matrix: network must be synchronous and acyclic");
  Eigen::MatrixXd policy =
      Eigen::MatrixXd::Constant(mdp.n_states, mdp.n_actions, 1.0 / mdp.n_actions);
  const std::vector<int> u_prev(network.size(), 0);
  for (int s = 0; s < mdp.n_states; ++s) {
    if (mdp.is_terminal(s)) continue;
    policy.row(s).setZero();
    for_each_joint_outcome(network, params, s, u_prev, false,
                           [&](double prob, uint32_t, std::span<const int> outputs,
                               std::span<const ScoreEntry>) {
                             policy(s, outputs[network.action_coagent]) += prob;
                           });
  }
  return policy;
}

}  // namespace coagent
