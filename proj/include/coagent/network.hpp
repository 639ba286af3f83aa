#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "coagent/rng.hpp"
#include "coagent/tabular_mdp.hpp"

namespace coagent {

enum class ExecKind { Always, Bernoulli, Table, Gated };

/// Per-coagent execution function: probability of sampling a fresh output
/// this atomic step. The gated kind fires iff the source coagent's output
/// at the current step equals 1.
struct ExecutionFn {
  ExecKind kind = ExecKind::Always;
  double prob = 1.0;          // Bernoulli
  std::vector<double> table;  // Table: indexed by the coagent's local-state row
  int gate_source = -1;       // Gated

  static ExecutionFn always() { return {}; }
  static ExecutionFn bernoulli(double p) {
    ExecutionFn f;
    f.kind = ExecKind::Bernoulli;
    f.prob = p;
    return f;
  }
  static ExecutionFn from_table(std::vector<double> t) {
    ExecutionFn f;
    f.kind = ExecKind::Table;
    f.table = std::move(t);
    return f;
  }
  static ExecutionFn gated(int source) {
    ExecutionFn f;
    f.kind = ExecKind::Gated;
    f.gate_source = source;
    return f;
  }
};

/// Mixed-radix encoding of a coagent's local state into a table row:
/// (state component, feedforward inputs in declared order, recurrent inputs
/// in declared order), state most significant.
struct LocalLayout {
  bool uses_state = false;
  long n_state_values = 1;        // live env (or augmented) states
  std::vector<int> input_arities;  // feedforward then recurrent radices
  long rows = 1;

  long encode(long state_row, std::span<const int> inputs) const {
    long idx = uses_state ? state_row : 0;
    for (size_t k = 0; k < inputs.size(); ++k) idx = idx * input_arities[k] + inputs[k];
    return idx;
  }
  /// Inverse of encode; returns (state_row, input values).
  std::pair<long, std::vector<int>> decode(long row) const {
    std::vector<int> inputs(input_arities.size());
    for (size_t k = input_arities.size(); k-- > 0;) {
      inputs[k] = static_cast<int>(row % input_arities[k]);
      row /= input_arities[k];
    }
    return {uses_state ? row : 0, inputs};
  }
};

enum class PolicyKind { Softmax, ExecBit, SwitchCopy };

/// Index maps for the reduction's state set S x U^all and action set
/// A x U^all x E. Also used to decode augmented states inside sync-network
/// policies.
struct AugmentedCodec {
  int n_base_states = 0;
  std::vector<int> arities;  // output arity per original coagent
  long n_u_all = 1;

  long n_states() const { return static_cast<long>(n_base_states) * n_u_all; }
  long u_index(std::span<const int> u) const {
    long idx = 0;
    for (size_t i = 0; i < u.size(); ++i) idx = idx * arities[i] + u[i];
    return idx;
  }
  std::vector<int> u_decode(long idx) const {
    std::vector<int> u(arities.size());
    for (size_t i = arities.size(); i-- > 0;) {
      u[i] = static_cast<int>(idx % arities[i]);
      idx /= arities[i];
    }
    return u;
  }
  long z_index(int s, std::span<const int> u) const { return s * n_u_all + u_index(u); }
  std::pair<int, std::vector<int>> z_decode(long z) const {
    return {static_cast<int>(z / n_u_all), u_decode(z % n_u_all)};
  }
};

/// Extra fields for the reduction's paired coagents. Both kinds evaluate
/// the original coagent's behavior from the augmented state (base state +
/// previous outputs) plus current-step feedforward values.
struct ReductionRole {
  int orig_id = -1;
  LocalLayout orig_layout;
  std::vector<int> ff_positions;    // positions in my ff list carrying the
                                    // original coagent's feedforward inputs
  std::vector<int> rec_components;  // u^all components for its recurrent inputs
  // ExecBit only:
  ExecutionFn orig_exec;
  int gate_position = -1;  // ff position of the gate source's policy coagent
  // SwitchCopy only:
  int bit_position = -1;    // ff position of my execution-bit coagent
  int self_component = -1;  // u^all component holding my previous output
};

struct CoagentSpec {
  int id = 0;
  bool uses_state = false;
  std::vector<int> feedforward_inputs;
  std::vector<int> recurrent_inputs;
  int output_arity = 1;
  ExecutionFn execution;
  std::vector<double> init_dist;  // h_0; empty means uniform
  std::optional<int> forced_initial_output;

  PolicyKind policy_kind = PolicyKind::Softmax;
  int param_block = -1;  // index into NetworkParams (softmax / switch-copy)
  std::optional<ReductionRole> reduction;
};

/// A coagent network bound to an environment's state space. Parameter
/// tables cover only non-terminal states; the episode is over once a
/// terminal state is reached.
struct CoagentNetwork {
  std::vector<CoagentSpec> coagents;
  int action_coagent = -1;
  int n_env_states = 0;
  std::vector<int> live_row;  // env (or augmented) state -> dense table row
  int n_live_states = 0;

  std::vector<LocalLayout> layouts;
  std::vector<int> topo_order;
  std::vector<std::pair<long, int>> block_dims;  // (rows, arity) per param block
  std::optional<AugmentedCodec> codec;           // set on reduction networks

  int size() const { return static_cast<int>(coagents.size()); }
  int n_blocks() const { return static_cast<int>(block_dims.size()); }

  /// Topologically sorts the feedforward graph, builds layouts and block
  /// dims, and checks spec invariants. Must be called before use.
  void finalize();
};

/// Builds a network over an MDP's live states; coagent ids are positional.
CoagentNetwork make_network(const TabularMdp& mdp, std::vector<CoagentSpec> coagents,
                            int action_coagent);

/// Execution order consistent with feedforward edges (recurrent edges are
/// exempt). Throws std::invalid_argument listing the cycle if one exists.
std::vector<int> validate_topology(const CoagentNetwork& network);

/// One softmax table per parameter block; zero-filled (uniform policies).
struct NetworkParams {
  std::vector<Eigen::MatrixXd> blocks;
  uint64_t hash() const;
  long total_size() const;
};

NetworkParams zero_params(const CoagentNetwork& network);
NetworkParams random_params(const CoagentNetwork& network, double scale, Rng& rng);

struct LocalState {
  long state_row = 0;  // dense live index; ignored unless the layout uses state
  std::vector<int> inputs;  // feedforward then recurrent values
  long index = 0;
};

/// Numerically stable softmax of a table row.
Eigen::VectorXd softmax_row(const Eigen::MatrixXd& table, long row);

/// The coagent's output distribution at local state x.
Eigen::VectorXd coagent_policy(const CoagentNetwork& network, const NetworkParams& params, int i,
                               const LocalState& x);

/// d ln pi / d theta restricted to the touched table row:
/// indicator(u) - softmax(row). Zero elsewhere.
struct SparseRowGradient {
  long row = 0;
  Eigen::VectorXd values;
};
SparseRowGradient logprob_gradient(const Eigen::MatrixXd& table, long row, int output);

/// Cached per-row softmax probabilities for frozen parameters.
struct PolicyCache {
  std::vector<Eigen::MatrixXd> probs;  // per block
  uint64_t params_hash = 0;
};
PolicyCache build_policy_cache(const CoagentNetwork& network, const NetworkParams& params);

struct StepResult {
  uint32_t exec_mask = 0;
  std::vector<int> outputs;
  std::vector<long> rows;  // local-state row per coagent (-1 at terminal states)
};

/// Runs every coagent once in topological order: sample the execution bit,
/// then a fresh output if executing, else copy the previous output.
/// `initial_step` applies forced initial outputs.
StepResult atomic_step(const CoagentNetwork& network, const NetworkParams& params, int s,
                       std::span<const int> u_all_prev, Rng& rng, bool initial_step = false,
                       const PolicyCache* cache = nullptr);

struct AtomicStepRecord {
  int state = 0;
  uint32_t exec_mask = 0;
  std::vector<int> outputs;
  std::vector<long> rows;
  int env_action = -1;  // set on environment-update steps only
  double reward = 0.0;
};

struct AtomicTrajectory {
  int n_atomic = 1;
  double atomic_discount = 1.0;
  std::vector<int> initial_outputs;  // U^all_{-1}
  std::vector<AtomicStepRecord> steps;
  bool truncated = false;
  uint64_t params_hash = 0;

  double undiscounted_return() const;
  /// One atomic step per line: t,s,E,U,a,r (E as a bit string, U '|'-joined).
  std::string to_lines() const;
};

/// Samples a full episode. The environment updates every n_atomic-th atomic
/// step using the action coagent's current output; other atomic steps carry
/// reward 0. Stops at a terminal state or after `horizon` environment steps
/// (flagged as truncated).
AtomicTrajectory run_episode(const TabularMdp& mdp, const CoagentNetwork& network,
                             const NetworkParams& params, int n_atomic, int horizon, Rng& rng,
                             const PolicyCache* cache = nullptr);

/// A factor of the joint per-step law contributed by a parameterized
/// sampling decision: pi_block(row, output).
struct ScoreEntry {
  int block = 0;
  long row = 0;
  int output = 0;
};

using OutcomeVisitor = std::function<void(double prob, uint32_t exec_mask,
                                          std::span<const int> outputs,
                                          std::span<const ScoreEntry> scores)>;

/// Exact enumeration of one step's joint law
/// Pr(E_t, U^all_t | S_t = s, U^all_{t-1} = u_prev). At a terminal state the
/// convention is: every coagent executes and outputs uniformly (a
/// parameter-free law; the objective and gradients do not depend on it).
void for_each_joint_outcome(const CoagentNetwork& network, const NetworkParams& params, int s,
                            std::span<const int> u_all_prev, bool initial_step,
                            const OutcomeVisitor& visit, const PolicyCache* cache = nullptr);

/// Pr(A_t = a | S_t = s) for synchronous acyclic networks, by exact
/// enumeration. Rows for terminal states are uniform placeholders.
Eigen::MatrixXd exact_policy_matrix(const TabularMdp& mdp, const CoagentNetwork& network,
                                    const NetworkParams& params);

/// True if every execution function is Always and no recurrent edges or
/// forced initial outputs are present.
bool is_synchronous_acyclic(const CoagentNetwork& network);

}  // namespace coagent
