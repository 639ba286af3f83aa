#pragma once

#include <Eigen/Dense>
#include <tuple>
#include <vector>

#include "coagent/network.hpp"
#include "coagent/tabular_mdp.hpp"

namespace coagent {

/// The reduction target: an MDP over S x U^all whose actions are
/// (a, u^all, e) tuples. Transition and reward tables are represented
/// functionally (they are fully determined by the base MDP plus the codec);
/// as_tabular() materializes them for small instances. States whose base
/// state is terminal are lifted to absorbing terminals.
struct AugmentedMdp {
  TabularMdp base;
  AugmentedCodec codec;
  long n_states = 0;
  long n_actions = 0;  // |A| * |U^all| * 2^m
  Eigen::VectorXd d0;
  std::vector<uint8_t> terminal;
  std::vector<long> live_z;     // live index -> z, base-live-major
  std::vector<long> live_row;   // z -> live index or -1

  int m() const { return static_cast<int>(codec.arities.size()); }

  long action_index(int a, long u_idx, uint32_t e_mask) const {
    return (static_cast<long>(a) * codec.n_u_all + u_idx) << m() | e_mask;
  }
  std::tuple<int, long, uint32_t> action_decode(long aidx) const {
    const uint32_t e = static_cast<uint32_t>(aidx & ((1u << m()) - 1u));
    const long au = aidx >> m();
    return {static_cast<int>(au / codec.n_u_all), au % codec.n_u_all, e};
  }

  double p(long z, long aidx, long z2) const;
  double reward_prob(long z, long aidx, long z2, int ri) const;

  /// Dense conversion; throws SizeOverflowError above max_entries table
  /// entries.
  TabularMdp as_tabular(long max_entries = 20000000) const;
};

AugmentedMdp build_augmented_mdp(const TabularMdp& mdp, const CoagentNetwork& network,
                                 long max_states = 1000000);

/// Synchronous acyclic rendering of an asynchronous network: each original
/// coagent becomes an execution-bit coagent followed by a policy coagent
/// that either samples the original softmax or copies the previous output
/// read from the augmented state. Parameter blocks are shared with the
/// original network.
struct SyncNetwork {
  CoagentNetwork net;
  std::vector<int> bit_of;     // original id -> bit coagent id
  std::vector<int> policy_of;  // original id -> policy coagent id
  std::vector<std::vector<double>> base_init;  // resolved h_0 per original coagent
};

SyncNetwork build_sync_network(const CoagentNetwork& network);

/// Exact chain over augmented states (s, u^all_prev) under a per-step joint
/// law. The law is enumerated either from the asynchronous network directly
/// or from its synchronous reduction; everything downstream is shared.
struct ChainOutcome {
  double prob = 0.0;
  int action = 0;
  long u_idx = 0;
  uint32_t exec_mask = 0;
  std::vector<ScoreEntry> scores;
};

struct ChainModel {
  const TabularMdp* base = nullptr;
  AugmentedCodec codec;
  std::vector<long> live_z;
  std::vector<std::vector<ChainOutcome>> outcomes;          // stationary law
  std::vector<std::vector<ChainOutcome>> initial_outcomes;  // forced t=0 law
  Eigen::VectorXd d0_live;
  double discount = 1.0;
  bool has_forced = false;

  long n_live() const { return static_cast<long>(live_z.size()); }
  long live_index(int base_live, long u_idx) const {
    return static_cast<long>(base_live) * codec.n_u_all + u_idx;
  }

  /// Stationary state values over live augmented states.
  Eigen::VectorXd values() const;
  /// E[G_0], including the forced initial step when present.
  double objective() const;
  /// Expected one-step backup for an outcome at live state zl.
  double outcome_backup(long zl, const ChainOutcome& outcome, const Eigen::VectorXd& v) const;
  /// Occupancy weights for score terms: t=0 weights (d0 if forced, else
  /// folded into the tail) and the discounted tail.
  struct Occupancy {
    Eigen::VectorXd initial;  // weight of initial_outcomes terms (forced only)
    Eigen::VectorXd tail;     // weight of stationary terms
  };
  Occupancy occupancy() const;
};

ChainModel build_chain_async(const TabularMdp& mdp, const CoagentNetwork& network,
                             const NetworkParams& params, long max_live = 4000);
ChainModel build_chain_sync(const TabularMdp& mdp, const SyncNetwork& sync,
                            const NetworkParams& params, long max_live = 4000);

/// Max deviation between the sync network's exact one-step law and the
/// asynchronous network's conditional law, over all live (s, u^all) pairs.
struct BehaviorEquivalence {
  double max_deviation = 0.0;
  bool pass = false;
};
BehaviorEquivalence verify_behavior_equivalence(const CoagentNetwork& network,
                                                const SyncNetwork& sync,
                                                const NetworkParams& params, double tol);

struct ObjectiveEquivalence {
  double j_async = 0.0;
  double j_reduced = 0.0;
  double deviation = 0.0;
  bool pass = false;
};
/// J from the asynchronous joint chain vs J-grave of the augmented MDP under
/// the reduction's induced policy (dense tabular route when small enough).
ObjectiveEquivalence verify_objective_equivalence(const TabularMdp& mdp,
                                                  const CoagentNetwork& network,
                                                  const NetworkParams& params, double tol);

/// Exact J of an arbitrary (possibly asynchronous/recurrent/forced) network:
/// policy-matrix route for synchronous acyclic networks, augmented-chain
/// route otherwise.
double exact_network_objective(const TabularMdp& mdp, const CoagentNetwork& network,
                               const NetworkParams& params);

}  // namespace coagent
