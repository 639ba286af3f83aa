#pragma once

#include <Eigen/Dense>
#include <functional>
#include <span>
#include <vector>

#include "coagent/network.hpp"
#include "coagent/reduction.hpp"

namespace coagent {

/// Gradient of J with respect to the full parameter vector, stored as
/// per-coagent blocks flattened row-major (local-state row, then output).
struct GradientVector {
  std::vector<Eigen::VectorXd> blocks;

  long total_size() const;
  Eigen::VectorXd stacked() const;
  static GradientVector zeros_like(const CoagentNetwork& network);
  static GradientVector from_tables(const std::vector<Eigen::MatrixXd>& tables);
};

struct CosineReport {
  std::vector<double> per_block;
  std::vector<bool> degenerate;  // zero-norm block, distance pinned to 1
  double mean = 0.0;             // unweighted block average
};

/// 1 - g1.g2 / (|g1||g2|), stacked across all blocks.
double cosine_distance(const GradientVector& g1, const GradientVector& g2);
/// Per-block cosine distances plus their unweighted average.
CosineReport cosine_distance_per_block(const GradientVector& g1, const GradientVector& g2);

/// Monte Carlo asynchronous local policy gradient for coagent i: average
/// over trajectories of sum_t E^i_t gamma^t G_t dln pi_i / dtheta_i.
/// Throws if a trajectory was sampled under different parameters.
Eigen::VectorXd mc_local_gradient(std::span<const AtomicTrajectory> trajectories,
                                  const CoagentNetwork& network, const NetworkParams& params,
                                  int i);

/// Stacks mc_local_gradient over all coagents in one pass.
GradientVector mc_global_gradient(std::span<const AtomicTrajectory> trajectories,
                                  const CoagentNetwork& network, const NetworkParams& params);

/// Adds one trajectory's local-gradient sums (scale * sum_t ...) into
/// per-block accumulators. Shared core of the MC estimators and REINFORCE.
void accumulate_trajectory_gradient(const CoagentNetwork& network, const PolicyCache& cache,
                                    const AtomicTrajectory& trajectory, double scale,
                                    std::vector<Eigen::MatrixXd>& accumulators);

/// Streaming batch estimate with counter-derived per-episode seeds and
/// fixed-chunk deterministic reduction: results are bit-identical for any
/// worker count. Also accumulates per-coordinate mean/variance for z-tests
/// and can snapshot the running mean at given episode counts.
struct McBatchRequest {
  long episodes = 0;
  int n_atomic = 1;
  int horizon = 1000;
  uint64_t seed = 0;
  int workers = 1;
  long chunk = 500;
  std::vector<long> snapshot_at;  // sorted episode counts; empty = none
};

struct McBatchResult {
  GradientVector mean;
  GradientVector variance;  // per-coordinate sample variance of episode estimates
  long episodes = 0;
  double mean_return = 0.0;
  std::vector<GradientVector> snapshots;  // running means at snapshot_at
};

McBatchResult sample_mc_gradient(const TabularMdp& mdp, const CoagentNetwork& network,
                                 const NetworkParams& params, const McBatchRequest& request);

/// Exact global gradient via the synchronous reduction: occupancies and
/// action values on the augmented chain, summed per parameter block.
GradientVector exact_gradient(const TabularMdp& mdp, const CoagentNetwork& network,
                              const NetworkParams& params);

/// Central finite differences of an objective over the parameter layout.
GradientVector finite_difference_gradient(
    const std::function<double(const NetworkParams&)>& objective, const NetworkParams& params,
    double h);

}  // namespace coagent
