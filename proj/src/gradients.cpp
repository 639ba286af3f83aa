#include "coagent/gradients.hpp"

#include <algorithm>
#include <cmath>

#include "coagent/parallel.hpp"

namespace coagent {

long GradientVector::total_size() const {
  long n = 0;
  for (const auto& b : blocks) n += b.size();
  return n;
}

Eigen::VectorXd GradientVector::stacked() const {
  Eigen::VectorXd out(total_size());
  long at = 0;
  for (const auto& b : blocks) {
    out.segment(at, b.size()) = b;
    at += b.size();
  }
  return out;
}

GradientVector GradientVector::zeros_like(const CoagentNetwork& network) {
  GradientVector g;
  g.blocks.reserve(network.block_dims.size());
  for (const auto& [rows, arity] : network.block_dims)
    g.blocks.emplace_back(Eigen::VectorXd::Zero(rows * arity));
  return g;
}

GradientVector GradientVector::from_tables(const std::vector<Eigen::MatrixXd>& tables) {
  GradientVector g;
  g.blocks.reserve(tables.size());
  for (const auto& t : tables) {
    Eigen::VectorXd flat(t.size());
    for (long r = 0; r < t.rows(); ++r)
      for (long c = 0; c < t.cols(); ++c) flat[r * t.cols() + c] = t(r, c);
    g.blocks.push_back(std::move(flat));
  }
  return g;
}

double cosine_distance(const GradientVector& g1, const GradientVector& g2) {
  const Eigen::VectorXd a = g1.stacked();
  const Eigen::VectorXd b = g2.stacked();
  if (a.size() != b.size()) throw std::invalid_argument("cosine_distance: layout mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 1.0;
  return 1.0 - a.dot(b) / (na * nb);
}

CosineReport cosine_distance_per_block(const GradientVector& g1, const GradientVector& g2) {
  if (g1.blocks.size() != g2.blocks.size())
    throw std::invalid_argument("cosine_distance: block count mismatch");
  CosineReport report;
  double total = 0.0;
  for (size_t b = 0; b < g1.blocks.size(); ++b) {
    if (g1.blocks[b].size() != g2.blocks[b].size())
      throw std::invalid_argument("cosine_distance: block layout mismatch");
    const double na = g1.blocks[b].norm();
    const double nb = g2.blocks[b].norm();
    double dist;
    bool degenerate = false;
    if (na == 0.0 || nb == 0.0) {
      dist = 1.0;
      degenerate = true;
    } else {
      dist = 1.0 - g1.blocks[b].dot(g2.blocks[b]) / (na * nb);
    }
    report.per_block.push_back(dist);
    report.degenerate.push_back(degenerate);
    total += dist;
  }
  report.mean = total / static_cast<double>(g1.blocks.size());
  return report;
}

void accumulate_trajectory_gradient(const CoagentNetwork& network, const PolicyCache& cache,
                                    const AtomicTrajectory& trajectory, double scale,
                                    std::vector<Eigen::MatrixXd>& accumulators) {
  const size_t steps = trajectory.steps.size();
  if (steps == 0) return;
  // Backward pass for atomic-discounted returns-to-go.
  std::vector<double> returns(steps);
  double g = 0.0;
  for (size_t t = steps; t-- > 0;) {
    g = trajectory.steps[t].reward + trajectory.atomic_discount * g;
    returns[t] = g;
  }
  double weight = scale;
  for (size_t t = 0; t < steps; ++t) {
    const auto& step = trajectory.steps[t];
    const double w = weight * returns[t];
    if (w != 0.0) {
      for (int i = 0; i < network.size(); ++i) {
        if (((step.exec_mask >> i) & 1u) == 0) continue;
        const auto& c = network.coagents[i];
        if (c.param_block < 0 || c.policy_kind != PolicyKind::Softmax) continue;
        if (t == 0 && c.forced_initial_output) continue;  // theta-free forced draw
        const long row = step.rows[i];
        auto block = accumulators[c.param_block].row(row);
        const auto probs = cache.probs[c.param_block].row(row);
        block -= w * probs;
        block[step.outputs[i]] += w;
      }
    }
    weight *= trajectory.atomic_discount;
  }
}

namespace {

std::vector<Eigen::MatrixXd> zero_tables(const CoagentNetwork& network) {
  std::vector<Eigen::MatrixXd> tables;
  tables.reserve(network.block_dims.size());
  for (const auto& [rows, arity] : network.block_dims)
    tables.emplace_back(Eigen::MatrixXd::Zero(rows, arity));
  return tables;
}

void check_on_policy(const AtomicTrajectory& trajectory, const NetworkParams& params) {
  if (trajectory.params_hash != params.hash())
    throw std::invalid_argument(
        "trajectory batch is off-policy: parameter hash does not match");
}

}  // namespace

Eigen::VectorXd mc_local_gradient(std::span<const AtomicTrajectory> trajectories,
                                  const CoagentNetwork& network, const NetworkParams& params,
                                  int i) {
  GradientVector g = mc_global_gradient(trajectories, network, params);
  return g.blocks[network.coagents[i].param_block];
}

GradientVector mc_global_gradient(std::span<const AtomicTrajectory> trajectories,
                                  const CoagentNetwork& network, const NetworkParams& params) {
  const PolicyCache cache = build_policy_cache(network, params);
  auto tables = zero_tables(network);
  for (const auto& traj : trajectories) {
    check_on_policy(traj, params);
    accumulate_trajectory_gradient(network, cache, traj, 1.0, tables);
  }
  const double inv = trajectories.empty() ? 0.0 : 1.0 / static_cast<double>(trajectories.size());
  for (auto& t : tables) t *= inv;
  return GradientVector::from_tables(tables);
}

McBatchResult sample_mc_gradient(const TabularMdp& mdp, const CoagentNetwork& network,
                                 const NetworkParams& params, const McBatchRequest& request) {
  const PolicyCache cache = build_policy_cache(network, params);
  const long chunk = std::max<long>(1, request.chunk);
  const long n_chunks = (request.episodes + chunk - 1) / chunk;

  struct ChunkSums {
    std::vector<Eigen::MatrixXd> sum;
    std::vector<Eigen::MatrixXd> sumsq;
    double return_sum = 0.0;
  };
  std::vector<ChunkSums> partials(static_cast<size_t>(n_chunks));

  parallel_chunks(n_chunks, request.workers, [&](long ci) {
    ChunkSums& part = partials[static_cast<size_t>(ci)];
    part.sum = zero_tables(network);
    part.sumsq = zero_tables(network);
    auto episode_tables = zero_tables(network);
    Rng rng;
    const long begin = ci * chunk;
    const long end = std::min(request.episodes, begin + chunk);
    for (long ep = begin; ep < end; ++ep) {
      rng.reseed(derive_seed(request.seed, static_cast<uint64_t>(ep)));
      const AtomicTrajectory traj =
          run_episode(mdp, network, params, request.n_atomic, request.horizon, rng, &cache);
      for (auto& t : episode_tables) t.setZero();
      accumulate_trajectory_gradient(network, cache, traj, 1.0, episode_tables);
      for (size_t b = 0; b < episode_tables.size(); ++b) {
        part.sum[b] += episode_tables[b];
        part.sumsq[b] += episode_tables[b].cwiseProduct(episode_tables[b]);
      }
      part.return_sum += traj.undiscounted_return();
    }
  });

  // Deterministic tree reduction: combine chunk partials in index order.
  auto sum = zero_tables(network);
  auto sumsq = zero_tables(network);
  double return_sum = 0.0;
  McBatchResult result;
  size_t next_snapshot = 0;
  long done = 0;
  for (long ci = 0; ci < n_chunks; ++ci) {
    const auto& part = partials[static_cast<size_t>(ci)];
    for (size_t b = 0; b < sum.size(); ++b) {
      sum[b] += part.sum[b];
      sumsq[b] += part.sumsq[b];
    }
    return_sum += part.return_sum;
    done = std::min(request.episodes, (ci + 1) * chunk);
    while (next_snapshot < request.snapshot_at.size() &&
           request.snapshot_at[next_snapshot] == done) {
      auto mean_tables = sum;
      for (auto& t : mean_tables) t /= static_cast<double>(done);
      result.snapshots.push_back(GradientVector::from_tables(mean_tables));
      ++next_snapshot;
    }
  }
  if (next_snapshot < request.snapshot_at.size())
    throw std::invalid_argument("sample_mc_gradient: snapshot episode counts must be multiples "
                                "of the chunk size within the batch");

  const double n = static_cast<double>(std::max<long>(1, request.episodes));
  auto mean_tables = sum;
  for (auto& t : mean_tables) t /= n;
  auto var_tables = sumsq;
  for (size_t b = 0; b < var_tables.size(); ++b) {
    var_tables[b] = (var_tables[b] - n * mean_tables[b].cwiseProduct(mean_tables[b])) /
                    std::max(1.0, n - 1.0);
    var_tables[b] = var_tables[b].cwiseMax(0.0);
  }
  result.mean = GradientVector::from_tables(mean_tables);
  result.variance = GradientVector::from_tables(var_tables);
  result.episodes = request.episodes;
  result.mean_return = return_sum / n;
  return result;
}

GradientVector exact_gradient(const TabularMdp& mdp, const CoagentNetwork& network,
                              const NetworkParams& params) {
  const SyncNetwork sync = build_sync_network(network);
  const ChainModel chain = build_chain_sync(mdp, sync, params);
  const Eigen::VectorXd v = chain.values();
  const ChainModel::Occupancy occ = chain.occupancy();
  const PolicyCache cache = build_policy_cache(network, params);

  auto tables = zero_tables(network);
  auto add_terms = [&](long zl, const std::vector<ChainOutcome>& outcomes, double weight) {
    if (weight == 0.0) return;
    for (const auto& o : outcomes) {
      if (o.scores.empty()) continue;
      const double scaled = weight * o.prob * chain.outcome_backup(zl, o, v);
      if (scaled == 0.0) continue;
      for (const auto& sc : o.scores) {
        auto row = tables[sc.block].row(sc.row);
        const auto probs = cache.probs[sc.block].row(sc.row);
        row -= scaled * probs;
        row[sc.output] += scaled;
      }
    }
  };
  for (long zl = 0; zl < chain.n_live(); ++zl) {
    if (chain.has_forced)
      add_terms(zl, chain.initial_outcomes[static_cast<size_t>(zl)], occ.initial[zl]);
    add_terms(zl, chain.outcomes[static_cast<size_t>(zl)], occ.tail[zl]);
  }
  return GradientVector::from_tables(tables);
}

GradientVector finite_difference_gradient(
    const std::function<double(const NetworkParams&)>& objective, const NetworkParams& params,
    double h) {
  if (h <= 0.0) throw std::invalid_argument("finite_difference_gradient: h must be positive");
  GradientVector g;
  NetworkParams probe = params;
  for (size_t b = 0; b < params.blocks.size(); ++b) {
    Eigen::VectorXd block(params.blocks[b].size());
    for (long r = 0; r < params.blocks[b].rows(); ++r) {
      for (long c = 0; c < params.blocks[b].cols(); ++c) {
        const double saved = probe.blocks[b](r, c);
        probe.blocks[b](r, c) = saved + h;
        const double up = objective(probe);
        probe.blocks[b](r, c) = saved - h;
        const double down = objective(probe);
        probe.blocks[b](r, c) = saved;
        if (!std::isfinite(up) || !std::isfinite(down))
          throw std::runtime_error("finite_difference_gradient: non-finite objective at block " +
                                   std::to_string(b) + " row " + std::to_string(r) + " col " +
                                   std::to_string(c));
        block[r * params.blocks[b].cols() + c] = (up - down) / (2.0 * h);
      }
    }
    g.blocks.push_back(std::move(block));
  }
  return g;
}

}  // namespace coagent
