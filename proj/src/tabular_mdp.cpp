#include "coagent/tabular_mdp.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <sstream>

namespace coagent {

namespace {

constexpr double kStochasticTol = 1e-12;

std::string state_list(const std::vector<int>& states) {
  std::ostringstream os;
  for (size_t i = 0; i < states.size(); ++i) {
    if (i) os << ", ";
    os << states[i];
  }
  return os.str();
}

}  // namespace

void TabularMdp::validate() {
  if (n_states <= 0 || n_actions <= 0) throw std::invalid_argument("mdp: empty state/action set");
  if (static_cast<int>(terminal.size()) != n_states)
    throw std::invalid_argument("mdp: terminal flag size mismatch");
  if (initial_dist.size() != n_states) throw std::invalid_argument("mdp: initial_dist size mismatch");
  if (reward_support.empty()) throw std::invalid_argument("mdp: empty reward support");

  double d0_sum = 0.0;
  for (int s = 0; s < n_states; ++s) {
    if (initial_dist[s] < 0) throw std::invalid_argument("mdp: negative initial probability");
    d0_sum += initial_dist[s];
  }
  if (std::abs(d0_sum - 1.0) > kStochasticTol)
    throw std::invalid_argument("mdp: initial_dist does not sum to 1");

  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) {
      double row = 0.0;
      for (int s2 = 0; s2 < n_states; ++s2) {
        const double pr = p(s, a, s2);
        if (pr < 0) throw std::invalid_argument("mdp: negative transition probability");
        row += pr;
        double rrow = 0.0;
        for (int ri = 0; ri < n_rewards(); ++ri) rrow += rprob(s, a, s2, ri);
        if (std::abs(rrow - 1.0) > kStochasticTol)
          throw std::invalid_argument("mdp: reward distribution row does not sum to 1");
      }
      if (std::abs(row - 1.0) > kStochasticTol)
        throw std::invalid_argument("mdp: transition row does not sum to 1");
    }
  }

  live_row.assign(n_states, -1);
  live_states.clear();
  for (int s = 0; s < n_states; ++s) {
    if (is_terminal(s)) {
      for (int a = 0; a < n_actions; ++a) {
        if (std::abs(p(s, a, s) - 1.0) > kStochasticTol)
          throw std::invalid_argument("mdp: terminal state must self-loop");
        double zero_mass = 0.0;
        for (int ri = 0; ri < n_rewards(); ++ri)
          if (reward_support[ri] == 0.0) zero_mass += rprob(s, a, s, ri);
        if (std::abs(zero_mass - 1.0) > kStochasticTol)
          throw std::invalid_argument("mdp: terminal state must have zero reward");
      }
    } else {
      live_row[s] = static_cast<int>(live_states.size());
      live_states.push_back(s);
    }
  }

  if (discount < 0.0 || discount > 1.0) throw std::invalid_argument("mdp: discount out of [0,1]");
  if (discount == 1.0) {
    if (live_states.size() == terminal.size())
      throw std::invalid_argument("mdp: discount 1 requires a nonempty terminal set");
    // Spectral radius of the uniform policy's transient submatrix must be
    // below 1; any full-support policy then absorbs as well.
    const int L = n_live();
    if (L > 0) {
      Eigen::MatrixXd q(L, L);
      for (int i = 0; i < L; ++i)
        for (int j = 0; j < L; ++j) {
          double m = 0.0;
          for (int a = 0; a < n_actions; ++a) m += p(live_states[i], a, live_states[j]);
          q(i, j) = m / n_actions;
        }
      const double rho = q.eigenvalues().cwiseAbs().maxCoeff();
      if (rho >= 1.0 - 1e-9)
        throw std::invalid_argument(
            "mdp: discount 1 chain is not absorbing (uniform-policy spectral radius " +
            std::to_string(rho) + ")");
    }
  }
}

TabularMdp build_gridworld(int width, int height, Cell start, Cell goal, double step_reward,
                           double goal_reward, double discount) {
  if (width < 1 || height < 1 || width * height < 2)
    throw std::invalid_argument("gridworld: need at least two cells");
  auto in_bounds = [&](Cell c) { return c.x >= 0 && c.x < width && c.y >= 0 && c.y < height; };
  if (!in_bounds(start) || !in_bounds(goal))
    throw std::invalid_argument("gridworld: start/goal out of bounds");
  if (start.x == goal.x && start.y == goal.y)
    throw std::invalid_argument("gridworld: start equals goal");

  TabularMdp mdp;
  const int cells = width * height;
  mdp.n_states = cells + 1;  // + absorbing terminal
  mdp.n_actions = 4;
  mdp.discount = discount;

  std::vector<double> support{step_reward, step_reward + goal_reward, 0.0};
  std::sort(support.begin(), support.end());
  support.erase(std::unique(support.begin(), support.end()), support.end());
  mdp.reward_support = support;
  auto reward_index = [&](double r) {
    return static_cast<int>(std::find(support.begin(), support.end(), r) - support.begin());
  };

  const int S = mdp.n_states;
  const int R = mdp.n_rewards();
  mdp.transition.assign(static_cast<size_t>(S) * 4 * S, 0.0);
  mdp.reward_dist.assign(static_cast<size_t>(S) * 4 * S * R, 0.0);
  mdp.terminal.assign(S, 0);
  mdp.terminal[cells] = 1;
  mdp.initial_dist = Eigen::VectorXd::Zero(S);
  mdp.initial_dist[start.y * width + start.x] = 1.0;

  const int terminal_state = cells;
  const int goal_state = goal.y * width + goal.x;
  const int dx[4] = {0, 0, -1, 1};  // up, down, left, right
  const int dy[4] = {-1, 1, 0, 0};

  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const int s = y * width + x;
      for (int a = 0; a < 4; ++a) {
        Cell nxt{x + dx[a], y + dy[a]};
        int s2 = in_bounds(nxt) ? nxt.y * width + nxt.x : s;
        double r = step_reward;
        if (s2 == goal_state) {
          s2 = terminal_state;
          r = step_reward + goal_reward;
        }
        mdp.p(s, a, s2) = 1.0;
        mdp.rprob(s, a, s2, reward_index(r)) = 1.0;
      }
    }
  }
  for (int a = 0; a < 4; ++a) {
    mdp.p(terminal_state, a, terminal_state) = 1.0;
    mdp.rprob(terminal_state, a, terminal_state, reward_index(0.0)) = 1.0;
  }
  // Unentered (s,a,s2) rows still need stochastic reward rows.
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < 4; ++a)
      for (int s2 = 0; s2 < S; ++s2) {
        double sum = 0.0;
        for (int ri = 0; ri < R; ++ri) sum += mdp.rprob(s, a, s2, ri);
        if (sum == 0.0) mdp.rprob(s, a, s2, reward_index(0.0)) = 1.0;
      }

  mdp.validate();
  return mdp;
}

std::pair<int, double> sample_step(const TabularMdp& mdp, int s, int a, Rng& rng) {
  if (s < 0 || s >= mdp.n_states) throw std::out_of_range("sample_step: state index");
  if (a < 0 || a >= mdp.n_actions) throw std::out_of_range("sample_step: action index");
  const double* row = &mdp.transition[(static_cast<size_t>(s) * mdp.n_actions + a) * mdp.n_states];
  const int s2 = rng.categorical({row, static_cast<size_t>(mdp.n_states)});
  const double* rrow =
      &mdp.reward_dist[((static_cast<size_t>(s) * mdp.n_actions + a) * mdp.n_states + s2) *
                       mdp.n_rewards()];
  const int ri = rng.categorical({rrow, static_cast<size_t>(mdp.n_rewards())});
  return {s2, mdp.reward_support[ri]};
}

namespace {

/// Live states that cannot reach any terminal along policy-positive edges.
std::vector<int> non_absorbing_states(const TabularMdp& mdp, const Eigen::MatrixXd& policy) {
  std::vector<uint8_t> reaches(mdp.n_states, 0);
  std::deque<int> frontier;
  for (int s = 0; s < mdp.n_states; ++s)
    if (mdp.is_terminal(s)) {
      reaches[s] = 1;
      frontier.push_back(s);
    }
  // Backward BFS over edges with positive policy-weighted probability.
  while (!frontier.empty()) {
    const int t = frontier.front();
    frontier.pop_front();
    for (int s = 0; s < mdp.n_states; ++s) {
      if (reaches[s]) continue;
      double mass = 0.0;
      for (int a = 0; a < mdp.n_actions; ++a) mass += policy(s, a) * mdp.p(s, a, t);
      if (mass > 0.0) {
        reaches[s] = 1;
        frontier.push_back(s);
      }
    }
  }
  std::vector<int> bad;
  for (int s = 0; s < mdp.n_states; ++s)
    if (!reaches[s] && !mdp.is_terminal(s)) bad.push_back(s);
  return bad;
}

}  // namespace

Eigen::VectorXd exact_state_values(const TabularMdp& mdp, const Eigen::MatrixXd& policy) {
  if (policy.rows() != mdp.n_states || policy.cols() != mdp.n_actions)
    throw std::invalid_argument("exact_state_values: policy shape mismatch");
  for (int s = 0; s < mdp.n_states; ++s) {
    if (mdp.is_terminal(s)) continue;
    if (std::abs(policy.row(s).sum() - 1.0) > 1e-9)
      throw std::invalid_argument("exact_state_values: policy row " + std::to_string(s) +
                                  " does not sum to 1");
  }

  const int L = mdp.n_live();
  Eigen::VectorXd values = Eigen::VectorXd::Zero(mdp.n_states);
  if (L == 0) return values;

  if (mdp.discount == 1.0) {
    const auto bad = non_absorbing_states(mdp, policy);
    if (!bad.empty())
      throw SingularSystemError(
          "exact_state_values: recurrent class never reaches a terminal state: {" +
          state_list(bad) + "}");
  }

  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(L, L);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(L);
  for (int i = 0; i < L; ++i) {
    const int s = mdp.live_states[i];
    for (int act = 0; act < mdp.n_actions; ++act) {
      const double w = policy(s, act);
      if (w == 0.0) continue;
      for (int s2 = 0; s2 < mdp.n_states; ++s2) {
        const double pr = mdp.p(s, act, s2);
        if (pr == 0.0) continue;
        b[i] += w * pr * mdp.mean_reward(s, act, s2);
        const int j = mdp.live_row[s2];
        if (j >= 0) a(i, j) -= mdp.discount * w * pr;
      }
    }
  }
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
  const Eigen::VectorXd v = lu.solve(b);
  if (!v.allFinite() || (a * v - b).cwiseAbs().maxCoeff() > 1e-8)
    throw SingularSystemError("exact_state_values: singular evaluation system");
  for (int i = 0; i < L; ++i) values[mdp.live_states[i]] = v[i];
  return values;
}

double exact_objective(const TabularMdp& mdp, const Eigen::MatrixXd& policy) {
  return mdp.initial_dist.dot(exact_state_values(mdp, policy));
}

Eigen::MatrixXd uniform_policy(const TabularMdp& mdp) {
  return Eigen::MatrixXd::Constant(mdp.n_states, mdp.n_actions, 1.0 / mdp.n_actions);
}

double bellman_residual(const TabularMdp& mdp, const Eigen::MatrixXd& policy,
                        const Eigen::VectorXd& values) {
  double worst = 0.0;
  for (int s = 0; s < mdp.n_states; ++s) {
    if (mdp.is_terminal(s)) continue;
    double rhs = 0.0;
    for (int a = 0; a < mdp.n_actions; ++a) {
      const double w = policy(s, a);
      if (w == 0.0) continue;
      for (int s2 = 0; s2 < mdp.n_states; ++s2) {
        const double pr = mdp.p(s, a, s2);
        if (pr == 0.0) continue;
        rhs += w * pr * (mdp.mean_reward(s, a, s2) + mdp.discount * values[s2]);
      }
    }
    worst = std::max(worst, std::abs(values[s] - rhs));
  }
  return worst;
}

}  // namespace coagent
