#include <doctest.h>

#include <set>

#include "coagent/stats.hpp"
#include "coagent/tabular_mdp.hpp"

using namespace coagent;

namespace {

/// Two-state synthetic MDP with stochastic transitions and rewards, no
/// terminal states, discount < 1.
TabularMdp two_state_mdp(double discount = 0.9) {
  TabularMdp mdp;
  mdp.n_states = 2;
  mdp.n_actions = 2;
  mdp.reward_support = {0.0, 1.0};
  mdp.discount = discount;
  mdp.terminal.assign(2, 0);
  mdp.initial_dist = Eigen::VectorXd::Zero(2);
  mdp.initial_dist[0] = 1.0;
  mdp.transition.assign(2 * 2 * 2, 0.0);
  mdp.reward_dist.assign(2 * 2 * 2 * 2, 0.0);
  // action 0: stay put; action 1: (0.3, 0.7) from either state
  for (int s = 0; s < 2; ++s) {
    mdp.p(s, 0, s) = 1.0;
    mdp.p(s, 1, 0) = 0.3;
    mdp.p(s, 1, 1) = 0.7;
  }
  for (int s = 0; s < 2; ++s)
    for (int a = 0; a < 2; ++a)
      for (int s2 = 0; s2 < 2; ++s2) {
        // reward 1 with probability 0.5 when landing in state 1, else 0
        if (s2 == 1) {
          mdp.rprob(s, a, s2, 0) = 0.5;
          mdp.rprob(s, a, s2, 1) = 0.5;
        } else {
          mdp.rprob(s, a, s2, 0) = 1.0;
        }
      }
  mdp.validate();
  return mdp;
}

}  // namespace

TEST_CASE("gridworld construction matches the 3x3 reference shape") {
  const TabularMdp g = build_gridworld(3, 3, {0, 0}, {2, 2}, -1.0, 0.0);
  CHECK(g.n_states == 10);
  CHECK(g.n_actions == 4);
  CHECK(g.is_terminal(9));
  CHECK(g.n_live() == 9);
  CHECK(g.initial_dist[0] == 1.0);
  // cell (1,2) moving right enters the goal and lands in the terminal
  const int s = 2 * 3 + 1;
  CHECK(g.p(s, 3, 9) == 1.0);
  // moving off-grid self-loops
  CHECK(g.p(0, 0, 0) == 1.0);
}

TEST_CASE("gridworld rejects malformed cells") {
  CHECK_THROWS_AS(build_gridworld(3, 3, {0, 0}, {3, 2}, -1, 0), std::invalid_argument);
  CHECK_THROWS_AS(build_gridworld(3, 3, {1, 1}, {1, 1}, -1, 0), std::invalid_argument);
  CHECK_THROWS_AS(build_gridworld(1, 1, {0, 0}, {0, 0}, -1, 0), std::invalid_argument);
}

TEST_CASE("smallest grid: forced dynamics") {
  const TabularMdp g = build_gridworld(1, 2, {0, 0}, {0, 1}, -1.0, 0.0);
  // action down (1) from start enters the goal: terminal with reward -1
  CHECK(g.p(0, 1, 2) == 1.0);
  CHECK(g.mean_reward(0, 1, 2) == -1.0);
  // action up (0) self-loops with reward -1
  CHECK(g.p(0, 0, 0) == 1.0);
  CHECK(g.mean_reward(0, 0, 0) == -1.0);
}

TEST_CASE("optimal corner-to-corner return equals minus the Manhattan distance") {
  const TabularMdp g = build_gridworld(3, 3, {0, 0}, {2, 2}, -1.0, 0.0);
  // right/right/down/down is one shortest path; encode as a deterministic policy
  Eigen::MatrixXd policy = Eigen::MatrixXd::Zero(g.n_states, g.n_actions);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x) policy(y * 3 + x, x < 2 ? 3 : 1) = 1.0;
  policy.row(9).setConstant(0.25);
  CHECK(exact_objective(g, policy) == doctest::Approx(-4.0).epsilon(1e-12));
}

TEST_CASE("exact values: geometric series self-loop") {
  TabularMdp mdp;
  mdp.n_states = 2;
  mdp.n_actions = 1;
  mdp.reward_support = {0.0, 1.0};
  mdp.discount = 0.5;
  mdp.terminal = {0, 1};
  mdp.initial_dist = Eigen::VectorXd::Zero(2);
  mdp.initial_dist[0] = 1.0;
  mdp.transition.assign(2 * 1 * 2, 0.0);
  mdp.reward_dist.assign(2 * 1 * 2 * 2, 0.0);
  mdp.p(0, 0, 0) = 1.0;
  mdp.rprob(0, 0, 0, 1) = 1.0;  // reward 1 on the self-loop
  mdp.rprob(0, 0, 1, 0) = 1.0;
  mdp.p(1, 0, 1) = 1.0;
  mdp.rprob(1, 0, 0, 0) = 1.0;
  mdp.rprob(1, 0, 1, 0) = 1.0;
  mdp.validate();
  const Eigen::VectorXd v = exact_state_values(mdp, uniform_policy(mdp));
  CHECK(v[0] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("1x2 gridworld: single-step value toward the goal") {
  const TabularMdp g = build_gridworld(1, 2, {0, 0}, {0, 1}, -1.0, 0.0);
  Eigen::MatrixXd policy = Eigen::MatrixXd::Zero(g.n_states, g.n_actions);
  policy(0, 1) = 1.0;  // down, toward the goal
  policy(1, 1) = 1.0;
  policy.row(2).setConstant(0.25);
  const Eigen::VectorXd v = exact_state_values(g, policy);
  CHECK(v[0] == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("gamma=1 evaluation requires absorption and names the bad states") {
  const TabularMdp g = build_gridworld(2, 2, {0, 0}, {1, 1}, -1.0, 0.0);
  Eigen::MatrixXd policy = Eigen::MatrixXd::Zero(g.n_states, g.n_actions);
  for (int s = 0; s < g.n_states; ++s) policy(s, 0) = 1.0;  // always up: never absorbs
  try {
    exact_state_values(g, policy);
    FAIL("expected SingularSystemError");
  } catch (const SingularSystemError& e) {
    const std::string what = e.what();
    CHECK(what.find("recurrent class") != std::string::npos);
    CHECK(what.find("0") != std::string::npos);
  }
}

TEST_CASE("Bellman residual of the exact solve is tiny on the gridworld") {
  const TabularMdp g = build_gridworld(3, 3, {0, 0}, {2, 2}, -1.0, 0.0);
  const Eigen::MatrixXd policy = uniform_policy(g);
  const Eigen::VectorXd v = exact_state_values(g, policy);
  CHECK(bellman_residual(g, policy, v) < 1e-10);
}

TEST_CASE("uniform-policy objective matches Monte Carlo rollouts within 3 sigma") {
  const TabularMdp g = build_gridworld(3, 3, {0, 0}, {2, 2}, -1.0, 0.0);
  const Eigen::MatrixXd policy = uniform_policy(g);
  const double exact = exact_objective(g, policy);

  Rng rng(12345);
  const int episodes = 200000;
  RunningStats stats;
  for (int ep = 0; ep < episodes; ++ep) {
    int s = rng.categorical({g.initial_dist.data(), static_cast<size_t>(g.n_states)});
    double ret = 0.0;
    for (int t = 0; t < 2000 && !g.is_terminal(s); ++t) {
      const int a = rng.uniform_int(g.n_actions);
      const auto [s2, r] = sample_step(g, s, a, rng);
      ret += r;
      s = s2;
    }
    stats.add(ret);
  }
  CHECK(std::abs(stats.mean - exact) < 3.0 * stats.stderr_of_mean());
}

TEST_CASE("exact objective: point mass and uniform mixtures") {
  TabularMdp mdp = two_state_mdp(0.5);
  const Eigen::MatrixXd policy = uniform_policy(mdp);
  const Eigen::VectorXd v = exact_state_values(mdp, policy);
  CHECK(exact_objective(mdp, policy) == doctest::Approx(v[0]).epsilon(1e-12));
  mdp.initial_dist << 0.5, 0.5;
  CHECK(exact_objective(mdp, policy) ==
        doctest::Approx(0.5 * v[0] + 0.5 * v[1]).epsilon(1e-12));
}

TEST_CASE("sample_step validates indices and respects absorbing states") {
  const TabularMdp g = build_gridworld(2, 2, {0, 0}, {1, 1}, -1.0, 0.0);
  Rng rng(1);
  CHECK_THROWS_AS(sample_step(g, -1, 0, rng), std::out_of_range);
  CHECK_THROWS_AS(sample_step(g, 0, 7, rng), std::out_of_range);
  for (int k = 0; k < 32; ++k) {
    const auto [s2, r] = sample_step(g, 4, 2, rng);
    CHECK(s2 == 4);
    CHECK(r == 0.0);
  }
}

TEST_CASE("sample_step frequencies match the tables (chi-square, 3 sigma)") {
  const TabularMdp mdp = two_state_mdp();
  Rng rng(987654321);
  const long n = 100000;

  SUBCASE("two-outcome transition within 3 sigma") {
    long hits = 0;
    for (long k = 0; k < n; ++k) hits += sample_step(mdp, 0, 1, rng).first == 0 ? 1 : 0;
    const double sigma = std::sqrt(0.3 * 0.7 * static_cast<double>(n));
    CHECK(std::abs(static_cast<double>(hits) - 0.3 * static_cast<double>(n)) < 3.0 * sigma);
  }

  SUBCASE("joint (s', r) cells pass a 0.999 chi-square test") {
    std::vector<long> counts(4, 0);
    std::vector<double> probs = {0.3 * 1.0, 0.0, 0.7 * 0.5, 0.7 * 0.5};
    for (long k = 0; k < n; ++k) {
      const auto [s2, r] = sample_step(mdp, 0, 1, rng);
      counts[s2 * 2 + (r > 0.5 ? 1 : 0)] += 1;
    }
    CHECK(counts[1] == 0);
    const double stat = chi_square_statistic(counts, probs, n);
    CHECK(stat < chi_square_quantile(2, kZUpper999));
  }
}

TEST_CASE("validate rejects broken tables") {
  TabularMdp mdp = two_state_mdp();
  mdp.p(0, 0, 0) = 0.5;  // row no longer sums to 1
  CHECK_THROWS_AS(mdp.validate(), std::invalid_argument);
}

TEST_CASE("discount 1 requires terminals") {
  TabularMdp mdp = two_state_mdp();
  mdp.discount = 1.0;
  CHECK_THROWS_AS(mdp.validate(), std::invalid_argument);
}
