#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "bellman/fqi.hpp"
#include "bellman/simulation.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace bellman;

namespace {

// Weighted pseudo-records enumerating every (s, a, s') cell of the MDP with
// y0 = r(a, s); per-cell weighted regression then reproduces the population
// Bellman update exactly.
std::pair<TransitionDataset, std::vector<double>> population_pseudo_data(
    const TabularMDP& mdp, const Policy& behavior) {
  std::vector<Transition> recs;
  std::vector<double> w;
  for (int s = 0; s < mdp.num_states(); ++s) {
    for (int a = 0; a < mdp.num_actions; ++a) {
      const double pb = behavior.prob(a, s) * mdp.init_dist(s);
      for (int s1 = 0; s1 < mdp.num_states(); ++s1) {
        const double p = mdp.transition[static_cast<std::size_t>(a)](s, s1);
        if (p == 0.0) continue;
        recs.push_back({s, a, mdp.reward_mean(a, s), s1});
        w.push_back(p * (pb > 0.0 ? pb : 1e-12));
      }
    }
  }
  return {TransitionDataset(mdp.states, mdp.num_actions, std::move(recs)), w};
}

}  // namespace

TEST_CASE("fqi at gamma=0 is a single regression of the reward") {
  SimConfig sc;
  sc.n = 400;
  sc.gamma = 0.0;
  sc.beta = 0.3;
  sc.seed = 11;
  TransitionDataset data = generate_dataset(sc);

  FQIConfig cfg;
  cfg.gamma = 0.0;
  cfg.regressor = RegressorSpec::tabular_mean();
  cfg.feature_map = FeatureMap::state_action_codes();
  FQIResult fit = fitted_q_iteration(data, Policy::deterministic(1, 2), cfg);
  CHECK(fit.iterations == 1);

  // Per-cell reward means, computed directly.
  std::map<std::pair<int, int>, std::pair<double, int>> cells;
  for (int i = 0; i < data.n(); ++i) {
    auto& cell = cells[{data[i].a0, data[i].s0}];
    cell.first += data[i].y0;
    cell.second += 1;
  }
  for (const auto& [key, cell] : cells)
    CHECK(fit.q(key.first, key.second) ==
          doctest::Approx(cell.first / cell.second).epsilon(1e-12));
}

TEST_CASE("fqi iterates the geometric recursion on a one-state MDP") {
  // Single state, reward 1, gamma 0.5: iterates 1, 1.5, 1.75, ... -> 2.
  TabularMDP mdp;
  mdp.states = StateAlphabet::indexed(1);
  mdp.num_actions = 1;
  mdp.transition = {Eigen::MatrixXd::Ones(1, 1)};
  mdp.reward_mean = Eigen::MatrixXd::Ones(1, 1);
  mdp.init_dist = Eigen::VectorXd::Ones(1);
  mdp.gamma = 0.5;

  std::vector<Transition> recs{{0, 0, 1.0, 0}};
  TransitionDataset data(mdp.states, 1, recs);

  FQIConfig cfg;
  cfg.gamma = 0.5;
  cfg.max_iters = 40;
  cfg.tol = 1e-12;
  cfg.regressor = RegressorSpec::tabular_mean();
  cfg.feature_map = FeatureMap::state_action_codes();
  FQIResult fit = fitted_q_iteration(data, Policy::deterministic(0, 1), cfg);
  CHECK(fit.q(0, 0) == doctest::Approx(2.0).epsilon(1e-9));
  // First increments follow the geometric series 1, 1/2, 1/4.
  CHECK(fit.increments[0] == doctest::Approx(1.0));
  CHECK(fit.increments[1] == doctest::Approx(0.5));
  CHECK(fit.increments[2] == doctest::Approx(0.25));
}

TEST_CASE("fqi on population pseudo-data matches the exact tabular solve") {
  SimConfig sc;
  sc.gamma = 0.8;
  sc.beta = 0.4;
  TabularMDP mdp = analytic_mdp(sc);
  Eigen::VectorXd b(2);
  b << 0.75, 0.25;
  auto [data, w] = population_pseudo_data(mdp, Policy::state_independent(b));

  Policy pi = Policy::deterministic(1, 2);
  FQIConfig cfg;
  cfg.gamma = 0.8;
  cfg.max_iters = 200;
  cfg.tol = 1e-12;
  cfg.regressor = RegressorSpec::tabular_mean();
  cfg.feature_map = FeatureMap::state_action_codes();
  FQIResult fit = fitted_q_iteration(data, pi, cfg, w);

  Eigen::MatrixXd oracle = tabular_q_values(mdp, pi);
  double worst = 0.0;
  for (int a = 0; a < 2; ++a)
    for (int s = 0; s < mdp.num_states(); ++s)
      worst = std::max(worst, std::abs(fit.q(a, s) - oracle(a, s)));
  CHECK(worst < 1e-8);
}

TEST_CASE("fqi increments contract geometrically with a tabular backend") {
  SimConfig sc;
  sc.n = 1500;
  sc.gamma = 0.8;
  sc.beta = 0.0;
  sc.seed = 5;
  TransitionDataset data = generate_dataset(sc);

  FQIConfig cfg;
  cfg.gamma = 0.8;
  cfg.max_iters = 25;
  cfg.tol = 1e-13;
  cfg.regressor = RegressorSpec::tabular_mean();
  cfg.feature_map = FeatureMap::state_action_codes();
  FQIResult fit = fitted_q_iteration(data, Policy::deterministic(0, 2), cfg);
  REQUIRE(fit.increments.size() >= 10);
  for (std::size_t k = 2; k + 1 < 10; ++k)
    CHECK(fit.increments[k + 1] / fit.increments[k] <= 0.8 + 0.05);
}

TEST_CASE("fqi output is invariant to dataset permutation") {
  SimConfig sc;
  sc.n = 300;
  sc.gamma = 0.6;
  sc.beta = 0.5;
  sc.seed = 21;
  TransitionDataset data = generate_dataset(sc);

  std::vector<int> perm(static_cast<std::size_t>(data.n()));
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 gen(3);
  for (int i = data.n() - 1; i > 0; --i)
    std::swap(perm[static_cast<std::size_t>(i)],
              perm[static_cast<std::size_t>(gen() % static_cast<std::uint64_t>(i + 1))]);
  TransitionDataset shuffled = data.subset(perm);

  for (auto backend : {RegressorSpec::tabular_mean(),
                       RegressorSpec::boosted_trees(3, 10, 0.5, 5.0)}) {
    FQIConfig cfg;
    cfg.gamma = 0.6;
    cfg.max_iters = 12;
    cfg.regressor = backend;
    cfg.feature_map = FeatureMap::action_and_coords(data.alphabet());
    FQIResult a = fitted_q_iteration(data, Policy::deterministic(1, 2), cfg);
    FQIResult b = fitted_q_iteration(shuffled, Policy::deterministic(1, 2), cfg);
    for (int s = 0; s < data.alphabet().size(); ++s)
      CHECK(a.q(1, s) == doctest::Approx(b.q(1, s)).epsilon(1e-10));
  }
}

TEST_CASE("fqi reports non-convergence in diagnostics instead of failing") {
  SimConfig sc;
  sc.n = 200;
  sc.gamma = 0.9;
  sc.seed = 2;
  TransitionDataset data = generate_dataset(sc);

  FQIConfig cfg;
  cfg.gamma = 0.9;
  cfg.max_iters = 2;
  cfg.tol = 1e-12;
  cfg.regressor = RegressorSpec::tabular_mean();
  cfg.feature_map = FeatureMap::state_action_codes();
  FQIResult fit = fitted_q_iteration(data, Policy::deterministic(1, 2), cfg);
  CHECK_FALSE(fit.converged);
  CHECK(fit.iterations == 2);

  auto j = nlohmann::json::parse(fit.diagnostics_json());
  CHECK(j["increments"].size() == 2);
  CHECK(j["converged"] == false);
}
