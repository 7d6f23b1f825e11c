#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include "bellman/calibration.hpp"
#include "bellman/fqi.hpp"
#include "bellman/simulation.hpp"
#include "doctest.h"

using namespace bellman;

namespace {

QFunction fqi_base(const TransitionDataset& data, const Policy& pi, double gamma) {
  FQIConfig cfg;
  cfg.gamma = gamma;
  cfg.regressor = RegressorSpec::tabular_mean();
  cfg.feature_map = FeatureMap::state_action_codes();
  return fitted_q_iteration(data, pi, cfg).q;
}

double random_step_orthogonality(const TransitionDataset& data, const Policy& pi,
                                 const CalibratedQ& qstar, double gamma,
                                 std::uint64_t seed, int num_functions) {
  // For step functions g constant on the calibrated level sets,
  // (1/n) sum g(q*) * td must vanish.
  std::map<double, double> level_sums;
  for (int i = 0; i < data.n(); ++i) {
    const Transition& t = data[i];
    double v = 0.0;
    for (int a = 0; a < data.num_actions(); ++a) {
      const double p = pi.prob(a, t.s1);
      if (p > 0.0) v += p * qstar(a, t.s1);
    }
    const double q0 = qstar(t.a0, t.s0);
    level_sums[q0] += t.y0 + gamma * v - q0;
  }
  std::vector<double> sums;
  for (const auto& [lvl, sum] : level_sums) sums.push_back(sum);

  std::mt19937_64 gen(seed);
  auto unif = [&]() { return static_cast<double>(gen() >> 11) * 0x1.0p-53; };
  double worst = 0.0;
  for (int g = 0; g < num_functions; ++g) {
    double acc = 0.0;
    for (double s : sums) acc += (2.0 * unif() - 1.0) * s;
    worst = std::max(worst, std::abs(acc) / data.n());
  }
  return worst;
}

}  // namespace

TEST_CASE("gamma=0 calibration is classical isotonic calibration of the reward") {
  SimConfig sc;
  sc.n = 500;
  sc.gamma = 0.0;
  sc.beta = 0.2;
  sc.seed = 31;
  TransitionDataset data = generate_dataset(sc);
  Policy pi = Policy::deterministic(1, 2);
  QFunction base = fqi_base(data, pi, 0.0);

  CalibrationConfig ccfg;
  ccfg.min_pool_weight = 0.0;
  auto [calibrated, report] = fitted_q_calibration(data, pi, base, 0.0, ccfg);

  // Reference: one isotonic regression of Y0 on the base scores.
  std::vector<double> x(static_cast<std::size_t>(data.n()));
  std::vector<double> y(static_cast<std::size_t>(data.n()));
  for (int i = 0; i < data.n(); ++i) {
    x[static_cast<std::size_t>(i)] = base(data[i].a0, data[i].s0);
    y[static_cast<std::size_t>(i)] = data[i].y0;
  }
  StepFunction iso = pava_isotonic(x, y, {}, 0.0);
  for (int i = 0; i < data.n(); ++i)
    CHECK(calibrated(data[i].a0, data[i].s0) ==
          doctest::Approx(iso(x[static_cast<std::size_t>(i)])).epsilon(1e-12));
  CHECK(report.max_orthogonality <= 1e-12);
}

TEST_CASE("an already calibrated base is a fixed point with an identity calibrator") {
  // Two states, one action: q values equal the per-state Bellman means by
  // construction, so the first isotonic fit interpolates them.
  StateAlphabet states = StateAlphabet::indexed(2);
  std::vector<Transition> recs;
  // State 0 always goes to 0 with reward 0.2; state 1 to 1 with reward 0.8.
  for (int k = 0; k < 40; ++k) {
    recs.push_back({0, 0, 0.2, 0});
    recs.push_back({1, 0, 0.8, 1});
  }
  TransitionDataset data(states, 1, recs);
  Policy pi = Policy::deterministic(0, 1);
  const double gamma = 0.5;
  // Fixed point: q = y + gamma q  =>  q0 = 0.4, q1 = 1.6.
  Eigen::MatrixXd q(1, 2);
  q << 0.4, 1.6;
  QFunction base = QFunction::tabular(q);

  CalibrationConfig ccfg;
  ccfg.min_pool_weight = 0.0;
  auto [calibrated, report] = fitted_q_calibration(data, pi, base, gamma, ccfg);
  CHECK(report.iterations <= 2);
  CHECK(report.final_increment <= 1e-12);
  CHECK(calibrated(0, 0) == doctest::Approx(0.4));
  CHECK(calibrated(0, 1) == doctest::Approx(1.6));
  CHECK(report.max_orthogonality <= 1e-12);
}

TEST_CASE("calibration certifies orthogonality on simulated data") {
  for (int n : {500, 2000}) {
    SimConfig sc;
    sc.n = n;
    sc.gamma = 0.8;
    sc.beta = 0.3;
    sc.seed = 1234 + n;
    TransitionDataset data = generate_dataset(sc);
    Policy pi = Policy::deterministic(1, 2);
    QFunction base = fqi_base(data, pi, 0.8);

    auto [calibrated, report] = fitted_q_calibration(data, pi, base, 0.8);
    CHECK(report.max_orthogonality <= 1e-8);
    CHECK(check_bellman_orthogonality(data, pi, calibrated, 0.8) <= 1e-8);
    CHECK(random_step_orthogonality(data, pi, calibrated, 0.8, 77, 100) <= 1e-10);
    CHECK(report.levels <= data.n());
  }
}

TEST_CASE("uncalibrated fqi output has a visibly positive orthogonality residual") {
  SimConfig sc;
  sc.n = 1000;
  sc.gamma = 0.8;
  sc.beta = 0.3;
  sc.seed = 8;
  TransitionDataset data = generate_dataset(sc);
  Policy pi = Policy::deterministic(1, 2);

  // A flexible base whose per-cell residuals do not vanish; the tabular
  // backend would already satisfy the cell-level Bellman equation.
  FQIConfig cfg;
  cfg.gamma = 0.8;
  cfg.regressor = RegressorSpec::boosted_trees(2, 8, 0.3, 30.0);
  cfg.feature_map = FeatureMap::action_and_coords(data.alphabet());
  QFunction base = fitted_q_iteration(data, pi, cfg).q;

  // Diagnostic only: the raw FQI fit is generally not Bellman-calibrated.
  CalibratedQ raw(base, StepFunction::identity_on([&] {
                    std::vector<double> scores;
                    for (int i = 0; i < data.n(); ++i)
                      scores.push_back(base(data[i].a0, data[i].s0));
                    return scores;
                  }()));
  const double residual = check_bellman_orthogonality(data, pi, raw, 0.8);
  CHECK(residual > 1e-5);
  MESSAGE("uncalibrated orthogonality residual: ", residual);
}

TEST_CASE("perturbing one calibrated level breaks orthogonality proportionally") {
  SimConfig sc;
  sc.n = 800;
  sc.gamma = 0.5;
  sc.beta = 0.0;
  sc.seed = 55;
  TransitionDataset data = generate_dataset(sc);
  Policy pi = Policy::deterministic(0, 2);
  QFunction base = fqi_base(data, pi, 0.5);
  auto [calibrated, report] = fitted_q_calibration(data, pi, base, 0.5);

  // Shift the top level by 0.1.
  std::vector<double> levels = calibrated.calibrator().levels();
  std::vector<double> weights = calibrated.calibrator().level_weights();
  levels.back() += 0.1;
  CalibratedQ perturbed(base, StepFunction(calibrated.calibrator().breakpoints(),
                                           levels, weights));
  const double residual = check_bellman_orthogonality(data, pi, perturbed, 0.5);
  // The perturbed level's own residual moves by at least (1 - gamma) * 0.1
  // times its mass share (self-transitions damp the shift by at most gamma).
  const double mass_share = weights.back() / data.n();
  CHECK(residual >= 0.1 * (1.0 - 0.5) * mass_share - 1e-12);
}

TEST_CASE("cross-fitting with one fold reduces to single-sample calibration") {
  SimConfig sc;
  sc.n = 400;
  sc.gamma = 0.7;
  sc.beta = 0.1;
  sc.seed = 99;
  TransitionDataset data = generate_dataset(sc);
  Policy pi = Policy::deterministic(1, 2);
  QFunction base = fqi_base(data, pi, 0.7);

  auto single = fitted_q_calibration(data, pi, base, 0.7);
  std::vector<int> fold(static_cast<std::size_t>(data.n()), 0);
  auto crossed = cross_fitted_calibration(data, pi, fold, {base}, 0.7);
  for (int i = 0; i < data.n(); ++i)
    CHECK(single.calibrated(data[i].a0, data[i].s0) ==
          doctest::Approx(crossed.folds[0](data[i].a0, data[i].s0)).epsilon(1e-14));
}

TEST_CASE("cross-fitting with identical fold bases matches pooling") {
  SimConfig sc;
  sc.n = 400;
  sc.gamma = 0.6;
  sc.beta = 0.2;
  sc.seed = 100;
  TransitionDataset data = generate_dataset(sc);
  Policy pi = Policy::deterministic(0, 2);
  QFunction base = fqi_base(data, pi, 0.6);

  std::vector<int> fold(static_cast<std::size_t>(data.n()));
  for (int i = 0; i < data.n(); ++i) fold[static_cast<std::size_t>(i)] = i % 2;
  auto crossed = cross_fitted_calibration(data, pi, fold, {base, base}, 0.6);
  auto single = fitted_q_calibration(data, pi, base, 0.6);
  for (int i = 0; i < data.n(); ++i)
    CHECK(crossed.value_for_record(i, data[i].a0, data[i].s0) ==
          doctest::Approx(single.calibrated(data[i].a0, data[i].s0)).epsilon(1e-14));
}

TEST_CASE("five-fold cross-fitted calibration certifies pooled orthogonality") {
  SimConfig sc;
  sc.n = 1000;
  sc.gamma = 0.8;
  sc.beta = 0.3;
  sc.seed = 321;
  TransitionDataset data = generate_dataset(sc);
  Policy pi = Policy::deterministic(1, 2);

  const int folds = 5;
  std::vector<int> fold(static_cast<std::size_t>(data.n()));
  for (int i = 0; i < data.n(); ++i) fold[static_cast<std::size_t>(i)] = i % folds;
  std::vector<QFunction> bases;
  for (int j = 0; j < folds; ++j) {
    std::vector<int> keep;
    for (int i = 0; i < data.n(); ++i)
      if (fold[static_cast<std::size_t>(i)] != j) keep.push_back(i);
    bases.push_back(fqi_base(data.subset(keep), pi, 0.8));
  }
  auto crossed = cross_fitted_calibration(data, pi, fold, bases, 0.8);
  CHECK(check_bellman_orthogonality(data, pi, crossed, 0.8) <= 1e-8);

  // Missing fold assignment is an argument error.
  std::vector<int> bad = fold;
  bad[0] = folds + 3;
  CHECK_THROWS_AS(cross_fitted_calibration(data, pi, bad, bases, 0.8),
                  std::invalid_argument);
}

TEST_CASE("calibrated values are monotone in the base score") {
  SimConfig sc;
  sc.n = 700;
  sc.gamma = 0.8;
  sc.beta = 0.5;
  sc.seed = 17;
  TransitionDataset data = generate_dataset(sc);
  Policy pi = Policy::deterministic(1, 2);
  QFunction base = fqi_base(data, pi, 0.8);
  auto [calibrated, report] = fitted_q_calibration(data, pi, base, 0.8);

  std::vector<std::pair<double, double>> pairs;
  for (int i = 0; i < data.n(); ++i) {
    const double score = base(data[i].a0, data[i].s0);
    pairs.emplace_back(score, calibrated(data[i].a0, data[i].s0));
  }
  std::sort(pairs.begin(), pairs.end());
  for (std::size_t i = 1; i < pairs.size(); ++i)
    CHECK(pairs[i].second >= pairs[i - 1].second);

  // Level count never exceeds the number of distinct base scores.
  std::set<double> distinct;
  for (const auto& p : pairs) distinct.insert(p.first);
  CHECK(report.levels <= static_cast<int>(distinct.size()));
}
