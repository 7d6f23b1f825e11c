// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Heavy Monte Carlo sections parallelize across
// BELLMAN_CALIB_THREADS (default: all cores).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "bellman/calibration.hpp"
#include "bellman/estimators.hpp"
#include "bellman/experiment.hpp"
#include "bellman/fqi.hpp"
#include "bellman/pipeline.hpp"
#include "bellman/riesz.hpp"
#include "bellman/simulation.hpp"
#include "oracles.hpp"

using namespace bellman;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::pair<TransitionDataset, std::vector<double>> population_pseudo_data(
    const TabularMDP& mdp, const Policy& behavior) {
  std::vector<Transition> recs;
  std::vector<double> w;
  for (int s = 0; s < mdp.num_states(); ++s) {
    if (mdp.init_dist(s) == 0.0) continue;
    for (int a = 0; a < mdp.num_actions; ++a) {
      const double pb = behavior.prob(a, s) * mdp.init_dist(s);
      if (pb == 0.0) continue;
      for (int s1 = 0; s1 < mdp.num_states(); ++s1) {
        const double p = mdp.transition[static_cast<std::size_t>(a)](s, s1);
        if (p == 0.0) continue;
        recs.push_back({s, a, mdp.reward_mean(a, s), s1});
        w.push_back(pb * p);
      }
    }
  }
  return {TransitionDataset(mdp.states, mdp.num_actions, std::move(recs)), w};
}

QFunction tabular_fqi_base(const TransitionDataset& data, const Policy& pi,
                           double gamma) {
  FQIConfig cfg;
  cfg.gamma = gamma;
  cfg.regressor = RegressorSpec::tabular_mean();
  cfg.feature_map = FeatureMap::state_action_codes();
  return fitted_q_iteration(data, pi, cfg).q;
}

char buffer[512];

Outcome criterion1_fqi_oracle() {
  SimConfig sc;
  sc.beta = 0.4;
  Eigen::VectorXd bprob(2);
  bprob << 0.75, 0.25;
  const Policy behavior = Policy::state_independent(bprob);
  const Policy pi = Policy::deterministic(1, 2);

  double worst = 0.0;
  for (double gamma : {0.0, 0.5, 0.8, 0.95}) {
    SimConfig cell = sc;
    cell.gamma = gamma;
    const TabularMDP mdp = analytic_mdp(cell);
    auto [data, w] = population_pseudo_data(mdp, behavior);

    FQIConfig cfg;
    cfg.gamma = gamma;
    cfg.max_iters = 3000;
    cfg.tol = 1e-12;
    cfg.regressor = RegressorSpec::tabular_mean();
    cfg.feature_map = FeatureMap::state_action_codes();
    const FQIResult fit = fitted_q_iteration(data, pi, cfg, w);

    const Eigen::MatrixXd oracle = tabular_q_values(mdp, pi);
    for (int a = 0; a < 2; ++a)
      for (int s = 0; s < mdp.num_states(); ++s)
        worst = std::max(worst, std::abs(fit.q(a, s) - oracle(a, s)));
  }
  std::snprintf(buffer, sizeof(buffer), "max |fqi - exact solve| = %.3g", worst);
  return {worst <= 1e-8, buffer};
}

Outcome criterion2_calibration_certificate() {
  double worst_residual = 0.0;
  double worst_random = 0.0;
  for (int n : {500, 2000}) {
    SimConfig sc;
    sc.n = n;
    sc.gamma = 0.8;
    sc.beta = 0.3;
    sc.seed = 20240 + n;
    const TransitionDataset data = generate_dataset(sc);
    const Policy pi = Policy::deterministic(1, 2);
    const QFunction base = tabular_fqi_base(data, pi, 0.8);
    auto [qstar, report] = fitted_q_calibration(data, pi, base, 0.8);

    worst_residual =
        std::max(worst_residual, check_bellman_orthogonality(data, pi, qstar, 0.8));

    // 100 random step functions constant on the calibrated level sets.
    std::map<double, double> level_sums;
    for (int i = 0; i < data.n(); ++i) {
      const Transition& t = data[i];
      const double q0 = qstar(t.a0, t.s0);
      level_sums[q0] += t.y0 + 0.8 * qstar(1, t.s1) - q0;
    }
    std::mt19937_64 gen(n);
    auto unif = [&]() { return static_cast<double>(gen() >> 11) * 0x1.0p-53; };
    for (int g = 0; g < 100; ++g) {
      double acc = 0.0;
      for (const auto& [lvl, sum] : level_sums) acc += (2.0 * unif() - 1.0) * sum;
      worst_random = std::max(worst_random, std::abs(acc) / data.n());
    }
  }
  std::snprintf(buffer, sizeof(buffer),
                "max orthogonality residual = %.3g, random-step suite = %.3g",
                worst_residual, worst_random);
  return {worst_residual <= 1e-8 && worst_random <= 1e-10, buffer};
}

Outcome criterion3_correction_vanishes() {
  SimConfig sc;
  sc.n = 1500;
  sc.gamma = 0.8;
  sc.beta = 0.3;
  sc.seed = 77;
  const TransitionDataset data = generate_dataset(sc);
  const Policy pi = Policy::deterministic(1, 2);
  const FunctionalSpec functional = FunctionalSpec::policy_value(pi);
  const QFunction base = tabular_fqi_base(data, pi, 0.8);
  auto [qstar, report] = fitted_q_calibration(data, pi, base, 0.8);

  const RieszWeights rw =
      estimate_representer_dimreduced(data, pi, functional, qstar, 0.8);
  const EstimateReport drl =
      drl_semiparametric(data, pi, functional, qstar.as_qfunction(), rw, 0.8);
  const EstimateReport plug = plugin_calibrated(data, pi, functional, qstar, 0.8);
  const double gap = std::abs(drl.estimate - plug.estimate);
  std::snprintf(buffer, sizeof(buffer), "|drl - plugin| = %.3g", gap);
  return {gap <= 1e-10, buffer};
}

Outcome criterion4_occupancy_identities() {
  SimConfig sc;
  sc.beta = 0.3;
  sc.gamma = 0.0;
  const TabularMDP mdp0 = analytic_mdp(sc);
  Eigen::VectorXd pprob(2), bprob(2);
  pprob << 0.4, 0.6;
  bprob << 0.75, 0.25;
  const Policy pi = Policy::state_independent(pprob);
  const Policy b0 = Policy::state_independent(bprob);

  // gamma = 0: exact propensity reduction.
  const OccupancyRatio d0 = tabular_occupancy_ratio(mdp0, pi, b0, 1e12);
  double worst0 = 0.0;
  for (int a = 0; a < 2; ++a)
    for (int s = 0; s < mdp0.num_states(); ++s)
      worst0 = std::max(worst0, std::abs(d0.value(a, s) - pprob(a) / bprob(a)));

  // Stationary start with pi = b0: constant 1/(1-gamma).
  sc.gamma = 0.8;
  TabularMDP mdp = analytic_mdp(sc);
  Eigen::MatrixXd chain = Eigen::MatrixXd::Zero(81, 81);
  for (int s = 0; s < 81; ++s)
    for (int a = 0; a < 2; ++a)
      chain.row(s) += bprob(a) * mdp.transition[static_cast<std::size_t>(a)].row(s);
  // Stationary distribution via the singular system (P' - I) x = 0, sum = 1.
  Eigen::MatrixXd system(82, 81);
  system.topRows(81) = chain.transpose() - Eigen::MatrixXd::Identity(81, 81);
  system.row(81).setOnes();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(82);
  rhs(81) = 1.0;
  mdp.init_dist = system.colPivHouseholderQr().solve(rhs);

  const OccupancyRatio dstat = tabular_occupancy_ratio(
      mdp, b0, b0, std::numeric_limits<double>::infinity());
  double worst_stat = 0.0;
  for (int a = 0; a < 2; ++a)
    for (int s = 0; s < 81; ++s)
      worst_stat = std::max(worst_stat, std::abs(dstat.value(a, s) - 1.0 / 0.2));

  // Total discounted mass under the behavior law.
  sc.beta = 0.5;
  const TabularMDP mdp2 = analytic_mdp(sc);
  const OccupancyRatio d2 = tabular_occupancy_ratio(
      mdp2, pi, b0, std::numeric_limits<double>::infinity());
  double mass = 0.0;
  for (int a = 0; a < 2; ++a)
    for (int s = 0; s < 81; ++s)
      mass += d2.value(a, s) * bprob(a) * mdp2.init_dist(s);
  const double mass_gap = std::abs(mass - 1.0 / 0.2);

  std::snprintf(buffer, sizeof(buffer),
                "gamma0 gap = %.3g, stationary gap = %.3g, mass gap = %.3g", worst0,
                worst_stat, mass_gap);
  return {worst0 <= 1e-12 && worst_stat <= 1e-8 && mass_gap <= 1e-8, buffer};
}

Outcome criterion5_coverage_good_overlap(double* seconds) {
  const auto start = std::chrono::steady_clock::now();
  ExperimentConfig ec;
  ec.gammas = {0.5, 0.8};
  ec.betas = {0.0};
  ec.ns = {2000};
  ec.methods = {"plugin-calibrated"};
  ec.reps = 200;
  ec.seed = 90210;
  ec.pipeline.folds = 5;
  ec.pipeline.bootstrap = 500;
  ec.pipeline.regressor = RegressorSpec::boosted_trees(3, 20, 0.3);
  ec.pipeline.fqi_tol = 1e-3;

  const ExperimentResult result = monte_carlo_experiment(ec);
  *seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                 .count();

  bool pass = true;
  std::string detail;
  for (const ExperimentSummary& s : result.summaries) {
    const bool cover_ok = s.coverage >= 0.90 && s.coverage <= 0.99;
    const double bias_bound = 2.0 * s.empirical_sd / std::sqrt(200.0);
    const bool bias_ok = std::abs(s.mean_bias) <= bias_bound;
    const bool all_ok = s.reps_failed == 0;
    pass = pass && cover_ok && bias_ok && all_ok;
    std::snprintf(buffer, sizeof(buffer),
                  "[gamma=%.2g: coverage=%.3f bias=%.4g (bound %.4g) fails=%d] ",
                  s.gamma, s.coverage, s.mean_bias, bias_bound, s.reps_failed);
    detail += buffer;
  }
  return {pass, detail};
}

Outcome criterion6_superefficiency_trend() {
  ExperimentConfig ec;
  ec.gammas = {0.8};
  ec.betas = {0.6};
  ec.ns = {2000};
  ec.methods = {"plugin-calibrated", "drl-nonparam"};
  ec.reps = 200;
  ec.seed = 31337;
  ec.pipeline.folds = 5;
  ec.pipeline.bootstrap = 0;  // Wald CIs for both arms of the comparison
  ec.pipeline.regressor = RegressorSpec::boosted_trees(3, 20, 0.3);
  ec.pipeline.fqi_tol = 1e-3;

  const ExperimentResult result = monte_carlo_experiment(ec);
  const ExperimentSummary* plugin = nullptr;
  const ExperimentSummary* nonparam = nullptr;
  for (const ExperimentSummary& s : result.summaries) {
    if (s.method == "plugin-calibrated") plugin = &s;
    if (s.method == "drl-nonparam") nonparam = &s;
  }
  if (!plugin || !nonparam) return {false, "missing summaries"};
  std::snprintf(buffer, sizeof(buffer),
                "sd: plugin=%.4g nonparam=%.4g; coverage: plugin=%.3f nonparam=%.3f",
                plugin->empirical_sd, nonparam->empirical_sd, plugin->coverage,
                nonparam->coverage);
  const bool pass = plugin->empirical_sd <= nonparam->empirical_sd &&
                    nonparam->coverage <= plugin->coverage;
  return {pass, buffer};
}

Outcome criterion7_double_robustness() {
  SimConfig sc;
  sc.gamma = 0.8;
  sc.beta = 0.4;
  const TabularMDP mdp = analytic_mdp(sc);
  Eigen::VectorXd bprob(2);
  bprob << 0.75, 0.25;
  const Policy behavior = Policy::state_independent(bprob);
  auto [data, w] = population_pseudo_data(mdp, behavior);
  const double truth = oracle_truth(sc).psi_treated;

  const Policy pi = Policy::deterministic(1, 2);
  const FunctionalSpec functional = FunctionalSpec::policy_value(pi);
  const OccupancyRatio occ = tabular_occupancy_ratio(
      mdp, pi, behavior, std::numeric_limits<double>::infinity());

  RieszWeights exact;
  exact.weight_at.resize(static_cast<std::size_t>(data.n()));
  for (int i = 0; i < data.n(); ++i)
    exact.weight_at[static_cast<std::size_t>(i)] = occ.value(data[i].a0, data[i].s0);

  const EstimateReport zero_q = drl_semiparametric(
      data, pi, functional, QFunction::zero(), exact, 0.8, {}, w);

  RieszWeights zero_w;
  zero_w.weight_at.assign(static_cast<std::size_t>(data.n()), 0.0);
  const EstimateReport exact_q = drl_semiparametric(
      data, pi, functional, tabular_q_solve(mdp, pi), zero_w, 0.8, {}, w);

  const double gap_q = std::abs(zero_q.estimate - truth);
  const double gap_w = std::abs(exact_q.estimate - truth);
  std::snprintf(buffer, sizeof(buffer),
                "|psi(q=0, exact w) - truth| = %.3g, |psi(exact q, w=0) - truth| = %.3g",
                gap_q, gap_w);
  return {gap_q <= 1e-8 && gap_w <= 1e-8, buffer};
}

Outcome criterion8_gamma0_crossvalidation() {
  SimConfig sc;
  sc.n = 1500;
  sc.gamma = 0.0;
  sc.beta = 0.3;
  sc.seed = 4096;
  const TransitionDataset data = generate_dataset(sc);
  const double aipw = oracles::aipw_ate(data, 1, 0);

  double worst = 0.0;

  // Calibrated plug-in vs the classical static calibrated plug-in.
  {
    double dynamic_ate = 0.0, classical_ate = 0.0;
    for (int arm : {1, 0}) {
      const Policy pi = Policy::deterministic(arm, 2);
      const QFunction base = tabular_fqi_base(data, pi, 0.0);
      auto [qstar, report] = fitted_q_calibration(data, pi, base, 0.0);
      const EstimateReport rep =
          plugin_calibrated(data, pi, FunctionalSpec::policy_value(pi), qstar, 0.0);

      std::vector<double> x, y;
      for (int i = 0; i < data.n(); ++i) {
        x.push_back(base(data[i].a0, data[i].s0));
        y.push_back(data[i].y0);
      }
      const StepFunction iso = pava_isotonic(x, y, {}, CalibrationConfig().min_pool_weight);
      double mean = 0.0;
      for (int i = 0; i < data.n(); ++i) mean += iso(base(arm, data[i].s0));
      mean /= data.n();

      dynamic_ate += arm == 1 ? rep.estimate : -rep.estimate;
      classical_ate += arm == 1 ? mean : -mean;
    }
    worst = std::max(worst, std::abs(dynamic_ate - classical_ate));
  }

  // drl-semi (observed-cell representer), drl-robust, and drl-nonparam all
  // reduce to AIPW with per-cell propensities at gamma = 0.
  {
    const FeatureMap cells = FeatureMap::one_hot_observed(data);
    double semi_ate = 0.0, robust_ate = 0.0, nonparam_ate = 0.0;
    for (int arm : {1, 0}) {
      const Policy pi = Policy::deterministic(arm, 2);
      const FunctionalSpec functional = FunctionalSpec::policy_value(pi);
      const QFunction q_hat = tabular_fqi_base(data, pi, 0.0);
      const RieszWeights rw =
          estimate_representer_linear(data, pi, functional, cells, 0.0, 0.0);
      const EstimateReport semi =
          drl_semiparametric(data, pi, functional, q_hat, rw, 0.0);

      auto r_hat = [&q_hat](int a, int s) { return q_hat(a, s); };
      auto t_q = second_stage_regression(data, pi, r_hat, 0.0,
                                         FeatureMap::state_action_codes(),
                                         RegressorSpec::tabular_mean());
      RieszWeights full = rw;  // alpha arrays filled by the linear estimator
      const EstimateReport robust =
          drl_model_robust(data, pi, functional, q_hat, full, r_hat, t_q, 0.0);

      const TabularMDP emp = estimate_empirical_mdp(data, 0.0);
      const Policy bhat = estimate_behavior_policy(data);
      const OccupancyRatio occ = tabular_occupancy_ratio(emp, pi, bhat, 1e6);
      const EstimateReport nonparam =
          drl_nonparametric(data, pi, functional, q_hat, occ, 0.0);

      const double sign = arm == 1 ? 1.0 : -1.0;
      semi_ate += sign * semi.estimate;
      robust_ate += sign * robust.estimate;
      nonparam_ate += sign * nonparam.estimate;
    }
    worst = std::max(worst, std::abs(semi_ate - aipw));
    worst = std::max(worst, std::abs(robust_ate - aipw));
    worst = std::max(worst, std::abs(nonparam_ate - aipw));
  }

  std::snprintf(buffer, sizeof(buffer), "max |dynamic - static reference| = %.3g",
                worst);
  return {worst <= 1e-8, buffer};
}

Outcome criterion9_pava_optimality(double* seconds) {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 gen(271828);
  auto unif = [&]() { return static_cast<double>(gen() >> 11) * 0x1.0p-53; };
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + static_cast<int>(gen() % 12);
    std::vector<double> x(static_cast<std::size_t>(n)), y(static_cast<std::size_t>(n)),
        w(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      x[static_cast<std::size_t>(i)] = std::floor(unif() * 8.0);
      y[static_cast<std::size_t>(i)] = unif() * 6.0 - 3.0;
      w[static_cast<std::size_t>(i)] = 0.25 + 2.0 * unif();
    }
    const StepFunction f = pava_isotonic(x, y, w, 0.0);
    std::vector<double> fit(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
      fit[static_cast<std::size_t>(i)] = f(x[static_cast<std::size_t>(i)]);
    const double pava_obj = oracles::sse(y, fit, w);
    const double dp_obj = oracles::isotonic_optimum_dp(x, y, w);
    worst = std::max(worst, std::abs(pava_obj - dp_obj));
  }
  *seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                 .count();
  std::snprintf(buffer, sizeof(buffer), "max |pava - exhaustive optimum| = %.3g",
                worst);
  return {worst <= 1e-9, buffer};
}

}  // namespace

int main() {
  struct Entry {
    int id;
    const char* name;
    Outcome outcome;
    double seconds = 0.0;
  };
  std::vector<Entry> entries;

  auto timed = [](auto&& fn) {
    const auto start = std::chrono::steady_clock::now();
    Outcome out = fn();
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return std::make_pair(out, secs);
  };

  {
    auto [out, secs] = timed(criterion1_fqi_oracle);
    out.pass = out.pass && secs < 5.0;
    entries.push_back({1, "tabular oracle equivalence of fitted Q-iteration", out, secs});
  }
  {
    auto [out, secs] = timed(criterion2_calibration_certificate);
    entries.push_back({2, "calibration certificate", out, secs});
  }
  {
    auto [out, secs] = timed(criterion3_correction_vanishes);
    entries.push_back({3, "correction-vanishes identity", out, secs});
  }
  {
    auto [out, secs] = timed(criterion4_occupancy_identities);
    entries.push_back({4, "occupancy-ratio identities", out, secs});
  }
  {
    double secs = 0.0;
    Outcome out = criterion5_coverage_good_overlap(&secs);
    out.pass = out.pass && secs < 900.0;
    entries.push_back({5, "bootstrap coverage under good overlap", out, secs});
  }
  {
    auto [out, secs] = timed(criterion6_superefficiency_trend);
    entries.push_back({6, "superefficiency trend under weak overlap", out, secs});
  }
  {
    auto [out, secs] = timed(criterion7_double_robustness);
    entries.push_back({7, "double-robustness identities", out, secs});
  }
  {
    auto [out, secs] = timed(criterion8_gamma0_crossvalidation);
    entries.push_back({8, "gamma=0 cross-validation against static estimators", out,
                       secs});
  }
  {
    double secs = 0.0;
    Outcome out = criterion9_pava_optimality(&secs);
    out.pass = out.pass && secs < 10.0;
    entries.push_back({9, "isotonic solver optimality", out, secs});
  }

  bool all_pass = true;
  for (const Entry& e : entries) {
    all_pass = all_pass && e.outcome.pass;
    std::printf("[%s] %d. %s (%.1fs) %s\n", e.outcome.pass ? "PASS" : "FAIL", e.id,
                e.name, e.seconds, e.outcome.detail.c_str());
  }
  return all_pass ? 0 : 1;
}
