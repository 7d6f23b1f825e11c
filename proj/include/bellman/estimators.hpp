#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "bellman/calibration.hpp"
#include "bellman/functional.hpp"
#include "bellman/riesz.hpp"

namespace bellman {

/// Point estimate with EIF-based inference and run diagnostics. The
/// per-record influence values are kept for downstream combination (e.g.
/// contrasts of two policy values on shared data).
struct EstimateReport {
  double estimate = 0.0;
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double level = 0.95;
  std::string method;
  std::map<std::string, double> diagnostics;
  std::vector<double> influence;

  std::string to_json(bool include_influence = false) const;
};

struct EstimatorOptions {
  double level = 0.95;
  /// plugin_calibrated refuses q* whose orthogonality residual exceeds this.
  double orthogonality_threshold = 1e-6;
};

/// Unbiased sample variance of the influence values divided by n, i.e. the
/// squared standard error of their mean.
double eif_variance(std::span<const double> influence);

/// Calibrated plug-in estimator: sample mean of m(S0, A0, q*), with the
/// standard error built from the dimension-reduced representer of q*.
EstimateReport plugin_calibrated(const TransitionDataset& data, const Policy& pi,
                                 const FunctionalSpec& functional,
                                 const CalibratedQ& qstar, double gamma,
                                 const EstimatorOptions& opts = {},
                                 std::span<const double> weights = {});

EstimateReport plugin_calibrated(const TransitionDataset& data, const Policy& pi,
                                 const FunctionalSpec& functional,
                                 const CrossFittedCalibration& qstar, double gamma,
                                 const EstimatorOptions& opts = {},
                                 std::span<const double> weights = {});

/// One-step doubly robust estimator: plug-in plus weighted temporal-difference
/// correction.
EstimateReport drl_semiparametric(const TransitionDataset& data, const Policy& pi,
                                  const FunctionalSpec& functional,
                                  const QFunction& q_hat,
                                  const RieszWeights& weights_hat, double gamma,
                                  const EstimatorOptions& opts = {},
                                  std::span<const double> weights = {});

/// Model-robust extension: adds the reward-residual correction term. With
/// r_hat identical to t_q_hat the correction vanishes and the result equals
/// drl_semiparametric exactly.
EstimateReport drl_model_robust(const TransitionDataset& data, const Policy& pi,
                                const FunctionalSpec& functional,
                                const QFunction& q_hat,
                                const RieszWeights& weights_hat,
                                const std::function<double(int, int)>& r_hat,
                                const std::function<double(int, int)>& t_q_hat,
                                double gamma, const EstimatorOptions& opts = {},
                                std::span<const double> weights = {});

/// Nonparametric DRL: the correction is weighted by the (truncated) empirical
/// occupancy ratio.
EstimateReport drl_nonparametric(const TransitionDataset& data, const Policy& pi,
                                 const FunctionalSpec& functional,
                                 const QFunction& q_hat,
                                 const OccupancyRatio& occupancy, double gamma,
                                 const EstimatorOptions& opts = {},
                                 std::span<const double> weights = {});

/// Empirical MDP from transition counts. Empty transition cells receive an
/// additive `smoothing` mass before row normalization so the chain stays
/// well-defined under weak overlap.
TabularMDP estimate_empirical_mdp(const TransitionDataset& data, double gamma,
                                  double smoothing = 1e-9);

/// Empirical behavior policy b(a|s) from action frequencies (uniform at
/// unvisited states).
Policy estimate_behavior_policy(const TransitionDataset& data);

struct BootstrapResult {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<double> replicates;
};

/// Percentile bootstrap that resamples only the calibration step, keeping the
/// initial Q-function fixed. Replicate r uses seed ^ splitmix64(r).
BootstrapResult bootstrap_calibration_ci(const TransitionDataset& data,
                                         const Policy& pi,
                                         const FunctionalSpec& functional,
                                         const QFunction& base, double gamma,
                                         int B, double level, std::uint64_t seed,
                                         const CalibrationConfig& cal_cfg = {});

namespace detail {

/// Core one-step estimator on precomputed per-record arrays:
/// psi = weighted mean of (m_vals + correction), influence = centered summand.
EstimateReport drl_core(std::string method, std::span<const double> m_vals,
                        std::span<const double> correction,
                        std::span<const double> weights, double level);

/// Normal quantile (Acklam's rational approximation, ~1e-9 accurate).
double normal_quantile(double p);

/// Percentile of sorted data with linear interpolation.
double percentile(std::vector<double> sorted_values, double p);

}  // namespace detail

}  // namespace bellman
